import dataclasses

import numpy as np
import pytest

from eventformer.batching import collate, mask_graph
from eventformer.events import ArgRole, make_chain
from eventformer.gnn import GNN_KINDS, GnnConfig
from eventformer.model import EventFormer, ModelConfig, count_parameters
from eventformer.numeric import Tensor, grad_check, no_grad
from eventformer.batching import ChainExample
from eventformer.events import EventChain
from eventformer.training import LossWeights, batch_matching, compute_losses

from common import PROVIDER, batch_of, chain, example, tiny_config

OTHER = ArgRole.OTHER.index


def test_mask_layout_hides_target_and_uses_template():
    ex = example(n=4)
    lay = mask_graph(ex, 3, mask_slots=2)
    target_nodes = set(ex.graph_nodes[3])
    assert not target_nodes & set(lay.source[lay.source >= 0].tolist())
    assert lay.template.tolist()[-3:] == [0, 1, 2]
    assert lay.trigger_row == lay.num_nodes - 3
    assert lay.slot_rows.tolist() == [lay.num_nodes - 2, lay.num_nodes - 1]
    b = collate([lay])
    t = lay.trigger_row
    for s in lay.slot_rows:
        assert b.structure.adjacency[0, t, s] == b.structure.adjacency[0, s, t] == 1
        assert b.structure.roles[0, t, s].argmax() == OTHER
    assert b.structure.adjacency[0, lay.slot_rows[0], lay.slot_rows[1]] == 0


def test_extra_masked_graphs_get_no_prediction_rows():
    ex = example(n=5)
    lay = mask_graph(ex, 2, 3, extra_masked=(4,))
    assert lay.masked == (2, 4)
    assert np.sum(lay.template == 0) == 2
    assert collate([lay]).gold_verb[0] == ex.lexeme[ex.graph_nodes[2].start]
    with pytest.raises(IndexError):
        mask_graph(ex, 5, 3)


def test_candidates_exclude_hidden_graphs():
    ex = example(n=4)
    b = collate([mask_graph(ex, 1, 2)])
    hidden_args = {int(ex.lexeme[j]) for j in ex.graph_nodes[1] if not ex.is_trigger[j]}
    assert b.gold_mask[0].sum() == len(hidden_args)
    visible = [j for g in (0, 2, 3) for j in ex.graph_nodes[g] if not ex.is_trigger[j]]
    assert b.cand_mask[0].sum() == len(visible)


def test_output_shapes():
    cfg = tiny_config(mask_slots=3)
    model = EventFormer(cfg)
    out = model(batch_of([example(n=3), example(n=6)], mask_slots=3))
    assert out.verb_logits.shape == (2, 5)
    assert out.noun_slot_embeddings.shape == (2, 3, PROVIDER.dim)
    assert out.slot_presence_logits.shape == (2, 3)
    assert len(out.traces) == 1 and out.traces[0].s_g.shape[-1] == 6


def test_target_contents_do_not_leak():
    model = EventFormer(tiny_config(layers=2)).eval()
    a = chain(n=4)
    replacement = make_chain("x", [("v4", 4, [("n1", 1, "subj", 99), ("n2", 2, "obj", 98)])] * 3).graphs[0]
    other = EventChain("c", a.graphs[:3] + (replacement,))
    oa = model(batch_of([ChainExample.build(a, PROVIDER)]))
    ob = model(batch_of([ChainExample.build(other, PROVIDER)]))
    np.testing.assert_array_equal(oa.verb_logits.data, ob.verb_logits.data)
    np.testing.assert_array_equal(oa.noun_slot_embeddings.data, ob.noun_slot_embeddings.data)


def test_batch_padding_invariance():
    model = EventFormer(tiny_config(kind="gat", layers=2)).eval()
    short, long_ = example("a", n=3), example("b", n=7, offset=2)
    alone = model(batch_of([short]))
    both = model(batch_of([short, long_]))
    np.testing.assert_allclose(both.verb_logits.data[0], alone.verb_logits.data[0], atol=1e-10)
    np.testing.assert_allclose(both.noun_slot_embeddings.data[0], alone.noun_slot_embeddings.data[0], atol=1e-10)


def test_zero_verb_head_gives_uniform_distribution():
    model = EventFormer(tiny_config())
    model.verb_head.fc2.w.data[:] = 0
    model.verb_head.fc2.b.data[:] = 0
    logits = model(batch_of([example()])).verb_logits.data[0]
    p = np.exp(logits) / np.exp(logits).sum()
    np.testing.assert_array_equal(p, np.full(5, 0.2))


def test_head_reads_only_masked_rows():
    model = EventFormer(tiny_config())
    b = batch_of([example(n=5)])
    hidden = np.random.default_rng(0).standard_normal((1, b.raw.shape[1], 8))
    base = model.head(Tensor(hidden), b)
    keep = {int(b.trigger_row[0]), *b.slot_rows[0].tolist()}
    other = [i for i in range(hidden.shape[1]) if i not in keep]
    hidden[0, other] += 100.0
    moved = model.head(Tensor(hidden), b)
    np.testing.assert_array_equal(base.verb_logits.data, moved.verb_logits.data)
    np.testing.assert_array_equal(base.noun_slot_embeddings.data, moved.noun_slot_embeddings.data)


def test_zero_coreference_scale_matches_disabled_path_bitwise():
    b = batch_of([example(n=5), example(n=4, offset=1)])
    off = EventFormer(tiny_config(use_coreference=False))
    zero = EventFormer(tiny_config(ce_scale=0.0))
    on = EventFormer(tiny_config())
    a, z, o = off(b).verb_logits.data, zero(b).verb_logits.data, on(b).verb_logits.data
    assert a.tobytes() == z.tobytes()
    assert not np.array_equal(a, o)


@pytest.mark.parametrize("kind", GNN_KINDS)
@pytest.mark.parametrize("opts", [{}, {"graph_position": "none", "mask_slots": 2, "head_hidden": 5},
                                  {"layers": 3, "ffn_dim": 12}])
def test_count_parameters_matches_model(kind, opts):
    cfg = tiny_config(kind=kind, **opts)
    assert count_parameters(cfg) == EventFormer(cfg).num_parameters()
    cfg2 = dataclasses.replace(cfg, gnn=GnnConfig(kind=kind, layers=2, heads=2, use_role_embeddings=False))
    assert count_parameters(cfg2) == EventFormer(cfg2).num_parameters()


def test_config_round_trip_and_validation():
    cfg = tiny_config(kind="gcn")
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg
    with pytest.raises(ValueError):
        tiny_config(d=10, heads=4)
    with pytest.raises(ValueError):
        tiny_config(graph_position="sinusoid")
    with pytest.raises(ValueError):
        tiny_config(dropout=1.0)


def test_initialization_is_seeded():
    a, b = EventFormer(tiny_config(seed=4)), EventFormer(tiny_config(seed=4))
    c = EventFormer(tiny_config(seed=5))
    sa, sb, sc = a.state_dict(), b.state_dict(), c.state_dict()
    assert all(np.array_equal(sa[k], sb[k]) for k in sa)
    assert not all(np.array_equal(sa[k], sc[k]) for k in sa)


@pytest.mark.parametrize("kind", GNN_KINDS)
def test_full_model_loss_gradients(kind):
    model = EventFormer(tiny_config(kind=kind))
    b = batch_of([example(n=3), example(n=4, offset=2)])
    rng = np.random.default_rng(0)
    fixed = batch_matching(model(b), b)
    report = grad_check(lambda: compute_losses(model(b), b, LossWeights(), matchings=fixed).total, model,
                        tolerance=1e-3, max_entries=12, rng=rng)
    assert report.passed, report.summary()


def test_eval_mode_is_deterministic_with_dropout():
    model = EventFormer(tiny_config(dropout=0.5))
    b = batch_of([example()])
    model.eval()
    with no_grad():
        x, y = model(b).verb_logits.data, model(b).verb_logits.data
    np.testing.assert_array_equal(x, y)
    model.train()
    assert not np.array_equal(model(b).verb_logits.data, x)
