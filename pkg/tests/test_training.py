import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from eventformer.model import EventFormer
from eventformer.numeric import Parameter, Tensor, grad_check
from eventformer.synthetic import GeneratorConfig, generate_chains
from eventformer.batching import ChainExample
from eventformer.encoding import StubProvider
from eventformer.training import (
    AdamW,
    DataError,
    LossWeights,
    TrainConfig,
    clip_grad_norm,
    greedy_matching,
    make_batch,
    noun_focal_loss,
    noun_mse_loss,
    presence_loss,
    sample_masks,
    total_loss,
    train,
    train_two_stage,
    verb_loss,
)

from common import example, tiny_config


def bce(p, y):
    return -(y * math.log(p) + (1 - y) * math.log(1 - p))


def test_uniform_four_class_cross_entropy_is_ln4():
    assert abs(verb_loss(np.zeros(4), 2).item() - math.log(4)) < 1e-9


def test_cross_entropy_matches_scalar_formula():
    logits = np.array([[1.0, -2.0, 0.5], [0.0, 3.0, -1.0]])
    want = np.mean([-(row[g] - math.log(sum(math.exp(x) for x in row))) for row, g in zip(logits, [2, 1])])
    assert verb_loss(logits, [2, 1]).item() == pytest.approx(want, abs=1e-12)
    with pytest.raises(DataError):
        verb_loss(logits, [0, 3])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-0.99, 0.99), min_size=1, max_size=8), st.data())
def test_focal_with_zero_focusing_is_bce(sims, data):
    labels = data.draw(st.lists(st.integers(0, 1), min_size=len(sims), max_size=len(sims)))
    got = noun_focal_loss(np.array(sims), np.array(labels), focusing=0.0).item()
    want = np.mean([bce((s + 1) / 2, y) for s, y in zip(sims, labels)])
    assert got == pytest.approx(want, abs=1e-9)


def test_focal_down_weights_easy_pairs():
    sim = np.array([0.9, -0.9])
    y = np.array([1, 0])
    p_t = 0.95
    want = -((1 - p_t) ** 2) * math.log(p_t)
    assert noun_focal_loss(sim, y, 2.0).item() == pytest.approx(want, abs=1e-12)
    assert noun_focal_loss(sim, y, 2.0).item() < noun_focal_loss(sim, y, 0.0).item()


def test_focal_mask_averages_over_kept_pairs():
    sim = np.array([0.2, 0.4, -0.6])
    y = np.array([1, 0, 1])
    got = noun_focal_loss(sim, y, 0.0, mask=np.array([True, False, True])).item()
    assert got == pytest.approx((bce(0.6, 1) + bce(0.2, 1)) / 2, abs=1e-12)


def test_presence_loss_is_bce_on_logits():
    logits = Tensor(np.array([0.3, -1.2]))
    sig = lambda x: 1 / (1 + math.exp(-x))
    want = (bce(sig(0.3), 1) + bce(sig(-1.2), 0)) / 2
    assert presence_loss(logits, [1, 0]).item() == pytest.approx(want, abs=1e-12)


def test_total_is_weighted_sum():
    parts = tuple(Tensor(np.array(v)) for v in (2.0, 4.0, 6.0))
    assert total_loss(parts, LossWeights(1.0, 1.0, 0.5)).item() == 9.0
    with pytest.raises(ValueError):
        LossWeights(-1.0)


def brute_force_greedy(s, g):
    """Repeatedly take the globally most similar unused pair (first in row-major order on ties)."""
    sim = (s / np.linalg.norm(s, axis=1, keepdims=True)) @ (g / np.linalg.norm(g, axis=1, keepdims=True)).T
    free_s, free_g, pairs = set(range(len(s))), set(range(len(g))), []
    while free_s and free_g:
        best = max(((sim[i, j], -i, -j) for i in free_s for j in free_g))
        i, j = -best[1], -best[2]
        pairs.append((i, j))
        free_s.remove(i)
        free_g.remove(j)
    return sorted(pairs)


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 5), st.integers(1, 5), st.integers(0, 2**32 - 1))
def test_greedy_matching_against_brute_force(ns, ng, seed):
    rng = np.random.default_rng(seed)
    s, g = rng.standard_normal((ns, 4)), rng.standard_normal((ng, 4))
    got = greedy_matching(s, g)
    assert got == brute_force_greedy(s, g)
    assert len(got) == min(ns, ng)
    assert len({i for i, _ in got}) == len({j for _, j in got}) == len(got)


def test_matching_edge_cases():
    assert greedy_matching(np.zeros((0, 3)), np.ones((2, 3))) == []
    assert noun_mse_loss(Tensor(np.ones((2, 3))), np.ones((1, 3)), []).item() == 0.0
    slots = Tensor(np.array([[1.0, 2.0], [0.0, 0.0]]))
    assert noun_mse_loss(slots, np.array([[0.0, 0.0], [1.0, 0.0]]), [(0, 1)]).item() == pytest.approx(2.0)


def classic_adamw(p, grads, lr, b1, b2, eps, wd):
    """Reference loop in plain python floats."""
    m = v = 0.0
    for t, g in enumerate(grads, 1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mh, vh = m / (1 - b1**t), v / (1 - b2**t)
        p = p - lr * (mh / (math.sqrt(vh) + eps) + wd * p)
    return p


def test_adamw_against_reference():
    grads = [0.5, -1.0, 2.0, 0.1]
    p = Parameter(np.array([1.5]))
    opt = AdamW([p], lr=0.1, betas=(0.9, 0.99), eps=1e-8, weight_decay=0.01)
    for g in grads:
        p.grad = np.array([g])
        opt.step()
    assert p.data[0] == pytest.approx(classic_adamw(1.5, grads, 0.1, 0.9, 0.99, 1e-8, 0.01), abs=1e-12)


def test_weight_decay_is_decoupled_from_gradient_scale():
    a, b = Parameter(np.array([2.0])), Parameter(np.array([2.0]))
    oa = AdamW([a], lr=0.1, weight_decay=0.5)
    ob = AdamW([b], lr=0.1, weight_decay=0.5)
    a.grad, b.grad = np.array([1.0]), np.array([1000.0])
    oa.step()
    ob.step()
    assert a.data[0] == pytest.approx(b.data[0], abs=1e-9)


def test_clip_grad_norm():
    p, q = Parameter(np.zeros(2)), Parameter(np.zeros(1))
    p.grad, q.grad = np.array([3.0, 0.0]), np.array([4.0])
    assert clip_grad_norm([p, q], 1.0) == pytest.approx(5.0)
    assert np.sqrt((p.grad**2).sum() + (q.grad**2).sum()) == pytest.approx(1.0)


def test_sampling_policies():
    ex = example(n=6)
    rng = np.random.default_rng(0)
    assert sample_masks(ex, "posttrain", rng, 0.5) == (5, ())
    targets, extras = set(), set()
    for _ in range(300):
        t, extra = sample_masks(ex, "pretrain", rng, 0.5)
        targets.add(t)
        extras.update(extra)
        assert t not in extra and 0 not in extra
    assert targets == {1, 2, 3, 4, 5}
    assert extras == {1, 2, 3, 4, 5}


def test_pretrain_batches_mask_extra_graphs():
    exs = [example(n=8)] * 20
    b = make_batch(exs, "pretrain", np.random.default_rng(1), 0.4, 2, 50)
    assert any(len(lay.masked) > 1 for lay in b.layouts)
    assert all(lay.target >= 1 for lay in b.layouts)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(stage="finetune")
    with pytest.raises(ValueError):
        TrainConfig(lr=0.0)
    with pytest.raises(ValueError):
        TrainConfig(pretrain_mask_rate=1.0)
    assert TrainConfig(weights=[1, 2, 3]).weights == LossWeights(1, 2, 3)


def order1_examples(n=200, seed=0):
    cfg = GeneratorConfig(seed=seed, num_chains=n, num_verbs=6, num_entities=5, rule="order1", max_length=6,
                          visual_dim=2)
    prov = StubProvider(6, 2, seed=3)
    return [ChainExample.build(c, prov) for c in generate_chains(cfg)]


def test_zero_steps_leaves_model_untouched():
    exs = order1_examples(20)
    cfg = tiny_config(num_verbs=6)
    result = train(exs, cfg, TrainConfig(max_steps=0, dropout=0.0))
    fresh = EventFormer(cfg)
    assert result.log == []
    assert all(np.array_equal(v, fresh.state_dict()[k]) for k, v in result.model.state_dict().items())
    with pytest.raises(DataError):
        train([], cfg, TrainConfig())


def test_training_is_deterministic(tmp_path):
    exs = order1_examples(40)
    cfg = tiny_config(dropout=0.2, num_verbs=6)
    tc = TrainConfig(lr=1e-2, batch_size=8, max_steps=5, dropout=0.2, seed=3)
    a, b = train(exs, cfg, tc), train(exs, cfg, tc)
    assert a.log == b.log
    a.write_log(tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,loss_total,loss_ce,loss_focal,loss_mse" and len(lines) == 6


def test_epoch_cap_and_validation_selection():
    exs = order1_examples(16)
    cfg = tiny_config(num_verbs=6)
    scores = iter([0.5, 0.9, 0.1, 0.2])
    r = train(exs, cfg, TrainConfig(lr=1e-2, batch_size=8, max_steps=100, max_epochs=3, eval_every=2, dropout=0.0),
              validate=lambda m: next(scores))
    assert len(r.log) == 6
    assert r.best_step == 4 and r.best_score == 0.9


def test_two_stage_concatenates_logs():
    exs = order1_examples(30)
    cfg = tiny_config(num_verbs=6)
    r = train_two_stage(exs, cfg, TrainConfig(stage="pretrain", max_steps=3, batch_size=8, dropout=0.0),
                        TrainConfig(stage="posttrain", max_steps=2, batch_size=8, dropout=0.0))
    assert [row["step"] for row in r.log] == [1, 2, 3, 4, 5]
    with pytest.raises(ValueError):
        train_two_stage(exs, cfg, TrainConfig(stage="posttrain"), TrainConfig(stage="posttrain"))


def test_order1_verb_loss_falls():
    exs = order1_examples(300)
    cfg = tiny_config(d=32, heads=4, num_verbs=6)
    r = train(exs, cfg, TrainConfig(lr=3e-3, batch_size=32, max_steps=150, dropout=0.0))
    first = np.mean([row["loss_ce"] for row in r.log[:10]])
    last = np.mean([row["loss_ce"] for row in r.log[-10:]])
    assert last < 0.5 * first
