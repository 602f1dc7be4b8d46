"""Small shared fixtures: hand-built chains and tiny model configs."""
import numpy as np

from eventformer.batching import ChainExample, collate, mask_graph
from eventformer.encoding import StubProvider
from eventformer.events import make_chain
from eventformer.gnn import GnnConfig
from eventformer.model import ModelConfig

PROVIDER = StubProvider(6, 2, seed=3)


def chain(cid="c", n=4, offset=0, target=None):
    events = []
    for i in range(n):
        v = (i + offset) % 5
        args = [(f"n{v}", v, "subj", v), (f"n{(v + 2) % 7}", (v + 2) % 7, "obj", 10 + v)]
        if i % 2:
            args.append(("n6", 6, "location", 6, [0.5, -0.5]))
        events.append((f"v{v}", v, args))
    return make_chain(cid, events, target)


def example(cid="c", n=4, offset=0, target=None):
    return ChainExample.build(chain(cid, n, offset, target), PROVIDER)


def tiny_config(kind="gin", d=8, layers=1, heads=2, num_verbs=5, **kw):
    kw.setdefault("dropout", 0.0)
    return ModelConfig(num_verbs=num_verbs, embed_dim=PROVIDER.dim, d=d, layers=layers, heads=heads,
                       gnn=GnnConfig(kind=kind, heads=2), **kw)


def batch_of(examples, mask_slots=2, extra=(), max_length=50):
    return collate([mask_graph(ex, ex.chain.target, mask_slots, extra) for ex in examples], max_length)
