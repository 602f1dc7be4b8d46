"""Node-graph hierarchical attention.

For one head with node queries/keys ``Q, K`` (N x d_head) and a node-to-graph
membership matrix ``M`` (N x T):

    S1  = softmax(Q K^T / sqrt(d_head))       node-level scores, rows over keys
    S_G = softmax(S1 @ M)                     block sums, softmax over graphs
    S_N = softmax(S1 * (S_G @ M^T))           graph scores broadcast to node columns
    F   = S_N @ V

Padding keys are masked in every softmax and belong to no graph, so they
contribute nothing to the block sums.  Every function accepts leading batch
and head axes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .gnn import Gnn, GnnConfig, GraphStructure, qkv
from .numeric import Linear, Module, Tensor, as_tensor, softmax


@dataclass
class AttentionTrace:
    """Attention matrices of one layer, shaped (B, H, N, N), (B, H, N, T), (B, H, N, N)."""

    s1: np.ndarray
    s_g: np.ndarray
    s_n: np.ndarray


def membership(graph_of: np.ndarray, num_graphs: int | None = None) -> np.ndarray:
    """One-hot node-to-graph matrix; entries with graph index < 0 (padding) are all-zero rows."""
    graph_of = np.asarray(graph_of)
    t = int(graph_of.max()) + 1 if num_graphs is None else num_graphs
    out = np.zeros(graph_of.shape + (t,))
    valid = graph_of >= 0
    idx = np.nonzero(valid)
    out[idx + (graph_of[valid],)] = 1.0
    return out


def node_scores(q, k, d_head: int, key_mask: np.ndarray | None = None) -> Tensor:
    q, k = as_tensor(q), as_tensor(k)
    scores = (q @ k.swapaxes(-1, -2)) * (1.0 / np.sqrt(d_head))
    return softmax(scores, axis=-1, mask=None if key_mask is None else key_mask[..., None, :])


def block_sum(s1, member: np.ndarray) -> Tensor:
    """Sum each row of ``s1`` over the key columns of every graph: (.., N, N) -> (.., N, T)."""
    return as_tensor(s1) @ Tensor(np.asarray(member, dtype=as_tensor(s1).dtype))


def graph_attention(block_sums, graph_mask: np.ndarray | None = None) -> Tensor:
    return softmax(block_sums, axis=-1, mask=None if graph_mask is None else graph_mask[..., None, :])


def broadcast_graphs(s_g, member: np.ndarray) -> Tensor:
    """Copy column j of ``s_g`` onto every node column of graph j: (.., N, T) -> (.., N, N)."""
    s_g = as_tensor(s_g)
    return s_g @ Tensor(np.swapaxes(np.asarray(member, dtype=s_g.dtype), -1, -2))


def node_attention(s1, s_g, member: np.ndarray, key_mask: np.ndarray | None = None) -> Tensor:
    s1 = as_tensor(s1)
    mixed = s1 * broadcast_graphs(s_g, member)
    return softmax(mixed, axis=-1, mask=None if key_mask is None else key_mask[..., None, :])


def attend(s_n, v) -> Tensor:
    return as_tensor(s_n) @ as_tensor(v)


def hierarchical_attention(q, k, v, member, key_mask=None, graph_mask=None, shared_graph_attention=False,
                           logit_scale: float = 1.0):
    """Single pass over already split heads ``(.., H, N, d_head)``; returns ``(F, trace)``.

    ``logit_scale`` multiplies the inputs of the graph and node softmaxes.  The
    default 1.0 is the unscaled pipeline; other values exist only to measure
    how much the narrow logit range of those two softmaxes limits learning.
    """
    q, k, v = as_tensor(q), as_tensor(k), as_tensor(v)
    s1 = node_scores(q, k, q.shape[-1], key_mask)
    sums = block_sum(s1, member)
    if shared_graph_attention:
        sums = sums.mean(axis=-3, keepdims=True)
    if logit_scale != 1.0:
        sums = sums * logit_scale
    s_g = graph_attention(sums, graph_mask)
    s_n = node_attention(s1 * logit_scale if logit_scale != 1.0 else s1, s_g, member, key_mask)
    full = np.broadcast_to(s_g.data, s1.shape[:-1] + (np.shape(member)[-1],))
    return attend(s_n, v), AttentionTrace(s1.data, full, s_n.data)


class HierarchicalAttention(Module):
    """Multi-head hierarchical attention with GNN-generated Q, K, V.

    Heads are split after the GNNs; their outputs are concatenated and
    projected back to ``d``.
    """

    def __init__(self, d: int, heads: int, gnn: GnnConfig, rng: np.random.Generator,
                 shared_graph_attention: bool = False, logit_scale: float = 1.0):
        if d % heads:
            raise ValueError(f"model dim {d} not divisible by heads {heads}")
        self.d, self.heads = d, heads
        self.shared_graph_attention = shared_graph_attention
        self.logit_scale = logit_scale
        cfg = GnnConfig(kind=gnn.kind, layers=gnn.layers, heads=gnn.heads, in_dim=d, out_dim=d,
                        use_role_embeddings=gnn.use_role_embeddings)
        self.gnn_k = Gnn(cfg, rng)
        self.gnn_q = Gnn(cfg, rng)
        self.gnn_v = Gnn(cfg, rng)
        self.out = Linear(d, d, rng)

    def _split(self, x: Tensor) -> Tensor:
        b, n, _ = x.shape
        return x.reshape(b, n, self.heads, self.d // self.heads).transpose(0, 2, 1, 3)

    def __call__(self, x: Tensor, graph: GraphStructure, member: np.ndarray,
                 graph_mask: np.ndarray | None = None) -> tuple[Tensor, AttentionTrace]:
        b, n, _ = x.shape
        k, q, v = qkv(x, graph, self.gnn_k, self.gnn_q, self.gnn_v)
        key_mask = graph.node_mask[:, None, :]
        f, trace = hierarchical_attention(
            self._split(q), self._split(k), self._split(v), member[:, None],
            key_mask=key_mask, graph_mask=None if graph_mask is None else graph_mask[:, None],
            shared_graph_attention=self.shared_graph_attention, logit_scale=self.logit_scale,
        )
        merged = f.transpose(0, 2, 1, 3).reshape(b, n, self.d)
        return self.out(merged), trace
