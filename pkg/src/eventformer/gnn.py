"""Within-graph message passing used to produce attention queries, keys and values.

All four kinds operate on a padded batch ``(B, N, in_dim)`` whose adjacency is
block-diagonal: edges only connect nodes of the same event graph, so graphs
never exchange messages here.  Edges are used in both directions.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .events import ArgRole
from .numeric import (
    Linear,
    Module,
    Parameter,
    Tensor,
    einsum,
    glorot,
    leaky_relu,
    relu,
    softmax,
)

GNN_KINDS = ("linear", "gcn", "gat", "gin")
NUM_ROLES = len(ArgRole)


@dataclass
class GnnConfig:
    kind: str = "gin"
    layers: int = 1
    heads: int = 4
    in_dim: int = 64
    out_dim: int = 64
    use_role_embeddings: bool = True

    def __post_init__(self):
        if self.kind not in GNN_KINDS:
            raise ValueError(f"gnn.kind must be one of {GNN_KINDS}, got {self.kind!r}")
        if self.layers < 1:
            raise ValueError("gnn.layers must be >= 1")
        if self.out_dim % self.heads:
            raise ValueError(f"out_dim {self.out_dim} not divisible by heads {self.heads}")


@dataclass
class GraphStructure:
    """Dense batch adjacency.

    ``adjacency[b, v, u] = 1`` when u sends a message to v (symmetric here);
    ``roles[b, v, u, r] = 1`` marks the role of that edge.  Self-loops are
    added by the layers that need them.
    """

    adjacency: np.ndarray
    roles: np.ndarray
    node_mask: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.node_mask is None:
            self.node_mask = np.ones(self.adjacency.shape[:2], dtype=bool)

    @classmethod
    def from_edges(cls, num_nodes: int, edges, node_mask=None) -> "GraphStructure":
        """Single-graph-batch helper: ``edges`` is a list of ``(u, v, role)``."""
        adj = np.zeros((1, num_nodes, num_nodes))
        roles = np.zeros((1, num_nodes, num_nodes, NUM_ROLES))
        for u, v, role in edges:
            r = ArgRole(role).index
            for a, b in ((u, v), (v, u)):
                adj[0, a, b] = 1.0
                roles[0, a, b, r] = 1.0
        mask = None if node_mask is None else np.asarray(node_mask, dtype=bool)[None]
        return cls(adj, roles, mask)

    @cached_property
    def with_self_loops(self) -> np.ndarray:
        n = self.adjacency.shape[-1]
        return self.adjacency + np.eye(n)[None]

    @cached_property
    def gcn_norm(self) -> np.ndarray:
        a = self.with_self_loops
        inv = 1.0 / np.sqrt(a.sum(axis=-1))
        return inv[:, :, None] * a * inv[:, None, :]

    @cached_property
    def role_counts(self) -> np.ndarray:
        """(B, N, R): number of incoming edges of each role."""
        return self.roles.sum(axis=2)

    @cached_property
    def gcn_role_weights(self) -> np.ndarray:
        """(B, N, R): normalized-adjacency mass per incoming role."""
        return np.einsum("bvu,bvur->bvr", self.gcn_norm, self.roles)

    @cached_property
    def gat_mask(self) -> np.ndarray:
        return self.with_self_loops > 0


class LinearGnn(Module):
    """Edge-blind baseline: a plain affine map per node."""

    def __init__(self, cfg: GnnConfig, rng):
        self.proj = Linear(cfg.in_dim, cfg.out_dim, rng)

    def __call__(self, x: Tensor, graph: GraphStructure) -> Tensor:
        return self.proj(x)


class GcnLayer(Module):
    def __init__(self, in_dim: int, out_dim: int, use_roles: bool, rng):
        self.lin = Linear(in_dim, out_dim, rng)
        self.role = Parameter(0.1 * rng.standard_normal((NUM_ROLES, in_dim))) if use_roles else None

    def __call__(self, x: Tensor, graph: GraphStructure) -> Tensor:
        agg = Tensor(graph.gcn_norm) @ x
        if self.role is not None:
            agg = agg + Tensor(graph.gcn_role_weights) @ self.role
        return relu(self.lin(agg))


class GatLayer(Module):
    """Multi-head additive attention over each node's neighbourhood (self-loop included)."""

    def __init__(self, in_dim: int, out_dim: int, heads: int, use_roles: bool, rng):
        self.heads, self.head_dim = heads, out_dim // heads
        self.w = Parameter(glorot(rng, in_dim, out_dim))
        self.att_src = Parameter(glorot(rng, self.head_dim, 1, (heads, self.head_dim)))
        self.att_dst = Parameter(glorot(rng, self.head_dim, 1, (heads, self.head_dim)))
        self.bias = Parameter(np.zeros(out_dim))
        self.role = (
            Parameter(0.1 * rng.standard_normal((NUM_ROLES, heads, self.head_dim))) if use_roles else None
        )

    def attention(self, x: Tensor, graph: GraphStructure) -> tuple[Tensor, Tensor]:
        b, n, _ = x.shape
        z = (x @ self.w).reshape(b, n, self.heads, self.head_dim)
        src = einsum("bnhk,hk->bhn", z, self.att_src)
        dst = einsum("bnhk,hk->bhn", z, self.att_dst)
        logits = leaky_relu(dst.reshape(b, self.heads, n, 1) + src.reshape(b, self.heads, 1, n), 0.2)
        alpha = softmax(logits, axis=-1, mask=graph.gat_mask[:, None])
        return alpha, z

    def __call__(self, x: Tensor, graph: GraphStructure) -> Tensor:
        b, n, _ = x.shape
        alpha, z = self.attention(x, graph)
        out = einsum("bhvu,buhk->bvhk", alpha, z)
        if self.role is not None:
            role_mass = einsum("bhvu,bvur->bvhr", alpha, Tensor(graph.roles))
            out = out + einsum("bvhr,rhk->bvhk", role_mass, self.role)
        return out.reshape(b, n, self.heads * self.head_dim) + self.bias


class GinLayer(Module):
    """``MLP((1 + eps) * h_v + sum_u (h_u + role_uv))`` with learnable eps (init 0)."""

    def __init__(self, in_dim: int, out_dim: int, use_roles: bool, rng):
        self.eps = Parameter(np.zeros(()))
        self.fc1 = Linear(in_dim, out_dim, rng)
        self.fc2 = Linear(out_dim, out_dim, rng)
        self.role = Parameter(0.1 * rng.standard_normal((NUM_ROLES, in_dim))) if use_roles else None

    def __call__(self, x: Tensor, graph: GraphStructure) -> Tensor:
        agg = Tensor(graph.adjacency) @ x + x * (self.eps + 1.0)
        if self.role is not None:
            agg = agg + Tensor(graph.role_counts) @ self.role
        return self.fc2(relu(self.fc1(agg)))


class Gnn(Module):
    """A stack of ``cfg.layers`` message-passing layers of one kind."""

    def __init__(self, cfg: GnnConfig, rng: np.random.Generator):
        self.cfg = cfg
        dims = [cfg.in_dim] + [cfg.out_dim] * cfg.layers
        if cfg.kind == "linear":
            self.layers = [Linear(i, o, rng) for i, o in zip(dims[:-1], dims[1:])]
        elif cfg.kind == "gcn":
            self.layers = [GcnLayer(i, o, cfg.use_role_embeddings, rng) for i, o in zip(dims[:-1], dims[1:])]
        elif cfg.kind == "gat":
            self.layers = [
                GatLayer(i, o, cfg.heads, cfg.use_role_embeddings, rng) for i, o in zip(dims[:-1], dims[1:])
            ]
        else:
            self.layers = [GinLayer(i, o, cfg.use_role_embeddings, rng) for i, o in zip(dims[:-1], dims[1:])]

    def __call__(self, x: Tensor, graph: GraphStructure) -> Tensor:
        for i, layer in enumerate(self.layers):
            if i:
                x = relu(x) if self.cfg.kind in ("linear", "gat") else x
            x = layer(x) if self.cfg.kind == "linear" else layer(x, graph)
        return x


def gnn_forward(gnn: Gnn, features: Tensor, graph: GraphStructure) -> Tensor:
    return gnn(features, graph)


def qkv(features: Tensor, graph: GraphStructure, gnn_k: Gnn, gnn_q: Gnn, gnn_v: Gnn):
    """Keys, queries and values from three independent networks."""
    dims = {g.cfg.out_dim for g in (gnn_k, gnn_q, gnn_v)}
    if len(dims) != 1:
        raise ValueError(f"K/Q/V networks disagree on output width: {sorted(dims)}")
    if features.shape[-1] != gnn_k.cfg.in_dim:
        raise ValueError(f"feature width {features.shape[-1]} != gnn in_dim {gnn_k.cfg.in_dim}")
    return gnn_k(features, graph), gnn_q(features, graph), gnn_v(features, graph)
