"""Node feature construction: embedding providers and coreference encoding.

A node's raw feature is ``concat(text_vector, visual_vector)``; the model maps
it to width ``d`` with a learned projection and then adds the sinusoidal
coreference code of the node's entity.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .events import COREF_SENTINEL, EventChain, Node


class ConfigurationError(ValueError):
    pass


class EmbeddingProvider:
    """Maps a node to a fixed-width vector ``text_dim + visual_dim``."""

    name = "base"
    deterministic = True

    def __init__(self, text_dim: int, visual_dim: int):
        if text_dim < 0 or visual_dim < 0 or text_dim + visual_dim == 0:
            raise ConfigurationError(f"bad provider dims text={text_dim} visual={visual_dim}")
        self.text_dim = text_dim
        self.visual_dim = visual_dim

    @property
    def dim(self) -> int:
        return self.text_dim + self.visual_dim

    def embed(self, node: Node) -> np.ndarray:
        raise NotImplementedError


def _pool(feature, expected: int, where: str) -> np.ndarray:
    arr = np.asarray(feature, dtype=np.float64)
    if arr.ndim == 2:  # frame sequence
        arr = arr.mean(axis=0)
    if arr.shape != (expected,):
        raise ConfigurationError(f"{where}: feature length {arr.shape[-1]} != expected {expected}")
    return arr


class StubProvider(EmbeddingProvider):
    """Frozen stand-in for a pretrained vision-text encoder.

    The text vector is a standard normal draw seeded by a hash of the node
    text; the visual vector is the node's ``raw_feature`` (mean-pooled over
    frames) or zeros when absent.
    """

    name = "stub"

    def __init__(self, text_dim: int, visual_dim: int, seed: int = 13):
        super().__init__(text_dim, visual_dim)
        self.seed = seed
        self._text = lru_cache(maxsize=None)(self._text_uncached)

    def _text_uncached(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(f"{self.seed}\x00{text}".encode()).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        vec = rng.standard_normal(self.text_dim)
        vec.setflags(write=False)
        return vec

    def text_vector(self, text: str) -> np.ndarray:
        return self._text(text)

    def embed(self, node: Node) -> np.ndarray:
        if node.raw_feature is None:
            visual = np.zeros(self.visual_dim)
        else:
            visual = _pool(node.raw_feature, self.visual_dim, f"node {node.node_id}")
        return np.concatenate([self.text_vector(node.text), visual])


class FileProvider(EmbeddingProvider):
    """Uses precomputed per-node vectors from the corpus ``feat`` fields.

    Each ``feat`` holds the full ``text_dim + visual_dim`` vector (or a
    sequence of such vectors, mean-pooled).
    """

    name = "file"

    def embed(self, node: Node) -> np.ndarray:
        if node.raw_feature is None:
            raise ConfigurationError(f"node {node.node_id} ({node.text!r}) has no feat vector")
        return _pool(node.raw_feature, self.dim, f"node {node.node_id}")


def make_provider(name: str, text_dim: int, visual_dim: int, seed: int = 13) -> EmbeddingProvider:
    if name == "stub":
        return StubProvider(text_dim, visual_dim, seed)
    if name == "file":
        return FileProvider(text_dim, visual_dim)
    raise ConfigurationError(f"unknown embedding provider {name!r} (expected stub or file)")


@dataclass
class NodeFeatures:
    """Per-node raw features of one chain in flattened chain order.

    ``coref_of`` holds entity ranks by first occurrence (-1 for triggers).
    """

    features: np.ndarray
    graph_of: np.ndarray
    coref_of: np.ndarray
    is_trigger: np.ndarray
    lexeme_of: np.ndarray
    node_order: list[int]

    @property
    def num_nodes(self) -> int:
        return len(self.node_order)


def coref_ranks(nodes: list[Node]) -> np.ndarray:
    """Renumber annotated coref ids by first occurrence; triggers get -1."""
    ranks: dict[int, int] = {}
    out = np.full(len(nodes), -1, dtype=np.int64)
    for i, node in enumerate(nodes):
        if node.is_trigger or node.coref_index == COREF_SENTINEL:
            continue
        out[i] = ranks.setdefault(node.coref_index, len(ranks))
    return out


def embed_chain(chain: EventChain, provider: EmbeddingProvider) -> NodeFeatures:
    rows, graph_of, trig, lex, order = [], [], [], [], []
    nodes = []
    for gi, graph in enumerate(chain.graphs):
        for node in graph.nodes:
            rows.append(provider.embed(node))
            graph_of.append(gi)
            trig.append(node.is_trigger)
            lex.append(node.lexeme_id)
            order.append(node.node_id)
            nodes.append(node)
    feats = np.vstack(rows) if rows else np.zeros((0, provider.dim))
    return NodeFeatures(
        features=feats,
        graph_of=np.asarray(graph_of, dtype=np.int64),
        coref_of=coref_ranks(nodes),
        is_trigger=np.asarray(trig, dtype=bool),
        lexeme_of=np.asarray(lex, dtype=np.int64),
        node_order=order,
    )


def coreference_encoding(index, d: int, s: float = 1.0) -> np.ndarray:
    """Sinusoidal code: even dims ``s*sin(index/10000^(2k/d))``, odd dims the cosine.

    ``index`` may be a scalar or an integer array; the trailing axis of the
    result has length ``d``.
    """
    if d % 2:
        raise ConfigurationError(f"coreference encoding needs an even dimension, got {d}")
    if s < 0:
        raise ConfigurationError(f"coreference scale must be non-negative, got {s}")
    idx = np.asarray(index, dtype=np.float64)[..., None]
    k = np.arange(d // 2, dtype=np.float64)
    angle = idx / np.power(10000.0, 2.0 * k / d)
    out = np.empty(idx.shape[:-1] + (d,))
    out[..., 0::2] = s * np.sin(angle)
    out[..., 1::2] = s * np.cos(angle)
    return out


def coreference_rows(coref_of: np.ndarray, d: int, s: float) -> np.ndarray:
    """CE vectors for each node; rows with a negative index (triggers, padding) are zero."""
    coref_of = np.asarray(coref_of)
    rows = coreference_encoding(np.maximum(coref_of, 0), d, s)
    rows[coref_of < 0] = 0.0
    return rows


def apply_coreference(features: NodeFeatures, s: float = 1.0) -> NodeFeatures:
    """Residually add the coreference code to every argument row."""
    d = features.features.shape[1]
    out = features.features + coreference_rows(features.coref_of, d, s)
    return NodeFeatures(out, features.graph_of, features.coref_of, features.is_trigger,
                        features.lexeme_of, list(features.node_order))
