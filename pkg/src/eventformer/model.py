"""EventFormer: hierarchical-attention encoder stack plus prediction head."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .attention import AttentionTrace, HierarchicalAttention
from .batching import Batch
from .encoding import coreference_rows
from .events import MAX_CHAIN_LENGTH
from .gnn import GnnConfig
from .numeric import (
    MLP,
    Linear,
    Module,
    Parameter,
    Tensor,
    dropout,
    get_default_dtype,
    layer_norm,
    relu,
    where,
)

POSITION_MODES = ("none", "learned")


@dataclass
class ModelConfig:
    num_verbs: int
    embed_dim: int  # text_dim + visual_dim of the embedding provider
    d: int = 64
    layers: int = 2
    heads: int = 4
    ffn_dim: int | None = None  # default 4 * d
    head_hidden: int | None = None  # default d
    dropout: float = 0.3
    ce_scale: float = 1.0
    use_coreference: bool = True
    mask_slots: int = 4
    graph_position: str = "learned"
    max_length: int = MAX_CHAIN_LENGTH
    shared_graph_attention: bool = False
    attention_logit_scale: float = 1.0
    gnn: GnnConfig = field(default_factory=GnnConfig)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.gnn, dict):
            self.gnn = GnnConfig(**self.gnn)
        if self.d % self.heads:
            raise ValueError(f"model dim {self.d} not divisible by heads {self.heads}")
        if self.d % 2:
            raise ValueError("model dim must be even for the coreference encoding")
        if self.graph_position not in POSITION_MODES:
            raise ValueError(f"graph_position must be one of {POSITION_MODES}")
        if not 0.0 <= self.dropout < 1.0:
            raise ValueError("dropout must be in [0, 1)")
        self.gnn = GnnConfig(kind=self.gnn.kind, layers=self.gnn.layers, heads=self.gnn.heads,
                             in_dim=self.d, out_dim=self.d,
                             use_role_embeddings=self.gnn.use_role_embeddings)

    @property
    def ffn(self) -> int:
        return self.ffn_dim or 4 * self.d

    @property
    def hidden(self) -> int:
        return self.head_hidden or self.d

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: dict) -> "ModelConfig":
        return cls(**payload)


@dataclass
class PredictionOutput:
    verb_logits: Tensor  # (B, num_verbs)
    noun_slot_embeddings: Tensor  # (B, mask_slots, embed_dim)
    slot_presence_logits: Tensor  # (B, mask_slots)
    traces: list[AttentionTrace] = field(default_factory=list)
    hidden: Tensor | None = None


class EncoderLayer(Module):
    """Post-norm block: LN(x + attn(x)), then LN(x + FFN(x))."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        self.attn = HierarchicalAttention(cfg.d, cfg.heads, cfg.gnn, rng, cfg.shared_graph_attention,
                                          cfg.attention_logit_scale)
        self.ln1_gain = Parameter(np.ones(cfg.d))
        self.ln1_bias = Parameter(np.zeros(cfg.d))
        self.ffn_in = Linear(cfg.d, cfg.ffn, rng)
        self.ffn_out = Linear(cfg.ffn, cfg.d, rng)
        self.ln2_gain = Parameter(np.ones(cfg.d))
        self.ln2_bias = Parameter(np.zeros(cfg.d))
        self.p = cfg.dropout

    def __call__(self, x: Tensor, batch: Batch, rng) -> tuple[Tensor, AttentionTrace]:
        a, trace = self.attn(x, batch.structure, batch.member, batch.graph_mask)
        x = layer_norm(x + dropout(a, self.p, self.training, rng), self.ln1_gain, self.ln1_bias)
        f = self.ffn_out(relu(self.ffn_in(x)))
        x = layer_norm(x + dropout(f, self.p, self.training, rng), self.ln2_gain, self.ln2_bias)
        return x, trace


class EventFormer(Module):
    def __init__(self, cfg: ModelConfig):
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.input_proj = Linear(cfg.embed_dim, cfg.d, rng)
        self.mask_template = Parameter(rng.standard_normal((cfg.mask_slots + 1, cfg.d)))
        if cfg.graph_position == "learned":
            self.graph_position = Parameter(0.5 * rng.standard_normal((2 * cfg.max_length - 1, cfg.d)))
        self.layers = [EncoderLayer(cfg, rng) for _ in range(cfg.layers)]
        self.verb_head = MLP(cfg.d, cfg.hidden, cfg.num_verbs, rng)
        self.slot_head = MLP(cfg.d, cfg.hidden, cfg.embed_dim + 1, rng)
        self.dropout_rng = np.random.default_rng(cfg.seed + 1)

    # -- stages ------------------------------------------------------------------
    def embed(self, batch: Batch) -> Tensor:
        """Projected node features with coreference codes; masked graphs use the template."""
        cfg = self.cfg
        dtype = get_default_dtype()
        x = self.input_proj(Tensor(batch.raw.astype(dtype)))
        if cfg.use_coreference:
            x = x + Tensor(coreference_rows(batch.coref, cfg.d, cfg.ce_scale).astype(dtype))
        is_template = batch.template >= 0
        if is_template.any():
            placeholders = self.mask_template[np.maximum(batch.template, 0)]
            x = where(is_template[..., None], placeholders, x)
        if cfg.graph_position == "learned":
            x = x + self.graph_position[batch.position]
        return x

    def encode(self, x: Tensor, batch: Batch) -> tuple[Tensor, list[AttentionTrace]]:
        traces = []
        x = dropout(x, self.cfg.dropout, self.training, self.dropout_rng)
        for layer in self.layers:
            x, trace = layer(x, batch, self.dropout_rng)
            traces.append(trace)
        return x, traces

    def head(self, hidden: Tensor, batch: Batch) -> PredictionOutput:
        """Read only the masked graph's rows: trigger placeholder -> verbs, slots -> nouns."""
        rows = np.arange(batch.size)
        trig = hidden[rows, batch.trigger_row]
        slots = hidden[rows[:, None], batch.slot_rows]
        verb_logits = self.verb_head(trig)
        slot_out = self.slot_head(slots)
        e = self.cfg.embed_dim
        return PredictionOutput(verb_logits, slot_out[..., :e], slot_out[..., e])

    def __call__(self, batch: Batch) -> PredictionOutput:
        hidden, traces = self.encode(self.embed(batch), batch)
        out = self.head(hidden, batch)
        out.traces = traces
        out.hidden = hidden
        return out


def count_parameters(cfg: ModelConfig) -> int:
    """Parameter count of a configured model, without allocating it."""
    d, e, v, s, h = cfg.d, cfg.embed_dim, cfg.num_verbs, cfg.mask_slots, cfg.hidden
    roles = 5

    def gnn_layer(i: int, o: int) -> int:
        kind, use_roles = cfg.gnn.kind, cfg.gnn.use_role_embeddings
        if kind == "linear":
            return i * o + o
        if kind == "gcn":
            return i * o + o + (roles * i if use_roles else 0)
        if kind == "gat":
            return i * o + 2 * o + o + (roles * o if use_roles else 0)
        return 1 + i * o + o + o * o + o + (roles * i if use_roles else 0)

    gnn = sum(gnn_layer(d, d) for _ in range(cfg.gnn.layers))
    layer = 3 * gnn + (d * d + d) + 4 * d + (d * cfg.ffn + cfg.ffn) + (cfg.ffn * d + d)
    total = e * d + d + (s + 1) * d + cfg.layers * layer
    if cfg.graph_position == "learned":
        total += (2 * cfg.max_length - 1) * d
    total += (d * h + h + h * v + v) + (d * h + h + h * (e + 1) + e + 1)
    return total
