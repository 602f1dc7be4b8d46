"""Losses, the AdamW optimizer and the two-stage masked training loop."""
from __future__ import annotations

import csv
import itertools
import logging
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from .batching import Batch, ChainExample, collate, mask_graph
from .model import EventFormer, ModelConfig, PredictionOutput
from .numeric import (
    Parameter,
    Tensor,
    clip,
    cosine_similarity,
    log,
    log_softmax,
    softplus,
    sum_,
)

log_ = logging.getLogger(__name__)

STAGES = ("pretrain", "posttrain")
PROB_FLOOR = 1e-6


class DataError(ValueError):
    pass


@dataclass
class LossWeights:
    alpha: float = 1.0
    beta: float = 1.0
    gamma: float = 0.5

    def __post_init__(self):
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise ValueError("loss weights must be non-negative")


@dataclass
class TrainConfig:
    lr: float = 1e-5
    weight_decay: float = 1e-6
    batch_size: int = 64
    max_steps: int = 300
    max_epochs: int | None = None
    dropout: float = 0.3
    seed: int = 0
    stage: str = "posttrain"
    pretrain_mask_rate: float = 0.15
    focal_gamma: float = 2.0
    weights: LossWeights = field(default_factory=LossWeights)
    betas: tuple[float, float] = (0.9, 0.999)
    adam_eps: float = 1e-8
    grad_clip: float | None = None
    eval_every: int = 0  # 0: only at the end
    tau: float = 0.5

    def __post_init__(self):
        if isinstance(self.weights, dict):
            self.weights = LossWeights(**self.weights)
        if isinstance(self.weights, (list, tuple)):
            self.weights = LossWeights(*self.weights)
        self.betas = tuple(self.betas)
        if self.stage not in STAGES:
            raise ValueError(f"stage must be one of {STAGES}, got {self.stage!r}")
        if self.lr <= 0 or self.batch_size <= 0 or self.max_steps < 0 or self.weight_decay < 0:
            raise ValueError("lr and batch_size must be positive; max_steps and weight_decay non-negative")
        if not 0.0 <= self.pretrain_mask_rate < 1.0:
            raise ValueError("pretrain_mask_rate must be in [0, 1)")

    def to_dict(self) -> dict:
        return asdict(self)


# -- losses ------------------------------------------------------------------------

def verb_loss(verb_logits, gt) -> Tensor:
    """Mean cross-entropy; accepts one logit vector or a (B, V) batch."""
    logits = verb_logits if isinstance(verb_logits, Tensor) else Tensor(verb_logits)
    gt = np.atleast_1d(np.asarray(gt, dtype=np.int64))
    if logits.ndim == 1:
        logits = logits.reshape(1, -1)
    v = logits.shape[-1]
    if gt.min() < 0 or gt.max() >= v:
        raise DataError(f"verb id out of range [0, {v}): {gt.tolist()}")
    logp = log_softmax(logits, axis=-1)
    picked = logp[np.arange(len(gt)), gt]
    return -picked.mean()


def noun_similarities(slot_embeddings, candidates) -> Tensor:
    """Cosine similarity of every slot embedding against every historical argument."""
    return cosine_similarity(slot_embeddings, candidates)


def noun_focal_loss(sim, labels, focusing: float = 2.0, mask=None) -> Tensor:
    """Binary focal loss on p = (sim + 1) / 2, averaged over (slot, candidate) pairs."""
    sim = sim if isinstance(sim, Tensor) else Tensor(sim)
    y = np.asarray(labels, dtype=sim.dtype)
    p = clip((sim + 1.0) * 0.5, PROB_FLOOR, 1.0 - PROB_FLOOR)
    p_t = p * y + (1.0 - p) * (1.0 - y)
    loss = -(p_t * -1.0 + 1.0) ** focusing * log(p_t) if focusing else -log(p_t)
    if mask is None:
        return loss.mean()
    mask = np.broadcast_to(np.asarray(mask, dtype=sim.dtype), sim.shape)
    denom = max(float(mask.sum()), 1.0)
    return sum_(loss * mask) * (1.0 / denom)


def presence_loss(presence_logits: Tensor, targets, mask=None) -> Tensor:
    """Binary cross-entropy on slot presence logits."""
    y = np.asarray(targets, dtype=presence_logits.dtype)
    loss = softplus(presence_logits) - presence_logits * y
    if mask is None:
        return loss.mean()
    mask = np.asarray(mask, dtype=presence_logits.dtype)
    return sum_(loss * mask) * (1.0 / max(float(mask.sum()), 1.0))


def greedy_matching(slot_embeddings: np.ndarray, gold_embeddings: np.ndarray) -> list[tuple[int, int]]:
    """One-to-one (slot, gold) pairs, taken greedily by descending cosine similarity."""
    s = np.asarray(slot_embeddings, dtype=np.float64)
    g = np.asarray(gold_embeddings, dtype=np.float64)
    if len(s) == 0 or len(g) == 0:
        return []
    sn = s / np.sqrt((s * s).sum(-1, keepdims=True) + 1e-16)
    gn = g / np.sqrt((g * g).sum(-1, keepdims=True) + 1e-16)
    sim = sn @ gn.T
    order = np.argsort(-sim, axis=None, kind="stable")
    used_s, used_g, pairs = set(), set(), []
    for flat in order:
        i, j = divmod(int(flat), sim.shape[1])
        if i in used_s or j in used_g:
            continue
        pairs.append((i, j))
        used_s.add(i)
        used_g.add(j)
        if len(pairs) == min(sim.shape):
            break
    return sorted(pairs)


def noun_mse_loss(slot_embeddings: Tensor, gold_embeddings, matching: Sequence[tuple[int, int]]) -> Tensor:
    """Mean squared error over the coordinates of matched (slot, gold) pairs; 0 when nothing matched."""
    if not matching:
        return Tensor(np.zeros((), dtype=slot_embeddings.dtype))
    s_idx = np.array([m[0] for m in matching])
    g_idx = np.array([m[1] for m in matching])
    gold = np.asarray(gold_embeddings, dtype=slot_embeddings.dtype)[g_idx]
    diff = slot_embeddings[s_idx] - Tensor(gold)
    return (diff * diff).mean()


def total_loss(components, weights: LossWeights) -> Tensor:
    ce, focal, mse = components
    return ce * weights.alpha + focal * weights.beta + mse * weights.gamma


@dataclass
class LossBreakdown:
    total: Tensor
    ce: Tensor
    focal: Tensor
    mse: Tensor

    def values(self) -> dict[str, float]:
        return {"loss_total": self.total.item(), "loss_ce": self.ce.item(),
                "loss_focal": self.focal.item(), "loss_mse": self.mse.item()}


def batch_matching(out: PredictionOutput, batch: Batch) -> list[list[tuple[int, int]]]:
    slots = out.noun_slot_embeddings.data
    return [
        greedy_matching(slots[i], batch.gold_raw[i][batch.gold_mask[i]])
        for i in range(batch.size)
    ]


def compute_losses(out: PredictionOutput, batch: Batch, weights: LossWeights,
                   focusing: float = 2.0, matchings: list[list[tuple[int, int]]] | None = None) -> LossBreakdown:
    """All loss components for a collated batch.

    The noun term is the similarity focal loss plus a presence cross-entropy
    that teaches each slot whether it was matched to a gold argument.
    ``matchings`` fixes the slot-to-gold assignment instead of recomputing
    it; the loss is smooth only while the assignment stays fixed, so
    gradient checks pass one in.
    """
    ce = verb_loss(out.verb_logits, batch.gold_verb)
    b, s = out.slot_presence_logits.shape
    c = batch.cand_raw.shape[1]
    if matchings is None:
        matchings = batch_matching(out, batch)
    labels = np.zeros((b, s, c))
    present = np.zeros((b, s))
    slot_valid = np.zeros((b, s), dtype=bool)
    for i, lay in enumerate(batch.layouts):
        slot_valid[i, : len(lay.slot_rows)] = True
        gold_lex = batch.gold_lex[i][batch.gold_mask[i]]
        for slot, g in matchings[i]:
            present[i, slot] = 1.0
            labels[i, slot] = (batch.cand_lex[i] == gold_lex[g]) & batch.cand_mask[i]
    candidates = Tensor(batch.cand_raw.astype(out.noun_slot_embeddings.dtype))
    sim = noun_similarities(out.noun_slot_embeddings, candidates)
    pair_mask = slot_valid[:, :, None] & batch.cand_mask[:, None, :]
    focal = noun_focal_loss(sim, labels, focusing, pair_mask)
    focal = focal + presence_loss(out.slot_presence_logits, present, slot_valid)

    # MSE over matched pairs of the whole batch, coordinate-averaged
    s_rows, s_cols, golds = [], [], []
    for i, pairs in enumerate(matchings):
        gold = batch.gold_raw[i][batch.gold_mask[i]]
        for slot, g in pairs:
            s_rows.append(i)
            s_cols.append(slot)
            golds.append(gold[g])
    if s_rows:
        diff = out.noun_slot_embeddings[np.array(s_rows), np.array(s_cols)] - Tensor(
            np.asarray(golds, dtype=out.noun_slot_embeddings.dtype))
        mse = (diff * diff).mean()
    else:
        mse = Tensor(np.zeros((), dtype=ce.dtype))
    return LossBreakdown(total_loss((ce, focal, mse), weights), ce, focal, mse)


# -- optimizer ---------------------------------------------------------------------

class AdamW:
    """Adam with decoupled weight decay."""

    def __init__(self, params: Sequence[Parameter], lr: float, betas=(0.9, 0.999), eps: float = 1e-8,
                 weight_decay: float = 0.0):
        self.params = list(params)
        self.lr, self.betas, self.eps, self.weight_decay = lr, betas, eps, weight_decay
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def step(self) -> None:
        self.t += 1
        b1, b2 = self.betas
        c1 = 1.0 - b1**self.t
        c2 = 1.0 - b2**self.t
        for p, m, v in zip(self.params, self.m, self.v):
            if p.grad is None:
                continue
            g = p.grad
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * g * g
            update = (m / c1) / (np.sqrt(v / c2) + self.eps)
            if self.weight_decay:
                update = update + self.weight_decay * p.data
            p.data -= (self.lr * update).astype(p.dtype, copy=False)

    def zero_grad(self) -> None:
        for p in self.params:
            p.grad = None


def clip_grad_norm(params: Sequence[Parameter], max_norm: float) -> float:
    total = float(np.sqrt(sum(float((p.grad**2).sum()) for p in params if p.grad is not None)))
    if total > max_norm:
        scale = max_norm / (total + 1e-12)
        for p in params:
            if p.grad is not None:
                p.grad *= scale
    return total


# -- masking policies --------------------------------------------------------------

def sample_masks(example: ChainExample, stage: str, rng: np.random.Generator,
                 mask_rate: float) -> tuple[int, tuple[int, ...]]:
    """Pick the scored target graph and any extra hidden context graphs.

    ``posttrain`` always scores the chain's annotated target.  ``pretrain``
    scores a graph drawn uniformly from 1..T-1 (graph 0 stays visible so the
    history is never empty) and hides each other non-initial graph with
    probability ``mask_rate``.
    """
    t = example.num_graphs
    if stage == "posttrain":
        return example.chain.target, ()
    target = int(rng.integers(1, t))
    others = [g for g in range(1, t) if g != target]
    extra = tuple(g for g in others if rng.random() < mask_rate)
    return target, extra


def make_batch(examples: Sequence[ChainExample], stage: str, rng, mask_rate: float, mask_slots: int,
               max_length: int) -> Batch:
    layouts = []
    for ex in examples:
        target, extra = sample_masks(ex, stage, rng, mask_rate)
        layouts.append(mask_graph(ex, target, mask_slots, extra))
    return collate(layouts, max_length)


# -- loop --------------------------------------------------------------------------

@dataclass
class TrainResult:
    model: EventFormer
    log: list[dict] = field(default_factory=list)
    best_step: int | None = None
    best_score: float | None = None

    def write_log(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(fh, fieldnames=["step", "loss_total", "loss_ce", "loss_focal", "loss_mse"])
            writer.writeheader()
            for row in self.log:
                writer.writerow({k: row[k] for k in writer.fieldnames})


def _batches(n: int, batch_size: int, rng: np.random.Generator):
    """Endless stream of index batches, reshuffled every epoch."""
    for epoch in itertools.count():
        perm = rng.permutation(n)
        for start in range(0, n, batch_size):
            yield epoch, perm[start:start + batch_size]


def train(
    examples: Sequence[ChainExample],
    model_config: ModelConfig,
    config: TrainConfig,
    model: EventFormer | None = None,
    validate: Callable[[EventFormer], float] | None = None,
    step_offset: int = 0,
) -> TrainResult:
    """Optimize ``model`` (fresh from ``model_config`` when None) for one stage.

    ``validate`` maps the model to a score (higher is better); when given,
    parameters of the best-scoring evaluation are restored at the end.
    """
    if not examples:
        raise DataError("train: empty corpus")
    if model is None:
        model = EventFormer(model_config)
    for layer in model.layers:
        layer.p = config.dropout
    model.cfg.dropout = config.dropout
    rng = np.random.default_rng(config.seed)
    model.dropout_rng = np.random.default_rng([config.seed, 1])
    params = model.parameters()
    opt = AdamW(params, config.lr, config.betas, config.adam_eps, config.weight_decay)
    result = TrainResult(model)
    best_state = None
    stream = _batches(len(examples), config.batch_size, rng)
    mcfg = model.cfg
    for step in range(1, config.max_steps + 1):
        epoch, idx = next(stream)
        if config.max_epochs is not None and epoch >= config.max_epochs:
            break
        model.train()
        batch = make_batch([examples[i] for i in idx], config.stage, rng, config.pretrain_mask_rate,
                           mcfg.mask_slots, mcfg.max_length)
        out = model(batch)
        losses = compute_losses(out, batch, config.weights, config.focal_gamma)
        opt.zero_grad()
        losses.total.backward()
        if config.grad_clip:
            clip_grad_norm(params, config.grad_clip)
        opt.step()
        row = {"step": step + step_offset, **losses.values()}
        result.log.append(row)
        if validate is not None and config.eval_every and step % config.eval_every == 0:
            model.eval()
            score = validate(model)
            if result.best_score is None or score > result.best_score:
                result.best_score, result.best_step = score, step + step_offset
                best_state = model.state_dict()
            log_.info("step %d loss %.4f val %.4f", step, row["loss_total"], score)
    model.eval()
    if validate is not None:
        score = validate(model)
        if result.best_score is None or score >= result.best_score:
            result.best_score, result.best_step = score, config.max_steps + step_offset
            best_state = None
        if best_state is not None:
            model.load_state_dict(best_state)
    return result


def train_two_stage(
    examples: Sequence[ChainExample],
    model_config: ModelConfig,
    pretrain: TrainConfig,
    posttrain: TrainConfig,
    validate: Callable[[EventFormer], float] | None = None,
) -> TrainResult:
    """Random-graph masked pretraining followed by last-graph post-training."""
    if pretrain.stage != "pretrain" or posttrain.stage != "posttrain":
        raise ValueError("train_two_stage needs a pretrain config and a posttrain config")
    first = train(examples, model_config, pretrain)
    second = train(examples, model_config, posttrain, model=first.model, validate=validate,
                   step_offset=len(first.log))
    second.log = first.log + second.log
    return second
