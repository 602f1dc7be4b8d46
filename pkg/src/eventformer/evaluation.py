"""Verb Acc@K, noun set precision/recall/F1, verb-gated noun metrics and reports."""
from __future__ import annotations

import json
from collections import Counter, defaultdict
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from .batching import ChainExample, collate, mask_graph
from .events import EmptyInputError, EventChain, Vocabulary
from .model import EventFormer
from .numeric import cosine_similarity, no_grad

AVERAGING = ("macro", "micro")
TABLE_COLUMNS = ("Top1", "Top5", "P", "R", "F1", "P", "R", "F1")


class SplitMissingError(KeyError):
    pass


@dataclass(frozen=True)
class SampleResult:
    gold_verb: int
    ranked_verbs: tuple[int, ...]
    gold_nouns: frozenset[int]
    pred_nouns: frozenset[int]

    def __post_init__(self):
        if len(set(self.ranked_verbs)) != len(self.ranked_verbs):
            raise ValueError("ranked verb list contains duplicates")
        object.__setattr__(self, "ranked_verbs", tuple(int(v) for v in self.ranked_verbs))
        object.__setattr__(self, "gold_nouns", frozenset(int(n) for n in self.gold_nouns))
        object.__setattr__(self, "pred_nouns", frozenset(int(n) for n in self.pred_nouns))

    @property
    def verb_correct(self) -> bool:
        return bool(self.ranked_verbs) and self.ranked_verbs[0] == self.gold_verb


def acc_at_k(results: Sequence[SampleResult], k: int) -> float:
    if k < 1:
        raise ValueError("K must be >= 1")
    if not results:
        return 0.0
    return sum(r.gold_verb in r.ranked_verbs[:k] for r in results) / len(results)


def f1(p: float, r: float) -> float:
    return 2 * p * r / (p + r) if p + r > 0 else 0.0


def set_pr(pred: frozenset, gold: frozenset) -> tuple[Fraction, Fraction]:
    """Per-sample precision and recall; an empty set on either side scores 1 only if both are empty."""
    hit = len(pred & gold)
    p = Fraction(hit, len(pred)) if pred else Fraction(int(not gold))
    r = Fraction(hit, len(gold)) if gold else Fraction(int(not pred))
    return p, r


def _prf(results: Sequence[SampleResult], gate: Callable[[SampleResult], bool], averaging: str):
    """Exact rational arithmetic throughout, rounded to float once at the end."""
    if averaging not in AVERAGING:
        raise ValueError(f"averaging must be one of {AVERAGING}")
    if not results:
        return 0.0, 0.0, 0.0
    if averaging == "macro":
        zero = (Fraction(0), Fraction(0))
        pairs = [set_pr(res.pred_nouns, res.gold_nouns) if gate(res) else zero for res in results]
        p = sum((a for a, _ in pairs), Fraction(0)) / len(results)
        r = sum((b for _, b in pairs), Fraction(0)) / len(results)
    else:
        hits = sum(len(res.pred_nouns & res.gold_nouns) for res in results if gate(res))
        n_pred = sum(len(res.pred_nouns) for res in results)
        n_gold = sum(len(res.gold_nouns) for res in results)
        p = Fraction(hits, n_pred) if n_pred else Fraction(0)
        r = Fraction(hits, n_gold) if n_gold else Fraction(0)
    return float(p), float(r), float(f1(p, r))


def noun_prf(results: Sequence[SampleResult], averaging: str = "macro") -> tuple[float, float, float]:
    return _prf(results, lambda res: True, averaging)


def verb_noun_prf(results: Sequence[SampleResult], averaging: str = "macro") -> tuple[float, float, float]:
    """Noun metrics credited only on samples whose top-1 verb is right; averaged over all samples."""
    return _prf(results, lambda res: res.verb_correct, averaging)


# -- model predictions -------------------------------------------------------------

@dataclass
class Prediction:
    verbs: list[tuple[int, float]]  # (verb id, probability), best first
    nouns: list[int]
    slot_choices: list[dict] = field(default_factory=list)

    def to_json(self, vocab: Vocabulary | None = None) -> dict:
        out = {
            "verbs": [{"verb_id": v, "prob": p} for v, p in self.verbs],
            "nouns": [{"noun_id": n} for n in self.nouns],
            "slots": self.slot_choices,
        }
        if vocab is not None:
            for item in out["verbs"]:
                item["text"] = vocab.verbs[item["verb_id"]]
            for item in out["nouns"]:
                item["text"] = vocab.nouns[item["noun_id"]]
        return out


def select_nouns(slot_embeddings: np.ndarray, presence_logits: np.ndarray, candidates: np.ndarray,
                 candidate_lexemes: np.ndarray, tau: float) -> tuple[list[int], list[dict]]:
    """Each present slot (logit > 0) contributes its best candidate if cosine similarity >= tau."""
    if len(candidates) == 0:
        raise EmptyInputError("no historical argument nodes to choose nouns from")
    sim = cosine_similarity(slot_embeddings, candidates).data
    chosen, seen, slots = [], set(), []
    for s in range(len(slot_embeddings)):
        j = int(np.argmax(sim[s]))
        keep = bool(presence_logits[s] > 0 and sim[s, j] >= tau)
        lex = int(candidate_lexemes[j])
        slots.append({"slot": s, "presence_logit": float(presence_logits[s]), "best_noun_id": lex,
                      "similarity": float(sim[s, j]), "selected": keep})
        if keep and lex not in seen:
            seen.add(lex)
            chosen.append(lex)
    return chosen, slots


def predict_examples(model: EventFormer, examples: Sequence[ChainExample], tau: float = 0.5, top_k: int = 5,
                     batch_size: int = 64) -> list[Prediction]:
    """Mask each chain's target graph and decode verbs and nouns in eval mode."""
    was_training = model.training
    model.eval()
    preds = []
    try:
        with no_grad():
            for start in range(0, len(examples), batch_size):
                chunk = examples[start:start + batch_size]
                batch = collate([mask_graph(ex, ex.chain.target, model.cfg.mask_slots) for ex in chunk],
                                model.cfg.max_length)
                out = model(batch)
                logits = out.verb_logits.data
                probs = np.exp(logits - logits.max(-1, keepdims=True))
                probs /= probs.sum(-1, keepdims=True)
                for i in range(len(chunk)):
                    order = np.argsort(-probs[i], kind="stable")[:top_k]
                    mask = batch.cand_mask[i]
                    nouns, slots = select_nouns(out.noun_slot_embeddings.data[i],
                                                out.slot_presence_logits.data[i],
                                                batch.cand_raw[i][mask], batch.cand_lex[i][mask], tau)
                    preds.append(Prediction([(int(v), float(probs[i, v])) for v in order], nouns, slots))
    finally:
        if was_training:
            model.train()
    return preds


def gold_of(chain: EventChain) -> tuple[int, frozenset[int]]:
    target = chain.target_graph
    return target.trigger.lexeme_id, frozenset(a.lexeme_id for a in target.arguments)


def model_results(model: EventFormer, examples: Sequence[ChainExample], tau: float = 0.5,
                  top_k: int = 5) -> list[SampleResult]:
    results = []
    for ex, pred in zip(examples, predict_examples(model, examples, tau, top_k)):
        verb, nouns = gold_of(ex.chain)
        results.append(SampleResult(verb, tuple(v for v, _ in pred.verbs), nouns, frozenset(pred.nouns)))
    return results


# -- reference predictors ----------------------------------------------------------

class LastEventBaseline:
    """Sees only the event right before the target.

    Verbs are ranked by the training frequency of ``next | previous`` pairs
    (ties by overall frequency); nouns are the previous event's arguments.
    """

    def __init__(self, num_verbs: int):
        self.num_verbs = num_verbs
        self.pairs: dict[int, Counter] = defaultdict(Counter)
        self.overall: Counter = Counter()

    def fit(self, chains: Iterable[EventChain]) -> "LastEventBaseline":
        for chain in chains:
            verbs = [g.trigger.lexeme_id for g in chain.graphs]
            for prev, nxt in zip(verbs[:-1], verbs[1:]):
                self.pairs[prev][nxt] += 1
                self.overall[nxt] += 1
        return self

    def rank(self, previous_verb: int) -> tuple[int, ...]:
        cond = self.pairs.get(previous_verb, Counter())
        return tuple(sorted(range(self.num_verbs), key=lambda v: (-cond[v], -self.overall[v], v)))

    def results(self, chains: Sequence[EventChain]) -> list[SampleResult]:
        out = []
        for chain in chains:
            prev = chain.graphs[chain.target - 1]
            verb, nouns = gold_of(chain)
            out.append(SampleResult(verb, self.rank(prev.trigger.lexeme_id), nouns,
                                    frozenset(a.lexeme_id for a in prev.arguments)))
        return out


def random_verb_results(chains: Sequence[EventChain], num_verbs: int, seed: int = 0) -> list[SampleResult]:
    rng = np.random.default_rng(seed)
    out = []
    for chain in chains:
        verb, nouns = gold_of(chain)
        out.append(SampleResult(verb, tuple(int(v) for v in rng.permutation(num_verbs)), nouns, frozenset()))
    return out


# -- reports -----------------------------------------------------------------------

@dataclass
class SplitMetrics:
    top1: float
    top5: float
    noun_p: float
    noun_r: float
    noun_f1: float
    vn_p: float
    vn_r: float
    vn_f1: float
    samples: int

    def row(self) -> tuple[float, ...]:
        return (self.top1, self.top5, self.noun_p, self.noun_r, self.noun_f1, self.vn_p, self.vn_r, self.vn_f1)


def score(results: Sequence[SampleResult], averaging: str = "macro") -> SplitMetrics:
    noun = noun_prf(results, averaging)
    vn = verb_noun_prf(results, averaging)
    return SplitMetrics(acc_at_k(results, 1), acc_at_k(results, 5), *noun, *vn, samples=len(results))


@dataclass
class Report:
    splits: dict[str, SplitMetrics]
    tau: float = 0.5
    averaging: str = "macro"

    def to_json(self) -> dict:
        return {"tau": self.tau, "averaging": self.averaging,
                "splits": {k: asdict(v) for k, v in self.splits.items()}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_json(cls, payload: Mapping) -> "Report":
        return cls({k: SplitMetrics(**v) for k, v in payload["splits"].items()},
                   payload["tau"], payload["averaging"])

    def table(self) -> str:
        """Aligned text table, values in percent: Verb (Top1 Top5) | Noun (P R F1) | Verb-Noun (P R F1)."""
        name_w = max(5, *(len(k) for k in self.splits))
        groups = f"{'':<{name_w}} | {'Verb':^13} | {'Noun':^20} | {'Verb-Noun':^20}"
        cols = TABLE_COLUMNS
        header = (f"{'split':<{name_w}} | {cols[0]:>6} {cols[1]:>6} | {cols[2]:>6} {cols[3]:>6} {cols[4]:>6}"
                  f" | {cols[5]:>6} {cols[6]:>6} {cols[7]:>6}")
        lines = [groups, header, "-" * len(header)]
        for name, m in self.splits.items():
            v = [f"{100 * x:6.2f}" for x in m.row()]
            lines.append(f"{name:<{name_w}} | {v[0]} {v[1]} | {v[2]} {v[3]} {v[4]} | {v[5]} {v[6]} {v[7]}")
        return "\n".join(lines) + "\n"


def evaluate(model: EventFormer, splits: Mapping[str, Sequence[ChainExample]], names: Sequence[str] = ("val", "test"),
             tau: float = 0.5, averaging: str = "macro") -> Report:
    out = {}
    for name in names:
        if name not in splits:
            raise SplitMissingError(f"split {name!r} not available (have {sorted(splits)})")
        out[name] = score(model_results(model, splits[name], tau), averaging)
    return Report(out, tau, averaging)


def verb_noun_f1(model: EventFormer, examples: Sequence[ChainExample], tau: float = 0.5) -> float:
    """Validation score used for best-checkpoint selection."""
    return verb_noun_prf(model_results(model, examples, tau))[2]
