"""Rule-driven event-chain corpora small enough to learn on a laptop.

Rules
-----
order1
    ``verb_t = perm[verb_{t-1}]`` for a permutation fixed by the seed; the
    subject of event t is the subject of event t-1, the other arguments are
    drawn fresh.
order2
    ``verb_t = (verb_{t-1} + verb_{t-2}) mod V``; event t re-uses the
    arguments (and roles) of event t-2.  Neither the verb nor the nouns can
    be read off the last event alone.
coref_subject
    order1 verbs; the subject of event t is the subject entity of event t-2.
"""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .events import ArgRole, EventChain, Vocabulary, make_chain, write_corpus

RULES = ("order1", "order2", "coref_subject")
ROLE_ORDER = (ArgRole.SUBJ, ArgRole.OBJ, ArgRole.INSTRUMENT, ArgRole.LOCATION, ArgRole.OTHER)
SPLITS = (("train", 0.85), ("val", 0.05), ("test", 0.10))
NOISE_STREAM = 1 << 30
PERM_STREAM = (1 << 30) + 1
BASE_STREAM = (1 << 30) + 2


class GeneratorConfigError(ValueError):
    pass


@dataclass
class GeneratorConfig:
    seed: int = 0
    num_chains: int = 1000
    min_length: int = 3
    max_length: int = 15
    num_verbs: int = 16
    num_entities: int = 12
    args_per_event: dict = field(default_factory=lambda: {2: 0.4, 3: 0.4, 4: 0.15, 5: 0.05})
    rule: str = "order2"
    noise_rate: float = 0.0
    visual_dim: int = 8
    chain_jitter: float = 0.3  # per-chain shift of an entity's visual vector
    occurrence_jitter: float = 0.05

    def __post_init__(self):
        self.args_per_event = {int(k): float(v) for k, v in self.args_per_event.items()}
        if self.num_verbs < 3 or self.num_entities < 3:
            raise GeneratorConfigError("need at least 3 verbs and 3 entities")
        if self.rule not in RULES:
            raise GeneratorConfigError(f"rule must be one of {RULES}, got {self.rule!r}")
        if not 3 <= self.min_length <= self.max_length <= 15:
            raise GeneratorConfigError("chain lengths must satisfy 3 <= min_length <= max_length <= 15")
        if not self.args_per_event or any(k < 2 or k > 5 for k in self.args_per_event):
            raise GeneratorConfigError("argument counts must lie in 2..5")
        if abs(sum(self.args_per_event.values()) - 1.0) > 1e-9 or min(self.args_per_event.values()) < 0:
            raise GeneratorConfigError("args_per_event must be a probability distribution")
        if not 0.0 <= self.noise_rate <= 1.0:
            raise GeneratorConfigError("noise_rate must be in [0, 1]")
        if self.num_chains < 1:
            raise GeneratorConfigError("num_chains must be positive")

    def to_dict(self) -> dict:
        out = asdict(self)
        out["args_per_event"] = {str(k): v for k, v in self.args_per_event.items()}
        return out

    @classmethod
    def from_dict(cls, payload: dict) -> "GeneratorConfig":
        return cls(**payload)

    @property
    def permutation(self) -> np.ndarray:
        return np.random.default_rng([self.seed, PERM_STREAM]).permutation(self.num_verbs)

    def vocabulary(self) -> Vocabulary:
        return Vocabulary([f"verb{k}" for k in range(self.num_verbs)],
                          [f"noun{k}" for k in range(self.num_entities)])


def _next_verb(verbs: list[int], cfg: GeneratorConfig, perm: np.ndarray) -> int:
    if cfg.rule == "order2":
        return (verbs[-1] + verbs[-2]) % cfg.num_verbs
    return int(perm[verbs[-1]])


def _draw_args(rng, cfg: GeneratorConfig, forced_subject: int | None = None) -> list[int]:
    counts = sorted(cfg.args_per_event)
    k = int(rng.choice(counts, p=[cfg.args_per_event[c] for c in counts]))
    k = min(k, cfg.num_entities)
    if forced_subject is None:
        return [int(e) for e in rng.choice(cfg.num_entities, size=k, replace=False)]
    pool = np.array([e for e in range(cfg.num_entities) if e != forced_subject])
    return [forced_subject] + [int(e) for e in rng.choice(pool, size=k - 1, replace=False)]


def _chain_plan(idx: int, cfg: GeneratorConfig, perm: np.ndarray) -> tuple[list[int], list[list[int]]]:
    rng = np.random.default_rng([cfg.seed, idx])
    length = int(rng.integers(cfg.min_length, cfg.max_length + 1))
    verbs = [int(v) for v in rng.integers(cfg.num_verbs, size=2)]
    if cfg.rule != "order2":
        verbs = verbs[:1]
    while len(verbs) < length:
        verbs.append(_next_verb(verbs, cfg, perm))
    args: list[list[int]] = []
    for t in range(length):
        if cfg.rule == "order2":
            args.append(list(args[t - 2]) if t >= 2 else _draw_args(rng, cfg))
        elif cfg.rule == "order1":
            args.append(_draw_args(rng, cfg, args[t - 1][0] if t >= 1 else None))
        else:
            args.append(_draw_args(rng, cfg, args[t - 2][0] if t >= 2 else None))
    return verbs, args


def _render(idx: int, verbs: list[int], args: list[list[int]], cfg: GeneratorConfig,
            base: np.ndarray) -> EventChain:
    rng = np.random.default_rng([cfg.seed, idx, 1])
    shift = cfg.chain_jitter * rng.standard_normal(base.shape)
    coref: dict[int, int] = {}
    events = []
    for v, ents in zip(verbs, args):
        arg_specs = []
        for role, e in zip(ROLE_ORDER, ents):
            feat = base[e] + shift[e] + cfg.occurrence_jitter * rng.standard_normal(cfg.visual_dim)
            arg_specs.append((f"noun{e}", e, role.value, coref.setdefault(e, len(coref)), feat.tolist()))
        events.append((f"verb{v}", v, arg_specs))
    return make_chain(f"{cfg.rule}-{cfg.seed}-{idx:06d}", events)


def noisy_chains(cfg: GeneratorConfig) -> set[int]:
    """Indices of the chains whose target verb breaks the rule."""
    n_bad = int(round(cfg.noise_rate * cfg.num_chains))
    rng = np.random.default_rng([cfg.seed, NOISE_STREAM])
    return {int(i) for i in rng.choice(cfg.num_chains, size=n_bad, replace=False)}


def generate_chains(cfg: GeneratorConfig) -> list[EventChain]:
    perm = cfg.permutation
    base = np.random.default_rng([cfg.seed, BASE_STREAM]).standard_normal((cfg.num_entities, cfg.visual_dim))
    noisy = noisy_chains(cfg)
    chains = []
    for idx in range(cfg.num_chains):
        verbs, args = _chain_plan(idx, cfg, perm)
        if idx in noisy:
            rng = np.random.default_rng([cfg.seed, idx, 2])
            shift = int(rng.integers(1, cfg.num_verbs))
            verbs[-1] = (verbs[-1] + shift) % cfg.num_verbs
        chains.append(_render(idx, verbs, args, cfg, base))
    return chains


def split_chains(chains: list[EventChain]) -> dict[str, list[EventChain]]:
    n = len(chains)
    n_train = int(round(SPLITS[0][1] * n))
    n_val = int(round(SPLITS[1][1] * n))
    return {"train": chains[:n_train], "val": chains[n_train:n_train + n_val],
            "test": chains[n_train + n_val:]}


def generate(cfg: GeneratorConfig, out_dir) -> dict[str, Path]:
    """Write ``train/val/test.jsonl``, ``vocab.json`` and ``gen_config.json`` under ``out_dir``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, chains in split_chains(generate_chains(cfg)).items():
        paths[name] = out / f"{name}.jsonl"
        write_corpus(paths[name], chains)
    paths["vocab"] = out / "vocab.json"
    cfg.vocabulary().save(paths["vocab"])
    paths["config"] = out / "gen_config.json"
    paths["config"].write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n")
    return paths


def load_generator_config(path) -> GeneratorConfig:
    return GeneratorConfig.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class OraclePrediction:
    verb: int
    nouns: frozenset[int]  # the nouns the rule pins down; empty when none are determined
    subject: int | None


def oracle_predict(chain: EventChain, cfg: GeneratorConfig) -> OraclePrediction:
    """Apply the generating rule to the history preceding the chain's target."""
    if cfg.rule not in RULES:
        raise GeneratorConfigError(f"unknown rule {cfg.rule!r}")
    t = chain.target
    history = chain.graphs[:t]
    verbs = [g.trigger.lexeme_id for g in history]
    if cfg.rule == "order2":
        if t < 2:
            raise ValueError("order2 needs two preceding events")
        verb = (verbs[-1] + verbs[-2]) % cfg.num_verbs
        source = history[-2]
        nouns = frozenset(a.lexeme_id for a in source.arguments)
        return OraclePrediction(verb, nouns, _subject(source))
    if t < 1:
        raise ValueError(f"{cfg.rule} needs a preceding event")
    verb = int(cfg.permutation[verbs[-1]])
    lag = 1 if cfg.rule == "order1" else 2
    if t < lag:
        return OraclePrediction(verb, frozenset(), None)
    subject = _subject(history[-lag])
    return OraclePrediction(verb, frozenset({subject}), subject)


def _subject(graph) -> int:
    for a in graph.arguments:
        if graph.role_of(a.node_id) is ArgRole.SUBJ:
            return a.lexeme_id
    raise ValueError("graph has no subject argument")
