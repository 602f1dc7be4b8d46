"""Comparison harness: QKV network kinds, and two-stage against post-training only."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from typing import Sequence

from .batching import ChainExample
from .config import RunConfig
from .evaluation import Report, SplitMetrics, model_results, score
from .gnn import GNN_KINDS
from .pipeline import model_config_from, run_stages, train_configs_from


def with_values(run: RunConfig, **updates) -> RunConfig:
    """Copy of ``run`` with dotted keys replaced (use ``__`` for the dot in keyword names)."""
    values, prov = dict(run.values), dict(run.provenance)
    for k, v in updates.items():
        name = k.replace("__", ".")
        if name not in values:
            raise KeyError(name)
        values[name], prov[name] = v, "experiment"
    return RunConfig(values, prov)


def train_and_score(run: RunConfig, examples: dict[str, list[ChainExample]], num_verbs: int,
                    stages: Sequence[str] | None = None, split: str = "test") -> SplitMetrics:
    model_cfg = model_config_from(run, num_verbs)
    result = run_stages(examples, model_cfg, train_configs_from(run, stages))
    return score(model_results(result.model, examples[split], run["eval.tau"]), run["metrics.averaging"])


@dataclass
class AblationResult:
    rows: dict[str, SplitMetrics] = field(default_factory=dict)
    split: str = "test"

    def report(self, tau: float = 0.5, averaging: str = "macro") -> Report:
        return Report(dict(self.rows), tau, averaging)

    def table(self) -> str:
        return self.report().table()

    def to_json(self) -> dict:
        return {"split": self.split, "rows": {k: asdict(v) for k, v in self.rows.items()}}

    def dumps(self) -> str:
        return json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n"


def gnn_ablation(run: RunConfig, examples, num_verbs: int, kinds: Sequence[str] = GNN_KINDS,
                 split: str = "test") -> AblationResult:
    out = AblationResult(split=split)
    for kind in kinds:
        out.rows[kind] = train_and_score(with_values(run, gnn__kind=kind), examples, num_verbs, split=split)
    return out


def stage_ablation(run: RunConfig, examples, num_verbs: int, seeds: Sequence[int] = (0, 1, 2),
                   split: str = "test") -> AblationResult:
    """Per seed: the configured pretrain + posttrain sequence against posttrain alone.

    Both arms run the same number of post-training steps; the one-stage arm
    simply skips pretraining.
    """
    out = AblationResult(split=split)
    for seed in seeds:
        seeded = with_values(run, seed=seed)
        out.rows[f"two-stage/s{seed}"] = train_and_score(seeded, examples, num_verbs,
                                                         ("pretrain", "posttrain"), split)
        out.rows[f"one-stage/s{seed}"] = train_and_score(seeded, examples, num_verbs, ("posttrain",), split)
    return out
