"""Glue between a resolved RunConfig and the library: data loading, training runs, checkpoints."""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .batching import ChainExample
from .config import ConfigKeyError, RunConfig
from .encoding import EmbeddingProvider, make_provider
from .evaluation import Report, evaluate, verb_noun_f1
from .events import EventChain, Vocabulary, read_corpus, validate_chain
from .gnn import GnnConfig
from .model import EventFormer, ModelConfig
from .numeric import load_checkpoint, save_checkpoint, set_default_dtype
from .synthetic import GeneratorConfig
from .training import LossWeights, TrainConfig, TrainResult, train

log = logging.getLogger(__name__)

SPLIT_NAMES = ("train", "val", "test")


class CorpusValidationError(ValueError):
    pass


def apply_precision(run: RunConfig) -> None:
    set_default_dtype(np.float64 if run["precision"] == "float64" else np.float32)


def provider_from(run: RunConfig) -> EmbeddingProvider:
    return make_provider(run["embedding.provider"], run["embedding.text_dim"], run["embedding.visual_dim"],
                         run["embedding.stub_seed"])


def generator_config_from(run: RunConfig) -> GeneratorConfig:
    """Generator settings; invalid combinations raise GeneratorConfigError."""
    return GeneratorConfig(
        seed=run["seed"], num_chains=run["gen.chains"], min_length=run["gen.min_length"],
        max_length=run["gen.max_length"], num_verbs=run["gen.verbs"], num_entities=run["gen.entities"],
        args_per_event=run["gen.args_per_event"], rule=run["gen.rule"], noise_rate=run["gen.noise_rate"],
        visual_dim=run["gen.feat_dim"],
    )


def model_config_from(run: RunConfig, num_verbs: int | None = None) -> ModelConfig:
    num_verbs = run["model.num_verbs"] or num_verbs
    if not num_verbs:
        raise ConfigKeyError("model.num_verbs unknown: pass a vocabulary or set --num-verbs")
    try:
        return _model_config(run, num_verbs)
    except ValueError as exc:
        raise ConfigKeyError(f"model config: {exc}") from None


def _model_config(run: RunConfig, num_verbs: int) -> ModelConfig:
    gnn = GnnConfig(kind=run["gnn.kind"], layers=run["gnn.layers"], heads=run["gnn.heads"],
                    in_dim=run["model.d"], out_dim=run["model.d"],
                    use_role_embeddings=run["gnn.use_role_embeddings"])
    return ModelConfig(
        num_verbs=num_verbs, embed_dim=run["embedding.text_dim"] + run["embedding.visual_dim"], d=run["model.d"],
        layers=run["model.layers"], heads=run["model.heads"], ffn_dim=run["model.ffn_dim"],
        head_hidden=run["model.head_hidden"], dropout=run["train.dropout"], ce_scale=run["model.ce_scale"],
        use_coreference=run["model.use_coreference"], mask_slots=run["model.mask_slots"],
        graph_position=run["model.graph_position"], max_length=run["model.max_length"],
        shared_graph_attention=run["attention.shared_graph_attention"],
        attention_logit_scale=run["attention.logit_scale"], gnn=gnn, seed=run["seed"],
    )


def train_configs_from(run: RunConfig, stages: Sequence[str] | None = None) -> list[TrainConfig]:
    try:
        return _train_configs(run, stages)
    except ValueError as exc:
        raise ConfigKeyError(f"train config: {exc}") from None


def _train_configs(run: RunConfig, stages: Sequence[str] | None) -> list[TrainConfig]:
    out = []
    for i, stage in enumerate(stages or run["train.stages"]):
        steps = run["train.max_steps"]
        if stage == "pretrain" and run["train.pretrain_steps"] is not None:
            steps = run["train.pretrain_steps"]
        out.append(TrainConfig(
            lr=run["train.lr"], weight_decay=run["train.weight_decay"], batch_size=run["train.batch_size"],
            max_steps=steps, max_epochs=run["train.max_epochs"], dropout=run["train.dropout"],
            seed=run["seed"] * 1000 + i, stage=stage, pretrain_mask_rate=run["train.pretrain_mask_rate"],
            focal_gamma=run["train.focal_gamma"],
            weights=LossWeights(run["train.alpha"], run["train.beta"], run["train.gamma"]),
            grad_clip=run["train.grad_clip"], eval_every=run["train.eval_every"], tau=run["eval.tau"],
        ))
    return out


def load_corpus(path, vocab: Vocabulary | None = None, max_length: int = 50) -> list[EventChain]:
    chains = read_corpus(path)
    for chain in chains:
        problems = validate_chain(chain, vocab, max_length)
        if problems:
            raise CorpusValidationError(f"{path}: chain {chain.chain_id!r}: {problems[0]}")
    return chains


@dataclass
class Dataset:
    vocab: Vocabulary
    chains: dict[str, list[EventChain]]

    @classmethod
    def load(cls, data_dir, splits: Sequence[str] = SPLIT_NAMES, max_length: int = 50) -> "Dataset":
        root = Path(data_dir)
        vocab = Vocabulary.load(root / "vocab.json")
        chains = {}
        for name in splits:
            path = root / f"{name}.jsonl"
            if path.exists():
                chains[name] = load_corpus(path, vocab, max_length)
        return cls(vocab, chains)

    def examples(self, provider: EmbeddingProvider) -> dict[str, list[ChainExample]]:
        return {k: [ChainExample.build(c, provider) for c in v] for k, v in self.chains.items()}


def run_stages(examples: dict[str, list[ChainExample]], model_cfg: ModelConfig,
               stages: Sequence[TrainConfig], select_on_val: bool = True) -> TrainResult:
    """Train through ``stages`` in order, carrying the model; pick the best validation state in the last."""
    if "train" not in examples or not examples["train"]:
        raise ValueError("no training chains")
    model, logs, result = None, [], None
    val = examples.get("val") if select_on_val else None
    for i, cfg in enumerate(stages):
        last = i == len(stages) - 1
        validate = (lambda m: verb_noun_f1(m, val, cfg.tau)) if (last and val) else None
        result = train(examples["train"], model_cfg, cfg, model=model, validate=validate, step_offset=len(logs))
        model = result.model
        logs.extend(result.log)
    if result is None:
        result = TrainResult(EventFormer(model_cfg))
    result.log = logs
    return result


def save_model(path, model: EventFormer, run: RunConfig | None = None) -> None:
    config = {"model": model.cfg.to_dict()}
    if run is not None:
        config["run"] = run.to_json()["values"]
    save_checkpoint(path, model.state_dict(), config)


def load_model(path) -> tuple[EventFormer, dict]:
    state, config = load_checkpoint(path)
    model = EventFormer(ModelConfig.from_dict(config["model"]))
    model.load_state_dict(state)
    model.eval()
    return model, config


def train_run(run: RunConfig, data_dir, out_dir=None) -> tuple[EventFormer, TrainResult, Report | None]:
    """The ``train`` subcommand: returns the model, its loss log and a val/test report."""
    apply_precision(run)
    data = Dataset.load(data_dir, max_length=run["model.max_length"])
    examples = data.examples(provider_from(run))
    model_cfg = model_config_from(run, len(data.vocab.verbs))
    result = run_stages(examples, model_cfg, train_configs_from(run))
    have = [s for s in ("val", "test") if s in examples]
    report = evaluate(result.model, examples, have, run["eval.tau"], run["metrics.averaging"]) if have else None
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        save_model(out / "checkpoint.json", result.model, run)
        result.write_log(out / "loss_log.csv")
        (out / "run_config.json").write_text(json.dumps(run.to_json(), indent=2, sort_keys=True) + "\n")
        if report is not None:
            (out / "report.json").write_text(report.dumps())
    return result.model, result, report
