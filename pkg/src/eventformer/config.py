"""Run configuration: one flat key registry merged from defaults, file, environment and flags.

Precedence is flags > environment > file > defaults.  Every key has exactly one
command-line flag and one environment variable (``EVENTFORMER_`` + the flag
name upper-cased with dashes as underscores), and the resolved value keeps the
source it came from.
"""
from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Mapping

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

ENV_PREFIX = "EVENTFORMER_"
PREFIXED_SECTIONS = ("gnn",)


class ConfigKeyError(ValueError):
    """Unknown or malformed configuration key/value."""


def parse_bool(text) -> bool:
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def optional(kind: Callable) -> Callable:
    def parse(text):
        if text is None or (isinstance(text, str) and text.strip().lower() in ("", "none", "null")):
            return None
        return kind(text)
    parse.__name__ = f"optional_{kind.__name__}"
    return parse


def string_list(text) -> tuple[str, ...]:
    if isinstance(text, (list, tuple)):
        return tuple(str(t) for t in text)
    return tuple(t.strip() for t in str(text).split(",") if t.strip())


def int_dict(text) -> dict[int, float]:
    """``"2:0.5,3:0.5"`` or a mapping."""
    if isinstance(text, Mapping):
        return {int(k): float(v) for k, v in text.items()}
    out = {}
    for part in str(text).split(","):
        k, _, v = part.partition(":")
        out[int(k)] = float(v)
    return out


@dataclass(frozen=True)
class Key:
    name: str
    parse: Callable
    default: Any
    help: str
    choices: tuple | None = None
    flag_name: str | None = None

    @property
    def flag(self) -> str:
        if self.flag_name:
            return "--" + self.flag_name
        section, _, rest = self.name.rpartition(".")
        stem = f"{section}-{rest}" if section in PREFIXED_SECTIONS else rest
        return "--" + stem.replace("_", "-")

    @property
    def env(self) -> str:
        return ENV_PREFIX + self.flag[2:].replace("-", "_").upper()

    def convert(self, value, source: str):
        try:
            out = self.parse(value)
        except (TypeError, ValueError) as exc:
            raise ConfigKeyError(f"{source}: bad value {value!r} for {self.name}: {exc}") from None
        if self.choices is not None and out not in self.choices:
            raise ConfigKeyError(f"{source}: {self.name} must be one of {self.choices}, got {out!r}")
        return out


KEYS: tuple[Key, ...] = (
    Key("seed", int, 0, "master seed for initialization, sampling and generation"),
    Key("precision", str, "float32", "floating-point width for training and inference", ("float32", "float64")),
    # embedding provider
    Key("embedding.provider", str, "stub", "node embedding provider", ("stub", "file")),
    Key("embedding.text_dim", int, 16, "text embedding width d_T"),
    Key("embedding.visual_dim", int, 8, "visual embedding width d_V"),
    Key("embedding.stub_seed", int, 13, "hash seed of the stub provider"),
    # model
    Key("model.num_verbs", optional(int), None, "verb vocabulary size (default: from the vocabulary file)"),
    Key("model.d", int, 64, "model width"),
    Key("model.layers", int, 2, "encoder layers"),
    Key("model.heads", int, 4, "attention heads"),
    Key("model.ffn_dim", optional(int), None, "feed-forward width (default 4*d)"),
    Key("model.head_hidden", optional(int), None, "hidden width of the prediction heads (default d)"),
    Key("model.ce_scale", float, 1.0, "coreference encoding scale s"),
    Key("model.use_coreference", parse_bool, True, "add the coreference encoding at the input"),
    Key("model.mask_slots", int, 4, "argument placeholders in the masked graph"),
    Key("model.graph_position", str, "learned", "graph-offset embedding", ("none", "learned")),
    Key("model.max_length", int, 50, "maximum chain length"),
    Key("attention.shared_graph_attention", parse_bool, False, "share graph attention across heads"),
    Key("attention.logit_scale", float, 1.0, "multiplier on graph/node softmax inputs (1.0: unscaled)"),
    Key("gnn.kind", str, "gin", "network producing Q, K, V", ("linear", "gcn", "gat", "gin")),
    Key("gnn.layers", int, 1, "message-passing layers per projection"),
    Key("gnn.heads", int, 4, "heads of the gat kind"),
    Key("gnn.use_role_embeddings", parse_bool, True, "add learned role embeddings to messages"),
    # training
    Key("train.stages", string_list, ("pretrain", "posttrain"), "comma-separated stage sequence"),
    Key("train.lr", float, 1e-5, "learning rate"),
    Key("train.weight_decay", float, 1e-6, "decoupled weight decay"),
    Key("train.batch_size", int, 64, "chains per step"),
    Key("train.max_steps", int, 300, "optimizer steps per stage"),
    Key("train.pretrain_steps", optional(int), None, "steps of the pretrain stage (default max_steps)"),
    Key("train.max_epochs", optional(int), None, "epoch cap per stage"),
    Key("train.dropout", float, 0.3, "dropout rate"),
    Key("train.pretrain_mask_rate", float, 0.15, "extra graphs hidden per chain while pretraining"),
    Key("train.alpha", float, 1.0, "verb cross-entropy weight"),
    Key("train.beta", float, 1.0, "noun focal weight"),
    Key("train.gamma", float, 0.5, "noun MSE weight"),
    Key("train.focal_gamma", float, 2.0, "focal focusing parameter g"),
    Key("train.grad_clip", optional(float), None, "global gradient-norm clip"),
    Key("train.eval_every", int, 0, "validation interval in steps (0: end of stage only)"),
    # evaluation
    Key("eval.tau", float, 0.5, "noun similarity threshold"),
    Key("metrics.averaging", str, "macro", "noun metric averaging", ("macro", "micro")),
    # synthetic corpora
    Key("gen.rule", str, "order2", "generating rule", ("order1", "order2", "coref_subject")),
    Key("gen.chains", int, 1000, "number of chains"),
    Key("gen.verbs", int, 16, "verb vocabulary size V"),
    Key("gen.entities", int, 12, "entity count M"),
    Key("gen.min_length", int, 3, "shortest chain", flag_name="gen-min-length"),
    Key("gen.max_length", int, 15, "longest chain", flag_name="gen-max-length"),
    Key("gen.args_per_event", int_dict, {2: 0.4, 3: 0.4, 4: 0.15, 5: 0.05}, "argument-count distribution"),
    Key("gen.noise_rate", float, 0.0, "fraction of chains with a rule-breaking target verb"),
    Key("gen.feat_dim", int, 8, "visual feature width written to the corpus"),
)
KEY_BY_NAME = {k.name: k for k in KEYS}
KEY_BY_FLAG = {k.flag: k for k in KEYS}
KEY_BY_ENV = {k.env: k for k in KEYS}
assert len(KEY_BY_FLAG) == len(KEYS), "flag names must be unique"


def flatten(tree: Mapping, prefix: str = "") -> dict[str, Any]:
    out = {}
    for k, v in tree.items():
        name = f"{prefix}{k}"
        if isinstance(v, Mapping) and name not in KEY_BY_NAME:
            out.update(flatten(v, name + "."))
        else:
            out[name] = v
    return out


def read_config_file(path) -> dict[str, Any]:
    path = Path(path)
    text = path.read_text()
    try:
        tree = json.loads(text) if path.suffix == ".json" else tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigKeyError(f"{path}: cannot parse config: {exc}") from None
    flat = flatten(tree)
    unknown = sorted(set(flat) - set(KEY_BY_NAME))
    if unknown:
        raise ConfigKeyError(f"{path}: unknown config key {unknown[0]!r}")
    return flat


@dataclass
class RunConfig:
    values: dict[str, Any]
    provenance: dict[str, str]

    def __getitem__(self, name: str):
        return self.values[name]

    def section(self, prefix: str) -> dict[str, Any]:
        p = prefix + "."
        return {k[len(p):]: v for k, v in self.values.items() if k.startswith(p)}

    def to_json(self) -> dict:
        def plain(v):
            if isinstance(v, tuple):
                return list(v)
            if isinstance(v, dict):
                return {str(a): b for a, b in v.items()}
            return v
        return {"values": {k: plain(v) for k, v in self.values.items()}, "provenance": dict(self.provenance)}


def resolve(flags: Mapping[str, Any] | None = None, config_path=None,
            environ: Mapping[str, str] | None = None) -> RunConfig:
    """Merge the four sources; ``flags`` maps key names to raw values given on the command line."""
    environ = os.environ if environ is None else environ
    values = {k.name: k.default for k in KEYS}
    prov = {k.name: "default" for k in KEYS}
    if config_path is not None:
        for name, raw in read_config_file(config_path).items():
            values[name] = KEY_BY_NAME[name].convert(raw, str(config_path))
            prov[name] = f"file:{config_path}"
    for env, raw in environ.items():
        if not env.startswith(ENV_PREFIX) or env not in KEY_BY_ENV:
            continue
        key = KEY_BY_ENV[env]
        values[key.name] = key.convert(raw, env)
        prov[key.name] = f"env:{env}"
    for name, raw in (flags or {}).items():
        if name not in KEY_BY_NAME:
            raise ConfigKeyError(f"unknown config key {name!r}")
        key = KEY_BY_NAME[name]
        values[name] = key.convert(raw, key.flag)
        prov[name] = f"flag:{key.flag}"
    return RunConfig(values, prov)


def from_values(values: Mapping[str, Any], source: str) -> RunConfig:
    """Rebuild a config from stored values (e.g. a checkpoint); missing keys take defaults."""
    out = {k.name: k.default for k in KEYS}
    prov = {k.name: "default" for k in KEYS}
    for name, raw in values.items():
        if name not in KEY_BY_NAME:
            raise ConfigKeyError(f"{source}: unknown config key {name!r}")
        out[name] = KEY_BY_NAME[name].convert(raw, source)
        prov[name] = source
    return RunConfig(out, prov)
