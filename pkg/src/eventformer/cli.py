"""Command-line driver.

Exit codes: 0 success, 1 validation failure (bad flags, config or data; a
failed gradient check), 2 internal error.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import replace
from pathlib import Path
from typing import Sequence

import numpy as np

from . import __version__
from .batching import ChainExample, collate, mask_graph
from .config import ENV_PREFIX, KEY_BY_ENV, KEYS, ConfigKeyError, RunConfig, from_values, resolve
from .encoding import ConfigurationError, StubProvider
from .evaluation import Prediction, SplitMissingError, evaluate, gold_of, predict_examples
from .events import (
    CorpusFormatError,
    EmptyInputError,
    EventChain,
    EventGraph,
    Vocabulary,
    chain_from_json,
    make_chain,
)
from .experiments import gnn_ablation, stage_ablation
from .gnn import GNN_KINDS, GnnConfig
from .model import EventFormer, ModelConfig, count_parameters
from .numeric import CheckpointError, DimensionError, NondeterministicError, default_dtype, grad_check, no_grad
from .pipeline import (
    CorpusValidationError,
    Dataset,
    apply_precision,
    generator_config_from,
    load_model,
    model_config_from,
    provider_from,
    train_run,
)
from .synthetic import GeneratorConfigError, generate
from .training import LossWeights, batch_matching, compute_losses

EXIT_OK, EXIT_INVALID, EXIT_INTERNAL = 0, 1, 2
VALIDATION_ERRORS = (
    ConfigKeyError, ConfigurationError, CorpusFormatError, CorpusValidationError, EmptyInputError,
    GeneratorConfigError, CheckpointError, SplitMissingError, DimensionError, FileNotFoundError,
    NondeterministicError,
)
SHADES = " .:-=+*#%@"

MODEL_SECTIONS = ("seed", "precision", "embedding", "model", "attention", "gnn")
TRAIN_SECTIONS = MODEL_SECTIONS + ("train", "eval", "metrics")
SUBCOMMAND_SECTIONS = {
    "gen": ("seed", "gen"),
    "train": TRAIN_SECTIONS,
    "eval": ("precision", "eval", "metrics"),
    "predict": MODEL_SECTIONS + ("eval",),
    "inspect": MODEL_SECTIONS + ("eval",),
    "gradcheck": ("seed", "gnn", "model"),
    "params": MODEL_SECTIONS,
    "ablate": TRAIN_SECTIONS,
}


class UsageError(Exception):
    pass


class ValidationFailure(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}")


def _section(name: str) -> str:
    return name.split(".", 1)[0] if "." in name else name


def _add_keys(parser: argparse.ArgumentParser, sections: Sequence[str]) -> None:
    group = parser.add_argument_group("configuration (flag > EVENTFORMER_* env > --config file > default)")
    for key in KEYS:
        if _section(key.name) not in sections:
            continue
        default = key.default
        if isinstance(default, tuple):
            default = ",".join(default)
        elif isinstance(default, dict):
            default = ",".join(f"{k}:{v}" for k, v in default.items())
        extra = f"; one of {', '.join(map(str, key.choices))}" if key.choices else ""
        group.add_argument(key.flag, dest=f"key:{key.name}", default=argparse.SUPPRESS, metavar="VALUE",
                           help=f"{key.help} (default: {default}{extra}) [{key.env}]")


# Options that are not config keys but still read EVENTFORMER_<NAME> when not given.
def _opt(parser, flag: str, **kw):
    env = ENV_PREFIX + flag.lstrip("-").replace("-", "_").upper()
    required = kw.pop("required", False)
    help_text = kw.pop("help", "")
    if required:
        help_text += " (required)"
    parser.add_argument(flag, default=None, help=f"{help_text} [{env}]", **kw)
    parser.set_defaults(**{f"_env:{kw.get('dest', flag.lstrip('-').replace('-', '_'))}": (env, required, flag)})


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="eventformer", description="Event-chain prediction with hierarchical graph attention.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)

    def command(name, help_text):
        p = sub.add_parser(name, help=help_text, description=help_text)
        p.add_argument("--config", default=None, help="TOML or JSON config file")
        _add_keys(p, SUBCOMMAND_SECTIONS[name])
        return p

    p = command("gen", "write a synthetic corpus (train/val/test.jsonl, vocab.json, gen_config.json)")
    _opt(p, "--out", required=True, help="output directory")

    p = command("train", "train a model; writes checkpoint.json, loss_log.csv, run_config.json, report.json")
    _opt(p, "--data", required=True, help="corpus directory with train.jsonl, val.jsonl, vocab.json")
    _opt(p, "--out", required=True, help="output directory")

    p = command("eval", "evaluate a checkpoint on corpus splits")
    _opt(p, "--checkpoint", required=True, help="checkpoint file")
    _opt(p, "--data", required=True, help="corpus directory")
    p.add_argument("--split", action="append", choices=("val", "test"),
                   help="split to score; repeatable (default: val and test)")
    _opt(p, "--out", help="report JSON path")

    for name, text in (("predict", "predict the masked target event of one chain"),
                       ("inspect", "dump hierarchical attention for one chain as JSON plus an ASCII heatmap")):
        p = command(name, text)
        _opt(p, "--chain", required=True, help="JSON file holding one chain")
        _opt(p, "--checkpoint", help="checkpoint file (default: freshly initialized model)")
        _opt(p, "--vocab", help="vocabulary file for labels and the verb count")
        _opt(p, "--top-k", type=int, help="verbs to list (default 5)")
        p.add_argument("--next", action="store_true",
                       help="predict an event after the last graph instead of the chain's target graph")
        _opt(p, "--out", required=name == "inspect", help="output JSON path")

    p = command("gradcheck", "central-difference check of the full model in 64-bit with dropout off")
    _opt(p, "--dim", type=int, help="model width (default 8)")
    _opt(p, "--graphs", type=int, help="graphs in the probe chain (default 3)")
    _opt(p, "--args-per-graph", type=int, help="arguments per graph (default 2)")
    _opt(p, "--tolerance", type=float, help="relative tolerance (default 1e-3)")
    p.add_argument("--all-kinds", action="store_true", help="check every QKV network kind")

    p = command("params", "print the parameter count of a configured model")
    _opt(p, "--vocab", help="vocabulary file supplying the verb count")

    p = command("ablate", "train variants on one corpus and print a comparison table")
    _opt(p, "--data", required=True, help="corpus directory")
    _opt(p, "--out", help="JSON output path")
    p.add_argument("--compare", choices=("gnn", "stages"), default="gnn", help="what to vary (default gnn)")
    _opt(p, "--kinds", help=f"comma-separated QKV kinds (default {','.join(GNN_KINDS)})")
    _opt(p, "--seeds", help="comma-separated seeds for --compare stages (default 0,1,2)")
    return parser


def _fill_env(args: argparse.Namespace, environ) -> None:
    for name in [n for n in vars(args) if n.startswith("_env:")]:
        dest = name[len("_env:"):]
        env, required, flag = getattr(args, name)
        if getattr(args, dest, None) is None and env in environ:
            setattr(args, dest, environ[env])
        if required and getattr(args, dest, None) is None:
            raise UsageError(f"eventformer {args.command}: error: missing {flag} (or {env})")


def _check_env(parser: argparse.ArgumentParser, environ) -> None:
    known = set(KEY_BY_ENV)
    for action in _all_actions(parser):
        for opt in action.option_strings:
            known.add(ENV_PREFIX + opt.lstrip("-").replace("-", "_").upper())
    for name in environ:
        if name.startswith(ENV_PREFIX) and name not in known:
            raise UsageError(f"unknown environment variable {name}")


def _all_actions(parser):
    for action in parser._actions:
        yield action
        if isinstance(action, argparse._SubParsersAction):
            for sp in action.choices.values():
                yield from sp._actions


def _run_config(args, environ) -> RunConfig:
    flags = {k[4:]: v for k, v in vars(args).items() if k.startswith("key:")}
    return resolve(flags, args.config, environ)


def _write(path, text: str) -> None:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(text)


# -- subcommands -------------------------------------------------------------------

def cmd_gen(args, run: RunConfig, out) -> int:
    paths = generate(generator_config_from(run), args.out)
    for name in ("train", "val", "test"):
        n = sum(1 for _ in open(paths[name]))
        print(f"{name}: {n} chains -> {paths[name]}", file=out)
    return EXIT_OK


def cmd_train(args, run: RunConfig, out) -> int:
    _, result, report = train_run(run, args.data, args.out)
    if result.log:
        first, last = result.log[0], result.log[-1]
        print(f"steps={len(result.log)} loss {first['loss_total']:.4f} -> {last['loss_total']:.4f}", file=out)
    if report is not None:
        out.write(report.table())
    print(f"checkpoint -> {Path(args.out) / 'checkpoint.json'}", file=out)
    return EXIT_OK


def _checkpoint_run(config: dict, overrides: RunConfig | None = None) -> RunConfig:
    stored = from_values(config.get("run", {}), "checkpoint")
    if overrides is None:
        return stored
    for name, src in overrides.provenance.items():
        if src != "default":
            stored.values[name], stored.provenance[name] = overrides.values[name], src
    return stored


def cmd_eval(args, run: RunConfig, out) -> int:
    model, config = load_model(args.checkpoint)
    run = _checkpoint_run(config, run)
    apply_precision(run)
    data = Dataset.load(args.data, splits=("val", "test"), max_length=model.cfg.max_length)
    splits = args.split or ["val", "test"]
    report = evaluate(model, data.examples(provider_from(run)), splits, run["eval.tau"], run["metrics.averaging"])
    out.write(report.table())
    if args.out:
        _write(args.out, report.dumps())
    return EXIT_OK


def _read_chain(path) -> EventChain:
    text = Path(path).read_text()
    try:
        return chain_from_json(json.loads(text))
    except json.JSONDecodeError:
        lines = [line for line in text.splitlines() if line.strip()]
        if len(lines) != 1:
            raise CorpusFormatError(f"{path}: expected one chain, found {len(lines)} lines") from None
        return chain_from_json(json.loads(lines[0]))


def _with_future_slot(chain: EventChain) -> EventChain:
    """Append a stand-in graph to be masked; its content never reaches the model."""
    last = chain.graphs[-1]
    offset = max(n.node_id for n in chain.nodes()) + 1
    nodes = tuple(replace(n, node_id=n.node_id + offset, raw_feature=None) for n in last.nodes)
    edges = tuple((u + offset, v + offset, r) for u, v, r in last.edges)
    return EventChain(chain.chain_id, chain.graphs + (EventGraph(nodes, edges),), len(chain.graphs))


def _model_for(args, run: RunConfig) -> tuple[EventFormer, RunConfig, Vocabulary | None]:
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    if args.checkpoint:
        model, config = load_model(args.checkpoint)
        run = _checkpoint_run(config, run)
        apply_precision(run)
        return model, run, vocab
    apply_precision(run)
    model = EventFormer(model_config_from(run, len(vocab.verbs) if vocab else None))
    model.eval()
    return model, run, vocab


def _prepare(args, run) -> tuple[EventFormer, RunConfig, Vocabulary | None, ChainExample]:
    model, run, vocab = _model_for(args, run)
    chain = _read_chain(args.chain)
    if args.next:
        chain = _with_future_slot(chain)
    return model, run, vocab, ChainExample.build(chain, provider_from(run))


def cmd_predict(args, run: RunConfig, out) -> int:
    model, run, vocab, example = _prepare(args, run)
    top_k = int(args.top_k or 5)
    pred: Prediction = predict_examples(model, [example], run["eval.tau"], top_k)[0]
    payload = {"chain_id": example.chain.chain_id, "target_index": example.chain.target,
               "prediction": pred.to_json(vocab)}
    if not args.next:
        verb, nouns = gold_of(example.chain)
        payload["gold"] = {"verb_id": verb, "noun_ids": sorted(nouns)}
    text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    if args.out:
        _write(args.out, text)
    out.write(text)
    return EXIT_OK


def node_labels(example: ChainExample, layout, vocab: Vocabulary | None) -> list[str]:
    labels = []
    for src, tmpl, g in zip(layout.source, layout.template, layout.graph_of):
        if src < 0:
            labels.append(f"g{g}:[mask-trigger]" if tmpl == 0 else f"g{g}:[mask-slot{tmpl - 1}]")
            continue
        node = example.chain.nodes()[src]
        labels.append(f"g{g}:{node.text}")
    return labels


def heatmap(matrix: np.ndarray, rows: Sequence[str], cols: Sequence[str]) -> str:
    """Shade each cell by its value relative to the matrix maximum."""
    top = float(matrix.max()) or 1.0
    width = max(len(r) for r in rows)
    lines = [" " * width + " | " + " ".join(f"{c[:4]:>4}" for c in cols)]
    for label, row in zip(rows, matrix):
        cells = " ".join(f"{SHADES[min(len(SHADES) - 1, int(v / top * (len(SHADES) - 1) + 0.5))] * 4}" for v in row)
        lines.append(f"{label:>{width}} | {cells}")
    return "\n".join(lines) + "\n"


def cmd_inspect(args, run: RunConfig, out) -> int:
    model, run, vocab, example = _prepare(args, run)
    layout = mask_graph(example, example.chain.target, model.cfg.mask_slots)
    batch = collate([layout], model.cfg.max_length)
    model.eval()
    with no_grad():
        result = model(batch)
    labels = node_labels(example, layout, vocab)
    graphs = [f"g{g}" + ("*" if g == layout.target else "") for g in range(example.num_graphs)]
    layers = []
    for i, trace in enumerate(result.traces):
        s_g = trace.s_g[0].mean(axis=0)
        s_n = trace.s_n[0].mean(axis=0)
        layers.append({
            "layer": i,
            "graph_attention": s_g.tolist(),
            "node_attention": s_n.tolist(),
            "heads": [{"graph_attention": trace.s_g[0, h].tolist(), "node_attention": trace.s_n[0, h].tolist()}
                      for h in range(trace.s_g.shape[1])],
        })
    pred = predict_examples(model, [example], run["eval.tau"], int(args.top_k or 5))[0]
    payload = {"chain_id": example.chain.chain_id, "target_index": layout.target, "node_labels": labels,
               "graph_labels": graphs, "layers": layers, "prediction": pred.to_json(vocab)}
    _write(args.out, json.dumps(payload, indent=2, sort_keys=True) + "\n")
    for layer in layers:
        out.write(f"layer {layer['layer']} graph attention (head mean, * = masked target)\n")
        out.write(heatmap(np.asarray(layer["graph_attention"]), labels, graphs))
    print(f"attention dump -> {args.out}", file=out)
    return EXIT_OK


def probe_chain(graphs: int, args_per_graph: int) -> EventChain:
    """Small chain whose graph g has verb g and nouns g, g+1, ... (each noun its own entity)."""
    roles = ("subj", "obj", "instrument", "location", "other")
    events = []
    for g in range(graphs):
        nouns = [g + a for a in range(args_per_graph)]
        events.append((f"verb{g}", g, [(f"noun{n}", n, roles[a % len(roles)], n) for a, n in enumerate(nouns)]))
    return make_chain("gradcheck-probe", events)


def cmd_gradcheck(args, run: RunConfig, out) -> int:
    dim, graphs = int(args.dim or 8), int(args.graphs or 3)
    per = int(args.args_per_graph or 2)
    tol = float(args.tolerance or 1e-3)
    if graphs < 2:
        raise ConfigKeyError("--graphs must be >= 2 (the masked graph needs history)")
    kinds = GNN_KINDS if args.all_kinds else (run["gnn.kind"],)
    worst, failed = 0.0, []
    with default_dtype(np.float64):
        chain = probe_chain(graphs, per)
        example = ChainExample.build(chain, StubProvider(6, 4, seed=run["seed"]))
        batch = collate([mask_graph(example, graphs - 1, 2)])
        for kind in kinds:
            heads = 2 if dim % 2 == 0 else 1
            cfg = ModelConfig(num_verbs=graphs, embed_dim=10, d=dim, layers=1, heads=heads, dropout=0.0,
                              mask_slots=2, seed=run["seed"],
                              gnn=GnnConfig(kind=kind, heads=heads, in_dim=dim, out_dim=dim))
            model = EventFormer(cfg)
            model.eval()
            fixed = batch_matching(model(batch), batch)
            report = grad_check(lambda: compute_losses(model(batch), batch, LossWeights(), matchings=fixed).total,
                                model.parameters(), tolerance=tol, rng=np.random.default_rng(run["seed"]))
            worst = max(worst, report.max_rel_err)
            if not report.passed:
                failed.append(kind)
            print(f"  {kind}: {report.summary()}", file=sys.stderr)
    status = "FAIL" if failed else "PASS"
    print(f"{status} max_rel_err={worst:.3e}", file=out)
    if failed:
        raise ValidationFailure(f"gradient check failed for {', '.join(failed)}")
    return EXIT_OK


def cmd_params(args, run: RunConfig, out) -> int:
    vocab = Vocabulary.load(args.vocab) if args.vocab else None
    cfg = model_config_from(run, len(vocab.verbs) if vocab else None)
    n = count_parameters(cfg)
    print(f"parameters {n} ({n / 1e6:.2f}M)", file=out)
    return EXIT_OK


def cmd_ablate(args, run: RunConfig, out) -> int:
    apply_precision(run)
    data = Dataset.load(args.data, max_length=run["model.max_length"])
    examples = data.examples(provider_from(run))
    if args.compare == "gnn":
        kinds = tuple(k.strip() for k in (args.kinds or ",".join(GNN_KINDS)).split(","))
        bad = [k for k in kinds if k not in GNN_KINDS]
        if bad:
            raise ConfigKeyError(f"--kinds: unknown kind {bad[0]!r}")
        result = gnn_ablation(run, examples, len(data.vocab.verbs), kinds)
    else:
        seeds = tuple(int(s) for s in (args.seeds or "0,1,2").split(","))
        result = stage_ablation(run, examples, len(data.vocab.verbs), seeds)
    out.write(result.table())
    if args.out:
        _write(args.out, result.dumps())
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen, "train": cmd_train, "eval": cmd_eval, "predict": cmd_predict, "inspect": cmd_inspect,
    "gradcheck": cmd_gradcheck, "params": cmd_params, "ablate": cmd_ablate,
}


def main(argv: Sequence[str] | None = None, out=None, environ=None) -> int:
    out = sys.stdout if out is None else out
    environ = os.environ if environ is None else environ
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        if not args.command:
            parser.print_help(out)
            return EXIT_INVALID
        _check_env(parser, environ)
        _fill_env(args, environ)
        run = _run_config(args, environ)
        return COMMANDS[args.command](args, run, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_INVALID
    except ValidationFailure as exc:
        print(f"validation failure: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except SystemExit as exc:  # --help and --version
        return int(exc.code or 0)
    except Exception:  # noqa: BLE001 - last-resort reporting for the exit-code contract
        traceback.print_exc()
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
