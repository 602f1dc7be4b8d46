import json

import pytest
from hypothesis import given, settings, strategies as st

from eventformer.config import (
    KEY_BY_NAME,
    KEYS,
    ConfigKeyError,
    flatten,
    from_values,
    read_config_file,
    resolve,
)


def test_every_key_has_unique_flag_and_env():
    flags = [k.flag for k in KEYS]
    envs = [k.env for k in KEYS]
    assert len(set(flags)) == len(flags) == len(set(envs))
    assert KEY_BY_NAME["gnn.layers"].flag == "--gnn-layers"
    assert KEY_BY_NAME["model.layers"].flag == "--layers"
    assert KEY_BY_NAME["train.max_steps"].env == "EVENTFORMER_MAX_STEPS"


def test_precedence_flag_over_env_over_file_over_default(tmp_path):
    cfg = tmp_path / "c.toml"
    cfg.write_text('seed = 3\n[train]\nlr = 0.01\nbatch_size = 7\n[model]\nd = 32\n')
    env = {"EVENTFORMER_LR": "0.02", "EVENTFORMER_BATCH_SIZE": "9", "PATH": "/bin"}
    run = resolve({"train.lr": "0.05"}, cfg, env)
    assert run["train.lr"] == 0.05 and run.provenance["train.lr"] == "flag:--lr"
    assert run["train.batch_size"] == 9 and run.provenance["train.batch_size"] == "env:EVENTFORMER_BATCH_SIZE"
    assert run["model.d"] == 32 and run.provenance["model.d"].startswith("file:")
    assert run["model.heads"] == 4 and run.provenance["model.heads"] == "default"
    assert run["seed"] == 3


def test_json_config_and_nested_dict_value(tmp_path):
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"gen": {"args_per_event": {"2": 0.5, "3": 0.5}, "rule": "order1"}}))
    run = resolve({}, cfg, {})
    assert run["gen.args_per_event"] == {2: 0.5, 3: 0.5}
    assert run["gen.rule"] == "order1"


@pytest.mark.parametrize("text,match", [
    ("[model]\nwidth = 3\n", "unknown config key 'model.width'"),
    ("[model\n", "cannot parse"),
    ("[gnn]\nkind = 'sage'\n", "must be one of"),
    ("[train]\nlr = 'fast'\n", "bad value"),
])
def test_file_errors(tmp_path, text, match):
    cfg = tmp_path / "c.toml"
    cfg.write_text(text)
    with pytest.raises(ConfigKeyError, match=match):
        resolve({}, cfg, {})


def test_bad_env_and_unknown_flag_key():
    with pytest.raises(ConfigKeyError, match="EVENTFORMER_DROPOUT"):
        resolve({}, None, {"EVENTFORMER_DROPOUT": "high"})
    with pytest.raises(ConfigKeyError):
        resolve({"train.speed": 1}, None, {})


def test_value_parsers():
    run = resolve({"train.stages": "posttrain", "train.grad_clip": "none", "model.use_coreference": "off",
                   "gen.args_per_event": "2:0.25,3:0.75"}, None, {})
    assert run["train.stages"] == ("posttrain",)
    assert run["train.grad_clip"] is None
    assert run["model.use_coreference"] is False
    assert run["gen.args_per_event"] == {2: 0.25, 3: 0.75}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6), st.floats(1e-6, 1.0), st.sampled_from(["linear", "gcn", "gat", "gin"]))
def test_json_round_trip_through_from_values(seed, lr, kind):
    run = resolve({"seed": seed, "train.lr": lr, "gnn.kind": kind}, None, {})
    again = from_values(json.loads(json.dumps(run.to_json()))["values"], "checkpoint")
    assert again.values == run.values


def test_flatten_and_read(tmp_path):
    assert flatten({"a": {"b": 1}, "seed": 2}) == {"a.b": 1, "seed": 2}
    p = tmp_path / "c.toml"
    p.write_text("[eval]\ntau = 0.7\n")
    assert read_config_file(p) == {"eval.tau": 0.7}


def test_shipped_configs_parse():
    from pathlib import Path
    root = Path(__file__).resolve().parents[1] / "configs"
    for path in sorted(root.glob("*.toml")):
        resolve({}, path, {})
