import io
import json

import pytest

from eventformer.cli import heatmap, main, probe_chain
from eventformer.events import chain_to_json, read_corpus

import numpy as np

SMALL = ["--d", "16", "--layers", "1", "--heads", "2", "--max-steps", "3", "--pretrain-steps", "2",
         "--batch-size", "8", "--lr", "0.01", "--dropout", "0"]


def run(argv, environ=None):
    out = io.StringIO()
    code = main(argv, out=out, environ=environ or {})
    return code, out.getvalue()


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    code, text = run(["gen", "--out", str(root), "--chains", "60", "--seed", "4", "--gen-max-length", "6"])
    assert code == 0 and "train: 51 chains" in text
    return root


@pytest.fixture(scope="module")
def trained(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    code, text = run(["train", "--data", str(corpus), "--out", str(out), *SMALL])
    assert code == 0, text
    assert "steps=5" in text
    return out


def test_train_writes_artifacts(trained):
    for name in ("checkpoint.json", "loss_log.csv", "run_config.json", "report.json"):
        assert (trained / name).exists()
    cfg = json.loads((trained / "run_config.json").read_text())
    assert cfg["provenance"]["model.d"] == "flag:--d"
    assert len((trained / "loss_log.csv").read_text().splitlines()) == 6


def test_eval_reproduces_train_report(corpus, trained, tmp_path):
    code, text = run(["eval", "--checkpoint", str(trained / "checkpoint.json"), "--data", str(corpus),
                      "--out", str(tmp_path / "r.json")])
    assert code == 0 and "Top1" in text
    assert json.loads((tmp_path / "r.json").read_text()) == json.loads((trained / "report.json").read_text())


def test_predict_and_next(corpus, trained, tmp_path):
    chain = read_corpus(corpus / "test.jsonl")[0]
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(chain_to_json(chain)))
    ck = str(trained / "checkpoint.json")
    code, text = run(["predict", "--chain", str(path), "--checkpoint", ck, "--vocab", str(corpus / "vocab.json")])
    payload = json.loads(text)
    assert code == 0 and len(payload["prediction"]["verbs"]) == 5 and "gold" in payload
    assert payload["prediction"]["verbs"][0]["text"].startswith("verb")
    code, text = run(["predict", "--chain", str(path), "--checkpoint", ck, "--next", "--top-k", "3"])
    payload = json.loads(text)
    assert code == 0 and payload["target_index"] == len(chain) and "gold" not in payload
    assert len(payload["prediction"]["verbs"]) == 3


def test_inspect_dump(corpus, trained, tmp_path):
    chain = read_corpus(corpus / "val.jsonl")[0]
    path = tmp_path / "chain.json"
    path.write_text(json.dumps(chain_to_json(chain)))
    code, text = run(["inspect", "--chain", str(path), "--checkpoint", str(trained / "checkpoint.json"),
                      "--out", str(tmp_path / "att.json")])
    assert code == 0 and "graph attention" in text
    dump = json.loads((tmp_path / "att.json").read_text())
    g = np.asarray(dump["layers"][0]["graph_attention"])
    assert g.shape == (len(dump["node_labels"]), len(chain))
    np.testing.assert_allclose(g.sum(-1), 1.0, atol=1e-5)
    assert len(dump["layers"][0]["heads"]) == 2
    assert any("[mask-trigger]" in label for label in dump["node_labels"])


def test_gradcheck_and_params(corpus):
    code, text = run(["gradcheck", "--all-kinds", "--dim", "4"])
    assert code == 0 and text.startswith("PASS max_rel_err=")
    code, text = run(["params", "--vocab", str(corpus / "vocab.json"), "--d", "16", "--layers", "1"])
    assert code == 0 and text.startswith("parameters ")
    assert run(["params", "--vocab", str(corpus / "vocab.json"), "--d", "16", "--layers", "1"])[1] == text


def test_ablate_gnn(corpus, tmp_path):
    code, text = run(["ablate", "--data", str(corpus), "--kinds", "linear,gin", "--out", str(tmp_path / "a.json"),
                      *SMALL])
    assert code == 0
    rows = json.loads((tmp_path / "a.json").read_text())["rows"]
    assert set(rows) == {"linear", "gin"}
    assert "linear" in text and "gin" in text


def test_env_supplies_options_and_keys(corpus, tmp_path):
    env = {"EVENTFORMER_OUT": str(tmp_path / "g"), "EVENTFORMER_CHAINS": "20"}
    code, text = run(["gen"], env)
    assert code == 0 and "train: 17 chains" in text


@pytest.mark.parametrize("argv,env", [
    (["train", "--bogus"], {}),
    (["gen"], {}),  # --out missing
    (["gen", "--out", "x", "--chains", "many"], {}),
    (["params"], {}),  # no verb count
    (["gen", "--out", "x"], {"EVENTFORMER_NOT_A_KEY": "1"}),
    (["gen", "--out", "x"], {"EVENTFORMER_CHAINS": "-3"}),
    (["eval", "--checkpoint", "missing.json", "--data", "nowhere"], {}),
    ([], {}),
])
def test_invalid_usage_exits_1(argv, env, tmp_path, monkeypatch):
    monkeypatch.chdir(tmp_path)
    assert run(argv, env)[0] == 1


def test_corrupt_corpus_exits_1(tmp_path):
    (tmp_path / "vocab.json").write_text('{"verbs": ["a"], "nouns": ["b"]}')
    (tmp_path / "train.jsonl").write_text('{"chain_id": "x", "graphs": [{"trigger": {}}]}\n')
    assert run(["train", "--data", str(tmp_path), "--out", str(tmp_path / "o")])[0] == 1


def test_internal_error_exits_2(monkeypatch):
    import eventformer.cli as cli
    monkeypatch.setitem(cli.COMMANDS, "params", lambda *a: 1 / 0)
    assert run(["params"])[0] == 2


def test_version_and_help():
    code, _ = run(["--version"])
    assert code == 0


def test_probe_chain_and_heatmap():
    chain = probe_chain(3, 2)
    assert len(chain) == 3 and chain.graphs[2].trigger.lexeme_id == 2
    text = heatmap(np.array([[0.0, 1.0], [0.5, 0.5]]), ["a", "bb"], ["g0", "g1"])
    assert text.splitlines()[1].endswith("@@@@")
