import csv
import hashlib
import json

import numpy as np
import pytest

from latentcbf import __version__
from latentcbf.barrier import BarrierBank, HalfSpace, Sphere, save_bank
from latentcbf.cli import ConfigError, load_config, main
from latentcbf.cli.config import parse_assignment
from latentcbf.dataio import SafetyDataset, write_dump


def run(*argv):
    return main([str(a) for a in argv])


def sha(path):
    return hashlib.sha256(open(path, "rb").read()).hexdigest()


@pytest.fixture
def moons(tmp_path):
    path = tmp_path / "moons.cbfa"
    assert run("gen-synth", "--n-per-class", 300, "--seed", 1, "--out", path) == 0
    return path


def test_gen_synth(tmp_path):
    a, b = tmp_path / "a.cbfa", tmp_path / "b.cbfa"
    assert run("gen-synth", "--n-per-class", 500, "--out", a) == 0
    assert run("gen-synth", "--n-per-class", 500, "--out", b) == 0
    assert sha(a) == sha(b)
    from latentcbf.dataio import read_dump
    assert len(read_dump(a)) == 1000
    assert run("gen-synth", "--d-h", 1, "--out", tmp_path / "c.cbfa") == 1
    assert run("gen-synth", "--format", "jsonl", "--out", tmp_path / "c.jsonl") == 0


def test_train_reports_and_reproduces(tmp_path, moons):
    out = tmp_path / "m.cbfb"
    argv = ("train", "--data", moons, "--out", out, "--epochs", 200, "--seed", 0, "--report", tmp_path / "r.json")
    assert run(*argv) == 0
    report = json.loads((tmp_path / "r.json").read_text())
    assert report["version"] == __version__ and report["config"]["train"]["epochs"] == 200
    assert report["train_accuracy"] >= 0.95
    assert report["records"]["train"] + report["records"]["test"] == 600
    rows = list(csv.DictReader(open(f"{out}.loss.csv")))
    assert len(rows) == 201 and rows[0]["epoch"] == "0"
    first = sha(out)
    assert run(*argv) == 0
    assert sha(out) == first


def test_train_single_class_is_data_error(tmp_path):
    ds = SafetyDataset(np.random.default_rng(0).normal(size=(20, 2)), [1] * 20, [str(i) for i in range(20)])
    write_dump(ds, tmp_path / "one.cbfa")
    assert run("train", "--data", tmp_path / "one.cbfa", "--out", tmp_path / "m.cbfb", "--epochs", 2) == 2


def test_bad_inputs_exit_codes(tmp_path):
    (tmp_path / "junk.cbfa").write_bytes(b"nonsense")
    assert run("train", "--data", tmp_path / "junk.cbfa", "--out", tmp_path / "m.cbfb") == 2
    assert run("train", "--data", tmp_path / "missing.cbfa", "--out", tmp_path / "m.cbfb") == 1
    assert run("steer", "--model", tmp_path / "none.cbfb", "--input", tmp_path / "junk.cbfa",
               "--out", tmp_path / "o.jsonl") == 1
    assert run("verify", "--set", "verify.nope=1") == 1
    assert run("verify", "--mode", "fast") == 1
    assert run("no-such-command") == 1


def _sequences(tmp_path, states_by_id, name="seq.cbfa"):
    X, ids = [], []
    for sid, S in states_by_id.items():
        X.extend(S)
        ids.extend([sid] * len(S))
    path = tmp_path / name
    write_dump(SafetyDataset(np.array(X, dtype=np.float32), [1] * len(X), ids), path)
    return path


def _records(path):
    return [json.loads(l) for l in open(path)]


def test_steer_qp_and_top2_agree_on_two_constraints(tmp_path):
    save_bank(BarrierBank([HalfSpace([0, 1], 0.0), HalfSpace([1, 1], 0.5)]), tmp_path / "two.cbfb")
    rng = np.random.default_rng(0)
    seqs = {f"s{i}": np.cumsum(rng.normal(size=(15, 2)) * 0.3, axis=0) + [0, 1] for i in range(20)}
    data = _sequences(tmp_path, seqs)
    outs = {}
    for mode in ("qp", "top2"):
        out = tmp_path / f"{mode}.jsonl"
        assert run("steer", "--model", tmp_path / "two.cbfb", "--input", data, "--mode", mode,
                   "--out", out, "--report", tmp_path / f"{mode}.json") == 0
        outs[mode] = np.array([r["state"] for r in _records(out)])
    np.testing.assert_allclose(outs["qp"], outs["top2"], atol=1e-6)
    report = json.loads((tmp_path / "qp.json").read_text())
    assert report["unsafe_steps_after"] <= report["unsafe_steps_before"]


def test_steer_safe_passthrough(tmp_path):
    save_bank(BarrierBank([Sphere([0, 0], 10.0)]), tmp_path / "big.cbfb")
    seqs = {"a": np.linspace([0, 0], [1, 2], 8), "b": np.linspace([1, 1], [-1, 0], 5)}
    data = _sequences(tmp_path, seqs)
    assert run("steer", "--model", tmp_path / "big.cbfb", "--input", data, "--out", tmp_path / "o.jsonl",
               "--report", tmp_path / "r.json") == 0
    recs = _records(tmp_path / "o.jsonl")
    assert len(recs) == 13
    for r in recs:
        np.testing.assert_allclose(r["state"], r["original_state"], atol=1e-12)
    # trajectory records written by the steer command can be fed back in
    assert run("steer", "--model", tmp_path / "big.cbfb", "--input", tmp_path / "o.jsonl",
               "--out", tmp_path / "o2.jsonl", "--report", tmp_path / "r2.json") == 0


def test_steer_dimension_mismatch(tmp_path):
    save_bank(BarrierBank([Sphere([0, 0, 0], 1.0)]), tmp_path / "m.cbfb")
    data = _sequences(tmp_path, {"a": np.zeros((3, 2))})
    assert run("steer", "--model", tmp_path / "m.cbfb", "--input", data, "--out", tmp_path / "o.jsonl") == 2


def test_verify_suites(tmp_path):
    out = tmp_path / "v.json"
    assert run("verify", "--scenarios", 200, "--steps", 200, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["report"]["invariance_violations"] == 0 and rep["version"] == __version__
    assert rep["config"]["verify"]["n_scenarios"] == 200
    assert run("verify", "--suite", "unsafe_start", "--scenarios", 200, "--steps", 300, "--alpha", 1,
               "--set", "verify.halfspaces=0", "--set", "verify.obstacles=2", "--out", out) == 0
    assert json.loads(out.read_text())["report"]["stabilization_bound_holds"] is True
    assert run("verify", "--suite", "negative_control", "--scenarios", 100, "--steps", 200, "--out", out) == 0
    rep = json.loads(out.read_text())["report"]
    assert rep["invariance_violations"] > 0 and rep["passed"] is True


def test_verify_failure_exit_code(tmp_path):
    # a large step makes the discretized filter overshoot on interior balls
    assert run("verify", "--scenarios", 50, "--steps", 100, "--set", "verify.dt=0.2",
               "--set", "verify.inside_balls=1", "--set", "verify.halfspaces=0", "--set", "verify.obstacles=0",
               "--out", tmp_path / "v.json") == 3


def test_verify_with_model(tmp_path):
    save_bank(BarrierBank([HalfSpace([1, 0], 1.0), Sphere([0, 0], 2.0)]), tmp_path / "m.cbfb")
    assert run("verify", "--model", tmp_path / "m.cbfb", "--scenarios", 50, "--steps", 50,
               "--out", tmp_path / "v.json") == 0


def test_compose_single_model_matches_steer(tmp_path):
    save_bank(BarrierBank([HalfSpace([0, 1], 0.0)]), tmp_path / "a.cbfb")
    seqs = {"a": np.linspace([0, 1], [0, -1], 10)}
    data = _sequences(tmp_path, seqs)
    assert run("compose", "--models", tmp_path / "a.cbfb", "--data", data, "--modes", "lse",
               "--save-merged", tmp_path / "merged.cbfb", "--out", tmp_path / "c.json") == 0
    comp = json.loads((tmp_path / "c.json").read_text())
    assert comp["K"] == 1 and comp["rates"]["original"]["composed_count"] > 0
    assert run("steer", "--model", tmp_path / "merged.cbfb", "--input", data, "--out", tmp_path / "o.jsonl",
               "--report", tmp_path / "r.json") == 0
    steer_report = json.loads((tmp_path / "r.json").read_text())
    assert steer_report["unsafe_steps_after"] == comp["rates"]["lse"]["composed_count"]


def test_compose_rejects_single_state_sequences(tmp_path):
    save_bank(BarrierBank([HalfSpace([0, 1], 0.0)]), tmp_path / "a.cbfb")
    data = _sequences(tmp_path, {f"s{i}": np.array([[0.0, float(i)]]) for i in range(3)})
    assert run("compose", "--models", tmp_path / "a.cbfb", "--data", data) == 2


def test_compose_mode_comparison(tmp_path):
    for k in range(2):
        w = np.zeros(3)
        w[k] = -1.0
        save_bank(BarrierBank([HalfSpace(w, 1.0)], [f"cat{k}"]), tmp_path / f"m{k}.cbfb")
    seqs = {f"s{i}": np.linspace([0, 0, 0], [2, 2, 0.5 * i], 20) for i in range(4)}
    data = _sequences(tmp_path, seqs)
    out = tmp_path / "c.json"
    assert run("compose", "--models", tmp_path / "m0.cbfb", tmp_path / "m1.cbfb", "--data", data,
               "--modes", "qp,lse,top2", "--set", "steer.dt=0.1", "--out", out) == 0
    rep = json.loads(out.read_text())
    assert rep["categories"] == ["cat0", "cat1"]
    assert set(rep["rates"]) == {"original", "qp", "lse", "top2"}
    assert rep["rates"]["qp"]["composed_count"] == 0
    assert rep["membership_agreement"]["lse_vs_qp"] == 1.0


def test_bench_small(tmp_path):
    out = tmp_path / "b.json"
    with pytest.warns(UserWarning):
        assert run("bench", "--K", 3, "--d-h", 16, "--trials", 10, "--reference-trials", 3, "--out", out) == 0
    rep = json.loads(out.read_text())
    assert set(rep["modes"]) == {"lse", "top2", "qp"}
    for m, s in rep["modes"].items():
        assert s["mean_ms"] > 0 and s["trials"] == 10
        assert rep["speedup_vs_reference"][m] == pytest.approx(rep["reference"]["mean_ms"] / s["mean_ms"])
    assert rep["warnings"] and rep["hardware"]["cpu_count"] >= 1
    assert rep["config"]["bench"]["K"] == 3


def test_config_precedence(tmp_path, monkeypatch):
    cfg_file = tmp_path / "c.yaml"
    cfg_file.write_text("steer:\n  alpha: 0.5\n  kappa: 20\ntrain:\n  epochs: 7\n")
    monkeypatch.setenv("BSTEER_STEER_KAPPA", "30")
    monkeypatch.setenv("BSTEER_TRAIN_LEARNING_RATE", "0.5")
    cfg = load_config(cfg_file, overrides=[("steer", "kappa", 40.0)])
    assert cfg["steer"]["alpha"] == 0.5 and cfg["steer"]["kappa"] == 40.0
    assert cfg["train"]["epochs"] == 7 and cfg["train"]["learning_rate"] == 0.5
    assert cfg.sources["steer.kappa"] == "flag" and cfg.sources["train.learning_rate"] == "env"
    assert cfg.steering().kappa == 40.0 and cfg.training().epochs == 7
    monkeypatch.delenv("BSTEER_STEER_KAPPA")
    assert load_config(cfg_file)["steer"]["kappa"] == 20.0
    assert load_config()["steer"]["kappa"] == 10.0


def test_config_rejects_unknown_and_bad_values(tmp_path, monkeypatch):
    for text in ("bogus:\n  a: 1\n", "steer:\n  speed: 2\n", "steer:\n  alpha: fast\n", "[1, 2]", "steer: [\n"):
        (tmp_path / "c.yaml").write_text(text)
        with pytest.raises(ConfigError):
            load_config(tmp_path / "c.yaml")
    with pytest.raises(ConfigError):
        load_config(overrides=[("steer", "alpha", -1.0)]).steering()
    monkeypatch.setenv("BSTEER_NOSECTION", "1")
    with pytest.raises(ConfigError):
        load_config()
    with pytest.raises(ConfigError):
        parse_assignment("alpha=1")
    assert parse_assignment("steer.alpha=0.2") == ("steer", "alpha", "0.2")


def test_version_flag(capsys):
    assert run("--version") == 0
    assert __version__ in capsys.readouterr().out
