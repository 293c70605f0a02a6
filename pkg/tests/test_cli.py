import json

import numpy as np
import pytest

import remex.cli as cli
from conftest import TOY_CSV, TOY_SCHEMA
from remex.cli import main, run_verify, verification_strategies
from remex.data import synth_gaussian_linear, write_csv
from remex.models import load_model
from remex.removal import FixedBaselineRemoval

TOY = ["--data", str(TOY_CSV), "--schema", str(TOY_SCHEMA)]


def explain(tmp_path, *extra, name="r.json"):
    out = tmp_path / name
    code = main(["explain", *TOY, "--out", str(out), *extra])
    return code, (json.loads(out.read_text()) if code == 0 else None)


def test_explain_occlusion_shape(tmp_path):
    code, rep = explain(tmp_path, "--preset", "Occlusion", "--instance", "0", "--model", "linear")
    assert code == 0
    assert rep["kind"] == "attribution" and len(rep["attributions"]) == 4
    assert rep["seed"] == 0 and "wall_time_ms" in rep
    assert rep["method"]["name"] == "Occlusion" and rep["method"]["substituted"] is False
    assert rep["method"]["removal"]["params"]["baseline"] == "zeros"
    assert [row["feature"] for row in rep["plot_data"]] == ["age", "income", "region", "hours"]
    # remove-individual on the prediction game: d + 1 evaluations
    assert rep["evaluations_used"] <= 5


def test_explain_sage_efficiency(tmp_path):
    data, _ = synth_gaussian_linear(3, [0, 0, 0], np.diag([1.0, 2.0, 0.5]), [1.0, -1.0, 2.0], 0.3, 400, seed=5)
    csv = tmp_path / "s.csv"
    sch = write_csv(csv, data)
    (tmp_path / "s.json").write_text(json.dumps(sch.to_dict()))
    out = tmp_path / "sage.json"
    code = main(["explain", "--data", str(csv), "--schema", str(tmp_path / "s.json"), "--preset", "SAGE",
                 "--model", "linear", "--out", str(out)])
    assert code == 0
    rep = json.loads(out.read_text())
    gap = rep["game"]["u_full"] - rep["game"]["u_empty"]
    assert abs(sum(rep["attributions"]) - gap) < 1e-8
    assert rep["instance"] is None


def test_explain_explicit_triple_and_overrides(tmp_path):
    code, rep = explain(tmp_path, "--removal", "marginal", "--behavior", "dataset_loss_label",
                        "--summary", "include_individual", "--model", "linear")
    assert code == 0 and rep["method"]["name"] is None
    assert rep["method"]["position"]["summary"] == "Include individual"
    code, rep = explain(tmp_path, "--preset", "RISE", "--instance", "1", "--summary", "p=0.25", "--samples", "64")
    assert code == 0 and rep["method"]["summary"]["params"]["p"] == 0.25
    assert rep["stderr"] is not None


def test_explain_config_errors(tmp_path, capsys):
    assert explain(tmp_path, "--preset", "SAGE", "--instance", "0")[0] == 2
    assert "instance" in capsys.readouterr().err
    assert explain(tmp_path, "--preset", "Occlusion")[0] == 2
    assert explain(tmp_path, "--preset", "NoSuchMethod")[0] == 2
    assert explain(tmp_path, "--preset", "SAGE", "--samples", "0")[0] == 2
    assert explain(tmp_path, "--removal", "marginal", "--behavior", "prediction")[0] == 2
    assert explain(tmp_path, "--preset", "SAGE", "--removal", "bogus=1")[0] == 2
    assert main(["explain", "--bogus-flag"]) == 2
    assert main(["explain", "--data", str(tmp_path / "missing.csv"), "--columns", "a:continuous",
                 "--preset", "SAGE"]) == 2


def test_explain_runtime_error(tmp_path, capsys):
    code, _ = explain(tmp_path, "--preset", "MIR", "--instance", "0", "--summary", "threshold_fraction=2.0")
    assert code == 3
    assert "Infeasible" in capsys.readouterr().err


def test_explain_parse_error(tmp_path):
    bad = tmp_path / "bad.csv"
    bad.write_text("a,y\n1,2\nx,3\n")
    assert main(["explain", "--data", str(bad), "--columns", "a:continuous,y:continuous", "--label", "y",
                 "--preset", "SAGE"]) == 2


def test_explain_deterministic_and_thread_independent(tmp_path):
    reps = []
    for i, threads in enumerate(["1", "1", "4"]):
        code, rep = explain(tmp_path, "--preset", "KernelSHAP", "--instance", "2", "--threads", threads,
                            name=f"k{i}.json")
        assert code == 0
        rep.pop("wall_time_ms")
        reps.append(json.dumps(rep, sort_keys=True))
    assert reps[0] == reps[1] == reps[2]


def test_fit_roundtrip(tmp_path):
    out = tmp_path / "m.json"
    assert main(["fit", *TOY, "--model", "tree", "--max-depth", "2", "--out", str(out)]) == 0
    tree = load_model(out)
    assert tree.coverage[0] == 40
    code, rep = explain(tmp_path, "--preset", "TreeSHAP", "--instance", "0", "--model", str(out))
    assert code == 0 and rep["model"]["type"] == "DecisionTreeModel"
    assert explain(tmp_path, "--preset", "TreeSHAP", "--instance", "0", "--model", "linear")[0] == 2


def test_verify_clean_toy(capsys):
    assert main(["verify", *TOY, "--probes", "50"]) == 0
    text = capsys.readouterr().out
    assert "check_invariance[replacement_distribution]: non-invariant (expected)" in text
    assert "verify: all checks passed" in text
    for name in ("marginal", "uniform", "tree_distribution", "separate_models"):
        assert f"check_extension[{name}]: pass" in text


class CorruptedExtension(FixedBaselineRemoval):
    def __call__(self, x, s, seed=0):
        return super().__call__(x, s, seed) + 1.0


def test_verify_detects_corrupted_extension(monkeypatch, capsys):
    real = verification_strategies

    def with_corrupt(model, data, seed=0):
        out = real(model, data, seed)
        out["corrupted"] = CorruptedExtension(model, np.zeros(data.dim))
        return out

    monkeypatch.setattr(cli, "verification_strategies", with_corrupt)
    assert main(["verify", *TOY, "--probes", "20"]) == 1
    text = capsys.readouterr().out
    assert "check_extension[corrupted]: FAIL" in text
    assert "verify: FAILED" in text


def test_run_verify_dimension_cap(toy):
    from remex.data import LabeledDataset
    from remex.errors import ConfigError

    wide = LabeledDataset(np.zeros((5, 9)), np.zeros(5))
    with pytest.raises(ConfigError):
        run_verify(wide, None)
