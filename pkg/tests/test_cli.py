import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import yaml

from fiscalstate.cli import RunConfig, emit_figure_data, load_inputs, main, run, validate
from fiscalstate.data import detrend, read_series
from fiscalstate.errors import ConfigError
from fiscalstate.lp import IrfResult, stars


@pytest.fixture(scope="module")
def inputs(tmp_path_factory, fiscal):
    root = tmp_path_factory.mktemp("inputs")
    ds, records, _ = fiscal
    with open(root / "macro.csv", "w") as fh:
        fh.write("quarter," + ",".join(ds.names) + "\n")
        for i, q in enumerate(ds.index):
            fh.write(f"{q}," + ",".join(repr(float(ds[n][i])) for n in ds.names) + "\n")
    with open(root / "securities.csv", "w") as fh:
        fh.write("security_id,quarter,outstanding,coupon_rate\n")
        for r in records:
            fh.write(f"{r.security_id},{r.quarter},{r.outstanding!r},{r.coupon_rate!r}\n")
    return root


BASE = {"data": {"path": "macro.csv", "securities": "securities.csv"},
        "estimator": {"method": "lp"},
        "spec": {"dependent": ["output"], "horizon_max": 8}}


def _config(root, name="run.yaml", **sections):
    cfg = json.loads(json.dumps(BASE))
    for key, value in sections.items():
        if isinstance(value, dict) and isinstance(cfg.get(key), dict):
            cfg[key].update(value)
        else:
            cfg[key] = value
    path = root / name
    path.write_text(yaml.safe_dump(cfg))
    return path


def _rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def test_validate_baseline_is_clean(inputs):
    diag = validate(_config(inputs))
    assert diag.messages == []
    assert not diag
    assert sorted(diag.samples) == list(range(9))
    assert all(n > 100 for n in diag.samples.values())


def test_validate_names_missing_series(inputs):
    diag = validate(_config(inputs, spec={"controls": ["output", "inflation"]}))
    assert any("'inflation'" in m for m in diag.messages)


def test_validate_flags_short_horizons(inputs):
    diag = validate(_config(inputs, spec={"horizon_max": 230}))
    assert any(m.startswith("horizon 230:") for m in diag.messages)
    assert not any(m.startswith("horizon 0:") for m in diag.messages)


def test_validate_restriction_outside_sample(inputs):
    path = _config(inputs, shock={"source": "narrative_sign",
                                  "restrictions": [{"date": "1850Q1"}]})
    assert any("1850Q1" in m for m in validate(path).messages)


def test_validate_missing_shock_file(inputs):
    path = _config(inputs, shock={"source": "file", "path": "nowhere.csv"})
    assert any("does not exist" in m for m in validate(path).messages)


def test_config_rejects_unknown_keys(inputs):
    with pytest.raises(ConfigError, match="spec.horizon"):
        RunConfig.from_dict({"data": {"path": "x.csv"}, "spec": {"horizon": 3}})
    with pytest.raises(ConfigError, match="data.path"):
        RunConfig.from_dict({})


def test_config_digest_depends_on_seed(inputs):
    cfg = RunConfig.load(_config(inputs))
    assert cfg.digest(1) == RunConfig.load(_config(inputs)).digest(1)
    assert cfg.digest(1) != cfg.digest(2)


def test_exit_config_error(inputs, tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("data: {path: macro.csv}\nestimator: {method: ols}\n")
    assert main(["irf", "--config", str(bad), "--out", str(tmp_path / "o")]) == 2
    assert main(["irf", "--config", str(tmp_path / "absent.yaml")]) == 2
    missing = _config(inputs, "missing.yaml", data={"path": "nothere.csv", "securities": None})
    assert main(["irf", "--config", str(missing), "--out", str(tmp_path / "o")]) == 2
    assert main(["validate", "--config", str(_config(inputs, "v.yaml", spec={"horizon_max": 230}))]) == 2
    assert "problem: horizon" in capsys.readouterr().err


def test_exit_estimation_error(inputs, tmp_path, capsys):
    path = _config(inputs, "long.yaml", spec={"horizon_max": 232})
    assert main(["irf", "--config", str(path), "--out", str(tmp_path / "o")]) == 3
    assert "irf:output" in capsys.readouterr().err


def test_exit_identification_error(inputs, tmp_path, capsys):
    path = _config(inputs, "narr.yaml", shock={
        "source": "narrative_sign", "draws": 60,
        "restrictions": [{"date": "1917Q2", "sign": "+"}, {"date": "1917Q2", "sign": "-"}]})
    assert main(["identify", "--config", str(path), "--out", str(tmp_path / "o")]) == 4
    assert "identify" in capsys.readouterr().err


@pytest.fixture(scope="module")
def irf_run(inputs, tmp_path_factory):
    out = tmp_path_factory.mktemp("irf")
    manifest = run(RunConfig.load(_config(inputs)), "run-all", seed=1, out=out)
    return out, manifest


def test_run_all_files(irf_run):
    out, manifest = irf_run
    expected = {"states.csv", "shock.csv", "irf_output.csv", "irf_output_contrasts.csv",
                "irf_output_table.txt", "irf_output_figure.csv", "multiplier.csv",
                "multiplier_contrasts.csv", "multiplier_table.txt", "multiplier_figure.csv"}
    assert set(manifest["files"]) == expected
    on_disk = json.loads((out / "manifest.json").read_text())
    assert on_disk["seed"] == 1 and on_disk["verb"] == "run-all"
    assert set(on_disk["timings"]) >= {"ingest", "states", "identify", "irf:output", "multiplier"}


def test_figure_bands_symmetric(irf_run):
    out, _ = irf_run
    est = {(r["horizon"], r["state"]): r for r in _rows(out / "irf_output.csv")}
    z = 1.6448536269514722
    for r in _rows(out / "irf_output_figure.csv"):
        e, lo, hi = float(r["estimate"]), float(r["ci_low"]), float(r["ci_high"])
        assert hi - e == pytest.approx(e - lo, rel=1e-9)
        se = float(est[(r["horizon"], r["state"])]["se"])
        assert hi == pytest.approx(e + z * se, rel=1e-9, abs=1e-12)


def test_stars_regenerate_from_pvalues(irf_run):
    out, _ = irf_run
    rows = _rows(out / "irf_output_contrasts.csv")
    assert rows
    for r in rows:
        assert r["stars"] == stars(float(r["pvalue"]))


def test_multiplier_reports_weak_flag(irf_run):
    out, _ = irf_run
    for r in _rows(out / "multiplier.csv"):
        assert r["weak"] == str(int(not float(r["effective_f"]) > float(r["critical_value"])))


def test_linear_run_labels(inputs, tmp_path):
    path = _config(inputs, "lin.yaml", state={"mode": "none"}, multiplier={"enabled": False})
    manifest = run(RunConfig.load(path), "irf", out=tmp_path)
    assert "states.csv" not in manifest["files"]
    assert {r["state"] for r in _rows(tmp_path / "irf_output.csv")} == {"linear"}
    assert "irf_output_contrasts.csv" not in manifest["files"]


def test_states_verb_hp_trend(inputs, tmp_path):
    path = _config(inputs, "hp.yaml", state={"trend": "hp", "hp_lambda": 1600})
    manifest = run(RunConfig.load(path), "states", out=tmp_path)
    assert manifest["files"] == ["states.csv"]
    rows = _rows(tmp_path / "states.csv")
    assert list(rows[0]) == ["quarter", "state_variable", "weight"]
    cfg = RunConfig.load(path)
    fc = load_inputs(cfg)["fiscal_cost"]
    np.testing.assert_allclose([float(r["state_variable"]) for r in rows], detrend(fc, "hp", 1600.0))


def test_identify_verb_and_file_source(inputs, tmp_path):
    manifest = run(RunConfig.load(_config(inputs, "id.yaml")), "identify", out=tmp_path / "a")
    assert manifest["files"] == ["shock.csv"]
    start, values, _ = read_series(tmp_path / "a" / "shock.csv")
    assert np.nanstd(values) == pytest.approx(1.0)
    reuse = _config(inputs, "reuse.yaml", shock={"source": "file", "path": str(tmp_path / "a" / "shock.csv")})
    run(RunConfig.load(reuse), "identify", out=tmp_path / "b")
    assert (tmp_path / "a" / "shock.csv").read_bytes() == (tmp_path / "b" / "shock.csv").read_bytes()


def test_emit_figure_data_custom_level(tmp_path):
    res = IrfResult(np.arange(3), {"linear": np.array([1.0, 2.0, 3.0])},
                    {"linear": np.array([0.5, 0.5, 1.0])}, ci_level=0.68)
    rows = _rows(emit_figure_data(res, tmp_path / "f.csv"))
    assert float(rows[2]["ci_high"]) == pytest.approx(3.0 + 0.9944578832097535)


def test_module_entry_point(inputs):
    proc = subprocess.run([sys.executable, "-m", "fiscalstate", "validate", "--config",
                           str(_config(inputs, "sub.yaml"))], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "horizon   0:" in proc.stdout
