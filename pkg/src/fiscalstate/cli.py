"""Configuration-driven command-line front end.

Usage::

    fiscalstate run-all --config run.yaml --seed 1 --out results/ --threads 4

Verbs: ``validate``, ``states``, ``identify``, ``irf``, ``multiplier``,
``run-all``. Exit codes: 0 success, 2 configuration or input error, 3
estimation error, 4 identification failure.
"""

from __future__ import annotations

import argparse
import copy
import hashlib
import json
import logging
import platform
import sys
import time
from dataclasses import dataclass, field
from importlib import metadata
from pathlib import Path

import numpy as np
import scipy
import yaml

from .data import (Dataset, QuarterIndex, build_state, compute_fiscal_cost, detrend,
                   gordon_krenn_scale, load_dataset, load_securities, read_series,
                   standardize_shock)
from .errors import ConfigError, FiscalStateError, IdentificationError, IngestionError
from .lp import (IrfResult, LpSpec, MultiplierResult, REPORT_HORIZONS, estimate_continuous,
                 estimate_horse_race, estimate_lp, estimate_multiplier, format_difference_table,
                 stars)
from .shocks import (DEFAULT_RESTRICTIONS, NarrativeRestriction, ShockSeries, estimate_bvar,
                     narrative_shocks, timing_shocks)
from .slp import estimate_slp

log = logging.getLogger(__name__)

EXIT_OK, EXIT_CONFIG, EXIT_ESTIMATION, EXIT_IDENTIFICATION = 0, 2, 3, 4
SHOCK_SOURCES = ("timing", "narrative_sign", "news_file", "file")
ESTIMATORS = ("lp", "slp")
VERBS = ("validate", "states", "identify", "irf", "multiplier", "run-all")

DEFAULTS = {
    "seed": 0,
    "output": "results",
    "data": {
        "path": None,
        "quarter_column": "quarter",
        "variables": {},
        "securities": None,
        "gdp": "gdp",
        "potential": None,
        "scale": [],
    },
    "state": {
        "source": "fiscal_cost",
        "trend": "linear",
        "hp_lambda": 1600.0,
        "mode": "logit",
        "gamma": 10.0,
        "lag": 1,
        "second": None,
    },
    "shock": {
        "source": "timing",
        "path": None,
        "var_variables": ["output", "spending", "tax", "debt"],
        "var_lags": 4,
        "draws": 50000,
        "horizon_quarters": 4,
        "column_rule": "unique",
        "restrictions": [{"date": str(r.date), "sign": "+", "dominance": r.dominance}
                         for r in DEFAULT_RESTRICTIONS],
    },
    "estimator": {"method": "slp", "r": 3, "mu_grid": None, "folds": 5},
    "spec": {
        "dependent": ["output", "spending"],
        "controls": ["output", "spending", "tax", "debt"],
        "control_lags": 4,
        "horizon_max": 16,
        "ci_level": 0.90,
        "hac_bandwidth": None,
        "eval_points": None,
    },
    "multiplier": {
        "enabled": True,
        "instruments": ["shock"],
        "output": "output",
        "spending": "spending",
        "extra": {},
    },
}


def _merge(base, override, path=""):
    out = copy.deepcopy(base)
    for key, value in (override or {}).items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict) and base[key] and key not in ("variables", "extra"):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be a mapping")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = value
    return out


@dataclass
class RunConfig:
    """Resolved run configuration; every unset field takes the baseline default."""

    raw: dict
    root: Path = field(default_factory=Path.cwd)

    @classmethod
    def from_dict(cls, override: dict | None, root=None) -> "RunConfig":
        cfg = cls(_merge(DEFAULTS, override or {}), Path(root) if root else Path.cwd())
        cfg.check()
        return cfg

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        try:
            text = path.read_text()
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from None
        try:
            override = yaml.safe_load(text) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"config {path} is not valid YAML: {exc}") from None
        if not isinstance(override, dict):
            raise ConfigError("config must be a mapping at top level")
        return cls.from_dict(override, path.parent)

    def __getitem__(self, key):
        return self.raw[key]

    def resolve(self, p) -> Path | None:
        if p is None:
            return None
        p = Path(p)
        return p if p.is_absolute() else self.root / p

    def check(self) -> None:
        c = self.raw
        if c["data"]["path"] is None:
            raise ConfigError("data.path is required")
        if c["shock"]["source"] not in SHOCK_SOURCES:
            raise ConfigError(f"shock.source must be one of {SHOCK_SOURCES}")
        if c["shock"]["source"] in ("news_file", "file") and not c["shock"]["path"]:
            raise ConfigError(f"shock.source {c['shock']['source']!r} needs shock.path")
        if c["estimator"]["method"] not in ESTIMATORS:
            raise ConfigError(f"estimator.method must be one of {ESTIMATORS}")
        if c["state"]["trend"] not in ("linear", "hp"):
            raise ConfigError("state.trend must be 'linear' or 'hp'")
        n_iv = len(c["multiplier"]["instruments"])
        if c["multiplier"]["enabled"] and not 1 <= n_iv <= 2:
            raise ConfigError(f"multiplier needs one or two instruments, got {n_iv}")
        if isinstance(c["spec"]["dependent"], str):
            c["spec"]["dependent"] = [c["spec"]["dependent"]]

    def digest(self, seed: int) -> str:
        blob = json.dumps({"config": self.raw, "seed": seed}, sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()


# ---------------------------------------------------------------- stages

def load_inputs(cfg: RunConfig) -> Dataset:
    d = cfg["data"]
    schema = {k: v for k, v in d["variables"].items()} or None
    try:
        ds = load_dataset(cfg.resolve(d["path"]), schema, quarter_column=d["quarter_column"])
    except OSError as exc:
        raise IngestionError(f"cannot read data file: {exc}") from None
    if schema is not None:
        full = load_dataset(cfg.resolve(d["path"]), None, quarter_column=d["quarter_column"])
        extra = {k: full[k] for k in full.names if k not in schema.values() and k not in ds}
        for k, v in extra.items():
            ds = ds.with_series(k, v)
    if d["potential"]:
        for name in d["scale"]:
            ds = ds.with_series(name, gordon_krenn_scale(ds[name], ds[d["potential"]]))
    if d["securities"]:
        records = load_securities(cfg.resolve(d["securities"]))
        ds = ds.with_series("fiscal_cost", compute_fiscal_cost(records, ds[d["gdp"]], ds.start))
    return ds


def _one_state(ds: Dataset, s: dict):
    if s["source"] not in ds:
        raise ConfigError(f"state source series {s['source']!r} not in dataset")
    x = detrend(ds[s["source"]], s["trend"], float(s["hp_lambda"]))
    return x, build_state(x, s["mode"], float(s["gamma"]), int(s["lag"]), start=ds.start)


def build_states(cfg: RunConfig, ds: Dataset):
    """Return ``(state, second_state, table)``; ``table`` maps column name to values."""
    s = cfg["state"]
    if s is None or s.get("mode") in (None, "none", "linear"):
        return None, None, {}
    x, state = _one_state(ds, s)
    table = {"state_variable": x, "weight": state.weight}
    second = None
    if s.get("second"):
        s2 = {**{k: v for k, v in DEFAULTS["state"].items() if k != "second"}, **s["second"]}
        x2, second = _one_state(ds, s2)
        table.update({"second_variable": x2, "second_weight": second.weight})
    return state, second, table


def identify(cfg: RunConfig, ds: Dataset, seed: int, threads: int) -> ShockSeries:
    sh = cfg["shock"]
    src = sh["source"]
    if src == "timing":
        return timing_shocks(ds, sh["var_variables"], int(sh["var_lags"]), name="shock")
    if src == "narrative_sign":
        model = estimate_bvar(ds, sh["var_variables"], int(sh["var_lags"]), int(sh["draws"]), seed)
        restr = [NarrativeRestriction(QuarterIndex.parse(str(r["date"])), r.get("sign", "+"),
                                      bool(r.get("dominance", True)))
                 for r in sh["restrictions"] or []]
        return narrative_shocks(model, restr, seed=seed, threads=threads,
                                horizon_quarters=int(sh["horizon_quarters"]),
                                column_rule=sh["column_rule"], name="shock")
    start, values, _ = read_series(cfg.resolve(sh["path"]))
    ok = np.flatnonzero(np.isfinite(values))
    values, start = values[ok[0]:ok[-1] + 1], start + int(ok[0])
    if src == "news_file":
        values = standardize_shock(values)
    return ShockSeries(values, start, "shock")


def _spec(cfg: RunConfig, dependent: str, state, second) -> LpSpec:
    sp = cfg["spec"]
    return LpSpec(dependent=dependent, shock="shock", controls=tuple(sp["controls"]),
                  control_lags=int(sp["control_lags"]), horizon_max=int(sp["horizon_max"]),
                  state=state, second_state=second, ci_level=float(sp["ci_level"]),
                  hac_bandwidth=sp["hac_bandwidth"])


def estimate_irf(cfg: RunConfig, ds: Dataset, spec: LpSpec, seed: int, threads: int) -> IrfResult:
    est = cfg["estimator"]
    evp = cfg["spec"]["eval_points"]
    if est["method"] == "slp":
        grid = None if est["mu_grid"] is None else np.asarray(est["mu_grid"], dtype=float)
        return estimate_slp(ds, spec, r=int(est["r"]), mu_grid=grid, folds=int(est["folds"]),
                            seed=seed, eval_points=evp)
    if spec.kind == "continuous":
        return estimate_continuous(ds, spec, evp, threads=threads)
    if spec.kind == "horse_race":
        return estimate_horse_race(ds, spec, threads=threads)
    return estimate_lp(ds, spec, threads=threads)


# ---------------------------------------------------------------- writers

def _num(v) -> str:
    v = float(v)
    return repr(v) if np.isfinite(v) else ""


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(c if isinstance(c, str) else _num(c) if isinstance(c, float) else str(c)
                              for c in row) + "\n")


def emit_figure_data(result: IrfResult, path) -> Path:
    """Write ``horizon,state,estimate,ci_low,ci_high`` at the result's CI level."""
    path = Path(path)
    lo, hi = result.ci_low, result.ci_high
    rows = [(int(h), s, float(result.estimate[s][i]), float(lo[s][i]), float(hi[s][i]))
            for s in result.states for i, h in enumerate(result.horizons)]
    _write_rows(path, ["horizon", "state", "estimate", "ci_low", "ci_high"], rows)
    return path


def write_result(result: IrfResult, out: Path, stem: str) -> list[Path]:
    """Per-horizon estimates, contrast tests, difference table, CV curve and figure data."""
    files = []
    mult = isinstance(result, MultiplierResult)
    header = ["horizon", "state", "estimate", "se", "ci_low", "ci_high", "nobs"]
    if mult:
        header += ["effective_f", "critical_value", "weak"]
    rows = []
    for s in result.states:
        for i, h in enumerate(result.horizons):
            row = [int(h), s, float(result.estimate[s][i]), float(result.se[s][i]),
                   float(result.ci_low[s][i]), float(result.ci_high[s][i]), int(result.nobs[i])]
            if mult:
                block = s if s in result.effective_f else next(iter(result.effective_f))
                f, c = float(result.effective_f[block][i]), float(result.effective_f_critical[block][i])
                row += [f, c, str(int(not f > c))]
            rows.append(row)
    p = out / f"{stem}.csv"
    _write_rows(p, header, rows)
    files.append(p)
    if result.contrasts:
        crow = [(int(h), name, float(c.estimate[i]), float(c.se[i]), float(c.pvalue[i]), stars(c.pvalue[i]))
                for name, c in result.contrasts.items() for i, h in enumerate(result.horizons)]
        p = out / f"{stem}_contrasts.csv"
        _write_rows(p, ["horizon", "contrast", "estimate", "se", "pvalue", "stars"], crow)
        files.append(p)
        p = out / f"{stem}_table.txt"
        p.write_text(format_difference_table(result, REPORT_HORIZONS))
        files.append(p)
    if result.cv_curve:
        p = out / f"{stem}_cv.csv"
        _write_rows(p, ["mu", "cv_mse"], [(float(m), float(e)) for m, e in result.cv_curve])
        files.append(p)
    files.append(emit_figure_data(result, out / f"{stem}_figure.csv"))
    return files


# ---------------------------------------------------------------- validation

@dataclass
class Diagnostics:
    messages: list[str] = field(default_factory=list)
    samples: dict[int, int] = field(default_factory=dict)

    def __bool__(self):
        return bool(self.messages)


def validate(config) -> Diagnostics:
    """Dry-run schema and sample-coverage checks (never raises)."""
    diag = Diagnostics()
    try:
        cfg = config if isinstance(config, RunConfig) else (
            RunConfig.load(config) if isinstance(config, (str, Path)) else RunConfig.from_dict(config))
    except ConfigError as exc:
        diag.messages.append(f"config: {exc}")
        return diag
    try:
        ds = load_inputs(cfg)
    except (FiscalStateError, OSError, KeyError) as exc:
        diag.messages.append(f"data: {exc}")
        return diag
    sp, sh, st, mp = cfg["spec"], cfg["shock"], cfg["state"], cfg["multiplier"]
    needed = set(sp["controls"]) | set(sp["dependent"])
    if sh["source"] in ("timing", "narrative_sign"):
        needed |= set(sh["var_variables"])
    if mp["enabled"]:
        needed |= {mp["output"], mp["spending"]}
        needed |= {i for i in mp["instruments"] if i != "shock"}
    if st and st.get("mode") not in (None, "none", "linear"):
        needed.add(st["source"])
        if st.get("second"):
            needed.add(st["second"].get("source", st["source"]))
    for name in sorted(needed):
        if name not in ds:
            diag.messages.append(f"missing series {name!r}")
    p = cfg.resolve(sh["path"])
    if sh["source"] in ("news_file", "file") and p is not None and not p.exists():
        diag.messages.append(f"shock file {p} does not exist")
    if sh["source"] == "narrative_sign":
        lo = ds.start + int(sh["var_lags"])
        for r in sh["restrictions"] or []:
            try:
                q = QuarterIndex.parse(str(r["date"]))
            except Exception as exc:
                diag.messages.append(f"restriction date: {exc}")
                continue
            if not lo <= q <= ds.end:
                diag.messages.append(f"restriction date {q} outside usable sample {lo}..{ds.end}")
    if diag.messages:
        return diag
    L = int(sp["control_lags"])
    mask = np.ones(len(ds), dtype=bool)
    for c in sp["controls"]:
        ok = np.isfinite(ds[c])
        allok = np.ones(len(ds), dtype=bool)
        for j in range(1, L + 1):
            shifted = np.zeros(len(ds), dtype=bool)
            shifted[j:] = ok[:-j]
            allok &= shifted
        mask &= allok
    if sh["source"] in ("timing", "narrative_sign"):
        mask[: int(sh["var_lags"])] = False
    if st and st.get("mode") not in (None, "none", "linear"):
        mask[: int(st["lag"])] = False
    n_blocks = 1 if not st or st.get("mode") in (None, "none", "linear") else (3 if st.get("second") else 2)
    n_cols = n_blocks * (2 + L * len(sp["controls"]))
    for h in range(int(sp["horizon_max"]) + 1):
        n = 0
        for dep in sp["dependent"]:
            ok = np.isfinite(ds[dep])
            lead = np.zeros(len(ds), dtype=bool)
            lead[: len(ds) - h] = ok[h:]
            n = max(n, int(np.sum(mask & lead)))
        diag.samples[h] = n
        if n < n_cols + 8:
            diag.messages.append(f"horizon {h}: only {n} usable quarters for {n_cols} regressors")
    return diag


# ---------------------------------------------------------------- orchestration

def _versions() -> dict:
    try:
        own = metadata.version("artifact")
    except metadata.PackageNotFoundError:
        own = "unknown"
    return {"fiscalstate": own, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def run(cfg: RunConfig, verb: str = "run-all", seed: int | None = None, out=None,
        threads: int = 1) -> dict:
    """Execute the stages implied by ``verb``; returns the manifest."""
    seed = int(cfg["seed"] if seed is None else seed)
    out = Path(out) if out is not None else cfg.resolve(cfg["output"])
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config_hash": cfg.digest(seed), "seed": seed, "verb": verb, "threads": threads,
                "versions": _versions(), "timings": {}, "files": []}
    files: list[Path] = []

    def stage(name, fn, *args):
        t0 = time.perf_counter()
        try:
            return fn(*args)
        except FiscalStateError as exc:
            exc.stage = name
            raise
        finally:
            manifest["timings"][name] = round(time.perf_counter() - t0, 6)

    ds = stage("ingest", load_inputs, cfg)
    state, second, table = stage("states", build_states, cfg, ds)
    if verb in ("states", "run-all") and table:
        p = out / "states.csv"
        rows = [[str(q)] + [float(table[k][i]) for k in table] for i, q in enumerate(ds.index)]
        _write_rows(p, ["quarter"] + list(table), rows)
        files.append(p)
    if verb == "states":
        return _finish(manifest, files, out)

    shock = stage("identify", identify, cfg, ds, seed, threads)
    if shock.stats:
        manifest["acceptance"] = {k: v for k, v in shock.stats.items() if isinstance(v, int)}
    p = out / "shock.csv"
    shock.write(p)
    files.append(p)
    if verb == "identify":
        return _finish(manifest, files, out)
    ds = shock.attach(ds, "shock")

    if verb in ("irf", "run-all"):
        for dep in cfg["spec"]["dependent"]:
            spec = _spec(cfg, dep, state, second)
            res = stage(f"irf:{dep}", estimate_irf, cfg, ds, spec, seed, threads)
            files += write_result(res, out, f"irf_{dep}")

    if verb in ("multiplier", "run-all") and cfg["multiplier"]["enabled"]:
        mp = cfg["multiplier"]
        for name, path in (mp["extra"] or {}).items():
            start, values, _ = read_series(cfg.resolve(path))
            ds = ds.with_series(name, values, start=start)
        spec = _spec(cfg, mp["output"], state, second)
        res = stage("multiplier", estimate_multiplier, ds, spec, mp["instruments"], mp["output"],
                    mp["spending"], cfg["spec"]["eval_points"], threads)
        files += write_result(res, out, "multiplier")
    return _finish(manifest, files, out)


def _finish(manifest, files, out):
    manifest["files"] = sorted(p.name for p in files)
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="fiscalstate",
                                 description="State-dependent local projections and multipliers.")
    ap.add_argument("verb", choices=VERBS)
    ap.add_argument("--config", required=True, help="YAML run configuration")
    ap.add_argument("--seed", type=int, default=None, help="override the configured seed")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = RunConfig.load(args.config)
        if args.verb == "validate":
            diag = validate(cfg)
            for h, n in diag.samples.items():
                print(f"horizon {h:>3d}: {n} usable quarters")
            for m in diag.messages:
                print(f"problem: {m}", file=sys.stderr)
            return EXIT_CONFIG if diag else EXIT_OK
        manifest = run(cfg, args.verb, args.seed, args.out, max(1, args.threads))
    except (ConfigError, IngestionError) as exc:
        print(f"{getattr(exc, 'stage', 'config')}: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except IdentificationError as exc:
        print(f"{getattr(exc, 'stage', 'identify')}: {exc}", file=sys.stderr)
        return EXIT_IDENTIFICATION
    except FiscalStateError as exc:
        print(f"{getattr(exc, 'stage', 'estimation')}: {exc}", file=sys.stderr)
        return EXIT_ESTIMATION
    print(f"wrote {len(manifest['files'])} files to {args.out or 'configured output directory'}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
