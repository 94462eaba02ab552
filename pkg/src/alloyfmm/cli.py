"""Configuration-driven experiment runner.

One JSON config describes one experiment; the runner validates it against a
schema, resolves defaults, dispatches to the library, and writes a run-scoped
output directory holding the resolved config, CSV/JSONL artifacts, and a
manifest with the pass/fail roll-up.  Re-running the same config and seed
reproduces every reported estimate (worker count does not matter).

Exit codes: 0 all asserted properties passed, 1 property failure,
2 config/schema violation, 3 assumption or hypothesis violation,
4 missing file or resource.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import jsonschema
import numpy as np

from . import __version__, averaging, fmm, localization
from .averaging import AssumptionError
from .geometry import SiteSet, box, sites_to_text
from .model import DENSITY_BUILDERS, SingleSitePotential
from .resolvent import fuzz_identities, fuzz_schur_independence, verify_combes_thomas

__all__ = ["ExperimentConfig", "RunManifest", "run", "report", "main", "CONFIG_SCHEMA"]

EXIT_OK = 0
EXIT_PROPERTY = 1
EXIT_SCHEMA = 2
EXIT_ASSUMPTION = 3
EXIT_RESOURCE = 4

KINDS = (
    "identities",
    "averaging",
    "apriori",
    "decay",
    "criterion",
    "wegner",
    "twobox",
    "eigenloc",
    "nonlocal-apriori",
)

CONFIG_SCHEMA = {
    "type": "object",
    "required": ["kind"],
    "additionalProperties": False,
    "properties": {
        "kind": {"enum": list(KINDS)},
        "output_dir": {"type": "string"},
        "model": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dimension": {"type": "integer", "minimum": 1},
                "box_radius": {"type": "integer", "minimum": 0},
                "support": {
                    "type": "array",
                    "items": {"type": "array", "items": {"type": "integer"}},
                },
                "values": {"type": "array", "items": {"type": "number"}},
                "density": {
                    "type": "object",
                    "required": ["kind"],
                    "properties": {"kind": {"enum": list(DENSITY_BUILDERS)}},
                },
                "lambda": {"type": "number", "exclusiveMinimum": 0},
                "lambda_grid": {
                    "type": "array",
                    "items": {"type": "number", "exclusiveMinimum": 0},
                    "minItems": 2,
                },
                "z": {
                    "type": "array",
                    "items": {"type": "number"},
                    "minItems": 2,
                    "maxItems": 2,
                },
                "s": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
            },
        },
        "run": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "samples": {"type": "integer", "minimum": 100},
                "seed": {"type": "integer", "minimum": 0},
                "workers": {"type": "integer", "minimum": 1},
                "tolerances": {"type": "object"},
            },
        },
        "experiment": {"type": "object"},
    },
}

RUN_DEFAULTS = {"samples": 1000, "seed": 0, "workers": 1, "tolerances": {}}
EXPERIMENT_DEFAULTS: dict[str, dict] = {
    "identities": {"cases": 100, "max_sites": 300, "dimensions": [1, 2],
                   "independence_cases": 20},
    "averaging": {"det_cases": 200, "norm_cases": 200, "tail_cases": 50},
    "apriori": {"pairs": None, "part_b": False, "theorem_mode": True},
    "decay": {"distances": None, "axis": 0},
    "criterion": {"annulus_radius": None, "center": None, "b_constant": None},
    "wegner": {"interval": [-0.5, 0.5], "widths": [0.2, 0.1, 0.05, 0.025],
               "second_radius": None},
    "twobox": {"centers": None, "interval": [-0.2, 0.2], "rate": 0.3,
               "grid_step": 0.01, "radius": 6, "min_probability": None},
    "eigenloc": {"window": None, "min_median_rate": None, "max_median_rate": None},
    "nonlocal-apriori": {"x": None, "y": None},
}

_MODEL_KINDS = {"apriori", "decay", "criterion", "wegner", "twobox", "eigenloc",
                "nonlocal-apriori"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Validated, default-resolved experiment description."""

    kind: str
    model: dict
    run: dict
    experiment: dict
    output_dir: Optional[str]
    raw: dict

    @property
    def config_hash(self) -> str:
        # worker count cannot change any estimate, so it stays out of the hash
        hashed = self.resolved()
        hashed["run"] = {k: v for k, v in hashed["run"].items() if k != "workers"}
        return hashlib.sha256(
            json.dumps(hashed, sort_keys=True).encode()
        ).hexdigest()

    def resolved(self) -> dict:
        return {
            "kind": self.kind,
            "model": self.model,
            "run": self.run,
            "experiment": self.experiment,
            "output_dir": self.output_dir,
        }


class ConfigError(ValueError):
    """The config failed schema validation or lacks a required block."""


def load_config(source, overrides: Optional[dict] = None) -> ExperimentConfig:
    """Parse, schema-validate and default-resolve an experiment config."""
    if isinstance(source, (str, Path)):
        path = Path(source)
        if not path.exists():
            raise FileNotFoundError(f"config file not found: {path}")
        data = json.loads(path.read_text())
    else:
        data = dict(source)
    if overrides:
        run_over = {k: v for k, v in overrides.items() if v is not None}
        data.setdefault("run", {})
        data["run"] = {**data["run"], **run_over}
    try:
        jsonschema.validate(data, CONFIG_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"config rejected: {exc.message}") from exc
    kind = data["kind"]
    model = dict(data.get("model", {}))
    if kind in _MODEL_KINDS:
        for key in ("dimension", "support", "values", "density", "s"):
            if key not in model:
                raise ConfigError(f"experiment kind {kind!r} needs model.{key}")
        if "lambda" not in model and "lambda_grid" not in model:
            raise ConfigError(
                f"experiment kind {kind!r} needs model.lambda or model.lambda_grid"
            )
    run = {**RUN_DEFAULTS, **data.get("run", {})}
    experiment = {**EXPERIMENT_DEFAULTS.get(kind, {}), **data.get("experiment", {})}
    return ExperimentConfig(
        kind=kind,
        model=model,
        run=run,
        experiment=experiment,
        output_dir=data.get("output_dir"),
        raw=data,
    )


@dataclass(frozen=True)
class RunManifest:
    kind: str
    config_hash: str
    seed: int
    version: str
    wall_time_s: float
    summary: dict
    passed: bool
    artifacts: tuple
    output_dir: str

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)


def _build_model(model: dict):
    support = SiteSet(tuple(map(tuple, model["support"])))
    u = SingleSitePotential(support=support, values=tuple(model["values"]))
    density_spec = dict(model["density"])
    density = DENSITY_BUILDERS[density_spec.pop("kind")](**density_spec)
    region = box(model["box_radius"], (0,) * model["dimension"]) if "box_radius" in model else None
    z = complex(*model["z"]) if "z" in model else None
    return u, density, region, z


def _moment_config(cfg: ExperimentConfig, u, lam: float, theorem_mode: bool = False,
                   exponent: Optional[float] = None) -> fmm.MomentConfig:
    model = cfg.model
    return fmm.MomentConfig(
        s=model["s"],
        z=complex(*model["z"]),
        lam=lam,
        samples=cfg.run["samples"],
        seed=cfg.run["seed"],
        theta_size=len(u.support),
        theorem_mode=theorem_mode,
        exponent=exponent,
    )


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence]) -> None:
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def _lambda_grid(model: dict) -> list[float]:
    if "lambda_grid" in model:
        return [float(v) for v in model["lambda_grid"]]
    return [float(model["lambda"])]


# --------------------------- per-kind experiments ---------------------------


def _run_identities(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    exp = cfg.experiment
    tol = cfg.run["tolerances"].get("identity", 1e-8)
    res = fuzz_identities(
        cases=exp["cases"],
        seed=cfg.run["seed"],
        tolerance=tol,
        dimensions=tuple(exp["dimensions"]),
        max_sites=exp["max_sites"],
    )
    indep = fuzz_schur_independence(
        cases=exp["independence_cases"],
        seed=cfg.run["seed"] + 1,
        tolerance=cfg.run["tolerances"].get("independence", 1e-12),
    )
    lines = [json.dumps(r.to_record()) for r in res["reports"]]
    (out / "identities.jsonl").write_text("\n".join(lines) + "\n")
    summary = {
        "cases": res["cases"],
        "checks": res["checks"],
        "failures": res["failures"],
        "worst_relative_deviation": res["worst_relative_deviation"],
        "independence_worst": indep["worst_deviation"],
        "tolerance": tol,
    }
    return summary, res["passed"] and indep["passed"], ["identities.jsonl"]


def _run_averaging(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    exp = cfg.experiment
    res = averaging.fuzz_averaging(
        det_cases=exp["det_cases"],
        norm_cases=exp["norm_cases"],
        tail_cases=exp["tail_cases"],
        seed=cfg.run["seed"],
    )
    lines = []
    for group in ("det", "norm"):
        for r in res[group]:
            lines.append(json.dumps({
                "check": r.name, "value": r.value, "bound": r.bound,
                "error": r.value_error, "pass": r.passed,
            }))
    for r in res["tail"]:
        lines.append(json.dumps({
            "check": "monotone-tail", "slope": r.slope,
            "empirical_constant": r.empirical_constant, "pass": r.passed,
        }))
    (out / "averaging.jsonl").write_text("\n".join(lines) + "\n")
    summary = {
        "det_cases": len(res["det"]),
        "norm_cases": len(res["norm"]),
        "tail_cases": len(res["tail"]),
        "failures": res["failures"],
        "worst_tail_slope_error": res["worst_tail_slope_error"],
    }
    return summary, res["passed"], ["averaging.jsonl"]


def _run_apriori(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    d = cfg.model["dimension"]
    pairs = exp["pairs"] or [[[0] * d, [0] * d]]
    pairs = [(tuple(p[0]), tuple(p[1])) for p in pairs]
    grid = _lambda_grid(cfg.model)
    mc = _moment_config(cfg, u, grid[0], theorem_mode=exp["theorem_mode"])
    result = fmm.apriori_experiment(
        region, pairs, grid, mc, u, density,
        part_b=exp["part_b"], workers=cfg.run["workers"],
    )
    rows = []
    for key, series in result.estimates.items():
        for lam, est, xi in zip(result.lambda_grid, series, result.xi_values):
            rows.append([
                lam, json.dumps(key), est.mean, est.stderr, est.samples, est.t, xi,
            ])
    _write_csv(out / "apriori.csv",
               ["lambda", "pair", "mean", "stderr", "samples", "t", "xi"], rows)
    summary = {
        "slopes": {json.dumps(k): v.slope for k, v in result.slopes.items()},
        "slope_requirement": result.slope_requirement,
        "predicted_exponent": -mc.t if not exp["part_b"] else -cfg.model["s"],
        "bounded_in_lambda": result.bounded_in_lambda,
        "part_b": result.part_b,
    }
    return summary, result.passed, ["apriori.csv"]


def _run_decay(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    d = cfg.model["dimension"]
    distances = exp["distances"] or [2, 4, 6, 8, 10, 12]
    lam = float(cfg.model["lambda"])
    mc = _moment_config(cfg, u, lam)
    fit = fmm.decay_profile(
        region, (0,) * d, distances, mc, u, density,
        axis=exp["axis"], workers=cfg.run["workers"],
    )
    rows = [
        [r, v, s_, mc.samples, mc.t, lam, mc.z.real, mc.z.imag]
        for r, v, s_ in zip(fit.distances, fit.values, fit.stderrs)
    ]
    _write_csv(out / "decay.csv",
               ["distance", "mean", "stderr", "samples", "t", "lambda", "z_re", "z_im"],
               rows)
    summary = {
        "prefactor": fit.prefactor,
        "rate": fit.rate,
        "rate_ci95": list(fit.rate_ci95),
        "r2": fit.r2,
        "exponential_decay": fit.exponential_decay,
    }
    (out / "decay_fit.json").write_text(json.dumps(summary, indent=2))
    return summary, fit.exponential_decay, ["decay.csv", "decay_fit.json"]


def _run_criterion(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    d = cfg.model["dimension"]
    center = tuple(exp["center"]) if exp["center"] else (0,) * d
    radius = exp["annulus_radius"] or (u.linf_diameter + 3)
    grid = _lambda_grid(cfg.model)
    rows = []
    results = []
    geometry_files = []
    for i, lam in enumerate(grid):
        mc = _moment_config(cfg, u, lam, theorem_mode=True)
        res = fmm.finite_volume_criterion(
            None, region, center, radius, mc, u, density,
            b_constant=exp["b_constant"], workers=cfg.run["workers"],
        )
        results.append(res)
        rows.append([
            lam, res.raw_sum, res.raw_sum_stderr, res.b_diagnostic,
            res.xi, res.lambda_power, res.volume_factor,
            res.predicted_rate if res.predicted_rate is not None else "",
        ])
        if i == 0:
            ann = fmm.annulus_geometry(u.support, center, radius, domain=None)
            for name, sset in (
                ("sphere", ann.sphere), ("shell", ann.shell),
                ("shell_plus", ann.shell_plus), ("core", ann.core),
                ("core_plus", ann.core_plus),
            ):
                fname = f"annulus_{name}.sites"
                (out / fname).write_text(sites_to_text(sset))
                geometry_files.append(fname)
    _write_csv(out / "criterion.csv",
               ["lambda", "raw_sum", "stderr", "b_diagnostic", "xi", "lambda_power",
                "volume_factor", "predicted_rate"], rows)
    sums = [r.raw_sum for r in results]
    errs = [r.raw_sum_stderr for r in results]
    monotone = all(
        sums[i + 1] <= sums[i] + 3.0 * (errs[i] + errs[i + 1])
        for i in range(len(sums) - 1)
    )
    summary = {
        "lambda_grid": grid,
        "raw_sums": sums,
        "b_diagnostics": [r.b_diagnostic for r in results],
        "predicted_rates": [r.predicted_rate for r in results],
        "monotone_in_lambda": monotone,
        "skipped_sites": [list(map(list, r.skipped_sites)) for r in results[:1]],
    }
    passed = monotone if len(grid) > 1 else True
    return summary, passed, ["criterion.csv"] + geometry_files


def _run_wegner(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    res = localization.wegner_experiment(
        radius=cfg.model["box_radius"],
        interval=tuple(exp["interval"]),
        widths=exp["widths"],
        samples=cfg.run["samples"],
        lam=float(cfg.model["lambda"]),
        u=u,
        density=density,
        seed=cfg.run["seed"],
        s_reference=cfg.model["s"],
        second_radius=exp["second_radius"],
        dimension=cfg.model["dimension"],
    )
    _write_csv(out / "wegner.csv", ["width", "mean_count", "stderr"],
               list(zip(res.widths, res.mean_counts, res.stderrs)))
    summary = {
        "exponent": res.exponent,
        "exponent_requirement": res.exponent_requirement,
        "volume_ratio": res.volume_ratio,
        "count_ratio": res.count_ratio,
        "linear_in_volume": res.linear_in_volume,
    }
    passed = res.exponent_ok and (res.linear_in_volume in (None, True))
    return summary, passed, ["wegner.csv"]


def _run_twobox(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    d = cfg.model["dimension"]
    radius = exp["radius"]
    if exp["centers"]:
        x, y = tuple(exp["centers"][0]), tuple(exp["centers"][1])
    else:
        x = (0,) * d
        y = (2 * radius + u.linf_diameter + 1,) + (0,) * (d - 1)
    grid = _lambda_grid(cfg.model)
    rows = []
    probs = []
    for lam in grid:
        res = localization.two_box_experiment(
            x, y, radius, tuple(exp["interval"]), exp["rate"],
            cfg.run["samples"], lam, u, density, cfg.run["seed"],
            grid_step=exp["grid_step"],
        )
        probs.append(res)
        rows.append([lam, res.probability, res.confidence[0], res.confidence[1],
                     res.mean_uncovered_fraction])
    _write_csv(out / "twobox.csv",
               ["lambda", "probability", "ci_lo", "ci_hi", "uncovered_fraction"],
               rows)
    monotone = all(
        probs[i + 1].confidence[1] >= probs[i].confidence[0]
        for i in range(len(probs) - 1)
    )
    floor_ok = True
    if exp["min_probability"] is not None:
        floor_ok = all(r.probability >= exp["min_probability"] for r in probs)
    summary = {
        "lambda_grid": grid,
        "probabilities": [r.probability for r in probs],
        "confidences": [list(r.confidence) for r in probs],
        "monotone_within_ci": monotone,
        "min_probability": exp["min_probability"],
    }
    return summary, monotone and floor_ok, ["twobox.csv"]


def _run_eigenloc(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    res = localization.eigen_localization(
        radius=cfg.model["box_radius"],
        lam=float(cfg.model["lambda"]),
        u=u,
        density=density,
        samples=cfg.run["samples"],
        seed=cfg.run["seed"],
        window=tuple(exp["window"]) if exp["window"] else None,
        dimension=cfg.model["dimension"],
    )
    rows = [
        [sample, energy, rate if rate is not None else "", ipr]
        for sample, energy, rate, ipr in res.records
    ]
    _write_csv(out / "eigenloc.csv", ["sample", "energy", "decay_rate", "ipr"], rows)
    summary = {
        "median_rate": res.median_rate,
        "median_ipr": res.median_ipr,
        "kept_vectors": res.kept_vectors,
    }
    passed = True
    if exp["min_median_rate"] is not None:
        passed = passed and res.median_rate > exp["min_median_rate"]
    if exp["max_median_rate"] is not None:
        passed = passed and res.median_rate < exp["max_median_rate"]
    return summary, passed, ["eigenloc.csv"]


def _run_nonlocal(cfg: ExperimentConfig, out: Path) -> tuple[dict, bool, list]:
    u, density, region, z = _build_model(cfg.model)
    exp = cfg.experiment
    d = cfg.model["dimension"]
    x = tuple(exp["x"]) if exp["x"] else (0,) * d
    y = tuple(exp["y"]) if exp["y"] else (min(3, cfg.model["box_radius"]),) + (0,) * (d - 1)
    res = averaging.nonlocal_apriori_check(
        region, _lambda_grid(cfg.model), u, density, cfg.model["s"],
        cfg.run["samples"], complex(*cfg.model["z"]), x, y,
        seed=cfg.run["seed"], workers=cfg.run["workers"],
    )
    rows = [
        [lam, est.mean, est.stderr, est.samples, est.t]
        for lam, est in zip(res["lambda_grid"], res["estimates"])
    ]
    _write_csv(out / "nonlocal_apriori.csv",
               ["lambda", "mean", "stderr", "samples", "t"], rows)
    summary = {
        "slope": res["slope"],
        "slope_requirement": res["slope_requirement"],
        "predicted_exponent": -cfg.model["s"],
    }
    return summary, res["passed"], ["nonlocal_apriori.csv"]


_RUNNERS = {
    "identities": _run_identities,
    "averaging": _run_averaging,
    "apriori": _run_apriori,
    "decay": _run_decay,
    "criterion": _run_criterion,
    "wegner": _run_wegner,
    "twobox": _run_twobox,
    "eigenloc": _run_eigenloc,
    "nonlocal-apriori": _run_nonlocal,
}


def run(config, overrides: Optional[dict] = None, base_dir: Optional[str] = None) -> RunManifest:
    """Execute one experiment config and write its artifact directory."""
    cfg = load_config(config, overrides)
    if "ALLOYFMM_WORKERS" in os.environ:
        cfg.run["workers"] = max(1, int(os.environ["ALLOYFMM_WORKERS"]))
    out_name = cfg.output_dir or f"runs/{cfg.kind}-{cfg.config_hash[:8]}"
    out = Path(base_dir) / out_name if base_dir else Path(out_name)
    out.mkdir(parents=True, exist_ok=True)
    (out / "resolved_config.json").write_text(
        json.dumps(cfg.resolved(), indent=2, sort_keys=True)
    )
    started = time.perf_counter()
    summary, passed, artifacts = _RUNNERS[cfg.kind](cfg, out)
    manifest = RunManifest(
        kind=cfg.kind,
        config_hash=cfg.config_hash,
        seed=cfg.run["seed"],
        version=__version__,
        wall_time_s=time.perf_counter() - started,
        summary=summary,
        passed=bool(passed),
        artifacts=tuple(["resolved_config.json"] + artifacts + ["manifest.json"]),
        output_dir=str(out),
    )
    (out / "manifest.json").write_text(manifest.to_json())
    return manifest


def report(manifest_paths: Sequence[str], out_path: Optional[str] = None) -> tuple[str, bool]:
    """Consolidate manifests into a summary table; failures list first."""
    entries = []
    for p in manifest_paths:
        path = Path(p)
        if path.is_dir():
            path = path / "manifest.json"
        if not path.exists():
            raise FileNotFoundError(f"manifest not found: {path}")
        entries.append(json.loads(path.read_text()))
    entries.sort(key=lambda e: e["passed"])
    lines = ["# experiment report", ""]
    lines.append("| kind | passed | fitted | predicted | notes |")
    lines.append("|---|---|---|---|---|")
    rows = []
    for e in entries:
        s = e["summary"]
        fitted = predicted = ""
        notes = []
        if "rate" in s:
            fitted = f"rate={s['rate']:.4g}"
            notes.append(f"r2={s['r2']:.3f}")
        if "slope" in s:
            fitted = f"slope={s['slope']:.4g}"
            predicted = f"<= {s.get('slope_requirement', float('nan')):.4g}"
            if "predicted_exponent" in s:
                notes.append(f"power-law target {s['predicted_exponent']:.4g}")
        if "slopes" in s:
            fitted = "; ".join(f"{v:.4g}" for v in s["slopes"].values())
            predicted = f"<= {s['slope_requirement']:.4g}"
        if "exponent" in s:
            fitted = f"exponent={s['exponent']:.4g}"
            predicted = f">= {s['exponent_requirement']:.4g}"
        if "probabilities" in s:
            fitted = ", ".join(f"{v:.3f}" for v in s["probabilities"])
        if "failures" in s:
            notes.append(f"failures={s['failures']}")
        if "median_rate" in s:
            fitted = f"median rate={s['median_rate']:.3f}"
            notes.append(f"median ipr={s['median_ipr']:.4f}")
        lines.append(
            f"| {e['kind']} | {'yes' if e['passed'] else 'NO'} | {fitted} | "
            f"{predicted} | {', '.join(notes)} |"
        )
        rows.append([e["kind"], e["passed"], fitted, predicted, "; ".join(notes)])
    text = "\n".join(lines) + "\n"
    if out_path:
        target = Path(out_path)
        target.mkdir(parents=True, exist_ok=True)
        (target / "report.md").write_text(text)
        _write_csv(target / "report.csv",
                   ["kind", "passed", "fitted", "predicted", "notes"], rows)
    all_passed = all(e["passed"] for e in entries)
    return text, all_passed


def _add_override_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--samples", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--out", type=str, default=None, help="output directory override")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = argparse.ArgumentParser(
        prog="alloyfmm",
        description="experiment runner for the alloy-model moment laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment config")
    p_run.add_argument("config", type=str)
    _add_override_args(p_run)

    p_rep = sub.add_parser("report", help="consolidate run manifests")
    p_rep.add_argument("manifests", nargs="+")
    p_rep.add_argument("--out", type=str, default=None)

    p_fuzz = sub.add_parser("fuzz-identities", help="randomized identity checks")
    p_fuzz.add_argument("--cases", type=int, default=100)
    p_fuzz.add_argument("--seed", type=int, default=0)
    p_fuzz.add_argument("--tolerance", type=float, default=1e-8)
    p_fuzz.add_argument("--max-sites", type=int, default=300)

    p_avg = sub.add_parser("verify-averaging", help="randomized averaging checks")
    p_avg.add_argument("--cases", type=int, default=50)
    p_avg.add_argument("--tail-cases", type=int, default=20)
    p_avg.add_argument("--seed", type=int, default=0)

    for kind in KINDS:
        p_kind = sub.add_parser(kind, help=f"run a {kind} config")
        p_kind.add_argument("config", type=str)
        _add_override_args(p_kind)

    args = parser.parse_args(argv)
    try:
        if args.command == "report":
            text, ok = report(args.manifests, args.out)
            print(text)
            return EXIT_OK if ok else EXIT_PROPERTY
        if args.command == "fuzz-identities":
            res = fuzz_identities(args.cases, args.seed, args.tolerance,
                                  max_sites=args.max_sites)
            for r in res["reports"]:
                print(json.dumps(r.to_record()))
            print(f"# {res['checks']} checks, {res['failures']} failures, "
                  f"worst {res['worst_relative_deviation']:.3e}", file=sys.stderr)
            return EXIT_OK if res["passed"] else EXIT_PROPERTY
        if args.command == "verify-averaging":
            res = averaging.fuzz_averaging(args.cases, args.cases,
                                           args.tail_cases, args.seed)
            print(json.dumps({
                "failures": res["failures"],
                "worst_tail_slope_error": res["worst_tail_slope_error"],
                "passed": res["passed"],
            }))
            return EXIT_OK if res["passed"] else EXIT_PROPERTY
        # run or a kind shortcut
        config_path = args.config
        overrides = {"samples": args.samples, "seed": args.seed,
                     "workers": args.workers}
        cfg_data = json.loads(Path(config_path).read_text()) if Path(config_path).exists() else None
        if cfg_data is None:
            raise FileNotFoundError(f"config file not found: {config_path}")
        if args.command != "run":
            cfg_data["kind"] = args.command
        if args.out:
            cfg_data["output_dir"] = args.out
        manifest = run(cfg_data, overrides)
        print(manifest.to_json())
        return EXIT_OK if manifest.passed else EXIT_PROPERTY
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_SCHEMA
    except (AssumptionError, ValueError) as exc:
        print(f"assumption/hypothesis violated: {exc}", file=sys.stderr)
        return EXIT_ASSUMPTION
    except FileNotFoundError as exc:
        print(f"missing resource: {exc}", file=sys.stderr)
        return EXIT_RESOURCE


if __name__ == "__main__":
    sys.exit(main())
