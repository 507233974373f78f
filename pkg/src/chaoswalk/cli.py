"""Command-line front end: run estimators from a JSON config.

Every run writes CSV/JSON artifacts plus a manifest listing each file
with its size and sha256.  Outputs are a pure function of (config,
seed); the manifest timestamp is the only non-deterministic byte.

Exit codes: 0 success, 1 numerical failure mid-run (partial artifacts
are kept and flagged in the manifest), 2 invalid config or usage.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
import time
from pathlib import Path

import numpy as np

from chaoswalk import estimators as est
from chaoswalk import gambler as gam
from chaoswalk.config import (
    ESTIMATOR_NAMES,
    ConfigError,
    ExperimentConfig,
    build_config,
)
from chaoswalk.kernel import check_ellipticity, check_perturbation_bound
from chaoswalk.maps import check_expansion
from chaoswalk.spectral import SpectralConvergenceError, build_ulam, invariant_density


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    return obj


def _fit_json(fit: est.ScalingFit) -> dict:
    return {
        "slope": fit.slope,
        "intercept": fit.intercept,
        "r_squared": fit.r_squared,
        "transform": fit.transform,
        "grid": [[float(x), float(y)] for x, y in fit.grid],
    }


def _estimate_json(e) -> dict:
    return _jsonable(
        {
            "value": e.value,
            "std_error": e.std_error,
            "replicates": e.replicates,
            "method": e.method,
        }
    )


class _Writer:
    """Collects artifact paths and hashes for the manifest."""

    def __init__(self, out_dir: Path):
        self.out_dir = out_dir
        out_dir.mkdir(parents=True, exist_ok=True)
        self.artifacts = []

    def _register(self, path: Path):
        data = path.read_bytes()
        self.artifacts.append(
            {
                "name": path.name,
                "size": len(data),
                "sha256": hashlib.sha256(data).hexdigest(),
            }
        )

    def json(self, name: str, payload: dict):
        path = self.out_dir / name
        path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")
        self._register(path)

    def csv(self, name: str, rows, fieldnames=None):
        rows = list(rows)
        path = self.out_dir / name
        if fieldnames is None:
            fieldnames = list(rows[0].keys()) if rows else []
        with path.open("w", newline="") as f:
            w = csv.DictWriter(f, fieldnames=fieldnames, extrasaction="ignore")
            w.writeheader()
            for row in rows:
                w.writerow({k: _csv_cell(row.get(k)) for k in fieldnames})
        self._register(path)


def _csv_cell(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, (np.integer,)):
        return int(v)
    if isinstance(v, (np.bool_,)):
        return bool(v)
    return v


def _limit_params(cfg: ExperimentConfig, params: dict, workers: int):
    """(v, sigma2) for CLT-type estimators: config override, closed form
    for the unperturbed walk, else a Green-Kubo pilot run."""
    exp = cfg.experiment
    v = params.get("v")
    sigma2 = params.get("sigma2")
    if v is not None and sigma2 is not None:
        return float(v), float(sigma2)
    if exp.iid:
        vv = est.closed_form_drift(exp)
        vv = float(vv[0]) if np.ndim(vv) else float(vv)
        return (float(v) if v is not None else vv,
                float(sigma2) if sigma2 is not None else est.closed_form_variance(exp))
    pilot, diag = est.variance_green_kubo(exp, M=2048, workers=workers)
    if v is None:
        v = diag["drift_used"]
    if sigma2 is None:
        sigma2 = pilot.value
    return float(v), float(sigma2)


# ---------------------------------------------------------------------------
# one runner per estimator name


def _run_spectrum(cfg, params, w: _Writer, workers):
    n_bins = params.get("n_bins", 1024)
    ulam = build_ulam(cfg.experiment.map, n_bins)
    report = invariant_density(ulam)
    w.csv(
        "spectrum_density.csv",
        [
            {"bin_left": lo, "bin_right": hi, "density": dens}
            for lo, hi, dens in report.density_csv_rows()
        ],
    )
    w.json(
        "spectrum.json",
        {
            "leading_eigenvalue": report.leading_eigenvalue,
            "second_modulus": report.second_modulus,
            "iterations": report.iterations,
            "n_bins": report.n_bins,
            "map_name": report.map_name,
            "expansion": check_expansion(cfg.experiment.map).__dict__,
        },
    )


def _run_drift(cfg, params, w, workers):
    N, M = params.get("N", 1024), params.get("M", 10_000)
    e = est.estimate_drift(cfg.experiment, N, M, workers=workers)
    payload = {"N": N, "estimate": _estimate_json(e)}
    if cfg.experiment.iid:
        payload["closed_form"] = _jsonable(est.closed_form_drift(cfg.experiment))
    w.json("drift.json", payload)


def _run_variance(cfg, params, w, workers):
    exp = cfg.experiment
    N, M = params.get("N", 4096), params.get("M", 4096)
    gk, diag = est.variance_green_kubo(
        exp,
        M=M,
        burn_in=params.get("burn_in", est.DEFAULT_BURN_IN),
        lag_cutoff=params.get("lag_cutoff", est.DEFAULT_LAG_CUTOFF),
        workers=workers,
    )
    emp = est.variance_empirical(exp, N, M, workers=workers)
    w.csv(
        "variance_lags.csv",
        [
            {"lag": n, "autocovariance": c, "std_error": s}
            for n, (c, s) in enumerate(zip(diag["lag_terms"], diag["lag_std_errors"]))
        ],
    )
    payload = {
        "green_kubo": _estimate_json(gk),
        "empirical": _estimate_json(emp),
        "tail_term": diag["tail_term"],
        "burn_in": diag["burn_in"],
        "lag_cutoff": diag["lag_cutoff"],
        "drift_used": diag["drift_used"],
        "N_empirical": N,
    }
    if exp.iid:
        payload["closed_form"] = _jsonable(est.closed_form_variance(exp))
    w.json("variance.json", payload)


_DEFAULT_N_GRID = [256, 512, 1024, 2048, 4096, 8192, 16384]


def _run_clt_annealed(cfg, params, w, workers):
    v, sigma2 = _limit_params(cfg, params, workers)
    fit, rows = est.annealed_cf_error(
        cfg.experiment,
        params.get("N_grid", _DEFAULT_N_GRID),
        params.get("M", 100_000),
        sigma2=sigma2,
        v=v,
        workers=workers,
    )
    w.csv("clt_annealed.csv", rows)
    w.json("clt_annealed.json", {"fit": _fit_json(fit), "v": v, "sigma2": sigma2})


def _run_clt_quenched(cfg, params, w, workers):
    v, sigma2 = _limit_params(cfg, params, workers)
    fit, rows = est.quenched_concentration(
        cfg.experiment,
        params.get("N_grid", [256, 1024, 4096, 16384]),
        params.get("theta_samples", 64),
        params.get("walks_per_theta", 256),
        sigma2=sigma2,
        v=v,
        workers=workers,
    )
    w.csv("clt_quenched.csv", rows)
    w.json(
        "clt_quenched.json",
        {
            "fit": _fit_json(fit) if fit is not None else None,
            "v": v,
            "sigma2": sigma2,
        },
    )


def _run_ldp(cfg, params, w, workers):
    v, _ = _limit_params(cfg, params | {"sigma2": 0.0}, workers)
    a_values = params.get("a_values", [0.2, 0.4])
    fits, rows = est.large_deviation_rate(
        cfg.experiment,
        a_values,
        params.get("m_grid", [64, 128, 256, 512, 1024]),
        params.get("M", 200_000),
        v=v,
        workers=workers,
    )
    w.csv("ldp.csv", rows)
    payload = {"v": v, "fits": {repr(a): _fit_json(f) for a, f in fits.items()}}
    if cfg.experiment.iid and set(map(abs, cfg.experiment.kernel.support_array[:, 0])) == {1}:
        payload["cramer_rates"] = {repr(a): est.cramer_rate_pm1(a) for a in fits}
    w.json("ldp.json", payload)


def _run_encounters(cfg, params, w, workers):
    fit, rows = est.encounter_count(
        cfg.experiment,
        params.get("N_grid", [1024, 4096, 16384, 65536]),
        params.get("M", 64),
        A=params.get("A", est.DEFAULT_ENCOUNTER_A),
        workers=workers,
    )
    w.csv("encounters.csv", rows)
    w.json("encounters.json", {"fit": _fit_json(fit), "delta_hat": fit.slope})


def _run_excursions(cfg, params, w, workers):
    fit, rows = est.excursion_scaling(
        cfg.experiment,
        params.get("N_grid", [256, 1024, 4096, 16384]),
        params.get("M", 256),
        A=params.get("A", est.DEFAULT_ENCOUNTER_A),
        sep_factor=params.get("sep_factor", 4.0),
        workers=workers,
    )
    w.csv("excursions.csv", rows)
    w.json("excursions.json", {"fit": _fit_json(fit), "rho_hat": -fit.slope})


def _run_crossings(cfg, params, w, workers):
    N, M = params.get("N", 4096), params.get("M", 100)
    A = params.get("A", est.DEFAULT_ENCOUNTER_A)
    L = A * math.log(N)
    rows = []
    for rep in range(M):
        trace = est.simulate_two_walk_trace(cfg.experiment, N, L, env_index=rep)
        rows.append(
            {
                "replicate": rep,
                "episodes_J": trace.episode_count,
                "crossings_observed": len(trace.crossing_times),
                "first_crossing": trace.crossing_times[0]
                if trace.crossing_times
                else -1,
            }
        )
    w.csv("crossings.csv", rows)
    w.json(
        "crossings.json",
        {
            "N": N,
            "band": L,
            "mean_episodes": float(np.mean([r["episodes_J"] for r in rows])),
            "replicates": M,
        },
    )


def _run_gambler(cfg, params, w, workers):
    problem = gam.RuinProblem(
        params.get("p", 0.6),
        params.get("alpha1", 0),
        params.get("alpha", 1),
        params.get("alpha2", 3),
    )
    closed = gam.ruin_probability(problem)
    mc = gam.simulate_ruin(problem, params.get("M", 100_000), seed=cfg.seed)
    w.json(
        "gambler.json",
        {
            "p": problem.p,
            "levels": [problem.alpha1, problem.alpha, problem.alpha2],
            "closed_form": closed,
            "monte_carlo": _estimate_json(mc),
            "abs_error": abs(mc.value - closed),
            "within_3se": abs(mc.value - closed) <= 3 * max(mc.std_error, 1e-12),
        },
    )


def _run_ellipticity(cfg, params, w, workers):
    rep = check_ellipticity(
        cfg.experiment.kernel,
        sample_count=params.get("sample_count", 10_000),
        seed=cfg.seed,
    )
    w.json(
        "ellipticity.json",
        {
            "passed": rep.passed,
            "sample_count": rep.sample_count,
            "note": rep.note,
            "margins": {",".join(map(str, k)): v for k, v in rep.margins.items()},
            "perturbation_bound": check_perturbation_bound(cfg.experiment.kernel),
        },
    )


def _run_decorrelation(cfg, params, w, workers):
    rows = est.cross_correlation_vs_distance(
        cfg.experiment,
        params.get("separations", [0, 2, 8, 32]),
        params.get("M", 256),
        N=params.get("N", 64),
        workers=workers,
    )
    w.csv("decorrelation.csv", rows)
    w.json("decorrelation.json", {"rows": rows})


def _run_path(cfg, params, w, workers):
    v, sigma2 = _limit_params(cfg, params, workers)
    diag = est.path_diagnostics(
        cfg.experiment,
        params.get("N", 4096),
        params.get("M", 2000),
        sigma2=sigma2,
        v=v,
        workers=workers,
    )
    w.json("path.json", diag)


_RUNNERS = {
    "spectrum": _run_spectrum,
    "drift": _run_drift,
    "variance": _run_variance,
    "clt-annealed": _run_clt_annealed,
    "clt-quenched": _run_clt_quenched,
    "ldp": _run_ldp,
    "encounters": _run_encounters,
    "excursions": _run_excursions,
    "crossings": _run_crossings,
    "gambler": _run_gambler,
    "ellipticity-check": _run_ellipticity,
    "decorrelation": _run_decorrelation,
    "path": _run_path,
}


def run(cfg: ExperimentConfig, names, out_dir, workers: int = 1, quiet=False) -> int:
    """Execute the named estimators; returns a process exit code."""
    writer = _Writer(Path(out_dir))
    status = "ok"
    failure = None
    for name in names:
        params = cfg.estimators.get(name, {})
        if not quiet:
            print(f"[chaoswalk] running {name} ...", flush=True)
        try:
            _RUNNERS[name](cfg, params, writer, workers)
        except (SpectralConvergenceError, gam.RuinParameterError,
                FloatingPointError, RuntimeError, ValueError) as e:
            status = "failed"
            failure = f"{name}: {e}"
            print(f"[chaoswalk] {name} failed: {e}", file=sys.stderr)
            break
    manifest = {
        "config_hash": cfg.config_hash,
        "seed": cfg.seed,
        "estimators": list(names),
        "status": status,
        "generated_unix_time": time.time(),
        "artifacts": writer.artifacts,
    }
    if failure:
        manifest["failure"] = failure
    (Path(out_dir) / "manifest.json").write_text(
        json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n"
    )
    if not quiet and status == "ok":
        print(f"[chaoswalk] wrote {len(writer.artifacts)} artifacts to {out_dir}")
    return 0 if status == "ok" else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="chaoswalk",
        description="Simulation and numerical verification of random walks "
        "in chaotic dynamical environments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ESTIMATOR_NAMES + ["all"]:
        p = sub.add_parser(name, help=f"run the {name} estimator"
                           if name != "all" else "run every estimator in the config")
        p.add_argument("--config", required=True, help="JSON experiment config")
        p.add_argument("--seed", type=int, default=None, help="override config seed")
        p.add_argument("--out", default=None, help="output directory")
        p.add_argument("--threads", type=int, default=1, help="worker processes")
        p.add_argument("--quiet", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        raw = json.loads(Path(args.config).read_text())
    except (OSError, json.JSONDecodeError) as e:
        print(f"[chaoswalk] cannot read config: {e}", file=sys.stderr)
        return 2
    if args.seed is not None:
        raw["seed"] = args.seed
    try:
        cfg = build_config(raw)
    except ConfigError as e:
        print(f"[chaoswalk] {e}", file=sys.stderr)
        return 2
    if args.command == "all":
        names = [n for n in ESTIMATOR_NAMES if n in cfg.estimators]
    else:
        names = [args.command]
    out_dir = args.out or cfg.output_dir
    return run(cfg, names, out_dir, workers=max(1, args.threads), quiet=args.quiet)


if __name__ == "__main__":
    sys.exit(main())
