"""Monte Carlo estimators and scaling-law fits.

Every estimator is deterministic given (experiment seed, its tag):
replicate streams are derived, never shared, so results do not depend on
scheduling or worker count.  When epsilon = 0 the walk is a genuine
i.i.d. process independent of the environment, and estimators switch to
an equivalent direct-sampling path (multinomial step counts instead of
stepwise simulation); cross-checks against closed forms and brute-force
difference-walk oracles live in the test suite.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from chaoswalk.engine import LatticeEngine1D, run_walks
from chaoswalk.experiment import Experiment, derive_seed, stream

DEFAULT_BURN_IN = 200
DEFAULT_LAG_CUTOFF = 50
DEFAULT_ENCOUNTER_A = 2.0
_WALKS_PER_ENV = 256


# ---------------------------------------------------------------------------
# result containers


@dataclass
class EstimateWithCI:
    value: object  # float or ndarray
    std_error: object
    replicates: int
    method: str

    def __post_init__(self):
        if self.replicates >= 2 and np.any(np.asarray(self.std_error) < 0):
            raise ValueError("std_error must be nonnegative")


@dataclass
class ScalingFit:
    """Least-squares line on transformed axes; shared fit definition.

    The slope/intercept/r_squared are np.polyfit of degree 1 on the
    transformed grid; downstream consumers (plots) recompute with the
    same definition.
    """

    grid: List[Tuple[float, float]]
    slope: float
    intercept: float
    r_squared: float
    transform: str

    @classmethod
    def fit(cls, xs, ys, transform: str) -> "ScalingFit":
        xs = np.asarray(xs, dtype=np.float64)
        ys = np.asarray(ys, dtype=np.float64)
        if transform == "loglog":
            tx, ty = np.log(xs), np.log(ys)
        elif transform == "semilogy":
            tx, ty = xs, np.log(ys)
        elif transform == "linear":
            tx, ty = xs, ys
        else:
            raise ValueError(f"unknown transform {transform!r}")
        slope, intercept = np.polyfit(tx, ty, 1)
        resid = ty - (slope * tx + intercept)
        sstot = float(((ty - ty.mean()) ** 2).sum())
        r2 = 1.0 - float((resid ** 2).sum()) / sstot if sstot > 0 else 1.0
        return cls(
            grid=[(float(x), float(y)) for x, y in zip(xs, ys)],
            slope=float(slope),
            intercept=float(intercept),
            r_squared=r2,
            transform=transform,
        )


@dataclass
class TwoWalkTrace:
    positions_x: np.ndarray
    positions_y: np.ndarray
    band_radius: float
    encounter_flags: np.ndarray = field(init=False)
    crossing_times: List[int] = field(init=False)
    episode_count: int = field(init=False)

    def __post_init__(self):
        diff = np.abs(self.positions_x - self.positions_y)
        self.encounter_flags = diff <= self.band_radius
        ep = crossing_episodes_from_flags(self.encounter_flags,
                                          len(self.positions_x) - 1)
        self.crossing_times = ep["s"]
        self.episode_count = ep["J"]


# ---------------------------------------------------------------------------
# helpers


def _pmap(fn, items, workers: int):
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=1))


def _support_1d(exp: Experiment) -> np.ndarray:
    return exp.kernel.support_array[:, 0].astype(np.int64)


def _iid_endpoints(exp: Experiment, N: int, M: int, tag: str) -> np.ndarray:
    """X_N samples of the i.i.d. (epsilon = 0) walk, via multinomial counts."""
    rng = stream(exp.seed, tag)
    counts = rng.multinomial(N, exp.kernel.base_weights, size=M)
    return counts @ exp.kernel.support_array.astype(np.int64)


def _iid_increments(exp: Experiment, shape, tag: str) -> np.ndarray:
    rng = stream(exp.seed, tag)
    cum = np.cumsum(exp.kernel.base_weights)[:-1]
    idx = np.searchsorted(cum, rng.random(shape), side="right")
    return _support_1d(exp)[idx]


def closed_form_drift(exp: Experiment) -> np.ndarray:
    """v = sum_z a_z z, exact for the unperturbed walk."""
    return exp.kernel.base_weights @ exp.kernel.support_array.astype(np.float64)


def closed_form_variance(exp: Experiment) -> np.ndarray:
    """Sigma^2 = sum_z a_z z z^T - v v^T, exact for the unperturbed walk."""
    z = exp.kernel.support_array.astype(np.float64)
    a = exp.kernel.base_weights
    v = a @ z
    second = (z.T * a) @ z
    out = second - np.outer(v, v)
    return out[0, 0] if exp.dimension == 1 else out


def _env_groups(M: int, walks_per_env: int = _WALKS_PER_ENV) -> List[int]:
    """Split M annealed replicates into environment groups."""
    n_envs = max(2, math.ceil(M / walks_per_env))
    base = M // n_envs
    sizes = [base + (1 if i < M % n_envs else 0) for i in range(n_envs)]
    return [s for s in sizes if s > 0]


def _require_d1(exp: Experiment, what: str):
    if exp.dimension != 1:
        raise NotImplementedError(
            f"{what} with epsilon > 0 is implemented for d=1 only"
        )


# ---------------------------------------------------------------------------
# drift


def _drift_env_job(args):
    exp, N, n_walks, env_index = args
    res = run_walks(exp, N, n_walks, env_index=env_index, tag="drift")
    return res["final"].astype(np.float64) / N


def estimate_drift(exp: Experiment, N: int, M: int, workers: int = 1) -> EstimateWithCI:
    """Mean of X_N / N over M annealed replicates."""
    if N <= 0:
        raise ValueError("N must be >= 1")
    if exp.iid:
        ratios = _iid_endpoints(exp, N, M, "drift").astype(np.float64) / N
        value = ratios.mean(axis=0)
        se = ratios.std(axis=0, ddof=1) / math.sqrt(M)
        if exp.dimension == 1:
            value, se = float(value[0]), float(se[0])
        return EstimateWithCI(value, se, M, "iid-multinomial")
    _require_d1(exp, "estimate_drift")
    sizes = _env_groups(M)
    jobs = [(exp, N, s, i) for i, s in enumerate(sizes)]
    groups = _pmap(_drift_env_job, jobs, workers)
    means = np.array([g.mean() for g in groups])
    value = float(np.concatenate(groups).mean())
    se = float(means.std(ddof=1) / math.sqrt(len(means)))
    return EstimateWithCI(value, se, len(means), "env-engine")


# ---------------------------------------------------------------------------
# variance


def _varemp_env_job(args):
    exp, N, n_walks, env_index = args
    return run_walks(exp, N, n_walks, env_index=env_index, tag="varemp")[
        "final"
    ].astype(np.float64)


def variance_empirical(
    exp: Experiment, N: int, M: int, v: Optional[float] = None, workers: int = 1
) -> EstimateWithCI:
    """Sample variance of (X_N - vN)/sqrt(N) over annealed replicates."""
    if M < 2:
        raise ValueError("need at least 2 replicates")
    if exp.dimension != 1:
        raise NotImplementedError("variance_empirical is one-dimensional")
    if exp.iid:
        X = _iid_endpoints(exp, N, M, "varemp").astype(np.float64)[:, 0]
        groups = np.array_split(X, 32)
    else:
        _require_d1(exp, "variance_empirical")
        sizes = _env_groups(M)
        jobs = [(exp, N, s, i) for i, s in enumerate(sizes)]
        groups = _pmap(_varemp_env_job, jobs, workers)
        X = np.concatenate(groups)
    vhat = X.mean() / N if v is None else v
    s = (X - vhat * N) / math.sqrt(N)
    var = float(s.var(ddof=1))
    # Jackknife over groups: honest errors when walks share environments.
    jacks = []
    for i in range(len(groups)):
        rest = np.concatenate([g for j, g in enumerate(groups) if j != i])
        vj = rest.mean() / N if v is None else v
        jacks.append(((rest - vj * N) / math.sqrt(N)).var(ddof=1))
    jacks = np.array(jacks)
    g = len(groups)
    se = float(math.sqrt(max((g - 1) / g * ((jacks - jacks.mean()) ** 2).sum(), 0.0)))
    return EstimateWithCI(var, se, g, "empirical-cov")


def _gk_env_job(args):
    exp, T, n_walks, env_index = args
    return run_walks(
        exp, T, n_walks, env_index=env_index, tag="gk", record_increments=True
    )["increments"].astype(np.float64)


def variance_green_kubo(
    exp: Experiment,
    M: int,
    burn_in: int = DEFAULT_BURN_IN,
    lag_cutoff: int = DEFAULT_LAG_CUTOFF,
    window: int = 1024,
    v: Optional[float] = None,
    workers: int = 1,
):
    """Summed-autocovariance variance estimate from near-stationary runs.

    Sigma^2 = c_0 + 2 sum_{n=1..K} c_n with c_n the lag-n autocovariance
    of centered increments, averaged over the window after ``burn_in``
    steps (stationarity is approached exponentially fast, so the burn-in
    bias decays geometrically).  Returns (EstimateWithCI, diagnostics)
    where diagnostics carries the per-lag terms and the lag-K tail term.
    """
    if lag_cutoff < 1 or burn_in < 0:
        raise ValueError("need lag_cutoff >= 1 and burn_in >= 0")
    if exp.dimension != 1:
        raise NotImplementedError("variance_green_kubo is one-dimensional")
    T = burn_in + lag_cutoff + window
    if exp.iid:
        inc = _iid_increments(exp, (M, T), "gk").astype(np.float64).T
        group_cols = np.array_split(np.arange(M), 32)
    else:
        _require_d1(exp, "variance_green_kubo")
        sizes = _env_groups(M)
        jobs = [(exp, T, s, i) for i, s in enumerate(sizes)]
        incs = _pmap(_gk_env_job, jobs, workers)
        inc = np.concatenate(incs, axis=1)
        bounds = np.cumsum([0] + sizes)
        group_cols = [np.arange(a, b) for a, b in zip(bounds, bounds[1:])]
    vhat = inc[burn_in:].mean() if v is None else v
    delta = inc[burn_in:] - vhat  # (lag_cutoff + window, n_walks)
    lags = np.arange(lag_cutoff + 1)
    # Per-walk lag sums so group jackknife is a cheap re-weighting.
    per_walk = np.empty((lag_cutoff + 1, delta.shape[1]))
    for n in lags:
        per_walk[n] = (delta[:window] * delta[n : n + window]).mean(axis=0)
    c = per_walk.mean(axis=1)
    total = float(c[0] + 2.0 * c[1:].sum())
    jacks = []
    for cols in group_cols:
        keep = np.setdiff1d(np.arange(delta.shape[1]), cols)
        cj = per_walk[:, keep].mean(axis=1)
        jacks.append(float(cj[0] + 2.0 * cj[1:].sum()))
    jacks = np.array(jacks)
    g = len(jacks)
    se = float(math.sqrt(max((g - 1) / g * ((jacks - jacks.mean()) ** 2).sum(), 0.0)))
    lag_se = per_walk.std(axis=1, ddof=1) / math.sqrt(delta.shape[1])
    diagnostics = {
        "lag_terms": c,
        "lag_std_errors": lag_se,
        "tail_term": float(abs(c[lag_cutoff])),
        "burn_in": burn_in,
        "lag_cutoff": lag_cutoff,
        "drift_used": float(vhat),
    }
    return EstimateWithCI(total, se, g, "green-kubo"), diagnostics


# ---------------------------------------------------------------------------
# annealed CLT rate


def _cf_env_job(args):
    exp, N, n_walks, env_index = args
    return run_walks(exp, N, n_walks, env_index=env_index, tag="cf")["final"]


def annealed_cf_error(
    exp: Experiment,
    N_grid: Sequence[int],
    M: int,
    sigma2: Optional[float] = None,
    v: Optional[float] = None,
    t_grid: Optional[np.ndarray] = None,
    workers: int = 1,
):
    """Sup over a frequency grid of |empirical CF - Gaussian CF| per N.

    Returns (ScalingFit of log sup-error vs log N, table rows).  The
    limit parameters default to the exact unperturbed closed forms and
    must be supplied for epsilon > 0.
    """
    if exp.dimension != 1:
        raise NotImplementedError("annealed_cf_error is one-dimensional")
    if v is None or sigma2 is None:
        if not exp.iid:
            raise ValueError("supply v and sigma2 for a perturbed kernel")
        v = float(closed_form_drift(exp)[0])
        sigma2 = float(closed_form_variance(exp))
    if t_grid is None:
        t_grid = np.linspace(-3.0, 3.0, 13)
    rows = []
    noise_floor = 3.0 / math.sqrt(M)
    for N in N_grid:
        if exp.iid:
            X = _iid_endpoints(exp, N, M, ("cf", N)).astype(np.float64)[:, 0]
        else:
            sizes = _env_groups(M)
            jobs = [(exp, N, s, i) for i, s in enumerate(sizes)]
            X = np.concatenate(_pmap(_cf_env_job, jobs, workers)).astype(np.float64)
        xt = (X - v * N) / math.sqrt(N)
        errs = [
            abs(np.exp(1j * t * xt).mean() - math.exp(-0.5 * t * t * sigma2))
            for t in t_grid
        ]
        sup = float(max(errs))
        rows.append(
            {
                "N": int(N),
                "sup_cf_error": sup,
                "replicates": M,
                "noise_floor_warning": sup < noise_floor,
            }
        )
    fit = ScalingFit.fit(
        [r["N"] for r in rows], [r["sup_cf_error"] for r in rows], "loglog"
    )
    return fit, rows


# ---------------------------------------------------------------------------
# large deviations


def cramer_rate_pm1(a: float) -> float:
    """Cramer rate of the symmetric +-1 walk at threshold a (test oracle)."""
    return 0.5 * ((1 + a) * math.log1p(a) + (1 - a) * math.log1p(-a))


def _ldp_env_job(args):
    exp, m, n_walks, env_index = args
    return run_walks(exp, m, n_walks, env_index=env_index, tag="ldp")["final"]


def large_deviation_rate(
    exp: Experiment,
    a_values: Sequence[float],
    m_grid: Sequence[int],
    M: int,
    v: Optional[float] = None,
    min_events: int = 5,
    workers: int = 1,
):
    """Empirical tail probabilities P(|X_m/m - v| >= a) and semi-log rates.

    Returns (fits: a -> ScalingFit over the m points with enough
    observed events, table rows).  Zero-event cells report a one-sided
    95% Clopper-Pearson upper bound instead of a point estimate.
    """
    if exp.dimension != 1:
        raise NotImplementedError("large_deviation_rate is one-dimensional")
    if v is None:
        if not exp.iid:
            raise ValueError("supply the drift v for a perturbed kernel")
        v = float(closed_form_drift(exp)[0])
    rows = []
    samples = {}
    for m in m_grid:
        if exp.iid:
            X = _iid_endpoints(exp, m, M, ("ldp", m)).astype(np.float64)[:, 0]
        else:
            sizes = _env_groups(M)
            jobs = [(exp, m, s, i) for i, s in enumerate(sizes)]
            X = np.concatenate(_pmap(_ldp_env_job, jobs, workers)).astype(np.float64)
        samples[m] = np.abs(X / m - v)
    for a in a_values:
        for m in m_grid:
            events = int((samples[m] >= a).sum())
            p = events / M
            if events > 0:
                se = math.sqrt(p * (1 - p) / M)
                upper = None
            else:
                se = 0.0
                upper = 1.0 - 0.05 ** (1.0 / M)
            rows.append(
                {
                    "a": float(a),
                    "m": int(m),
                    "p_hat": p,
                    "std_error": se,
                    "events": events,
                    "upper_bound": upper,
                }
            )
    fits = {}
    for a in a_values:
        pts = [
            (r["m"], r["p_hat"])
            for r in rows
            if r["a"] == a and r["events"] >= min_events
        ]
        if len(pts) >= 2:
            fits[float(a)] = ScalingFit.fit(
                [p[0] for p in pts], [p[1] for p in pts], "semilogy"
            )
    return fits, rows


# ---------------------------------------------------------------------------
# quenched concentration


def gaussian_bump(x):
    return np.exp(-0.5 * np.asarray(x, dtype=np.float64) ** 2)


def gaussian_bump_expectation(sigma2: float) -> float:
    """E phi(Z) for Z ~ N(0, sigma2) and the built-in bump, closed form."""
    return 1.0 / math.sqrt(1.0 + sigma2)


def _quench_theta_job(args):
    exp, N, walks, theta_index = args
    out = run_walks(
        exp, N, walks, env_index=theta_index, tag="quench", record_drift=True
    )
    # per-walk sum of conditional step means: same theta-conditional
    # expectation as the endpoint, far less walk noise
    return out["final"], out["drift"].sum(axis=0)


def quenched_concentration(
    exp: Experiment,
    N_grid: Sequence[int],
    theta_samples: int,
    walks_per_theta: int,
    phi: Callable = gaussian_bump,
    phi_gaussian_mean: Optional[Callable[[float], float]] = None,
    sigma2: Optional[float] = None,
    v: Optional[float] = None,
    workers: int = 1,
):
    """Across-environment concentration of within-environment walk means.

    The concentration statistic tracks the quenched mean deviation
    delta_theta = (E_theta[X_N] - vN) / sqrt(N): for each N and each
    environment sample theta_i, delta is estimated as the within-theta
    mean of the per-walk deviation D, and the across-theta variance of
    those means, minus the estimated within-theta Monte Carlo noise, is
    reported (the theta-variation of the exact conditional mean, which
    finite walks only estimate).  Returns (ScalingFit of the corrected
    variance vs N on log-log axes, table rows).

    For a perturbed kernel, D sums the conditional step means g(window)
    instead of realized +-1 increments: both have the same conditional
    expectation given theta (tower property), but conditioning strips
    the O(1) coin-flip noise, without which the decaying signal drowns
    at large N.  For an unperturbed kernel g is constant, so D falls
    back to the realized endpoint deviation and the noise correction is
    exercised against real walk noise (the natural null control).

    The within-theta mean of phi((X_N - vN)/sqrt(N)) is also computed,
    and its across-theta second moment about the Gaussian limit value
    is reported per row as ``second_moment``.
    """
    if exp.dimension != 1:
        raise NotImplementedError("quenched_concentration is one-dimensional")
    if v is None or sigma2 is None:
        if not exp.iid:
            raise ValueError("supply v and sigma2 for a perturbed kernel")
        v = float(closed_form_drift(exp)[0])
        sigma2 = float(closed_form_variance(exp))
    if phi_gaussian_mean is None:
        if phi is not gaussian_bump:
            raise ValueError("supply phi_gaussian_mean for a custom phi")
        phi_gaussian_mean = gaussian_bump_expectation
    gstar = phi_gaussian_mean(sigma2)
    rows = []
    for N in N_grid:
        if exp.iid:
            rng = stream(exp.seed, ("quench", N))
            counts = rng.multinomial(
                N, exp.kernel.base_weights, size=(theta_samples, walks_per_theta)
            )
            X = (counts @ exp.kernel.support_array.astype(np.int64))[..., 0]
            scaled = [
                (X[i].astype(np.float64) - v * N) / math.sqrt(N)
                for i in range(theta_samples)
            ]
            vals = [phi(s) for s in scaled]
            dev_vals = scaled
        else:
            jobs = [(exp, N, walks_per_theta, i) for i in range(theta_samples)]
            endpoints = _pmap(_quench_theta_job, jobs, workers)
            vals = [
                phi((e.astype(np.float64) - v * N) / math.sqrt(N))
                for e, _ in endpoints
            ]
            dev_vals = [(g - v * N) / math.sqrt(N) for _, g in endpoints]
        m_raw = np.array([val.mean() for val in vals])
        noise_raw = np.array([val.var(ddof=1) / len(val) for val in vals])
        m = np.array([val.mean() for val in dev_vals])
        noise = np.array([val.var(ddof=1) / len(val) for val in dev_vals])
        q_var = float(m.var(ddof=1) - noise.mean())
        q_m2 = float(((m_raw - gstar) ** 2).mean() - noise_raw.mean())
        # Jackknife-over-theta error bar for the corrected variance.
        jacks = np.array(
            [
                np.delete(m, i).var(ddof=1) - np.delete(noise, i).mean()
                for i in range(theta_samples)
            ]
        )
        g = theta_samples
        se = float(
            math.sqrt(max((g - 1) / g * ((jacks - jacks.mean()) ** 2).sum(), 0.0))
        )
        rows.append(
            {
                "N": int(N),
                "corrected_variance": q_var,
                "second_moment": q_m2,
                "std_error": se,
                "theta_samples": theta_samples,
                "walks_per_theta": walks_per_theta,
            }
        )
    positive = [r for r in rows if r["corrected_variance"] > 0]
    fit = None
    if len(positive) >= 2:
        fit = ScalingFit.fit(
            [r["N"] for r in positive],
            [r["corrected_variance"] for r in positive],
            "loglog",
        )
    return fit, rows


# ---------------------------------------------------------------------------
# path-level diagnostics


def _interp_paths(positions: np.ndarray, times: np.ndarray, v: float) -> np.ndarray:
    """Continuous-time rescaled path at the given times, (n_times, M)."""
    N = positions.shape[0] - 1
    xt = positions - v * np.arange(N + 1)[:, None]
    f = times * N
    i = np.minimum(np.ceil(f).astype(np.int64), N)
    frac = f - i  # in (-1, 0]
    nxt = np.minimum(i + 1, N)
    delta = xt[nxt] - xt[i]
    return (xt[i] + frac[:, None] * delta) / math.sqrt(N)


def path_diagnostics(
    exp: Experiment,
    N: int,
    M: int,
    sigma2: Optional[float] = None,
    v: Optional[float] = None,
    holder_exponent: float = 0.4,
    levels: Sequence[float] = (2.0, 4.0, 8.0),
    xi: Tuple[float, float] = (1.0, 1.0),
    times: Tuple[float, float] = (0.3, 0.7),
    dyadic_depth: int = 7,
    workers: int = 1,
) -> dict:
    """Tightness and finite-dimensional-Gaussianity diagnostics.

    (i) dyadic modulus-of-continuity statistic with exceedance
    frequencies at the given levels; (ii) two-time empirical CF against
    the Brownian-limit product form.
    """
    if exp.dimension != 1:
        raise NotImplementedError("path_diagnostics is one-dimensional")
    if v is None or sigma2 is None:
        if not exp.iid:
            raise ValueError("supply v and sigma2 for a perturbed kernel")
        v = float(closed_form_drift(exp)[0])
        sigma2 = float(closed_form_variance(exp))
    if exp.iid:
        inc = _iid_increments(exp, (N, M), ("path",))
        positions = np.vstack(
            [np.zeros(M, dtype=np.int64), np.cumsum(inc, axis=0)]
        )
    else:
        sizes = _env_groups(M)
        jobs = [(exp, N, s, i) for i, s in enumerate(sizes)]
        parts = _pmap(_path_env_job, jobs, workers)
        positions = np.concatenate(parts, axis=1)
    # Modulus of continuity over adjacent dyadic pairs at depths 1..J.
    holder_stat = np.zeros(positions.shape[1])
    for j in range(1, dyadic_depth + 1):
        ts = np.arange(2 ** j + 1) / 2 ** j
        path = _interp_paths(positions, ts, v)
        step = np.abs(np.diff(path, axis=0)).max(axis=0)
        holder_stat = np.maximum(holder_stat, step * 2 ** (j * holder_exponent))
    tail = {float(L): float((holder_stat > L).mean()) for L in levels}
    # Two-time characteristic function.
    t1, t2 = times
    x = _interp_paths(positions, np.array([t1, t2]), v)
    emp = np.exp(1j * (xi[0] * x[0] + xi[1] * x[1]))
    cf = complex(emp.mean())
    cf_se = float(
        math.hypot(emp.real.std(ddof=1), emp.imag.std(ddof=1))
        / math.sqrt(positions.shape[1])
    )
    pred = math.exp(
        -0.5 * sigma2 * ((xi[0] + xi[1]) ** 2 * t1 + xi[1] ** 2 * (t2 - t1))
    )
    return {
        "holder_exponent": holder_exponent,
        "holder_tail_frequency": tail,
        "fdd_cf": {
            "xi": list(xi),
            "times": list(times),
            "empirical_real": cf.real,
            "empirical_imag": cf.imag,
            "predicted": pred,
            "std_error": cf_se,
        },
        "N": N,
        "replicates": positions.shape[1],
    }


def _path_env_job(args):
    exp, N, n_walks, env_index = args
    return run_walks(
        exp, N, n_walks, env_index=env_index, tag="path", record_positions=True
    )["positions"]


# ---------------------------------------------------------------------------
# two-walk machinery


def _two_walk_job(args):
    exp, N, rep, start_sep = args
    return run_walks(
        exp,
        N,
        2,
        env_index=rep,
        tag="twowalk",
        start_positions=[0, start_sep],
        record_positions=True,
    )["positions"]


def simulate_two_walk_trace(
    exp: Experiment, N: int, band_radius: float, env_index: int = 0,
    start_separation: int = 0,
) -> TwoWalkTrace:
    """Two walks with disjoint streams in one shared environment."""
    pos = _two_walk_job((exp, N, env_index, start_separation))
    return TwoWalkTrace(
        positions_x=pos[:, 0], positions_y=pos[:, 1], band_radius=band_radius
    )


def crossing_episodes_from_flags(in_band: np.ndarray, N: int) -> dict:
    """Up/down-crossing times of the band from per-step membership flags.

    Even-index times are upcrossings (band at j-1, outside at j), odd
    are downcrossings; ``J`` is the first episode index whose stopping
    time is >= N (never-observed crossings count as infinite).
    """
    s: List[int] = []
    seeking_up = True
    for j in range(1, len(in_band)):
        if seeking_up and in_band[j - 1] and not in_band[j]:
            s.append(j)
            seeking_up = False
        elif not seeking_up and not in_band[j - 1] and in_band[j]:
            s.append(j)
            seeking_up = True
    J = next((k for k, t in enumerate(s) if t >= N), len(s))
    return {"s": s, "J": J}


def crossing_episodes(trace: TwoWalkTrace, band_radius: Optional[float] = None) -> dict:
    if band_radius is None:
        flags = trace.encounter_flags
    else:
        flags = np.abs(trace.positions_x - trace.positions_y) <= band_radius
    return crossing_episodes_from_flags(flags, len(trace.positions_x) - 1)


def _iid_pair_counts(exp: Experiment, N: int, M: int, L: float, tag,
                     start_sep: int = 0, chunk: int = 256):
    """(counts, survived) for i.i.d. two-walk pairs, vectorized."""
    cum = np.cumsum(exp.kernel.base_weights)[:-1]
    disp = _support_1d(exp)
    rng = stream(exp.seed, tag)
    counts = np.empty(M, dtype=np.int64)
    survived = np.empty(M, dtype=bool)
    done = 0
    while done < M:
        b = min(chunk, M - done)
        dx = disp[np.searchsorted(cum, rng.random((N, b)), side="right")]
        dy = disp[np.searchsorted(cum, rng.random((N, b)), side="right")]
        d = start_sep + np.cumsum(dx - dy, axis=0)
        inside = np.abs(d) <= L
        counts[done : done + b] = inside.sum(axis=0)
        survived[done : done + b] = ~inside.any(axis=0)
        done += b
    return counts, survived


def _encounter_env_job(args):
    exp, N, rep, L = args
    pos = _two_walk_job((exp, N, rep, 0))
    diff = np.abs(pos[1:, 0] - pos[1:, 1])
    return int((diff <= L).sum())


def encounter_count(
    exp: Experiment,
    N_grid: Sequence[int],
    M: int,
    A: float = DEFAULT_ENCOUNTER_A,
    workers: int = 1,
):
    """Mean number of t in 1..N with |X_t - Y_t| <= A ln N, and its scaling.

    Returns (ScalingFit with slope delta_hat, table rows).
    """
    if exp.dimension != 1:
        raise NotImplementedError("encounter_count is one-dimensional")
    rows = []
    for N in N_grid:
        L = A * math.log(N)
        if exp.iid:
            counts, _ = _iid_pair_counts(exp, N, M, L, ("enc", N))
        else:
            jobs = [(exp, N, derive_seed(N, r), L) for r in range(M)]
            counts = np.array(
                _pmap(_encounter_env_job, jobs, workers), dtype=np.int64
            )
        mean = float(counts.mean())
        se = float(counts.std(ddof=1) / math.sqrt(M))
        rows.append(
            {
                "N": int(N),
                "band": L,
                "mean_count": mean,
                "std_error": se,
                "replicates": M,
            }
        )
    fit = ScalingFit.fit(
        [r["N"] for r in rows], [r["mean_count"] for r in rows], "loglog"
    )
    return fit, rows


def difference_walk_encounter_oracle(
    base_weights: np.ndarray,
    support: np.ndarray,
    N: int,
    L: float,
    M: int,
    seed: int = 0,
    start_sep: int = 0,
) -> EstimateWithCI:
    """Brute-force oracle: simulate the two-walk difference chain directly.

    The difference of two independent unperturbed walks is itself a
    random walk whose step law is the (z, -z') convolution of the base
    weights; encounter counts of the pair equal band-occupation counts
    of this chain.
    """
    a = np.asarray(base_weights, dtype=np.float64)
    z = np.asarray(support, dtype=np.int64)
    steps = (z[:, None] - z[None, :]).ravel()
    probs = np.outer(a, a).ravel()
    order = np.argsort(steps, kind="stable")
    steps, probs = steps[order], probs[order]
    cum = np.cumsum(probs)[:-1]
    rng = np.random.default_rng(seed)
    counts = np.empty(M, dtype=np.int64)
    chunk = 256
    done = 0
    while done < M:
        b = min(chunk, M - done)
        dd = steps[np.searchsorted(cum, rng.random((N, b)), side="right")]
        d = start_sep + np.cumsum(dd, axis=0)
        counts[done : done + b] = (np.abs(d) <= L).sum(axis=0)
        done += b
    return EstimateWithCI(
        float(counts.mean()),
        float(counts.std(ddof=1) / math.sqrt(M)),
        M,
        "difference-walk-oracle",
    )


# ---------------------------------------------------------------------------
# excursions


def _excursion_env_job(args):
    exp, N, rep, L, sep = args
    pos = _two_walk_job((exp, N, rep, sep))
    diff = np.abs(pos[1:, 0] - pos[1:, 1])
    return bool((diff > L).all())


def excursion_survival(
    exp: Experiment,
    N: int,
    separations: Sequence[int],
    M: int,
    A: float = DEFAULT_ENCOUNTER_A,
    workers: int = 1,
) -> List[dict]:
    """P(|X_j - Y_j| > A ln N for all j <= N) per initial separation.

    Separations beyond kinematic reach (the walks cannot close the gap)
    return probability exactly 1 without simulation.
    """
    if exp.dimension != 1:
        raise NotImplementedError("excursion_survival is one-dimensional")
    L = A * math.log(N)
    c0 = exp.kernel.radius
    rows = []
    for sep in separations:
        if abs(sep) > 2 * N * c0 + L:
            rows.append(
                {
                    "N": int(N),
                    "separation": int(sep),
                    "survival": 1.0,
                    "std_error": 0.0,
                    "replicates": 0,
                    "structural": True,
                }
            )
            continue
        if exp.iid:
            _, survived = _iid_pair_counts(
                exp, N, M, L, ("exc", N, sep), start_sep=sep
            )
        else:
            jobs = [(exp, N, derive_seed("exc", N, sep, r), L, sep) for r in range(M)]
            survived = np.array(_pmap(_excursion_env_job, jobs, workers))
        p = float(survived.mean())
        rows.append(
            {
                "N": int(N),
                "separation": int(sep),
                "survival": p,
                "std_error": math.sqrt(p * (1 - p) / M),
                "replicates": M,
                "structural": False,
            }
        )
    return rows


def excursion_scaling(
    exp: Experiment,
    N_grid: Sequence[int],
    M: int,
    A: float = DEFAULT_ENCOUNTER_A,
    sep_factor: float = 4.0,
    workers: int = 1,
):
    """Survival probability vs N at separation sep_factor * A ln N.

    Returns (ScalingFit with rho_hat = -slope, table rows).
    """
    rows = []
    for N in N_grid:
        sep = max(1, math.ceil(sep_factor * A * math.log(N)))
        r = excursion_survival(exp, N, [sep], M, A=A, workers=workers)[0]
        rows.append(r)
    fitted = [r for r in rows if r["survival"] > 0]
    fit = ScalingFit.fit(
        [r["N"] for r in fitted], [r["survival"] for r in fitted], "loglog"
    )
    return fit, rows


# ---------------------------------------------------------------------------
# far-apart decorrelation


def _decorr_job(args):
    exp, N, rep, sep = args
    res_x = run_walks(
        exp, N, 2, env_index=rep, tag="decorr",
        start_positions=[0, sep], record_drift=True,
    )
    return res_x["drift"]


def cross_correlation_vs_distance(
    exp: Experiment,
    separations: Sequence[int],
    M: int,
    N: int = 64,
    workers: int = 1,
) -> List[dict]:
    """|Cov| of the two walks' centered conditional step means vs separation.

    Uses the conditional one-step means g(window) instead of realized
    increments: given the environment and positions the two steps are
    independent, so E[(dx - v)(dy - v)] = E[(g_x - v)(g_y - v)] exactly,
    and the conditioning removes the O(1) sign noise that would swamp
    the O(epsilon^2) signal.  Walk streams are shared across separations
    (matched pairs).
    """
    if exp.dimension != 1:
        raise NotImplementedError("cross_correlation_vs_distance is one-dimensional")
    if exp.iid:
        # Conditional means are constant: the covariance is exactly zero.
        return [
            {
                "separation": int(s),
                "abs_correlation": 0.0,
                "correlation": 0.0,
                "std_error": 0.0,
                "replicates": M,
            }
            for s in separations
        ]
    out = []
    for sep in separations:
        jobs = [(exp, N, rep, sep) for rep in range(M)]
        drifts = _pmap(_decorr_job, jobs, workers)  # list of (N, 2)
        g = np.stack(drifts)  # (M, N, 2)
        vhat = float(g.mean())
        prod = (g[:, :, 0] - vhat) * (g[:, :, 1] - vhat)
        per_rep = prod.mean(axis=1)
        corr = float(per_rep.mean())
        se = float(per_rep.std(ddof=1) / math.sqrt(M))
        out.append(
            {
                "separation": int(sep),
                "abs_correlation": abs(corr),
                "correlation": corr,
                "std_error": se,
                "replicates": M,
            }
        )
    return out
