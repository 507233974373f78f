"""Gambler's-ruin machinery: closed form, simulation and domination.

The closed form for a biased +-1 chain started at alpha between
absorbing levels alpha1 < alpha2 (p != 1/2, r = p/(1-p)):

    P(reach alpha2 before alpha1) = (r^(a2-a) - r^(a2-a1)) / (1 - r^(a2-a1))

evaluated in a numerically stable expm1 form, falling back to extended
precision when the exponents overflow doubles.  The comparison chain
construction drives a history-dependent process and its i.i.d. floor
chain with shared uniforms, yielding pathwise stochastic domination.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

import mpmath

_LOG_DOMAIN_CUTOFF = 700.0


class RuinParameterError(ValueError):
    pass


class ContractViolationError(RuntimeError):
    """Conditional up-probability dipped below the declared floor."""

    def __init__(self, step: int, value: float, floor: float):
        super().__init__(
            f"conditional up-probability {value} below floor {floor} at step {step}"
        )
        self.step = step


@dataclass(frozen=True)
class RuinProblem:
    p: float
    alpha1: int
    alpha: int
    alpha2: int

    def __post_init__(self):
        if not 0.0 < self.p < 1.0:
            raise RuinParameterError("p must be in (0, 1)")
        if self.p == 0.5:
            raise RuinParameterError("p = 1/2 is not supported by the closed form")
        if not self.alpha1 <= self.alpha <= self.alpha2:
            raise RuinParameterError("levels must satisfy alpha1 <= alpha <= alpha2")


def ruin_probability(problem: RuinProblem) -> float:
    """P(reach alpha2 before alpha1 | start alpha), exact closed form."""
    if problem.alpha == problem.alpha2:
        return 1.0
    if problem.alpha == problem.alpha1:
        return 0.0
    lr = math.log(problem.p) - math.log1p(-problem.p)
    b = problem.alpha2 - problem.alpha
    B = problem.alpha2 - problem.alpha1
    # (r^b - r^B) / (1 - r^B) = expm1((b - B) lr) / expm1(-B lr)
    if max(abs((b - B) * lr), abs(B * lr)) < _LOG_DOMAIN_CUTOFF:
        return math.expm1((b - B) * lr) / math.expm1(-B * lr)
    with mpmath.workdps(50):
        r = mpmath.mpf(problem.p) / (1 - mpmath.mpf(problem.p))
        val = (r ** b - r ** B) / (1 - r ** B)
        return float(val)


def simulate_ruin(
    problem: RuinProblem, M_paths: int, seed: int = 0, max_rounds: int = 10_000_000
) -> "EstimateFromPaths":
    """Monte Carlo upper-boundary-first frequency with binomial errors."""
    if M_paths < 1:
        raise ValueError("need at least one path")
    if problem.alpha2 - problem.alpha1 < 2:
        raise RuinParameterError(
            "degenerate interval: no interior starting level to simulate from"
        )
    if problem.alpha == problem.alpha2:
        return EstimateFromPaths(1.0, 0.0, M_paths)
    if problem.alpha == problem.alpha1:
        return EstimateFromPaths(0.0, 0.0, M_paths)
    rng = np.random.default_rng(seed)
    pos = np.full(M_paths, problem.alpha, dtype=np.int64)
    won = np.zeros(M_paths, dtype=bool)
    active = np.arange(M_paths)
    for _ in range(max_rounds):
        if len(active) == 0:
            break
        steps = np.where(rng.random(len(active)) < problem.p, 1, -1)
        pos[active] += steps
        hit_up = pos[active] >= problem.alpha2
        hit_dn = pos[active] <= problem.alpha1
        won[active[hit_up]] = True
        active = active[~(hit_up | hit_dn)]
    else:
        raise RuntimeError("absorption not reached within max_rounds")
    p = float(won.mean())
    return EstimateFromPaths(p, math.sqrt(p * (1 - p) / M_paths), M_paths)


@dataclass(frozen=True)
class EstimateFromPaths:
    value: float
    std_error: float
    replicates: int
    method: str = "ruin-mc"


@dataclass
class DominatedPair:
    """History-dependent chain and its floor chain on shared uniforms."""

    shared_uniforms: np.ndarray  # (n_steps, n_paths)
    conditional_up_probs: np.ndarray  # (n_steps, n_paths)
    paths_dominating: np.ndarray  # (n_steps + 1, n_paths) the X* chain
    paths_floor: np.ndarray  # (n_steps + 1, n_paths) the iid floor chain

    def domination_violations(self) -> int:
        return int((self.paths_dominating < self.paths_floor).sum())


def build_dominated_pair(
    conditional_prob_fn: Callable[[int, np.ndarray], np.ndarray],
    p_floor: float,
    n_steps: int,
    seed: int = 0,
    n_paths: int = 1,
    start: int = 0,
) -> DominatedPair:
    """Drive both chains with the same uniforms U_n.

    ``conditional_prob_fn(step, history)`` returns the up-probability of
    the dominating chain given its +-1 step history (n_paths, step); it
    must stay >= p_floor (violations raise, naming the step).  Both
    chains step down when U_n falls below their down-probability, so the
    dominating chain is pathwise >= the floor chain.
    """
    rng = np.random.default_rng(seed)
    U = rng.random((n_steps, n_paths))
    hist = np.empty((n_paths, n_steps), dtype=np.int8)
    probs = np.empty((n_steps, n_paths))
    x_star = np.empty((n_steps + 1, n_paths), dtype=np.int64)
    x_floor = np.empty((n_steps + 1, n_paths), dtype=np.int64)
    x_star[0] = start
    x_floor[0] = start
    for n in range(n_steps):
        p_up = np.asarray(conditional_prob_fn(n, hist[:, :n]), dtype=np.float64)
        p_up = np.broadcast_to(p_up, (n_paths,)).copy()
        bad = p_up < p_floor - 1e-12
        if bad.any():
            raise ContractViolationError(
                n, float(p_up[bad].min()), p_floor
            )
        probs[n] = p_up
        down_star = U[n] < (1.0 - p_up)
        down_floor = U[n] < (1.0 - p_floor)
        step_star = np.where(down_star, -1, 1).astype(np.int8)
        hist[:, n] = step_star
        x_star[n + 1] = x_star[n] + step_star
        x_floor[n + 1] = x_floor[n] + np.where(down_floor, -1, 1)
    return DominatedPair(
        shared_uniforms=U,
        conditional_up_probs=probs,
        paths_dominating=x_star,
        paths_floor=x_floor,
    )


def reach_probability_bound(
    conditional_prob_fn: Callable[[int, np.ndarray], np.ndarray],
    p_floor: float,
    alpha1: int,
    alpha: int,
    alpha2: int,
    M_paths: int,
    seed: int = 0,
    max_rounds: int = 1_000_000,
) -> dict:
    """MC reach probability of the dominated chain vs the floor closed form.

    Returns {dominated_prob, dominated_se, floor_chain_prob, holds}
    where ``holds`` checks estimate + 3 SE >= closed form (a property
    report, not an exception).
    """
    floor_prob = ruin_probability(RuinProblem(p_floor, alpha1, alpha, alpha2))
    rng = np.random.default_rng(seed)
    pos = np.full(M_paths, alpha, dtype=np.int64)
    won = np.zeros(M_paths, dtype=bool)
    done = np.zeros(M_paths, dtype=bool)
    hist = []
    for n in range(max_rounds):
        if done.all():
            break
        hist_arr = (
            np.array(hist, dtype=np.int8).T
            if hist
            else np.empty((M_paths, 0), dtype=np.int8)
        )
        p_up = np.asarray(conditional_prob_fn(n, hist_arr), dtype=np.float64)
        p_up = np.broadcast_to(p_up, (M_paths,))
        bad = (~done) & (p_up < p_floor - 1e-12)
        if bad.any():
            raise ContractViolationError(n, float(p_up[bad].min()), p_floor)
        steps = np.where(rng.random(M_paths) < (1.0 - p_up), -1, 1).astype(np.int8)
        steps[done] = 0
        hist.append(steps)
        pos += steps
        newly_up = (~done) & (pos >= alpha2)
        newly_dn = (~done) & (pos <= alpha1)
        won[newly_up] = True
        done |= newly_up | newly_dn
    else:
        raise RuntimeError("absorption not reached within max_rounds")
    p = float(won.mean())
    se = math.sqrt(p * (1 - p) / M_paths)
    return {
        "dominated_prob": p,
        "dominated_se": se,
        "floor_chain_prob": floor_prob,
        "holds": p + 3 * se >= floor_prob,
        "paths": M_paths,
    }
