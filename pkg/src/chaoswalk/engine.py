"""Vectorized simulation of many walks in one shared d=1 environment.

The lattice segment touched so far is held as a contiguous numerator
(or float) array advanced in lock step with the walks; sites outside
the segment materialize on demand by fast-forwarding their initial
value, exactly as the lazy dict-backed Environment does, so the two
code paths are bit-identical for the same seeds (tested).

Exact-backend arithmetic is uint64: with slope s and modulus 2**62 the
product s*m must fit in 64 bits, so the vectorized exact path requires
s <= 3 (all built-ins); steeper or non-dyadic maps use the float path.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from chaoswalk.environment import initial_numerator, initial_value
from chaoswalk.kernel import Kernel
from chaoswalk.maps import EXACT_M, PiecewiseExpandingMap, fast_forward_numerator
from chaoswalk.spectral import DensitySampler

_MASK62 = np.uint64(EXACT_M - 1)
_INV_M = 2.0 ** -62


class LatticeEngine1D:
    """Several walks with private uniform streams in one environment."""

    def __init__(
        self,
        map_: PiecewiseExpandingMap,
        kernel: Kernel,
        sampler: DensitySampler,
        env_seed: int,
        walk_seeds: Sequence[int],
        start_positions: Optional[Sequence[int]] = None,
        backend: str = "exact",
    ):
        if kernel.dimension != 1:
            raise ValueError("the vectorized engine is one-dimensional")
        self.map = map_
        self.kernel = kernel
        self.sampler = sampler
        self.env_seed = int(env_seed)
        self.walk_seeds = [int(s) for s in walk_seeds]
        self.n_walks = len(self.walk_seeds)
        self.backend = backend
        if backend == "exact":
            if not map_.exact_compatible:
                raise ValueError("map not exact-compatible; use backend='float'")
            br = map_._exact_branches
            if max(b[2] for b in br) > 3:
                raise ValueError("exact vectorized path requires branch slope <= 3")
            self._lefts = np.array([b[0] for b in br], dtype=np.uint64)
            self._slopes = np.array([b[2] for b in br], dtype=np.uint64)
            self._offs = np.array([b[3] for b in br], dtype=np.uint64)
            self._linear = map_._linear_slope
        else:
            self._lefts = np.array([float(b.left) for b in map_.branches])
            self._slopes = np.array([float(b.slope) for b in map_.branches])
            self._offs = np.array([float(b.offset) for b in map_.branches])
            self._linear = None
        self.time = 0
        self.pos = np.zeros(self.n_walks, dtype=np.int64)
        if start_positions is not None:
            self.pos[:] = np.asarray(start_positions, dtype=np.int64)
        self.lo = 0
        self.sites = self._materialize(self.pos.min() - kernel.radius,
                                       self.pos.max() + kernel.radius)

    # -- environment segment ------------------------------------------------

    def _init_state(self, q: int):
        if self.backend == "exact":
            m = initial_numerator(self.env_seed, (q,), self.sampler)
            return fast_forward_numerator(self.map, m, self.time)
        x = initial_value(self.env_seed, (q,), self.sampler)
        for _ in range(self.time):
            i = int(np.searchsorted(self._lefts, x, side="right")) - 1
            x = min(max(self._slopes[i] * x - self._offs[i], 0.0), 1.0 - 2.0 ** -52)
        return x

    def _materialize(self, lo: int, hi: int) -> np.ndarray:
        dtype = np.uint64 if self.backend == "exact" else np.float64
        self.lo = lo
        return np.array([self._init_state(q) for q in range(lo, hi + 1)], dtype=dtype)

    def _ensure_range(self, lo: int, hi: int):
        cur_hi = self.lo + len(self.sites) - 1
        if lo >= self.lo and hi <= cur_hi:
            return
        dtype = self.sites.dtype
        if lo < self.lo:
            pre = np.array(
                [self._init_state(q) for q in range(lo, self.lo)], dtype=dtype
            )
            self.sites = np.concatenate([pre, self.sites])
            self.lo = lo
        if hi > cur_hi:
            post = np.array(
                [self._init_state(q) for q in range(cur_hi + 1, hi + 1)], dtype=dtype
            )
            self.sites = np.concatenate([self.sites, post])

    def _advance_sites(self):
        v = self.sites
        if self.backend == "exact":
            if self._linear is not None:
                self.sites = (np.uint64(self._linear) * v) & _MASK62
            else:
                b = np.searchsorted(self._lefts, v, side="right") - 1
                self.sites = self._slopes[b] * v - self._offs[b]
        else:
            b = np.searchsorted(self._lefts, v, side="right") - 1
            self.sites = np.clip(
                self._slopes[b] * v - self._offs[b], 0.0, 1.0 - 2.0 ** -52
            )
        self.time += 1

    # -- walks --------------------------------------------------------------

    def run(
        self,
        n_steps: int,
        record_positions: bool = False,
        record_increments: bool = False,
        record_drift: bool = False,
        record_shadow: bool = False,
    ) -> dict:
        """Advance all walks ``n_steps`` global steps.

        Returns final positions, and optionally the full position
        history (n_steps+1, n_walks), the increment history
        (n_steps, n_walks), or the per-step conditional mean
        displacement g(window) seen by each walk.

        ``record_shadow`` additionally evolves, from the same per-walk
        uniform stream, an unperturbed walk that steps by the base
        weights alone (as if epsilon were 0).  Sharing the uniforms
        couples each walk to its shadow maximally step by step, so the
        pair stays tightly correlated; the shadow is independent of the
        environment and serves as a paired control variate.
        """
        k = self.kernel
        c0 = k.radius
        disp = k.support_array[:, 0]
        disp_f = disp.astype(np.float64)
        uniforms = np.empty((n_steps, self.n_walks))
        for w, s in enumerate(self.walk_seeds):
            uniforms[:, w] = np.random.default_rng(s).random(n_steps)
        offsets = np.arange(2 * c0 + 1)
        positions = None
        increments = None
        drift = None
        if record_positions:
            positions = np.empty((n_steps + 1, self.n_walks), dtype=np.int64)
            positions[0] = self.pos
        if record_increments:
            increments = np.empty((n_steps, self.n_walks), dtype=np.int8)
        if record_drift:
            drift = np.empty((n_steps, self.n_walks))
        iid = k.epsilon == 0.0
        base_cum = np.cumsum(k.base_weights)[:-1]
        shadow_pos = self.pos.copy() if record_shadow else None
        if iid and record_drift:
            drift[:] = float(k.base_weights @ disp_f)
        for t in range(n_steps):
            if iid:
                idx = np.searchsorted(base_cum, uniforms[t], side="right")
            else:
                self._ensure_range(int(self.pos.min()) - c0,
                                   int(self.pos.max()) + c0)
                gi = (self.pos - self.lo)[:, None] + offsets[None, :] - c0
                wins = self.sites[gi]
                if self.backend == "exact":
                    wins = wins * _INV_M
                p = k.probabilities_batch(wins)
                if record_drift:
                    drift[t] = p @ disp_f
                cum = np.cumsum(p, axis=1)
                idx = (cum[:, :-1] <= uniforms[t][:, None]).sum(axis=1)
            dz = disp[idx]
            self.pos = self.pos + dz
            if record_shadow:
                sidx = np.searchsorted(base_cum, uniforms[t], side="right")
                shadow_pos = shadow_pos + disp[sidx]
            if record_positions:
                positions[t + 1] = self.pos
            if record_increments:
                increments[t] = dz
            if not iid:
                self._advance_sites()
            else:
                self.time += 1
        out = {"final": self.pos.copy(), "time": self.time}
        if record_positions:
            out["positions"] = positions
        if record_increments:
            out["increments"] = increments
        if record_drift:
            out["drift"] = drift
        if record_shadow:
            out["shadow_final"] = shadow_pos
        return out


def run_walks(
    exp,
    n_steps: int,
    n_walks: int,
    env_index: int = 0,
    tag: str = "walk",
    start_positions: Optional[Sequence[int]] = None,
    record_positions: bool = False,
    record_increments: bool = False,
    record_drift: bool = False,
    record_shadow: bool = False,
) -> dict:
    """Engine run with streams derived from the experiment seed."""
    engine = LatticeEngine1D(
        exp.map,
        exp.kernel,
        exp.sampler,
        env_seed=exp.env_seed(env_index),
        walk_seeds=[exp.walk_seed(tag, env_index, w) for w in range(n_walks)],
        start_positions=start_positions,
        backend=exp.backend,
    )
    return engine.run(
        n_steps,
        record_positions=record_positions,
        record_increments=record_increments,
        record_drift=record_drift,
        record_shadow=record_shadow,
    )
