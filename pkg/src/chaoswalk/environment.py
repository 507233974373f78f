"""Lazy infinite lattice of independently evolving chaotic sites.

Sites materialize on first access.  The initial value of the site at
coordinate q is a pure function of (master_seed, q) — a counter-based
hash feeding the invariant-density inverse CDF — so results are
bit-exact independent of access order, and replicas sharing a master
seed see the same environment without shared mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, Tuple

import numpy as np

from chaoswalk.maps import (
    EXACT_M,
    ExactPoint,
    PiecewiseExpandingMap,
    eval_map,
    fast_forward_numerator,
)
from chaoswalk.spectral import DensitySampler

_MASK64 = (1 << 64) - 1


def _splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK64
    return z ^ (z >> 31)


def site_hash(master_seed: int, coords: Tuple[int, ...]) -> int:
    """64-bit hash of (seed, lattice point); zig-zag encodes signs."""
    h = _splitmix64(master_seed & _MASK64)
    for c in coords:
        zz = (c << 1) ^ (c >> 63) if c >= 0 else ((-c) << 1) - 1
        h = _splitmix64(h ^ (zz & _MASK64))
    return h


def initial_numerator(master_seed: int, coords: Tuple[int, ...], sampler: DensitySampler) -> int:
    """Exact-backend initial site state: 62-bit numerator sampled from mu_0.

    Numerator 0 (the fixed point of every built-in) is nudged to 1 so
    that orbits never degenerate; the event has probability 2**-62.
    """
    u = (site_hash(master_seed, coords) >> 2) * 2.0 ** -62
    num = int(float(sampler.ppf(u)) * EXACT_M)
    return max(1, min(EXACT_M - 1, num))


def initial_value(master_seed: int, coords: Tuple[int, ...], sampler: DensitySampler) -> float:
    """Float-backend initial site state."""
    u = (site_hash(master_seed, coords) >> 2) * 2.0 ** -62
    return float(sampler.ppf(u))


@dataclass
class LatticePoint:
    """d-tuple of signed integers; the lattice norm is the max-norm."""

    coordinates: Tuple[int, ...]

    @property
    def dimension(self) -> int:
        return len(self.coordinates)

    def norm(self) -> int:
        return max(abs(c) for c in self.coordinates)


def _as_coords(q) -> Tuple[int, ...]:
    if isinstance(q, LatticePoint):
        return q.coordinates
    if isinstance(q, int):
        return (q,)
    return tuple(int(c) for c in q)


class Environment:
    """The product environment on Z^d at a given time, materialized lazily.

    Single-writer: parallel replicas each re-derive their own instance
    from the seed instead of sharing one.
    """

    def __init__(
        self,
        map_: PiecewiseExpandingMap,
        seed: int,
        dimension: int,
        sampler: DensitySampler,
        backend: str = "exact",
    ):
        if dimension < 1:
            raise ValueError("dimension must be >= 1")
        if backend not in ("exact", "float"):
            raise ValueError(f"unknown backend {backend!r}")
        if backend == "exact" and not map_.exact_compatible:
            raise ValueError(
                f"map {map_.name!r} is not exact-compatible; use backend='float'"
            )
        self.map = map_
        self.master_seed = int(seed)
        self.dimension = dimension
        self.sampler = sampler
        self.backend = backend
        self.time = 0
        # site -> state at self.time (int numerator or float value)
        self.sites: Dict[Tuple[int, ...], object] = {}

    def _materialize(self, coords: Tuple[int, ...]):
        if self.backend == "exact":
            m = initial_numerator(self.master_seed, coords, self.sampler)
            state = fast_forward_numerator(self.map, m, self.time)
        else:
            x = initial_value(self.master_seed, coords, self.sampler)
            for _ in range(self.time):
                x = eval_map(self.map, x)
            state = x
        self.sites[coords] = state
        return state

    def site_state(self, q):
        coords = _as_coords(q)
        if len(coords) != self.dimension:
            raise ValueError("lattice point dimension mismatch")
        state = self.sites.get(coords)
        if state is None:
            state = self._materialize(coords)
        return state

    def site_value(self, q) -> float:
        state = self.site_state(q)
        if self.backend == "exact":
            return state * 2.0 ** -62
        return state

    def site_point(self, q) -> ExactPoint:
        if self.backend != "exact":
            raise ValueError("exact points only available on the exact backend")
        return ExactPoint(self.site_state(q))

    def advance(self):
        """One global time step: every materialized site moves under T."""
        if self.backend == "exact":
            ev = self.map.eval_numerator
            self.sites = {q: ev(m) for q, m in self.sites.items()}
        else:
            m = self.map
            self.sites = {q: eval_map(m, x) for q, x in self.sites.items()}
        self.time += 1

    def window(self, center, radius: int) -> np.ndarray:
        """Values on the (2*radius+1)^d block around ``center``.

        Offsets are enumerated lexicographically; the flattened order is
        the contract shared with kernel potentials.
        """
        if radius < 0:
            raise ValueError("radius must be >= 0")
        c = _as_coords(center)
        if len(c) != self.dimension:
            raise ValueError("lattice point dimension mismatch")
        out = np.empty((2 * radius + 1) ** len(c))
        for i, off in enumerate(window_offsets(len(c), radius)):
            out[i] = self.site_value(tuple(a + b for a, b in zip(c, off)))
        return out

    def snapshot(self) -> dict:
        """Debug export of (time, materialized sites); format not stable."""
        return {
            "time": self.time,
            "backend": self.backend,
            "sites": {
                ",".join(map(str, q)): (s if self.backend == "exact" else float(s))
                for q, s in sorted(self.sites.items())
            },
        }


def window_offsets(dimension: int, radius: int):
    """Lexicographic offsets of the max-norm ball of the given radius."""
    if dimension == 1:
        return [(o,) for o in range(-radius, radius + 1)]
    inner = window_offsets(dimension - 1, radius)
    return [(o,) + rest for o in range(-radius, radius + 1) for rest in inner]
