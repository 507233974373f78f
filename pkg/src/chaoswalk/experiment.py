"""Experiment bundle and deterministic stream derivation.

Every estimator derives its randomness from (master seed, purpose tag,
indices) so results are bit-reproducible and independent of scheduling:
replicas never share generator state.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field
from functools import cached_property
from typing import Optional

import numpy as np

from chaoswalk.environment import Environment
from chaoswalk.kernel import Kernel, default_kernel
from chaoswalk.maps import PiecewiseExpandingMap, tripling
from chaoswalk.spectral import DensitySampler


def derive_seed(*parts) -> int:
    """Stable 64-bit seed from a mixed tuple of ints and strings."""
    h = hashlib.sha256()
    for p in parts:
        h.update(repr(p).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest()[:8], "little")


def stream(*parts) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))


@dataclass
class Experiment:
    """A map, a kernel and a master seed, plus backend choices."""

    map: PiecewiseExpandingMap = field(default_factory=tripling)
    kernel: Kernel = field(default_factory=default_kernel)
    dimension: int = 1
    seed: int = 0
    backend: str = "exact"
    sampler_bins: int = 4096

    def __post_init__(self):
        if self.kernel.dimension != self.dimension:
            raise ValueError("kernel dimension does not match experiment dimension")
        if self.backend == "exact" and not self.map.exact_compatible:
            self.backend = "float"

    @cached_property
    def sampler(self) -> DensitySampler:
        return DensitySampler.from_map(self.map, self.sampler_bins)

    @property
    def iid(self) -> bool:
        """True when steps are environment-independent (epsilon = 0)."""
        return self.kernel.epsilon == 0.0

    def environment(self, env_index: int = 0) -> Environment:
        """Environment replica ``env_index`` (a fresh theta sample)."""
        return Environment(
            self.map,
            derive_seed(self.seed, "env", env_index),
            self.dimension,
            self.sampler,
            backend=self.backend,
        )

    def env_seed(self, env_index: int) -> int:
        return derive_seed(self.seed, "env", env_index)

    def walk_seed(self, *parts) -> int:
        return derive_seed(self.seed, "walk", *parts)
