"""Ulam discretization of the transfer operator of a single-site map.

The Ulam matrix P[i, j] = m(bin_i ∩ T^{-1} bin_j) / m(bin_i) is computed
from exact interval intersections for affine branches (no quadrature),
so on Markov-aligned grids the discretization is exact.  The invariant
density, the subdominant eigenvalue modulus (a grid-level estimate of
the correlation-decay rate, not a certified bound) and decay diagnostics
feed the environment sampler and the statistical test suite.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from chaoswalk.maps import AffineBranch, PiecewiseExpandingMap

ROW_SUM_TOL = 1e-12
POWER_TOL = 1e-12
POWER_MAXITER = 100_000
DENSE_EIG_CUTOFF = 1500


class SpectralConvergenceError(RuntimeError):
    """Iterative solver failed to converge; carries the residual."""

    def __init__(self, message: str, residual: float):
        super().__init__(f"{message} (residual {residual:.3e})")
        self.residual = residual


@dataclass(frozen=True)
class UlamMatrix:
    """Row-stochastic transition matrix between uniform bins."""

    n_bins: int
    entries: sp.csr_matrix
    map_name: str

    def row_sums(self) -> np.ndarray:
        return np.asarray(self.entries.sum(axis=1)).ravel()


@dataclass
class SpectralReport:
    leading_eigenvalue: float
    invariant_density: np.ndarray  # per-bin density, bin-weighted sum = 1
    second_modulus: float
    iterations: int
    n_bins: int
    map_name: str

    def to_json(self) -> str:
        return json.dumps(
            {
                "leading_eigenvalue": self.leading_eigenvalue,
                "invariant_density": [float(v) for v in self.invariant_density],
                "second_modulus": self.second_modulus,
                "iterations": self.iterations,
                "n_bins": self.n_bins,
                "map_name": self.map_name,
            }
        )

    def density_csv_rows(self):
        """(bin_left, bin_right, density) rows for CSV export."""
        w = 1.0 / self.n_bins
        for i, dens in enumerate(self.invariant_density):
            yield (i * w, (i + 1) * w, float(dens))


def build_ulam(map_: PiecewiseExpandingMap, n_bins: int) -> UlamMatrix:
    """Ulam matrix from exact interval intersections (affine branches).

    Smooth branches are not supported here; all built-ins are affine.
    """
    if n_bins < 2:
        raise ValueError("n_bins must be >= 2")
    for b in map_.branches:
        if not isinstance(b, AffineBranch):
            raise NotImplementedError("Ulam construction requires affine branches")
    w = Fraction(1, n_bins)
    rows, cols, vals = [], [], []
    for i in range(n_bins):
        bin_l, bin_r = i * w, (i + 1) * w
        for b in map_.branches:
            lo, hi = max(bin_l, b.left), min(bin_r, b.right)
            if lo >= hi:
                continue
            # Image of the piece under the (monotone) affine branch.
            y0, y1 = b.slope * lo - b.offset, b.slope * hi - b.offset
            img_l, img_r = (y0, y1) if y0 <= y1 else (y1, y0)
            j0 = int(img_l / w)
            j1 = min(n_bins - 1, int(img_r / w) if img_r % w else int(img_r / w) - 1)
            for j in range(j0, j1 + 1):
                seg = min(img_r, (j + 1) * w) - max(img_l, j * w)
                if seg > 0:
                    rows.append(i)
                    cols.append(j)
                    vals.append(float(seg / abs(b.slope) / w))
    mat = sp.csr_matrix(
        (vals, (rows, cols)), shape=(n_bins, n_bins), dtype=np.float64
    )
    mat.sum_duplicates()
    return UlamMatrix(n_bins=n_bins, entries=mat, map_name=map_.name)


def invariant_density(
    ulam: UlamMatrix, compute_second_modulus: bool = True
) -> SpectralReport:
    """Stationary density of the Ulam chain via power iteration.

    Returns the per-bin density h with sum(h)/n_bins = 1; the bin mass
    vector p = h/n_bins is the fixed point of p -> p P.  Pass
    ``compute_second_modulus=False`` to skip the (much more expensive)
    subdominant-eigenvalue solve when only the density is needed.
    """
    n = ulam.n_bins
    p = np.full(n, 1.0 / n)
    mat = ulam.entries
    it = 0
    for it in range(1, POWER_MAXITER + 1):
        q = p @ mat
        q /= q.sum()
        if np.abs(q - p).sum() < POWER_TOL:
            p = q
            break
        p = q
    else:
        raise SpectralConvergenceError(
            "power iteration did not converge", float(np.abs(p @ mat - p).sum())
        )
    leading = float((p @ mat).sum() / p.sum())
    second = _second_modulus(ulam, p) if compute_second_modulus else float("nan")
    return SpectralReport(
        leading_eigenvalue=leading,
        invariant_density=p * n,
        second_modulus=second,
        iterations=it,
        n_bins=n,
        map_name=ulam.map_name,
    )


def spectral_gap(ulam: UlamMatrix) -> float:
    """Modulus of the subdominant eigenvalue (grid-level decay estimate)."""
    report = invariant_density(ulam)
    return report.second_modulus


def _second_modulus(ulam: UlamMatrix, stationary_mass: np.ndarray) -> float:
    n = ulam.n_bins
    if n <= DENSE_EIG_CUTOFF:
        eigs = np.linalg.eigvals(ulam.entries.toarray())
        moduli = np.sort(np.abs(eigs))[::-1]
        return float(moduli[1]) if n > 1 else 0.0
    try:
        vals = spla.eigs(
            ulam.entries.T.tocsc(), k=6, which="LM", return_eigenvectors=False,
            maxiter=POWER_MAXITER,
        )
    except spla.ArpackNoConvergence as e:
        # Clustered spectra (e.g. near-nilpotent full-branch maps) defeat
        # the iterative solver; fall back to the dense eigenvalue routine.
        if n <= 8192:
            eigs = np.linalg.eigvals(ulam.entries.toarray())
            return float(np.sort(np.abs(eigs))[::-1][1])
        raise SpectralConvergenceError(
            "subdominant eigenvalue solve did not converge", float("nan")
        ) from e
    moduli = np.sort(np.abs(vals))[::-1]
    return float(moduli[1])


def correlation_decay(
    map_: PiecewiseExpandingMap,
    observable: np.ndarray,
    n_max: int,
    n_bins: int | None = None,
    ulam: UlamMatrix | None = None,
) -> np.ndarray:
    """L^1 norms of transfer-operator iterates of a mean-zero observable.

    ``observable`` is a per-bin density-like vector; its invariant-mean
    component is removed before iterating.  The returned sequence
    ||L^n phi||_1 for n = 0..n_max decays geometrically at about the
    subdominant modulus for mixing built-ins.
    """
    if ulam is None:
        if n_bins is None:
            n_bins = len(observable)
        ulam = build_ulam(map_, n_bins)
    phi = np.asarray(observable, dtype=np.float64)
    if len(phi) != ulam.n_bins:
        raise ValueError("observable length must equal n_bins")
    report = invariant_density(ulam, compute_second_modulus=False)
    mu_mass = report.invariant_density / ulam.n_bins
    mass = phi / ulam.n_bins
    # Remove the projection onto the invariant density (the eigenvalue-1
    # direction); Lebesgue-total-mass alone is not invariant for non-L
    # -preserving maps.
    mass = mass - mass.sum() * mu_mass
    out = np.empty(n_max + 1)
    for n in range(n_max + 1):
        out[n] = np.abs(mass).sum()
        mass = mass @ ulam.entries
    return out


@dataclass(frozen=True)
class DensitySampler:
    """Inverse-CDF sampler for a piecewise-constant density on [0, 1).

    Exact for the built-in maps, whose invariant densities are piecewise
    constant on the sampling grid.
    """

    bin_cdf: np.ndarray  # length n_bins + 1, increasing, [0] = 0, [-1] = 1
    density: np.ndarray

    @classmethod
    def from_map(cls, map_: PiecewiseExpandingMap, n_bins: int = 4096) -> "DensitySampler":
        report = invariant_density(
            build_ulam(map_, n_bins), compute_second_modulus=False
        )
        return cls.from_density(report.invariant_density)

    @classmethod
    def from_density(cls, density: np.ndarray) -> "DensitySampler":
        density = np.asarray(density, dtype=np.float64)
        mass = density / len(density)
        cdf = np.concatenate([[0.0], np.cumsum(mass)])
        cdf[-1] = 1.0
        return cls(bin_cdf=cdf, density=density)

    @property
    def n_bins(self) -> int:
        return len(self.density)

    def ppf(self, u):
        """Quantile function; vectorized over u in [0, 1)."""
        u = np.asarray(u, dtype=np.float64)
        k = np.clip(np.searchsorted(self.bin_cdf, u, side="right") - 1, 0, self.n_bins - 1)
        lo = self.bin_cdf[k]
        mass = self.bin_cdf[k + 1] - lo
        frac = np.where(mass > 0, (u - lo) / np.where(mass > 0, mass, 1.0), 0.0)
        return np.minimum((k + frac) / self.n_bins, 1.0 - 2.0 ** -53)

    def cdf(self, x):
        x = np.asarray(x, dtype=np.float64)
        pos = np.clip(x, 0.0, 1.0) * self.n_bins
        k = np.clip(pos.astype(np.int64), 0, self.n_bins - 1)
        lo = self.bin_cdf[k]
        return lo + (pos - k) * (self.bin_cdf[k + 1] - lo)
