"""Piecewise expanding interval maps with exact dyadic orbit arithmetic.

A map is a list of strictly monotone branches partitioning [0, 1).
Affine branches with integer slope and dyadic-rational data support an
exact backend: points are numerators modulo M = 2**62, so long orbits
are true orbits of the map rather than drifting pseudo-orbits (naive
floating-point iteration of e.g. the doubling map collapses to 0 within
~53 steps).  Generic C^2 branches fall back to double precision; all
built-ins are affine with slope 3.
"""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

EXACT_DENOM_LOG2 = 62
EXACT_M = 1 << EXACT_DENOM_LOG2


class MapDomainError(ValueError):
    """Point outside [0, 1)."""


class MapStructureError(ValueError):
    """Branches do not form a valid piecewise monotone partition."""


@dataclass(frozen=True)
class ExactPoint:
    """A point numerator/2**62 in [0, 1), exact under affine branches."""

    numerator: int
    denominator_log2: int = EXACT_DENOM_LOG2

    def __post_init__(self):
        if self.denominator_log2 != EXACT_DENOM_LOG2:
            raise ValueError("only denominator 2**62 is supported")
        if not 0 <= self.numerator < EXACT_M:
            raise MapDomainError(f"numerator {self.numerator} outside [0, 2^62)")

    @property
    def value(self) -> float:
        return self.numerator / EXACT_M

    @classmethod
    def from_float(cls, x: float) -> "ExactPoint":
        if not 0.0 <= x < 1.0:
            raise MapDomainError(f"point {x} outside [0, 1)")
        return cls(min(EXACT_M - 1, int(x * EXACT_M)))


@dataclass(frozen=True)
class AffineBranch:
    """Branch x -> slope*x - offset on [left, right)."""

    left: Fraction
    right: Fraction
    slope: Fraction
    offset: Fraction

    def __post_init__(self):
        if self.slope == 0:
            raise MapStructureError("affine branch with zero slope is not monotone")

    def __call__(self, x: float) -> float:
        return float(self.slope) * x - float(self.offset)

    def derivative_bound(self) -> float:
        return abs(float(self.slope))

    @property
    def exact_compatible(self) -> bool:
        """True when numerator arithmetic mod 2**62 is exact on this branch.

        Needs an integer slope and a dyadic offset; the branch endpoints
        may be arbitrary rationals (lookups compare against the exact
        ceiling of left * 2**62, which classifies every numerator
        correctly since numerators are integers).
        """
        return (
            self.slope.denominator == 1
            and (self.offset * EXACT_M).denominator == 1
        )


@dataclass(frozen=True)
class SmoothBranch:
    """Generic C^2 branch given by a function and its derivative oracle.

    Evaluated in double precision; accuracy over long orbits is not
    certified (see module docstring).
    """

    left: Fraction
    right: Fraction
    func: Callable[[float], float]
    deriv: Callable[[float], float]

    def __call__(self, x: float) -> float:
        return self.func(x)

    def derivative_bound(self, samples: int = 1000) -> float:
        lo, hi = float(self.left), float(self.right)
        step = (hi - lo) / samples
        vals = [abs(self.deriv(lo + (i + 0.5) * step)) for i in range(samples)]
        signs = {self.deriv(lo + (i + 0.5) * step) > 0 for i in range(samples)}
        if len(signs) > 1:
            raise MapStructureError("branch derivative changes sign: not monotone")
        return min(vals)

    @property
    def exact_compatible(self) -> bool:
        return False


Branch = AffineBranch  # typing alias; branches are AffineBranch | SmoothBranch


@dataclass(frozen=True)
class PiecewiseExpandingMap:
    """Piecewise monotone map of [0, 1) with certified minimum slope.

    ``lambda_min`` is computed at construction; validity of the paperish
    expansion requirement (> 2) is reported by :func:`check_expansion`,
    not enforced here, so degenerate examples remain constructible.
    """

    branches: tuple
    name: str = "custom"
    lambda_min: float = field(init=False, default=0.0)

    def __post_init__(self):
        if not self.branches:
            raise MapStructureError("map needs at least one branch")
        br = sorted(self.branches, key=lambda b: b.left)
        object.__setattr__(self, "branches", tuple(br))
        if br[0].left != 0:
            raise MapStructureError("branch domains must start at 0")
        if br[-1].right != 1:
            raise MapStructureError("branch domains must end at 1")
        for a, b in zip(br, br[1:]):
            if a.right != b.left:
                raise MapStructureError(
                    f"gap or overlap between branch ending {a.right} and {b.left}"
                )
        object.__setattr__(
            self, "lambda_min", min(b.derivative_bound() for b in br)
        )
        object.__setattr__(
            self, "_lefts", tuple(float(b.left) for b in br)
        )
        exact = all(getattr(b, "exact_compatible", False) for b in br)
        object.__setattr__(self, "exact_compatible", exact)
        if exact:
            object.__setattr__(
                self,
                "_exact_branches",
                tuple(
                    (
                        math.ceil(b.left * EXACT_M),
                        math.ceil(b.right * EXACT_M),
                        int(b.slope),
                        int(b.offset * EXACT_M),
                    )
                    for b in br
                ),
            )
            lefts_num = tuple(math.ceil(b.left * EXACT_M) for b in br)
            object.__setattr__(self, "_lefts_num", lefts_num)
            # x -> s*x mod 1 in disguise: full branches, offset j on branch j.
            s = int(br[0].slope)
            linear = len(br) == s and all(
                int(b.slope) == s
                and b.offset == Fraction(j)
                and b.left == Fraction(j, s)
                for j, b in enumerate(br)
            )
            object.__setattr__(self, "_linear_slope", s if linear else None)
        else:
            object.__setattr__(self, "_linear_slope", None)

    @property
    def is_linear_mod_one(self) -> bool:
        """True for x -> s*x mod 1 (admits fast-forward by modular powers)."""
        return self._linear_slope is not None

    def branch_index(self, x: float) -> int:
        if not 0.0 <= x < 1.0:
            raise MapDomainError(f"point {x} outside [0, 1)")
        return bisect.bisect_right(self._lefts, x) - 1

    def branch_index_exact(self, numerator: int) -> int:
        return bisect.bisect_right(self._lefts_num, numerator) - 1

    def eval_numerator(self, m: int) -> int:
        """One exact step on a numerator in [0, 2**62)."""
        i = self.branch_index_exact(m)
        _, _, slope, off = self._exact_branches[i]
        out = slope * m - off
        if not 0 <= out < EXACT_M:
            raise MapStructureError(
                f"branch {i} maps numerator {m} outside [0, 1): check branch data"
            )
        return out


def eval_map(map_: PiecewiseExpandingMap, x):
    """Apply T once.  Accepts a float in [0, 1) or an ExactPoint."""
    if isinstance(x, ExactPoint):
        if not map_.exact_compatible:
            raise MapStructureError(
                f"map {map_.name!r} is not exactly representable; exact backend unavailable"
            )
        return ExactPoint(map_.eval_numerator(x.numerator))
    if not 0.0 <= x < 1.0:
        raise MapDomainError(f"point {x} outside [0, 1)")
    i = map_.branch_index(x)
    y = map_.branches[i](x)
    # Clamp roundoff at the right endpoint; the boundary set has measure zero.
    if y >= 1.0:
        y = 1.0 - 2.0 ** -52
    if y < 0.0:
        y = 0.0
    return y


def iterate(map_: PiecewiseExpandingMap, x, n: int):
    """Apply T n times (n >= 0), stepwise."""
    if n < 0:
        raise ValueError("step count must be >= 0")
    if isinstance(x, ExactPoint):
        if not map_.exact_compatible:
            raise MapStructureError(
                f"map {map_.name!r} is not exactly representable; exact backend unavailable"
            )
        m = x.numerator
        for _ in range(n):
            m = map_.eval_numerator(m)
        return ExactPoint(m)
    y = x
    for _ in range(n):
        y = eval_map(map_, y)
    return y


def fast_forward_numerator(map_: PiecewiseExpandingMap, m: int, n: int) -> int:
    """T^n on a numerator; modular exponentiation when the map is s*x mod 1.

    Bit-exact equal to n sequential :meth:`eval_numerator` steps (tested),
    which is also the fallback for branchy affine maps.
    """
    if n < 0:
        raise ValueError("step count must be >= 0")
    s = map_._linear_slope
    if s is not None:
        return (pow(s, n, EXACT_M) * m) % EXACT_M
    for _ in range(n):
        m = map_.eval_numerator(m)
    return m


def branch_of(map_: PiecewiseExpandingMap, x) -> int:
    """Index of the unique branch whose (left-closed) domain contains x."""
    if isinstance(x, ExactPoint):
        return map_.branch_index_exact(x.numerator)
    return map_.branch_index(x)


@dataclass(frozen=True)
class ExpansionReport:
    lambda_min: float
    ok: bool
    per_branch: tuple


def check_expansion(map_: PiecewiseExpandingMap) -> ExpansionReport:
    """Certify min |T'| > 2 (per branch minima included in the report)."""
    per_branch = tuple(b.derivative_bound() for b in map_.branches)
    lam = min(per_branch)
    return ExpansionReport(lambda_min=lam, ok=lam > 2, per_branch=per_branch)


def tripling() -> PiecewiseExpandingMap:
    """x -> 3x mod 1.  Full-branch, preserves Lebesgue measure, mixing."""
    third = Fraction(1, 3)
    return PiecewiseExpandingMap(
        branches=(
            AffineBranch(Fraction(0), third, Fraction(3), Fraction(0)),
            AffineBranch(third, 2 * third, Fraction(3), Fraction(1)),
            AffineBranch(2 * third, Fraction(1), Fraction(3), Fraction(2)),
        ),
        name="tripling",
    )


def markov4() -> PiecewiseExpandingMap:
    """Four slope-3 branches on quarters, offsets 0, 1/2, 3/2, 2.

    Markov over the quarter partition with an irreducible aperiodic
    transition graph, hence mixing; its invariant density is piecewise
    constant (2/3, 4/3, 4/3, 2/3) on the quarters.
    """
    q = Fraction(1, 4)
    return PiecewiseExpandingMap(
        branches=(
            AffineBranch(0 * q, 1 * q, Fraction(3), Fraction(0)),
            AffineBranch(1 * q, 2 * q, Fraction(3), Fraction(1, 2)),
            AffineBranch(2 * q, 3 * q, Fraction(3), Fraction(3, 2)),
            AffineBranch(3 * q, 4 * q, Fraction(3), Fraction(2)),
        ),
        name="markov4",
    )


BUILTIN_MAPS = {"tripling": tripling, "markov4": markov4}


def make_map(spec) -> PiecewiseExpandingMap:
    """Build a map from a config value: builtin name or explicit branch list.

    Explicit form: {"name": ..., "branches": [{"domain": [l, r],
    "slope": s, "offset": c}, ...]} with rational-friendly numbers.
    """
    if isinstance(spec, str):
        try:
            return BUILTIN_MAPS[spec]()
        except KeyError:
            raise ValueError(
                f"unknown built-in map {spec!r}; choose from {sorted(BUILTIN_MAPS)}"
            ) from None
    branches = tuple(
        AffineBranch(
            left=_as_fraction(b["domain"][0]),
            right=_as_fraction(b["domain"][1]),
            slope=_as_fraction(b["slope"]),
            offset=_as_fraction(b["offset"]),
        )
        for b in spec["branches"]
    )
    return PiecewiseExpandingMap(branches=branches, name=spec.get("name", "custom"))


def _as_fraction(x) -> Fraction:
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(x).limit_denominator(1 << 62)
