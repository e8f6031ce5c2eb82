"""Core domain types and pricing arithmetic.

A single commuter repeatedly chooses between a tolled road (price ``r``,
taken whenever the alternative cost ``c`` satisfies ``c >= r``; ties take the
toll road) and a free alternative whose cost varies by state.  Everything
downstream prices against an uncertainty set described by a
:class:`MomentEnvelope`: a band for the mean alternative cost plus a cap on
the variance-to-mean ratio.

Money lives on a :class:`PriceGrid` — an evenly spaced set of admissible
prices.  Internally grid values are addressed by integer index so repeated
snapping and enumeration are exact.
"""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

__all__ = [
    "PriceGrid",
    "MomentEnvelope",
    "DiscreteDistribution",
    "CostHistory",
    "TollQuote",
    "estimate_moment_envelope",
    "expected_revenue",
    "expected_user_cost",
    "relative_regret",
]

# Feasibility tolerance on probability masses and moment constraints.
MASS_TOL = 1e-9
# Identity tolerance for the two user-cost formulas.
IDENTITY_TOL = 1e-12


@dataclass(frozen=True)
class PriceGrid:
    """Admissible prices ``q, q+step, ..., Q``.

    ``(Q - q)`` must be an integer multiple of ``step``; enumeration yields
    ``(Q - q)/step + 1`` values.  Snapping clamps into ``[q, Q]`` first and
    rounds half-up to the nearest grid value, so it is idempotent.
    """

    q: float
    Q: float
    step: float = 1.0

    def __post_init__(self) -> None:
        if not (self.q < self.Q):
            raise ValueError(f"grid needs q < Q, got q={self.q}, Q={self.Q}")
        if self.step <= 0:
            raise ValueError(f"grid step must be positive, got {self.step}")
        ratio = (self.Q - self.q) / self.step
        if abs(ratio - round(ratio)) > 1e-9:
            raise ValueError(
                f"(Q - q) must be an integer multiple of step, got span "
                f"{self.Q - self.q} with step {self.step}"
            )

    @property
    def n_points(self) -> int:
        return int(round((self.Q - self.q) / self.step)) + 1

    def points(self) -> np.ndarray:
        """All grid values, ascending."""
        return self.q + self.step * np.arange(self.n_points)

    def value(self, index: int) -> float:
        if not 0 <= index < self.n_points:
            raise IndexError(f"grid index {index} out of range")
        return self.q + self.step * index

    def index_of(self, value: float) -> int:
        """Index of the nearest grid point to ``value`` after clamping."""
        clamped = min(max(value, self.q), self.Q)
        return int(math.floor((clamped - self.q) / self.step + 0.5))

    def snap(self, value: float) -> float:
        """Clamp into [q, Q] and round to the nearest grid value."""
        return self.value(self.index_of(value))

    def contains(self, value: float, tol: float = 1e-9) -> bool:
        if value < self.q - tol or value > self.Q + tol:
            return False
        return abs(self.snap(value) - value) <= tol


@dataclass(frozen=True)
class MomentEnvelope:
    """Moment description of the unknown alternative-cost distribution.

    Admissible distributions have mean in ``[u_lower, u_upper]`` and variance
    at most ``kappa_bar`` times their mean.
    """

    u_lower: float
    u_upper: float
    kappa_bar: float

    def __post_init__(self) -> None:
        if self.u_lower > self.u_upper + 1e-12:
            raise ValueError(
                f"mean band is empty: [{self.u_lower}, {self.u_upper}]"
            )
        if self.kappa_bar < 0:
            raise ValueError(f"kappa_bar must be >= 0, got {self.kappa_bar}")

    def validate_against(self, grid: PriceGrid) -> None:
        """Reject envelopes whose mean band leaves the grid's support range."""
        if self.u_lower > grid.Q or self.u_upper < grid.q:
            raise ValueError(
                f"mean band [{self.u_lower}, {self.u_upper}] does not meet "
                f"the support range [{grid.q}, {grid.Q}]"
            )

    def variance_cap(self, mean: float) -> float:
        return self.kappa_bar * mean


class DiscreteDistribution:
    """Finite-support probability distribution over money values.

    Support points are strictly increasing; masses are non-negative and must
    sum to 1 within ``1e-9`` (they are then renormalized exactly so the
    user-cost identities hold at float precision).
    """

    __slots__ = ("support", "mass")

    def __init__(self, support: Sequence[float], mass: Sequence[float]):
        sup = np.asarray(support, dtype=float)
        m = np.asarray(mass, dtype=float)
        if sup.ndim != 1 or m.ndim != 1 or sup.size != m.size or sup.size == 0:
            raise ValueError("support and mass must be equally sized 1-d, nonempty")
        if np.any(np.diff(sup) <= 0):
            raise ValueError("support points must be strictly increasing")
        if np.any(m < -MASS_TOL):
            raise ValueError("masses must be non-negative")
        total = math.fsum(m.tolist())
        if abs(total - 1.0) > MASS_TOL:
            raise ValueError(f"masses sum to {total}, expected 1 within {MASS_TOL}")
        m = np.clip(m, 0.0, None) / total
        self.support = sup
        self.mass = m

    @classmethod
    def point_mass(cls, value: float) -> "DiscreteDistribution":
        return cls([value], [1.0])

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[float, float]]) -> "DiscreteDistribution":
        """Build from (value, mass) pairs; merges duplicates, drops zeros."""
        acc: dict[float, float] = {}
        for value, m in pairs:
            acc[value] = acc.get(value, 0.0) + m
        items = sorted((v, m) for v, m in acc.items() if m > 1e-15)
        if not items:
            raise ValueError("no positive mass")
        return cls([v for v, _ in items], [m for _, m in items])

    def mean(self) -> float:
        return math.fsum((self.mass * self.support).tolist())

    def second_moment(self) -> float:
        return math.fsum((self.mass * self.support**2).tolist())

    def variance(self) -> float:
        mu = self.mean()
        return self.second_moment() - mu * mu

    def usage_probability(self, r: float) -> float:
        """P(c >= r): probability the toll road is taken at price r."""
        return math.fsum(self.mass[self.support >= r].tolist())

    def cdf(self, x: float) -> float:
        return math.fsum(self.mass[self.support <= x].tolist())

    def __len__(self) -> int:
        return int(self.support.size)

    def __repr__(self) -> str:
        pairs = ", ".join(
            f"{v:g}: {m:.6g}" for v, m in zip(self.support, self.mass)
        )
        return f"DiscreteDistribution({{{pairs}}})"


@dataclass(frozen=True)
class CostHistory:
    """Observed alternative costs: one row per state, one column per arc.

    ``states`` has shape (windows * T, n_arcs): ``windows`` observation
    windows of ``T`` states each.
    """

    states: np.ndarray
    T: int
    windows: int = 1

    def __post_init__(self) -> None:
        arr = np.asarray(self.states, dtype=float)
        object.__setattr__(self, "states", arr)
        if arr.ndim != 2:
            raise ValueError("states must be a 2-d array (state x arc)")
        if self.T < 1 or self.windows < 1:
            raise ValueError("T and windows must be positive")
        if arr.shape[0] != self.T * self.windows:
            raise ValueError(
                f"states has {arr.shape[0]} rows, expected T*windows = "
                f"{self.T * self.windows}"
            )

    @property
    def n_arcs(self) -> int:
        return int(self.states.shape[1])

    def arc_series(self, arc: int) -> np.ndarray:
        return self.states[:, arc]

    def state_minima(self) -> np.ndarray:
        """Per-state minimum cost across arcs (the best free alternative)."""
        return self.states.min(axis=1)

    @classmethod
    def from_csv(
        cls,
        source: str | io.TextIOBase,
        grid: PriceGrid | None = None,
        T: int | None = None,
        windows: int = 1,
        clamp_warn_threshold: float = 0.05,
    ) -> "CostHistory":
        """Read ``state,arc,cost`` rows. Every (state, arc) cell must appear.

        With a grid, costs are clamped into [q, Q]; a clamp rate above
        ``clamp_warn_threshold`` warns.
        """
        close = False
        if isinstance(source, (str, bytes)):
            handle = open(source, "r", newline="")
            close = True
        else:
            handle = source
        try:
            reader = csv.reader(handle)
            header = next(reader, None)
            if header is None:
                raise ValueError("history CSV is empty")
            if [h.strip().lower() for h in header] != ["state", "arc", "cost"]:
                raise ValueError(f"expected header state,arc,cost, got {header}")
            cells: dict[tuple[int, int], float] = {}
            for lineno, row in enumerate(reader, start=2):
                if not row or all(not f.strip() for f in row):
                    continue
                try:
                    s, a, c = int(row[0]), int(row[1]), float(row[2])
                except (ValueError, IndexError) as exc:
                    raise ValueError(f"bad history row at line {lineno}: {row}") from exc
                cells[(s, a)] = c
        finally:
            if close:
                handle.close()
        if not cells:
            raise ValueError("history CSV has no data rows")
        n_states = max(s for s, _ in cells) + 1
        n_arcs = max(a for _, a in cells) + 1
        matrix = np.full((n_states, n_arcs), np.nan)
        for (s, a), c in cells.items():
            matrix[s, a] = c
        if np.isnan(matrix).any():
            missing = np.argwhere(np.isnan(matrix))[0]
            raise ValueError(
                f"history is missing a cost for state {missing[0]}, arc {missing[1]}"
            )
        if grid is not None:
            clamped = np.clip(matrix, grid.q, grid.Q)
            n_clamped = int(np.sum(clamped != matrix))
            if n_clamped:
                rate = n_clamped / matrix.size
                if rate > clamp_warn_threshold:
                    warnings.warn(
                        f"clamped {n_clamped}/{matrix.size} history costs "
                        f"({100 * rate:.1f}%) into [{grid.q}, {grid.Q}]",
                        stacklevel=2,
                    )
            matrix = clamped
        if T is None:
            if n_states % windows:
                raise ValueError("row count not divisible by windows")
            T = n_states // windows
        return cls(states=matrix, T=T, windows=windows)

    def to_csv(self, destination: str | io.TextIOBase) -> None:
        close = False
        if isinstance(destination, (str, bytes)):
            handle = open(destination, "w", newline="")
            close = True
        else:
            handle = destination
        try:
            writer = csv.writer(handle)
            writer.writerow(["state", "arc", "cost"])
            for s in range(self.states.shape[0]):
                for a in range(self.states.shape[1]):
                    writer.writerow([s, a, f"{self.states[s, a]:.12g}"])
        finally:
            if close:
                handle.close()


@dataclass(frozen=True)
class TollQuote:
    """A priced toll: the toll, how often it is paid, and worst-case revenue."""

    toll: float
    usage_count: float
    worst_case_revenue: float
    response: DiscreteDistribution | None = None
    horizon: int | None = field(default=None)

    def __post_init__(self) -> None:
        if self.usage_count < -1e-9:
            raise ValueError("usage_count must be non-negative")
        if self.horizon is not None and self.usage_count > self.horizon + 1e-9:
            raise ValueError("usage_count exceeds horizon")
        expected = self.toll * self.usage_count
        if abs(self.worst_case_revenue - expected) > 1e-6 * max(1.0, abs(expected)):
            raise ValueError(
                f"worst_case_revenue {self.worst_case_revenue} != "
                f"toll * usage_count = {expected}"
            )


def estimate_moment_envelope(
    series: Sequence[float] | np.ndarray,
    grid: PriceGrid,
    confidence_z: float = 1.96,
    kappa_bar: float = 1.0,
) -> MomentEnvelope:
    """Mean band from a normal confidence interval, plus the configured cap.

    ``u = mean -/+ z * stdev / sqrt(n)`` (sample stdev, ddof=1), clamped into
    [q, Q].  A single observation or a zero-variance series collapses the band
    to the sample mean.
    """
    arr = np.asarray(series, dtype=float).ravel()
    if arr.size == 0:
        raise ValueError("no history: cannot estimate a moment envelope")
    if confidence_z < 0:
        raise ValueError("confidence_z must be >= 0")
    mean = float(np.mean(arr))
    if arr.size > 1:
        stdev = float(np.std(arr, ddof=1))
        half_width = confidence_z * stdev / math.sqrt(arr.size)
    else:
        half_width = 0.0
    lo = min(max(mean - half_width, grid.q), grid.Q)
    hi = min(max(mean + half_width, grid.q), grid.Q)
    env = MomentEnvelope(u_lower=lo, u_upper=hi, kappa_bar=kappa_bar)
    env.validate_against(grid)
    return env


def expected_revenue(dist: DiscreteDistribution, r: float) -> float:
    """Expected toll revenue r * P(c >= r); a tie at c = r pays the toll."""
    return r * dist.usage_probability(r)


def expected_user_cost(dist: DiscreteDistribution, r: float) -> float:
    """Expected cost paid by the commuter at toll r: E[min(c, r)].

    Also evaluated as ``r - E[max(r - c, 0)]``; the two forms must agree to
    1e-12 (checked under debug assertions).
    """
    primary = math.fsum(
        (dist.mass * np.minimum(dist.support, r)).tolist()
    )
    alternate = r - math.fsum(
        (dist.mass * np.maximum(r - dist.support, 0.0)).tolist()
    )
    assert abs(primary - alternate) <= IDENTITY_TOL * max(1.0, abs(r)), (
        primary,
        alternate,
    )
    return primary


def relative_regret(optimal_revenue: float, robust_revenue: float) -> float:
    """(optimal - robust) / optimal, clamped into [0, 1].

    A strictly better "robust" revenue signals a harness bug, so negative
    regret warns before clamping to 0.
    """
    if optimal_revenue == 0:
        raise ValueError("optimal revenue is zero: relative regret undefined")
    value = (optimal_revenue - robust_revenue) / optimal_revenue
    if value < -1e-12:
        warnings.warn(
            f"negative regret {value:.3g} clamped to 0 "
            f"(robust revenue exceeded the optimal benchmark)",
            stacklevel=2,
        )
    return min(max(value, 0.0), 1.0)
