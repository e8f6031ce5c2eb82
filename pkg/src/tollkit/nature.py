"""Worst-case cost distributions over a moment envelope.

Nature picks the distribution of the alternative cost from
``D = {F : mean in [u_lower, u_upper], Var <= kappa_bar * mean,
support inside [q, Q]}`` to hurt the toll-setter.  Two objectives:

* adversarial (AN): minimize toll revenue ``r * P(c >= r)``;
* user-friendly (UFN): minimize the commuter's expected cost
  ``E[min(c, r)]`` — less conservative, since cheap states can still pay
  the toll.

On a finite price grid the problem is a small linear program once the mean
is pinned: three rows (total mass, mean, second moment), so optimal basic
solutions carry at most three support points.  ``solve_nature_ufn`` /
``solve_nature_an`` enumerate those supports exactly, sweeping the mean
band through closed-form candidate points; a dense-simplex fast path covers
point mean bands on fine grids.  ``solve_nature_two_point`` is the
quadratic-time heuristic search over integer-period two-point responses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .core import (
    MASS_TOL,
    DiscreteDistribution,
    MomentEnvelope,
    PriceGrid,
    expected_revenue,
    expected_user_cost,
)
from .lp import LpInfeasible, simplex_solve

__all__ = [
    "NatureSolution",
    "TwoPointResponse",
    "solve_nature_ufn",
    "solve_nature_an",
    "solve_nature_two_point",
    "first_feasible_lower",
    "brute_force_nature",
    "pick_worst",
]

# Above this many grid points, exact support enumeration is refused
# (interval mean bands) or rerouted to the simplex path (point bands).
ENUM_CAP = 256

# Masses below this are numerical artifacts of the small linear solves, not
# genuine support atoms; candidates are cleaned before evaluation.
_ATOM_TOL = 1e-10
# Point mean bands on grids larger than this take the simplex fast path.
AUTO_SIMPLEX_MIN = 40


@dataclass(frozen=True)
class NatureSolution:
    """An optimal worst-case distribution and its diagnostics."""

    distribution: DiscreteDistribution
    objective_value: float
    usage_probability: float
    active_constraints: tuple[str, ...]


@dataclass(frozen=True)
class TwoPointResponse:
    """Two-point sample response: ``low_count`` periods at ``lower``, the
    remaining periods at ``upper``; sample mean pinned to ``mean``.

    ``upper`` may be fractional even on an integer grid. ``low_count == 0``
    is the degenerate point mass at the mean.
    """

    lower: float
    upper: float
    low_count: int
    mean: float

    def __post_init__(self) -> None:
        if self.low_count < 0:
            raise ValueError("low_count must be >= 0")
        if not (self.lower <= self.mean + 1e-9 and self.mean <= self.upper + 1e-9):
            raise ValueError(
                f"need lower <= mean <= upper, got "
                f"({self.lower}, {self.mean}, {self.upper})"
            )

    def objective(self, T: int, r: float) -> float:
        """Total user cost over T periods: low_count*lower + rest*r."""
        return self.low_count * self.lower + (T - self.low_count) * r

    def usage_count(self, T: int, r: float) -> int:
        """Periods in which the toll road is taken (cost >= r, ties pay)."""
        used = 0
        if self.lower >= r:
            used += self.low_count
        if self.upper >= r:
            used += T - self.low_count
        return used

    def as_distribution(self, T: int) -> DiscreteDistribution:
        if self.low_count == 0 or self.lower == self.upper:
            return DiscreteDistribution.point_mass(self.mean)
        return DiscreteDistribution(
            [self.lower, self.upper], [self.low_count / T, 1 - self.low_count / T]
        )


# ---------------------------------------------------------------------------
# objective vectors
# ---------------------------------------------------------------------------


def _objective_vector(points: np.ndarray, r: float, objective: str) -> np.ndarray:
    if objective == "ufn":
        return np.minimum(points, r)
    if objective == "an":
        return np.where(points >= r, float(r), 0.0)
    raise ValueError(f"unknown objective {objective!r}")


def _recompute_objective(dist: DiscreteDistribution, r: float, objective: str) -> float:
    if objective == "ufn":
        return expected_user_cost(dist, r)
    return expected_revenue(dist, r)


def _active_constraints(
    dist: DiscreteDistribution, env: MomentEnvelope
) -> tuple[str, ...]:
    mean = dist.mean()
    var = dist.variance()
    tol = 1e-6 * max(1.0, abs(mean))
    labels = []
    if mean <= env.u_lower + tol:
        labels.append("mean-lower")
    if mean >= env.u_upper - tol:
        labels.append("mean-upper")
    if var >= env.variance_cap(mean) - max(tol, 1e-6 * env.variance_cap(mean)):
        labels.append("variance")
    return tuple(labels)


def _moment_tols(scale: float) -> tuple[float, float]:
    """Feasibility slack for the mean and variance checks.

    Variance terms carry squared money units, so a fixed absolute slack
    would reject exactly-solved basic solutions once costs reach the
    hundreds; both tolerances scale with the magnitude of the grid.
    """
    mean_tol = MASS_TOL * max(1.0, scale)
    var_tol = MASS_TOL * max(1.0, scale * scale)
    return mean_tol, var_tol


def _feasible_moments(
    mean: float, var: float, env: MomentEnvelope, scale: float = 1.0
) -> bool:
    mean_tol, var_tol = _moment_tols(scale)
    if mean < env.u_lower - mean_tol or mean > env.u_upper + mean_tol:
        return False
    return var <= env.variance_cap(mean) + var_tol


# ---------------------------------------------------------------------------
# exact support enumeration
# ---------------------------------------------------------------------------
#
# Basic feasible solutions of the three-row moment LP have <= 3 support
# points.  With the mean free in a band, every optimum is still found among:
#   * singletons inside the band;
#   * pairs with the free mass at an endpoint of a feasible interval
#     (mass bound, mean bound, or variance boundary);
#   * variance-tight triples: x(mu) solves a 3x3 Vandermonde system with
#     right side (1, mu, mu^2 + kappa*mu), so each mass and the objective
#     are quadratics in mu — candidates are the band edges, the objective's
#     stationary point, and the roots of each mass.

_TIE_TOL = 1e-9


def _candidate_key(support: Sequence[float], masses: Sequence[float]):
    return (len(support), tuple(support), tuple(masses))


class _Best:
    """Tracks the minimal objective with the canonical tie-break
    (support size, then support tuple, then mass tuple)."""

    def __init__(self) -> None:
        self.objective: float | None = None
        self.support: list[float] | None = None
        self.masses: list[float] | None = None

    def offer(self, objective: float, support: Sequence[float], masses: Sequence[float]):
        if self.objective is None or objective < self.objective - _TIE_TOL:
            self.objective = objective
            self.support = list(support)
            self.masses = list(masses)
        elif objective <= self.objective + _TIE_TOL:
            if _candidate_key(support, masses) < _candidate_key(self.support, self.masses):
                self.objective = min(self.objective, objective)
                self.support = list(support)
                self.masses = list(masses)


def _enumerate_minimum(
    points: np.ndarray, env: MomentEnvelope, f: np.ndarray
) -> tuple[float, list[float], list[float]]:
    n = points.size
    kappa = env.kappa_bar
    ul, uu = env.u_lower, env.u_upper
    mean_tol, var_tol = _moment_tols(float(np.max(np.abs(points))) if n else 1.0)
    best = _Best()

    # --- singletons -------------------------------------------------------
    mask = (points >= ul - mean_tol) & (points <= uu + mean_tol)
    if mask.any():
        idx = np.flatnonzero(mask)
        objs = f[idx]
        m0 = float(objs.min())
        winner = idx[objs <= m0 + _TIE_TOL][0]  # smallest support point
        best.offer(float(f[winner]), [float(points[winner])], [1.0])

    # --- pairs --------------------------------------------------------------
    if n >= 2:
        I, J = np.triu_indices(n, k=1)
        ci, cj = points[I], points[J]
        fi, fj = f[I], f[J]
        d = cj - ci
        with np.errstate(invalid="ignore", divide="ignore"):
            t_mean_lo = (cj - ul) / d  # mean pinned at u_lower
            t_mean_hi = (cj - uu) / d  # mean pinned at u_upper
            half = 0.5 * (1.0 + kappa / d)
            disc = half * half - kappa * cj / (d * d)
            sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
            t_var_lo = half - sq
            t_var_hi = half + sq
        cand = np.stack([t_mean_lo, t_mean_hi, t_var_lo, t_var_hi], axis=1)
        interior = np.isfinite(cand) & (cand > 1e-12) & (cand < 1 - 1e-12)
        t = np.clip(cand, 0.0, 1.0)
        mu = cj[:, None] - t * d[:, None]
        var = t * (1.0 - t) * (d * d)[:, None]
        feas = (
            interior
            & (mu >= ul - mean_tol)
            & (mu <= uu + mean_tol)
            & (var <= kappa * mu + var_tol)
        )
        if feas.any():
            obj = t * fi[:, None] + (1.0 - t) * fj[:, None]
            masked = np.where(feas, obj, np.inf)
            m0 = float(masked.min())
            pp, qq = np.nonzero(masked <= m0 + _TIE_TOL)
            order = np.lexsort((t[pp, qq], cj[pp], ci[pp]))
            p, q = pp[order[0]], qq[order[0]]
            tv = float(t[p, q])
            best.offer(
                float(obj[p, q]),
                [float(ci[p]), float(cj[p])],
                [tv, 1.0 - tv],
            )

    # --- variance-tight triples ---------------------------------------------
    for a in range(n - 2):
        rest = n - a - 1
        jj, kk = np.triu_indices(rest, k=1)
        cb = points[a + 1 + jj]
        cc = points[a + 1 + kk]
        ca = float(points[a])
        fa = float(f[a])
        fb = f[a + 1 + jj]
        fc = f[a + 1 + kk]

        Da = (ca - cb) * (ca - cc)
        Db = (cb - ca) * (cb - cc)
        Dc = (cc - ca) * (cc - cb)
        sa, pa = cb + cc, cb * cc
        sb, pb = ca + cc, ca * cc
        sc, pc = ca + cb, ca * cb

        # objective as a quadratic in mu
        A2 = fa / Da + fb / Db + fc / Dc
        A1 = fa * (kappa - sa) / Da + fb * (kappa - sb) / Db + fc * (kappa - sc) / Dc

        cols = [np.full(jj.shape, ul), np.full(jj.shape, uu)]
        with np.errstate(invalid="ignore", divide="ignore"):
            cols.append(np.where(np.abs(A2) > 1e-14, -A1 / (2.0 * A2), np.nan))
            for s_m, p_m in ((sa, pa), (sb, pb), (sc, pc)):
                bcoef = kappa - s_m
                disc = bcoef * bcoef - 4.0 * p_m
                sq = np.sqrt(np.where(disc >= 0, disc, np.nan))
                cols.append(0.5 * (-bcoef - sq))
                cols.append(0.5 * (-bcoef + sq))
        mu = np.stack(cols, axis=1)  # (P, 9)
        ok = np.isfinite(mu) & (mu >= ul - mean_tol) & (mu <= uu + mean_tol)
        if not ok.any():
            continue
        m2 = mu * mu + kappa * mu
        xa = (m2 + (0.0 - sa[:, None]) * mu + pa[:, None]) / Da[:, None]
        xb = (m2 + (0.0 - sb[:, None]) * mu + pb[:, None]) / Db[:, None]
        xc = (m2 + (0.0 - sc[:, None]) * mu + pc[:, None]) / Dc[:, None]
        pos = (xa > 1e-12) & (xb > 1e-12) & (xc > 1e-12)
        # numerical re-verification of the moments
        ssum = xa + xb + xc
        mean = xa * ca + xb * cb[:, None] + xc * cc[:, None]
        msq = xa * ca * ca + xb * (cb * cb)[:, None] + xc * (cc * cc)[:, None]
        var = msq - mean * mean
        feas = (
            ok
            & pos
            & (np.abs(ssum - 1.0) <= 1e-9)
            & (mean >= ul - mean_tol)
            & (mean <= uu + mean_tol)
            & (var <= kappa * mean + var_tol)
        )
        if not feas.any():
            continue
        obj = xa * fa + xb * fb[:, None] + xc * fc[:, None]
        masked = np.where(feas, obj, np.inf)
        m0 = float(masked.min())
        if best.objective is not None and m0 > best.objective + _TIE_TOL:
            continue
        pp, qq = np.nonzero(masked <= m0 + _TIE_TOL)
        order = np.lexsort(
            (xb[pp, qq], xa[pp, qq], cc[pp], cb[pp])
        )
        p, q = pp[order[0]], qq[order[0]]
        best.offer(
            float(obj[p, q]),
            [ca, float(cb[p]), float(cc[p])],
            [float(xa[p, q]), float(xb[p, q]), float(xc[p, q])],
        )

    if best.objective is None:
        raise ValueError(
            "no grid-supported distribution satisfies the moment envelope"
        )
    return best.objective, best.support, best.masses


def _simplex_minimum(
    points: np.ndarray, env: MomentEnvelope, f: np.ndarray
) -> tuple[float, list[float], list[float]]:
    if abs(env.u_upper - env.u_lower) > 1e-12:
        raise ValueError("simplex path requires a point mean band")
    mu = env.u_lower
    cap = mu * mu + env.kappa_bar * mu
    scale1 = 1.0 / max(1.0, float(np.max(np.abs(points))))
    scale2 = scale1 * scale1
    A = np.vstack([np.ones_like(points), points * scale1, points * points * scale2])
    b = np.array([1.0, mu * scale1, cap * scale2])
    try:
        x, obj = simplex_solve(f, A, b, senses="==<")
    except LpInfeasible as exc:
        raise ValueError(
            "no grid-supported distribution satisfies the moment envelope"
        ) from exc
    keep = x > 1e-11
    support = points[keep].tolist()
    masses = x[keep].tolist()
    return float(obj), support, masses


def _minimize_worst_case(
    grid: PriceGrid, env: MomentEnvelope, f: np.ndarray, method: str
) -> tuple[list[float], list[float]]:
    env.validate_against(grid)
    points = grid.points()
    n = points.size
    point_band = abs(env.u_upper - env.u_lower) <= 1e-12
    if method == "auto":
        method = "simplex" if (point_band and n > AUTO_SIMPLEX_MIN) else "enumerate"
    if method == "enumerate":
        if n > ENUM_CAP:
            raise ValueError(
                f"grid has {n} points; exact support enumeration is capped at "
                f"{ENUM_CAP}. Coarsen the grid, or pin the mean band to a "
                f"point to use the simplex path."
            )
        _, support, masses = _enumerate_minimum(points, env, f)
    elif method == "simplex":
        _, support, masses = _simplex_minimum(points, env, f)
    else:
        raise ValueError(f"unknown method {method!r}")
    return support, masses


def _package(
    support: Sequence[float],
    masses: Sequence[float],
    env: MomentEnvelope,
    r: float,
    objective: str,
) -> NatureSolution:
    dist = DiscreteDistribution.from_pairs(zip(support, masses))
    mean, var = dist.mean(), dist.variance()
    scale = max(abs(c) for c in dist.support)
    if not _feasible_moments(mean, var, env, scale):
        raise AssertionError(
            f"solver produced an infeasible distribution: mean={mean}, var={var}"
        )
    return NatureSolution(
        distribution=dist,
        objective_value=_recompute_objective(dist, r, objective),
        usage_probability=dist.usage_probability(r),
        active_constraints=_active_constraints(dist, env),
    )


def _require_grid_toll(grid: PriceGrid, r: float) -> None:
    if not grid.contains(r):
        raise ValueError(f"toll {r} is not on the price grid")


def solve_nature_ufn(
    grid: PriceGrid, env: MomentEnvelope, r: float, method: str = "auto"
) -> NatureSolution:
    """Minimize the commuter's expected cost E[min(c, r)] over the envelope."""
    _require_grid_toll(grid, r)
    f = _objective_vector(grid.points(), r, "ufn")
    support, masses = _minimize_worst_case(grid, env, f, method)
    return _package(support, masses, env, r, "ufn")


def solve_nature_an(
    grid: PriceGrid, env: MomentEnvelope, r: float, method: str = "auto"
) -> NatureSolution:
    """Minimize toll revenue r * P(c >= r) over the envelope."""
    _require_grid_toll(grid, r)
    f = _objective_vector(grid.points(), r, "an")
    support, masses = _minimize_worst_case(grid, env, f, method)
    return _package(support, masses, env, r, "an")


# ---------------------------------------------------------------------------
# two-point search
# ---------------------------------------------------------------------------


def first_feasible_lower(
    lows: np.ndarray, mu: float, kappa_bar: float, T: int, low_count: int, Q: float
) -> tuple[float, float] | None:
    """First (ascending) grid value below the mean that ``low_count`` periods
    can sit at while the balancing upper point stays within [mean, Q] and the
    sample-sum variance budget ``kappa_bar * mu * (T-1)`` holds.

    Both checks relax as the lower point rises toward the mean, so the first
    hit is the lowest feasible one; toll-independent, hence reusable across a
    whole BR curve.  Returns (lower, upper) or None.
    """
    budget = kappa_bar * mu * (T - 1)
    high_count = T - low_count
    for ell in lows:
        upper = (mu * T - low_count * ell) / high_count
        if upper > Q + 1e-9:
            continue
        spread = low_count * (ell - mu) ** 2 + high_count * (upper - mu) ** 2
        if spread <= budget + 1e-9:
            return float(ell), float(upper)
    return None


def solve_nature_two_point(
    grid: PriceGrid, mu: float, kappa_bar: float, T: int, r: float
) -> TwoPointResponse:
    """Best two-point sample response at toll ``r`` with the mean pinned.

    Scans ``low_count`` from T-1 down to 1 and, per count, the lower point
    ascending over grid values below the mean; the first pair satisfying
    ``upper <= Q`` and the sample-sum variance budget
    ``kappa_bar * mu * (T-1)`` wins for that count (the objective is
    increasing in the lower point).  Among accepted pairs the minimizer of
    ``low_count*lower + (T-low_count)*r`` is returned, earliest (largest
    count) first on ties.  With no feasible pair, the degenerate point mass
    at the mean is returned.
    """
    if T < 2:
        raise ValueError("T must be >= 2")
    if not (grid.q - 1e-9 <= mu <= grid.Q + 1e-9):
        raise ValueError(f"mean {mu} outside the support range")
    if kappa_bar < 0:
        raise ValueError("kappa_bar must be >= 0")
    _require_grid_toll(grid, r)
    points = grid.points()
    lows = points[points < mu]
    best_obj = math.inf
    best: TwoPointResponse | None = None
    for lam in range(T - 1, 0, -1):
        hit = first_feasible_lower(lows, mu, kappa_bar, T, lam, grid.Q)
        if hit is None:
            continue
        ell, upper = hit
        obj = lam * ell + (T - lam) * r
        if obj < best_obj:
            best_obj = obj
            best = TwoPointResponse(lower=ell, upper=upper, low_count=lam, mean=mu)
    if best is None:
        return TwoPointResponse(lower=mu, upper=mu, low_count=0, mean=mu)
    return best


# ---------------------------------------------------------------------------
# oracles and restricted choice
# ---------------------------------------------------------------------------


def brute_force_nature(
    grid: PriceGrid,
    env: MomentEnvelope,
    r: float,
    objective: str = "ufn",
    max_points: int = 64,
) -> NatureSolution:
    """Exhaustive reference solver over all supports of size <= 3.

    Solves each support's small linear systems directly (plain loops, no
    vectorization) and returns the global minimum.  Guarded to
    ``max_points`` grid points; raise the cap explicitly for larger checks.
    """
    env.validate_against(grid)
    _require_grid_toll(grid, r)
    points = grid.points()
    n = points.size
    if n > max_points:
        raise ValueError(
            f"brute-force oracle limited to {max_points} grid points, got {n}"
        )
    kappa = env.kappa_bar
    ul, uu = env.u_lower, env.u_upper
    scale = float(np.max(np.abs(points))) if n else 1.0
    fvec = _objective_vector(points, r, objective)
    best = _Best()

    def consider(support: list[float], masses: list[float]) -> None:
        if any(m < -1e-9 for m in masses):
            return
        # Drop solver-noise atoms *before* judging moments: a 1e-11 mass from
        # an LU solve would otherwise let a strictly infeasible candidate
        # slide through the feasibility slack and shave the objective.
        pairs = [(c, mm) for c, mm in zip(support, masses) if mm > _ATOM_TOL]
        if not pairs:
            return
        total = math.fsum(mm for _, mm in pairs)
        if abs(total - 1.0) > 1e-9 or total <= 0:
            return
        values = [c for c, _ in pairs]
        weights = [mm / total for _, mm in pairs]
        mean = math.fsum(w * c for c, w in zip(values, weights))
        var = math.fsum(w * c * c for c, w in zip(values, weights)) - mean * mean
        if not _feasible_moments(mean, var, env, scale):
            return
        obj = math.fsum(
            w * fvec[int(round((c - grid.q) / grid.step))] for c, w in zip(values, weights)
        )
        best.offer(obj, values, weights)

    for i in range(n):
        consider([float(points[i])], [1.0])

    for i in range(n - 1):
        for j in range(i + 1, n):
            ci, cj = float(points[i]), float(points[j])
            d = cj - ci
            cands = {0.0, 1.0, (cj - ul) / d, (cj - uu) / d}
            bq = 1.0 + kappa / d
            disc = bq * bq - 4.0 * kappa * cj / (d * d)
            if disc >= 0:
                sq = math.sqrt(disc)
                cands.add(0.5 * (bq - sq))
                cands.add(0.5 * (bq + sq))
            for t in sorted(cands):
                if -1e-9 <= t <= 1 + 1e-9:
                    t = min(max(t, 0.0), 1.0)
                    consider([ci, cj], [t, 1.0 - t])

    e1 = np.array([1.0, 0.0, 0.0])
    e2 = np.array([0.0, 1.0, 0.0])
    e3 = np.array([0.0, 0.0, 1.0])
    for i in range(n - 2):
        for j in range(i + 1, n - 1):
            for k in range(j + 1, n):
                trio = [float(points[i]), float(points[j]), float(points[k])]
                M = np.array(
                    [[1.0, 1.0, 1.0], trio, [c * c for c in trio]]
                )
                w0 = np.linalg.solve(M, e1)
                w1 = np.linalg.solve(M, e2)
                w2 = np.linalg.solve(M, e3)
                # x(mu) = w0 + mu*(w1 + kappa*w2) + mu^2*w2
                lin = w1 + kappa * w2
                mu_cands = [ul, uu]
                a2 = float(np.dot(fvec[[i, j, k]], w2))
                a1 = float(np.dot(fvec[[i, j, k]], lin))
                if abs(a2) > 1e-14:
                    mu_cands.append(-a1 / (2.0 * a2))
                for m in range(3):
                    qa, qb, qc = w2[m], lin[m], w0[m]
                    if abs(qa) > 1e-14:
                        disc = qb * qb - 4.0 * qa * qc
                        if disc >= 0:
                            sq = math.sqrt(disc)
                            mu_cands.append((-qb - sq) / (2.0 * qa))
                            mu_cands.append((-qb + sq) / (2.0 * qa))
                    elif abs(qb) > 1e-14:
                        mu_cands.append(-qc / qb)
                for mu in mu_cands:
                    if not (ul - MASS_TOL * scale <= mu <= uu + MASS_TOL * scale):
                        continue
                    x = w0 + mu * lin + mu * mu * w2
                    consider(trio, x.tolist())

    if best.objective is None:
        raise ValueError(
            "no grid-supported distribution satisfies the moment envelope"
        )
    return _package(best.support, best.masses, env, r, objective)


def pick_worst(
    candidates: Sequence[DiscreteDistribution], r: float, objective: str = "ufn"
) -> tuple[int, float]:
    """Nature restricted to an explicit menu: index and value of the
    objective-minimizing distribution (ties break to the lowest index)."""
    if not candidates:
        raise ValueError("no candidate distributions")
    values = [_recompute_objective(d, r, objective) for d in candidates]
    idx = min(range(len(values)), key=lambda i: (values[i], i))
    return idx, values[idx]
