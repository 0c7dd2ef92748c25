"""Self-avoiding walk counts, connective constants and the geometric series.

Counting is exact (depth-first enumeration with a visited set). The two
geometric series are evaluated shell by shell:

    Assumption 1:  sum_k alpha^d(k,y) c_k(d(k,y))
    Assumption 2:  sum_{x,k} d(o,x)^p (beta^(d(x,k)+d(k,y)) c_x(d(x,k)) c_k(d(k,y)))^(1/2)

Walk counts only describe the infinite graph inside the clean region of a
truncation, so every count these sums need is checked against the clean radius
of its start vertex (NotCleanError otherwise).

Convergence verdicts from finite data are heuristics: a ratio test over the
last ``Config.RATIO_WINDOW`` shells with tolerance ``Config.RATIO_TOLERANCE``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
from scipy.optimize import minimize_scalar

from config import Config
from core.errors import (
    BudgetExceededError,
    DegenerateDataError,
    InconclusiveError,
    NotCleanError,
    ValidationError,
)
from models.graph import Graph, clean_radius, degree, sphere
from schemas.results import AssumptionReport, SawTable

logger = logging.getLogger(__name__)

GrowthClass = Literal["polynomial", "exponential", "inconclusive"]

# Sphere growth: an exponential fit flatter than this is "bounded", hence polynomial.
_FLAT_SLOPE = 0.01
# Residuals this close (relative) cannot tell the two growth models apart.
_RESIDUAL_BAND = 0.10


class _Exhausted(Exception):
    pass


def _enumerate(g: Graph, x: int, depth: int, budget: int) -> tuple[list[int], int]:
    """Counts c_x(0..depth) and the number of walk extensions used."""
    adjacency = g.adjacency
    counts = [0] * (depth + 1)
    counts[0] = 1
    visited = bytearray(g.n_vertices)
    visited[x] = 1
    used = 0

    def extend(v: int, length: int) -> None:
        nonlocal used
        for w in adjacency[v]:
            if visited[w]:
                continue
            used += 1
            if used > budget:
                raise _Exhausted
            counts[length + 1] += 1
            if length + 1 < depth:
                visited[w] = 1
                extend(w, length + 1)
                visited[w] = 0

    if depth > 0:
        extend(x, 0)
    return counts, used


def count_saws(g: Graph, x: int, n_max: int, *, budget: Optional[int] = None) -> SawTable:
    """Exact c_x(0..n_max).

    Runs iterative deepening so that a budget overrun can name the last length
    that was fully counted. The budget counts walk extensions over all passes.
    """
    if n_max < 0:
        raise ValidationError("n_max must be non-negative")
    degree(g, x)  # validates x
    remaining = Config.SAW_BUDGET if budget is None else int(budget)
    counts = [1]
    for depth in range(1, n_max + 1):
        try:
            counts, used = _enumerate(g, x, depth, remaining)
        except _Exhausted:
            raise BudgetExceededError(
                f"walk enumeration budget exhausted at length {depth} from vertex {x}",
                last_completed=depth - 1,
            ) from None
        remaining -= used
        if counts[depth] == 0:
            # No walk of this length, so none longer either.
            counts += [0] * (n_max - depth)
            break
    table = SawTable(
        origin=x,
        counts=counts,
        clean_radius=clean_radius(g, x),
        max_degree=g.max_degree,
        origin_degree=degree(g, x),
    )
    logger.debug("c_%d(0..%d) = %s", x, n_max, counts)
    return table


def connective_estimate(t: SawTable) -> list[float]:
    """mu_hat(n) = c(n)^(1/n) for every clean n >= 1."""
    clean = t.clean_counts
    if len(clean) < 3:
        raise DegenerateDataError("connective estimate needs clean counts up to n >= 2")
    return [float(c) ** (1.0 / n) for n, c in enumerate(clean) if n >= 1]


# ---- Geometric series ----

def ratio_verdict(terms: Sequence[float], window: int, tolerance: float) -> str:
    """Ratio test on the trailing shells of a non-negative series."""
    if len(terms) < window + 1:
        return "inconclusive"
    ratios = []
    for prev, cur in zip(terms[-window - 1:-1], terms[-window:]):
        if prev > 0:
            ratios.append(cur / prev)
        else:
            ratios.append(0.0 if cur == 0 else math.inf)
    if max(ratios) < 1.0 - tolerance:
        return "converging"
    if min(ratios) > 1.0 + tolerance:
        return "diverging"
    return "inconclusive"


@dataclass(frozen=True)
class ShellSeries:
    """Summands of one series, grouped by shell, as weight * param**exponent.

    Depends only on the graph, so one instance serves every parameter value.
    """

    which: Literal["alpha", "beta"]
    radius: int
    shells: np.ndarray
    exponents: np.ndarray
    weights: np.ndarray
    p: Optional[float] = None

    def shell_terms(self, param: float) -> list[float]:
        contrib = self.weights * np.power(param, self.exponents)
        terms = np.bincount(self.shells, weights=contrib, minlength=self.radius + 1)
        return [float(v) for v in terms]

    def report(
        self,
        param: float,
        *,
        window: Optional[int] = None,
        tolerance: Optional[float] = None,
    ) -> AssumptionReport:
        if not 0.0 < param < 1.0:
            raise ValidationError(f"{self.which} must lie in (0, 1)")
        window = Config.RATIO_WINDOW if window is None else window
        tolerance = Config.RATIO_TOLERANCE if tolerance is None else tolerance
        terms = self.shell_terms(param)
        ratios: list[Optional[float]] = [None]
        ratios += [cur / prev if prev > 0 else None for prev, cur in zip(terms, terms[1:])]
        note = "ratio-test verdict on finite data"
        if self.which == "beta":
            note += "; the polynomial weight does not change the verdict for geometric shells"
        return AssumptionReport(
            which=self.which,
            parameter=param,
            truncation_radius=self.radius,
            partial_sums=[float(s) for s in np.cumsum(terms)],
            shell_ratios=ratios,
            verdict=ratio_verdict(terms, window, tolerance),
            window=window,
            tolerance=tolerance,
            p=self.p,
            note=note,
        )

    def verdict(self, param: float) -> str:
        return ratio_verdict(self.shell_terms(param), Config.RATIO_WINDOW, Config.RATIO_TOLERANCE)


def _require_clean(g: Graph, k: int, n: int) -> None:
    if clean_radius(g, k) < n:
        raise NotCleanError(
            f"c_{g.labels[k]}({n}) is not an infinite-graph count: clean radius there is {clean_radius(g, k)}"
        )


def _walk_counts(g: Graph, k: int, n: int, cache: dict[int, list[int]]) -> list[int]:
    have = cache.get(k)
    if have is None or len(have) <= n:
        have = count_saws(g, k, n).counts
        cache[k] = have
    return have


def assumption1_series(g: Graph, y: int, radius: int) -> ShellSeries:
    if radius < 0:
        raise ValidationError("radius must be non-negative")
    cache: dict[int, list[int]] = {}
    shells, weights = [], []
    for n in range(radius + 1):
        for k in sorted(sphere(g, y, n)):
            _require_clean(g, k, n)
            shells.append(n)
            weights.append(_walk_counts(g, k, n, cache)[n])
        logger.debug("assumption 1 shell %d done (%d vertices)", n, len(shells))
    shells_a = np.asarray(shells, dtype=np.int64)
    return ShellSeries(
        which="alpha",
        radius=radius,
        shells=shells_a,
        exponents=shells_a.astype(float),
        weights=np.asarray(weights, dtype=float),
    )


def assumption2_series(g: Graph, o: int, y: int, p: float, radius: int) -> ShellSeries:
    """Pairs (x, k) in B_o(radius), shell = max(d(o,x), d(o,k))."""
    if p < 0:
        raise ValidationError("p must be non-negative")
    if radius < 0:
        raise ValidationError("radius must be non-negative")
    d_o = g.distances_from(o)
    d_y = g.distances_from(y)
    members = np.flatnonzero(d_o <= radius)
    cache: dict[int, list[int]] = {}
    shells, exponents, weights = [], [], []
    for k in members.tolist():
        n_ky = int(d_y[k])
        _require_clean(g, k, n_ky)
        c_k = _walk_counts(g, k, n_ky, cache)[n_ky]
        d_k = g.distances_from(k)
        for x in members.tolist():
            n_xk = int(d_k[x])
            _require_clean(g, x, n_xk)
            c_x = _walk_counts(g, x, n_xk, cache)[n_xk]
            shells.append(max(int(d_o[x]), int(d_o[k])))
            exponents.append(0.5 * (n_xk + n_ky))
            weights.append(float(d_o[x]) ** p * math.sqrt(c_x * c_k))
    return ShellSeries(
        which="beta",
        radius=radius,
        shells=np.asarray(shells, dtype=np.int64),
        exponents=np.asarray(exponents, dtype=float),
        weights=np.asarray(weights, dtype=float),
        p=float(p),
    )


def assumption1_partial_sum(g: Graph, y: int, alpha: float, radius: int) -> AssumptionReport:
    return assumption1_series(g, y, radius).report(alpha)


def assumption2_partial_sum(g: Graph, o: int, y: int, p: float, beta: float, radius: int) -> AssumptionReport:
    return assumption2_series(g, o, y, p, radius).report(beta)


def critical_parameter_estimate(
    g: Graph,
    y: int,
    which: Literal["alpha", "beta"],
    radius: int,
    *,
    o: Optional[int] = None,
    p: float = 0.0,
    width: Optional[float] = None,
) -> float:
    """Bisection for alpha* (or beta*) on the predicate "verdict is not diverging".

    Returns the midpoint of the final bracket.
    """
    width = Config.BISECTION_WIDTH if width is None else width
    if which == "alpha":
        series = assumption1_series(g, y, radius)
    elif which == "beta":
        series = assumption2_series(g, y if o is None else o, y, p, radius)
    else:
        raise ValidationError(f"unknown series {which!r}")

    lo, hi = width / 2, 1.0 - width / 2
    v_lo, v_hi = series.verdict(lo), series.verdict(hi)
    if v_lo == "diverging" or (v_lo == "inconclusive" and v_hi == "inconclusive"):
        raise InconclusiveError(f"{which}: no usable bracket (verdicts {v_lo!r} / {v_hi!r})")
    if v_hi != "diverging":
        lo, hi = hi, 1.0
    while hi - lo > width:
        mid = 0.5 * (lo + hi)
        if series.verdict(mid) == "diverging":
            hi = mid
        else:
            lo = mid
    estimate = 0.5 * (lo + hi)
    logger.info("%s* estimate %.4f (radius %d)", which, estimate, radius)
    return estimate


# ---- Sphere growth ----

def sphere_growth_classify(g: Graph, y: int, radius: int) -> GrowthClass:
    """Compare least-squares fits of log|S_y(n)| against log n and against n."""
    usable = min(radius, clean_radius(g, y))
    if usable < 4:
        raise NotCleanError(f"sphere growth needs a clean radius >= 4 around {g.labels[y]}, have {usable}")
    sizes = np.array([len(sphere(g, y, n)) for n in range(1, usable + 1)], dtype=float)
    if np.all(sizes <= 1):
        raise DegenerateDataError("all spheres have at most one vertex")
    n = np.arange(1, usable + 1, dtype=float)
    keep = sizes > 0
    if keep.sum() < 3:
        raise DegenerateDataError("fewer than three non-empty spheres")
    log_s = np.log(sizes[keep])

    (_, _), res_poly, *_ = np.polyfit(np.log(n[keep]), log_s, 1, full=True)
    (slope_exp, _), res_exp, *_ = np.polyfit(n[keep], log_s, 1, full=True)
    r_poly = float(res_poly[0]) if res_poly.size else 0.0
    r_exp = float(res_exp[0]) if res_exp.size else 0.0

    if slope_exp <= _FLAT_SLOPE:
        return "polynomial"
    if abs(r_poly - r_exp) <= _RESIDUAL_BAND * max(r_poly, r_exp):
        return "inconclusive"
    return "polynomial" if r_poly < r_exp else "exponential"


# ---- Large-disorder thresholds ----

def _log_constant_factor(s: float) -> float:
    """log(2^s s^-s / (1-s))."""
    return s * math.log(2.0) - s * math.log(s) - math.log1p(-s)


def localization_threshold(s: float, alpha_star: float) -> float:
    """Smallest lambda/||rho||_inf with C < alpha_star at this s."""
    if not 0.0 < s < 1.0:
        raise ValidationError("s must lie in (0, 1)")
    if not 0.0 < alpha_star <= 1.0:
        raise ValidationError("alpha_star must lie in (0, 1]")
    return math.exp((_log_constant_factor(s) - math.log(alpha_star)) / s)


def optimal_threshold(alpha_star: float) -> tuple[float, float]:
    """(s*, threshold) minimising localization_threshold over s in (0, 1)."""
    if not 0.0 < alpha_star <= 1.0:
        raise ValidationError("alpha_star must lie in (0, 1]")
    res = minimize_scalar(
        lambda s: (_log_constant_factor(s) - math.log(alpha_star)) / s,
        bounds=(1e-6, 1 - 1e-6),
        method="bounded",
        options={"xatol": 1e-10},
    )
    s_star = float(res.x)
    return s_star, localization_threshold(s_star, alpha_star)


__all__ = [
    "count_saws",
    "connective_estimate",
    "ratio_verdict",
    "ShellSeries",
    "assumption1_series",
    "assumption2_series",
    "assumption1_partial_sum",
    "assumption2_partial_sum",
    "critical_parameter_estimate",
    "sphere_growth_classify",
    "localization_threshold",
    "optimal_threshold",
]
