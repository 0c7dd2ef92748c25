"""Green functions of finite-volume operators and the moment bounds.

G(z; x, y) = <delta_x, (H - z)^-1 delta_y>. Entries come from a sparse LU of
(H - z); every solve is followed by a residual check. The identity checks
(resolvent identity, walk expansion, rank-one structure) work on small volumes
with dense inverses.

Moment constants:
    C  = lambda^-s ||rho||_inf^s 2^s s^-s / (1 - s)
    C' = 2^(s+1) C
    E|G(z;x,y)|^s          <= C' C^d c_x(d)
    |Im z| E|G(z;x,y)|^2   <= max(1, pi ||rho||_inf) C' C^d c_x(d)
with d = d(x, y).
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Literal, Optional, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from config import Config
from core.errors import BudgetExceededError, SolverError, ValidationError
from models.graph import Graph, clean_radius, graph_distance
from models.operator import (
    DisorderModel,
    FiniteVolume,
    HamiltonianMatrix,
    UniformDensity,
    assemble,
    assemble_depleted,
    hopping_difference,
    sample_potential,
)
from schemas.experiment import SpectralParams
from schemas.results import BoundReport, MomentEstimate
from utils.quadrature import integrate
from utils.run_metrics import record_solve
from utils.saw_calculator import count_saws
from utils.trial_pool import run_trials

logger = logging.getLogger(__name__)

# Volume caps for the dense identity checks.
RESOLVENT_CHECK_LIMIT = 200
SAW_EXPANSION_LIMIT = 50
SAW_EXPANSION_MAX_DISTANCE = 5

MIN_TRIALS = 100

MomentKind = Literal["fractional", "second"]


def _check_z(z: complex) -> complex:
    z = complex(z)
    if z.imag == 0:
        raise ValidationError("z must be off the real axis")
    return z


def _solve_checked(lu, a: sp.spmatrix, rhs: np.ndarray, *, trial: Optional[int]) -> np.ndarray:
    u = lu.solve(rhs)
    residual = float(np.linalg.norm(a @ u - rhs))
    if not np.isfinite(residual) or residual > Config.SOLVE_RESIDUAL_TOL * float(np.linalg.norm(rhs)):
        raise SolverError(f"solve residual {residual:.3g} above tolerance", trial=trial, residual=residual)
    return u


class GreenSolver:
    """Sparse LU of (H - z), reused for any number of columns of G."""

    def __init__(self, h: HamiltonianMatrix, z: complex, *, trial: Optional[int] = None):
        self.z = _check_z(z)
        if h.dimension > Config.SPARSE_SOLVE_LIMIT:
            raise BudgetExceededError(
                f"volume of {h.dimension} vertices exceeds the direct-solve limit {Config.SPARSE_SOLVE_LIMIT}"
            )
        self.h = h
        self.trial = trial if trial is not None else h.trial
        self._a = (h.matrix.astype(complex) - self.z * sp.identity(h.dimension, format="csr")).tocsc()
        try:
            self._lu = splu(self._a)
        except RuntimeError as exc:
            raise SolverError(f"factorization failed: {exc}", trial=self.trial) from None

    def column(self, y: int) -> np.ndarray:
        """G(z; ., y) in volume order."""
        rhs = np.zeros(self.h.dimension, dtype=complex)
        rhs[self.h.volume.local(y)] = 1.0
        t0 = time.perf_counter()
        u = _solve_checked(self._lu, self._a, rhs, trial=self.trial)
        record_solve(self.h.dimension, duration_ms=(time.perf_counter() - t0) * 1000.0, trial=self.trial)
        return u

    def entry(self, x: int, y: int) -> complex:
        return complex(self.column(y)[self.h.volume.local(x)])


def green_entry(h: HamiltonianMatrix, z: complex, x: int, y: int) -> complex:
    return GreenSolver(h, z).entry(x, y)


def dense_green(h: HamiltonianMatrix, z: complex) -> np.ndarray:
    """Full (H - z)^-1 for small volumes."""
    z = _check_z(z)
    a = h.dense.astype(complex) - z * np.eye(h.dimension)
    try:
        return np.linalg.inv(a)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"dense inverse failed: {exc}") from None


# ---- Identity checks ----

def _depleted_pair(g: Graph, fv: FiniteVolume, omega, lam: float):
    if fv.size > RESOLVENT_CHECK_LIMIT:
        raise ValidationError(f"dense checks are limited to {RESOLVENT_CHECK_LIMIT} vertices")
    full = assemble(g, fv, omega, lam)
    depleted = assemble_depleted(g, fv, omega, lam)
    return full, depleted


def resolvent_identity_check(g: Graph, fv: FiniteVolume, omega, lam: float, z: complex) -> float:
    """max |G - (G^Lambda + G T G^Lambda)| over all entries."""
    full, depleted = _depleted_pair(g, fv, omega, lam)
    t = hopping_difference(full, depleted).toarray()
    g_full = dense_green(full, z)
    g_dep = dense_green(depleted, z)
    return float(np.max(np.abs(g_full - (g_dep + g_full @ t @ g_dep))))


def depleted_cross_block(g: Graph, fv: FiniteVolume, omega, lam: float, z: complex) -> float:
    """max |G^Lambda(z; x, y)| over x in Lambda, y outside Lambda (zero in exact arithmetic)."""
    _, depleted = _depleted_pair(g, fv, omega, lam)
    mask = fv.depletion_mask
    if mask.all():
        return 0.0
    g_dep = dense_green(depleted, z)
    return float(np.max(np.abs(g_dep[np.ix_(mask, ~mask)])))


def saw_expansion_check(
    g: Graph,
    fv: FiniteVolume,
    omega,
    lam: float,
    z: complex,
    x: int,
    y: int,
    *,
    budget: Optional[int] = None,
) -> float:
    """Relative deviation between G(z;x,y) and its self-avoiding walk expansion.

    Expanding G_Gamma(x, y) = G_Gamma(x, x) sum_{k ~ x} G_{Gamma - x}(k, y)
    d(x, y) times gives a sum over self-avoiding walks w of length d(x, y):
    the product of G_{Gamma - {w_0..w_(j-1)}}(w_j, w_j) along the walk times
    G_{Gamma - {w_0..w_(l-1)}}(w_l, y).
    """
    if x == y:
        raise ValidationError("walk expansion needs x != y")
    if fv.size > SAW_EXPANSION_LIMIT:
        raise ValidationError(f"walk expansion check is limited to {SAW_EXPANSION_LIMIT} vertices")
    length = graph_distance(g, x, y)
    if length > SAW_EXPANSION_MAX_DISTANCE:
        raise ValidationError(f"walk expansion check is limited to d(x,y) <= {SAW_EXPANSION_MAX_DISTANCE}")
    z = _check_z(z)
    h = assemble(g, fv, omega, lam)
    fv.local(x)
    fv.local(y)
    a = h.dense.astype(complex) - z * np.eye(h.dimension)
    budget = Config.SAW_BUDGET if budget is None else budget

    restricted: dict[frozenset, tuple[np.ndarray, dict[int, int]]] = {}

    def green_without(removed: frozenset) -> tuple[np.ndarray, dict[int, int]]:
        hit = restricted.get(removed)
        if hit is None:
            keep = [i for i, v in enumerate(fv.gamma) if v not in removed]
            inv = np.linalg.inv(a[np.ix_(keep, keep)])
            hit = (inv, {fv.gamma[i]: r for r, i in enumerate(keep)})
            restricted[removed] = hit
        return hit

    total = 0j
    walks = 0

    def expand(prefix: list[int], factor: complex) -> None:
        nonlocal total, walks
        current = prefix[-1]
        inv, pos = green_without(frozenset(prefix[:-1]))
        if len(prefix) - 1 == length:
            total += factor * inv[pos[current], pos[y]]
            walks += 1
            if walks > budget:
                raise BudgetExceededError("walk expansion budget exhausted", last_completed=None)
            return
        diag = inv[pos[current], pos[current]]
        for k in g.adjacency[current]:
            if k in fv.index and k not in prefix:
                expand(prefix + [k], factor * diag)

    expand([x], 1.0 + 0j)
    direct = green_entry(h, z, x, y)
    logger.debug("walk expansion %s->%s: %d walks, %d restricted inverses", x, y, walks, len(restricted))
    return float(abs(total - direct) / max(abs(direct), np.finfo(float).tiny))


@dataclass(frozen=True)
class RankOneCheck:
    """Affine fit of 1/G(z;x,x) = lambda (omega_x - beta) in omega_x."""

    slope: complex
    slope_deviation: float
    affine_residual: float
    beta: complex
    beta_spread: float
    vanishing: bool = False


def rank_one_structure_check(
    g: Graph,
    fv: FiniteVolume,
    omega,
    lam: float,
    z: complex,
    x: int,
    *,
    shifts: Sequence[float] = (0.0, 0.37, -0.61),
    vanishing_tol: float = 1e-14,
) -> RankOneCheck:
    """Evaluate G(z;x,x) at three values of omega_x with the rest fixed.

    Values with |G| < vanishing_tol set ``vanishing`` and are left out of the
    affine fit; with fewer than two usable values the fit fields are NaN.
    """
    if len(shifts) < 3:
        raise ValidationError("rank-one check needs at least three omega_x values")
    i = fv.local(x)
    base = np.asarray(omega, dtype=float)
    w_all = np.array([base[i] + s for s in shifts])
    kept, inv_g = [], []
    for w_i in w_all:
        om = base.copy()
        om[i] = w_i
        entry = green_entry(assemble(g, fv, om, lam), z, x, x)
        if not abs(entry) >= vanishing_tol:
            continue
        kept.append(w_i)
        inv_g.append(1.0 / entry)
    vanishing = len(kept) < len(w_all)
    if vanishing:
        logger.warning("G(z;x,x) vanishes at %d of %d omega_x values", len(w_all) - len(kept), len(w_all))
    if len(kept) < 2:
        nan = float("nan")
        return RankOneCheck(
            slope=complex(nan, nan),
            slope_deviation=nan,
            affine_residual=nan,
            beta=complex(nan, nan),
            beta_spread=nan,
            vanishing=True,
        )
    w = np.asarray(kept, dtype=float)
    q = np.asarray(inv_g, dtype=complex)
    design = np.column_stack([w, np.ones_like(w)]).astype(complex)
    (slope, intercept), *_ = np.linalg.lstsq(design, q, rcond=None)
    fit = design @ np.array([slope, intercept])
    residual = float(np.max(np.abs(q - fit)) / np.max(np.abs(q)))
    betas = w - q / lam
    return RankOneCheck(
        slope=complex(slope),
        slope_deviation=float(abs(slope - lam)),
        affine_residual=residual,
        beta=complex(-intercept / lam),
        beta_spread=float(np.max(np.abs(betas - betas[0]))),
        vanishing=vanishing,
    )


# ---- Bounds ----

def theorem1_constants(s: float, lam: float, rho_sup: float) -> tuple[float, float]:
    if not 0.0 < s < 1.0:
        raise ValidationError("s must lie in (0, 1)")
    if lam <= 0 or rho_sup <= 0:
        raise ValidationError("lambda and ||rho||_inf must be positive")
    c = lam ** (-s) * rho_sup**s * 2.0**s * s ** (-s) / (1.0 - s)
    return c, 2.0 ** (s + 1.0) * c


def theorem1_bound(s: float, lam: float, rho_sup: float, d: int, c_xd: int) -> tuple[float, float, float]:
    """(C, C', C' C^d c_x(d))."""
    if d < 0:
        raise ValidationError("distance must be non-negative")
    if c_xd < 1:
        raise ValidationError("c_x(d) must be at least 1")
    c, c_prime = theorem1_constants(s, lam, rho_sup)
    return c, c_prime, c_prime * c**d * c_xd


def second_moment_prefactor(rho_sup: float) -> float:
    return max(1.0, math.pi * rho_sup)


# ---- Monte Carlo ----

def _diagonal_positions(a: sp.csc_matrix, order: np.ndarray) -> np.ndarray:
    """Data positions of the original diagonal in a column-permuted CSC matrix.

    Column j of ``a`` holds vertex order[j], so its diagonal entry sits in row order[j].
    """
    cols = np.repeat(order, np.diff(a.indptr))
    pos = np.flatnonzero(a.indices == cols)
    if pos.size != a.shape[0]:
        raise SolverError("operator pattern lacks a full diagonal")
    return pos


def green_samples(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    z: complex,
    x: int,
    ys: Sequence[int],
    trials: int,
    *,
    workers: Optional[int] = None,
) -> np.ndarray:
    """G(z; x, y) for every y in ys and every trial, shape (trials, len(ys)).

    The symbolic part is done once: the sparsity pattern of H - z is built and
    its COLAMD column ordering computed on the disorder-free operator. Each
    trial rewrites the diagonal of the column-permuted matrix and factorizes
    numerically in that fixed order (row pivoting stays per trial). G is
    complex symmetric, so one solve against delta_x yields the whole row.
    """
    z = _check_z(z)
    if fv.size > Config.SPARSE_SOLVE_LIMIT:
        raise BudgetExceededError(
            f"volume of {fv.size} vertices exceeds the direct-solve limit {Config.SPARSE_SOLVE_LIMIT}"
        )
    base = assemble(g, fv, np.zeros(fv.size), m.lam)
    a0 = (base.matrix.astype(complex) - z * sp.identity(fv.size, format="csr")).tocsc()
    try:
        # SuperLU factors A Pc with Pc[r, perm_c[r]] = 1, i.e. the columns A[:, argsort(perm_c)].
        order = np.argsort(splu(a0, permc_spec="COLAMD").perm_c).astype(np.int64)
    except RuntimeError as exc:
        raise SolverError(f"ordering factorization failed: {exc}") from None
    a0p = sp.csc_matrix(a0[:, order])
    a0p.sort_indices()
    diag_pos = _diagonal_positions(a0p, order)
    rhs = np.zeros(fv.size, dtype=complex)
    rhs[fv.local(x)] = 1.0
    cols = np.array([fv.local(y) for y in ys], dtype=np.int64)

    def one_trial(trial: int) -> np.ndarray:
        omega = sample_potential(m, fv, trial)
        a = a0p.copy()
        a.data[diag_pos] += m.lam * omega[order]
        t0 = time.perf_counter()
        try:
            lu = splu(a, permc_spec="NATURAL")
        except RuntimeError as exc:
            raise SolverError(f"trial {trial}: factorization failed: {exc}", trial=trial) from None
        # (H - z)[:, order] u_p = rhs, so u[order] = u_p.
        u_p = _solve_checked(lu, a, rhs, trial=trial)
        u = np.empty_like(u_p)
        u[order] = u_p
        record_solve(fv.size, duration_ms=(time.perf_counter() - t0) * 1000.0, trial=trial)
        return u[cols]

    rows = run_trials(one_trial, trials, workers=workers)
    return np.vstack(rows)


def _estimate(values: np.ndarray, **fields) -> MomentEstimate:
    n = values.size
    return MomentEstimate(
        mean=float(np.mean(values)),
        stderr=float(np.std(values, ddof=1) / math.sqrt(n)),
        trials=n,
        **fields,
    )


def moment_estimates(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    sp_params: SpectralParams,
    x: int,
    ys: Sequence[int],
    trials: int,
    *,
    kind: MomentKind = "fractional",
    workers: Optional[int] = None,
) -> list[MomentEstimate]:
    """Moment estimates for several targets y sharing the same solves."""
    if trials < MIN_TRIALS:
        raise ValidationError(f"Monte Carlo estimates need at least {MIN_TRIALS} trials")
    z = sp_params.z
    samples = green_samples(g, fv, m, z, x, ys, trials, workers=workers)
    mags = np.abs(samples)
    if kind == "fractional":
        values, order = mags**sp_params.s, sp_params.s
    elif kind == "second":
        values, order = abs(z.imag) * mags**2, 2.0
    else:
        raise ValidationError(f"unknown moment kind {kind!r}")
    cr = clean_radius(g, x)
    out = []
    for j, y in enumerate(ys):
        d = graph_distance(g, x, y)
        out.append(
            _estimate(values[:, j], kind=kind, x=x, y=y, d=d, order=order, z_re=z.real, z_im=z.imag, clean=d <= cr)
        )
    logger.info("%s moments at x=%s for %d targets over %d trials", kind, g.labels[x], len(ys), trials)
    return out


def fractional_moment_mc(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    sp_params: SpectralParams,
    x: int,
    y: int,
    trials: int,
    *,
    workers: Optional[int] = None,
) -> MomentEstimate:
    """Mean and standard error of |G(z;x,y)|^s."""
    return moment_estimates(g, fv, m, sp_params, x, [y], trials, kind="fractional", workers=workers)[0]


def second_moment_mc(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    sp_params: SpectralParams,
    x: int,
    y: int,
    trials: int,
    *,
    workers: Optional[int] = None,
) -> MomentEstimate:
    """Mean and standard error of |Im z| |G(z;x,y)|^2."""
    return moment_estimates(g, fv, m, sp_params, x, [y], trials, kind="second", workers=workers)[0]


def verify_bound(
    estimate: MomentEstimate,
    g: Graph,
    s: float,
    m: DisorderModel,
    *,
    k: Optional[float] = None,
    large_disorder: bool = False,
) -> BoundReport:
    """One-sided check mean + k * stderr <= bound."""
    k = Config.CI_K if k is None else k
    d = estimate.d
    c_xd = count_saws(g, estimate.x, d).counts[d]
    if c_xd == 0:
        # y is unreachable by a walk of length d inside the truncation; use the trivial count.
        c_xd = 1
    c, c_prime, bound = theorem1_bound(s, m.lam, m.rho_sup, d, c_xd)
    if large_disorder and not c < 1:
        raise ValidationError(f"large-disorder mode declared but C = {c:.6g} >= 1")
    prefactor = second_moment_prefactor(m.rho_sup) if estimate.kind == "second" else 1.0
    bound_value = prefactor * bound
    passed = estimate.mean + k * estimate.stderr <= bound_value
    if not passed:
        logger.warning(
            "bound check failed at d=%d: %.6g + %.3g*%.3g > %.6g", d, estimate.mean, k, estimate.stderr, bound_value
        )
    return BoundReport(
        estimate=estimate,
        bound_value=bound_value,
        C=c,
        C_prime=c_prime,
        d=d,
        c_xd=c_xd,
        k=k,
        prefactor=prefactor,
        passed=passed,
        large_disorder=large_disorder,
        lam=m.lam,
        s=s,
    )


def verify_bounds(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    sp_params: SpectralParams,
    x: int,
    ys: Sequence[int],
    trials: int,
    *,
    kind: MomentKind = "fractional",
    k: Optional[float] = None,
    large_disorder: bool = False,
    workers: Optional[int] = None,
) -> list[BoundReport]:
    estimates = moment_estimates(g, fv, m, sp_params, x, ys, trials, kind=kind, workers=workers)
    return [verify_bound(e, g, sp_params.s, m, k=k, large_disorder=large_disorder) for e in estimates]


def volume_doubling_stability(small: MomentEstimate, large: MomentEstimate) -> float:
    """Relative change of a moment estimate when the volume radius doubles."""
    if (small.x, small.y) != (large.x, large.y):
        raise ValidationError("volume doubling compares the same (x, y) pair")
    return abs(large.mean - small.mean) / max(large.mean, np.finfo(float).tiny)


# ---- Spectral averaging ----

def spectral_averaging_check(density: UniformDensity, s: float, beta: complex) -> tuple[float, float]:
    """(integral of |xi - beta|^-s g(xi), ||g||_inf^s ||g||_1^(1-s) 2^s s^-s / (1-s)).

    A real beta inside the support is an endpoint singularity of both halves;
    those are integrated with quad's algebraic weight.
    """
    if not 0.0 < s < 1.0:
        raise ValidationError("s must lie in (0, 1)")
    beta = complex(beta)
    a, b = density.support
    r = beta.real
    rhs = density.sup_norm**s * density.l1_norm ** (1.0 - s) * 2.0**s * s ** (-s) / (1.0 - s)
    pdf = lambda xi: float(density.pdf(xi))  # noqa: E731

    if beta.imag == 0 and a <= r <= b:
        lhs = 0.0
        if r > a:
            lhs += integrate(pdf, a, r, weight="alg", wvar=(0.0, -s))
        if r < b:
            lhs += integrate(pdf, r, b, weight="alg", wvar=(-s, 0.0))
    else:
        lhs = integrate(lambda xi: abs(xi - beta) ** (-s) * pdf(xi), a, b, points=[r])
    return lhs, rhs


__all__ = [
    "GreenSolver",
    "green_entry",
    "dense_green",
    "resolvent_identity_check",
    "depleted_cross_block",
    "saw_expansion_check",
    "RankOneCheck",
    "rank_one_structure_check",
    "theorem1_constants",
    "theorem1_bound",
    "second_moment_prefactor",
    "green_samples",
    "moment_estimates",
    "fractional_moment_mc",
    "second_moment_mc",
    "verify_bound",
    "verify_bounds",
    "volume_doubling_stability",
    "spectral_averaging_check",
]
