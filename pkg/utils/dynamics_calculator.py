"""Exact-diagonalization dynamics and the quadrature lemma checks.

Everything here works in the eigenbasis of a dense finite-volume operator:
spectral projections, time evolution, position moments of evolved packets and
the eigenfunction correlator. The lemma checks compare quadratures of
resolvent expressions with what the spectral theorem predicts.

"sup over t" is always a supremum over a finite time grid; the default grid is
64 log-spaced points in [0.1, 200].
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass
from typing import Callable, Optional, Sequence, Union

import numpy as np
from scipy.sparse import csgraph

from config import Config
from core.errors import BudgetExceededError, SolverError, ValidationError
from models.graph import Graph, clean_radius, graph_distance
from models.operator import DisorderModel, FiniteVolume, HamiltonianMatrix, realize
from schemas.results import BoundReport, DynamicsReport, MomentEstimate
from utils.green_calculator import theorem1_constants
from utils.quadrature import integrate, resonance_points, uniform_simpson
from utils.run_metrics import record_eig
from utils.saw_calculator import count_saws
from utils.trial_pool import run_trials

logger = logging.getLogger(__name__)

# Evolved mass allowed within BOUNDARY_WIDTH sites of the volume edge.
BOUNDARY_WIDTH = 5
BOUNDARY_MASS_LIMIT = 1e-6

# Exponential cutoff e^(-2 eps T) of the time integral.
_TIME_CUTOFF = 1e-6

_EDGE_TOL = 1e-12


@dataclass(frozen=True, eq=False)
class EigenDecomposition:
    """Sorted eigenvalues, orthonormal eigenvector columns and the source matrix."""

    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    matrix: np.ndarray
    volume: Optional[FiniteVolume] = None
    trial: Optional[int] = None

    @property
    def dimension(self) -> int:
        return self.eigenvalues.size

    def coefficients(self, psi) -> np.ndarray:
        psi = np.asarray(psi, dtype=complex)
        if psi.shape != (self.dimension,):
            raise ValidationError(f"state has length {psi.size}, operator has dimension {self.dimension}")
        return self.eigenvectors.T @ psi

    def selection(self, a: float, b: float, closed: bool = False) -> np.ndarray:
        if not a < b:
            raise ValidationError("interval needs a < b")
        e = self.eigenvalues
        return (e >= a) & (e <= b) if closed else (e > a) & (e < b)


def eig(h: Union[HamiltonianMatrix, np.ndarray], *, trial: Optional[int] = None) -> EigenDecomposition:
    """Full symmetric eigendecomposition with residual and orthonormality checks."""
    if isinstance(h, HamiltonianMatrix):
        dense, volume = h.dense, h.volume
        trial = h.trial if trial is None else trial
    else:
        dense, volume = np.asarray(h, dtype=float), None
    n = dense.shape[0]
    if dense.shape != (n, n):
        raise ValidationError("operator must be square")
    if n > Config.EIG_LIMIT:
        raise BudgetExceededError(f"dense diagonalization is limited to {Config.EIG_LIMIT} vertices, got {n}")
    if not np.array_equal(dense, dense.T):
        raise ValidationError("operator is not symmetric")

    t0 = time.perf_counter()
    try:
        w, v = np.linalg.eigh(dense)
    except np.linalg.LinAlgError as exc:
        raise SolverError(f"eigensolver failed: {exc}", trial=trial) from None
    record_eig(n, duration_ms=(time.perf_counter() - t0) * 1000.0, trial=trial)

    scale = max(float(np.max(np.abs(w))), np.finfo(float).tiny)
    residual = float(np.max(np.linalg.norm(dense @ v - v * w, axis=0)))
    if residual > 1e-8 * scale:
        raise SolverError(f"eigenpair residual {residual:.3g}", trial=trial, residual=residual)
    orth = float(np.max(np.abs(v.T @ v - np.eye(n))))
    if orth > 1e-9:
        raise SolverError(f"eigenvectors not orthonormal ({orth:.3g})", trial=trial, residual=orth)
    return EigenDecomposition(w, v, dense, volume, trial)


def spectral_projection(ed: EigenDecomposition, a: float, b: float, closed: bool = False) -> np.ndarray:
    """P_(a,b) (or P_[a,b] when closed) as a dense matrix."""
    v = ed.eigenvectors[:, ed.selection(a, b, closed)]
    return v @ v.T


def evolve(ed: EigenDecomposition, psi, t: float) -> np.ndarray:
    """e^(-itH) psi."""
    c = ed.coefficients(psi)
    return ed.eigenvectors @ (np.exp(-1j * ed.eigenvalues * t) * c)


def _evolve_grid(vectors: np.ndarray, energies: np.ndarray, coeffs: np.ndarray, times: np.ndarray) -> np.ndarray:
    """Columns e^(-i t H) phi for every t, from phi's eigen-coefficients."""
    return vectors @ (np.exp(-1j * np.outer(energies, times)) * coeffs[:, None])


def position_moment(g: Graph, o: int, p: float, psi, *, volume: Optional[FiniteVolume] = None) -> float:
    """|| |X_o|^p psi || with (X_o psi)(x) = d(o, x) psi(x)."""
    if p < 0:
        raise ValidationError("p must be non-negative")
    psi = np.asarray(psi)
    d = g.distances_from(o)
    if volume is not None:
        d = d[np.asarray(volume.gamma)]
    if d.shape != psi.shape:
        raise ValidationError("state does not match the volume")
    return float(np.sqrt(np.sum(d.astype(float) ** (2 * p) * np.abs(psi) ** 2)))


def log_time_grid(tmin: float = 0.1, tmax: float = 200.0, points: int = 64) -> np.ndarray:
    return np.geomspace(tmin, tmax, points)


def edge_distances(g: Graph, fv: FiniteVolume) -> Optional[np.ndarray]:
    """Distance (inside the volume) of every volume vertex to the volume's edge.

    Edge vertices are those missing some of their infinite-graph neighbors in
    the volume. A volume that is a finite graph in its own right (a path)
    has none; then the vertices of less than maximal in-volume degree stand in.
    Returns None when no vertex qualifies (e.g. a cycle).
    """
    idx = np.asarray(fv.gamma)
    sub = g.csr[idx][:, idx]
    in_deg = np.diff(sub.indptr)
    full = np.asarray([g.full_degrees[x] for x in fv.gamma])
    edge = in_deg < full
    if not edge.any():
        edge = in_deg < in_deg.max()
    if not edge.any():
        return None
    dist = csgraph.shortest_path(sub, method="D", unweighted=True, indices=np.flatnonzero(edge))
    return np.atleast_2d(dist).min(axis=0)


def dynamical_scan(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    interval: tuple[float, float],
    o: int,
    p: float,
    psi,
    time_grid: Sequence[float],
    trials: int,
    *,
    workers: Optional[int] = None,
) -> list[DynamicsReport]:
    """Per-trial curves t -> || |X_o|^p e^(-itH) P_(a,b) psi || on the grid."""
    a, b = interval
    if not a < b:
        raise ValidationError("interval needs a < b")
    if trials < 1:
        raise ValidationError("need at least one trial")
    psi = np.asarray(psi, dtype=complex)
    if psi.shape != (fv.size,):
        raise ValidationError("psi must have one entry per volume vertex")
    times = np.asarray(time_grid, dtype=float)
    if times.ndim != 1 or times.size == 0:
        raise ValidationError("time grid must be a non-empty sequence")

    edge = edge_distances(g, fv)
    if edge is not None:
        support = np.flatnonzero(psi)
        depth = float(edge.max())
        if support.size and float(edge[support].min()) < depth / 2:
            raise ValidationError("psi must be supported within half the volume depth of its center")
        zone = edge < BOUNDARY_WIDTH
    else:
        zone = np.zeros(fv.size, dtype=bool)
    weights = g.distances_from(o)[np.asarray(fv.gamma)].astype(float) ** (2 * p)

    def one_trial(trial: int) -> DynamicsReport:
        ed = eig(realize(g, fv, m, trial))
        sel = ed.selection(a, b)
        c = ed.coefficients(psi)[sel]
        norm0 = float(np.linalg.norm(c))
        states = _evolve_grid(ed.eigenvectors[:, sel], ed.eigenvalues[sel], c, times)
        dens = np.abs(states) ** 2
        moments = np.sqrt(weights @ dens)
        norm_err = float(np.max(np.abs(np.sqrt(dens.sum(axis=0)) - norm0)))
        boundary = float(np.max(dens[zone].sum(axis=0))) if zone.any() else 0.0
        if norm_err > 1e-9:
            raise SolverError(f"trial {trial}: evolution lost unitarity ({norm_err:.3g})", trial=trial)
        return DynamicsReport(
            trial=trial,
            o=o,
            p=p,
            a=a,
            b=b,
            times=times.tolist(),
            moments=moments.tolist(),
            supremum=float(moments.max()),
            max_norm_error=norm_err,
            boundary_mass=boundary,
            boundary_flag=boundary > BOUNDARY_MASS_LIMIT,
        )

    reports = run_trials(one_trial, trials, workers=workers)
    flagged = sum(r.boundary_flag for r in reports)
    if flagged:
        logger.warning("%d of %d trials put more than %g of the mass near the volume edge", flagged, trials,
                       BOUNDARY_MASS_LIMIT)
    return reports


# ---- Quadrature lemmas ----

@dataclass(frozen=True)
class PiecewiseConstant:
    """f(E) = values[i] on [jumps[i-1], jumps[i]); right-continuous at jumps."""

    jumps: tuple[float, ...]
    values: tuple[float, ...]

    def __post_init__(self):
        if len(self.values) != len(self.jumps) + 1:
            raise ValidationError("piecewise-constant function needs one more value than jumps")
        if list(self.jumps) != sorted(set(self.jumps)):
            raise ValidationError("jumps must be strictly increasing")

    def __call__(self, e):
        i = np.searchsorted(self.jumps, e, side="right")
        return np.asarray(self.values)[i]

    def left_limit(self, a: float) -> float:
        return float(self.values[int(np.searchsorted(self.jumps, a, side="left"))])

    def right_limit(self, a: float) -> float:
        return float(self.values[int(np.searchsorted(self.jumps, a, side="right"))])

    def midpoint_limit(self, a: float) -> float:
        return 0.5 * (self.left_limit(a) + self.right_limit(a))


def approx_identity_check(f: PiecewiseConstant, a: float, epsilons: Sequence[float]) -> list[tuple[float, float]]:
    """(eps, (eps/pi) int f(E) / ((a-E)^2 + eps^2) dE) for every eps.

    Substituting E = a + eps tan(theta) turns the integral into
    (1/pi) int_{-pi/2}^{pi/2} f(a + eps tan theta) d theta.
    """
    out = []
    for eps in epsilons:
        if eps <= 0:
            raise ValidationError("epsilon must be positive")
        pts = [math.atan((j - a) / eps) for j in f.jumps]
        value = integrate(
            lambda th: float(f(a + eps * math.tan(th))), -math.pi / 2, math.pi / 2, points=pts
        ) / math.pi
        out.append((float(eps), value))
    return out


def _edge_weights(ed: EigenDecomposition, a: float, b: float) -> np.ndarray:
    """1 inside (a,b), 1/2 at an endpoint, 0 outside: (chi_(a,b) + chi_[a,b]) / 2."""
    e = ed.eigenvalues
    at_edge = (np.abs(e - a) <= _EDGE_TOL * max(1.0, abs(a))) | (np.abs(e - b) <= _EDGE_TOL * max(1.0, abs(b)))
    inside = (e > a) & (e < b) & ~at_edge
    return np.where(inside, 1.0, np.where(at_edge, 0.5, 0.0))


def _resolvent_norm_sq(ed: EigenDecomposition, psi: np.ndarray, e: float, eps: float, proj=None) -> float:
    """|| P (H - E - i eps)^-1 psi ||^2 by a dense solve (P = identity if None)."""
    a = ed.matrix - (e + 1j * eps) * np.eye(ed.dimension)
    u = np.linalg.solve(a, psi)
    if proj is not None:
        u = proj @ u
    return float(np.vdot(u, u).real)


def stone_variant_check(
    ed: EigenDecomposition,
    f: Optional[Callable[[float], float]],
    a: float,
    b: float,
    psi,
    epsilons: Sequence[float],
) -> list[tuple[float, float, float]]:
    """(eps, lhs(eps), target) with

    lhs(eps) = (eps/pi) int_a^b f(E) <psi, (H-E-i eps)^-1 (H-E+i eps)^-1 psi> dE
    target   = <psi, f(H) (P_(a,b) + P_[a,b]) psi> / 2.

    An eigenvalue sitting on an endpoint counts with weight 1/2.
    """
    if not a < b:
        raise ValidationError("interval needs a < b")
    f = f if f is not None else (lambda e: 1.0)
    psi = np.asarray(psi, dtype=complex)
    c = ed.coefficients(psi)
    target = float(np.sum(np.array([f(e) for e in ed.eigenvalues]) * np.abs(c) ** 2 * _edge_weights(ed, a, b)))
    out = []
    for eps in epsilons:
        if eps <= 0:
            raise ValidationError("epsilon must be positive")
        # (H-E+i eps)^-1 and (H-E-i eps)^-1 have equal norm on every vector
        integrand = lambda e: (eps / math.pi) * float(f(e)) * _resolvent_norm_sq(ed, psi, e, eps)  # noqa: E731
        lhs = integrate(
            integrand, a, b, points=resonance_points(ed.eigenvalues, eps, a, b), epsrel=1e-8, limit=500
        )
        out.append((float(eps), lhs, target))
    return out


def graf_inequality_check(
    ed: EigenDecomposition,
    projection: np.ndarray,
    a: float,
    b: float,
    psi,
    epsilons: Sequence[float],
    time_horizon: Optional[float] = None,
) -> list[tuple[float, float, float]]:
    """(eps, lhs, rhs) with

    lhs = 2 eps int_0^T e^(-2 eps s) || P e^(-iHs) P_(a,b) psi ||^2 ds   (Simpson, uniform grid)
    rhs = (eps/pi) int_a^b || P (H - E - i eps)^-1 psi ||^2 dE           (adaptive quad)

    T defaults to the time where the weight has fallen to 1e-6. At finite eps
    the rhs misses the Lorentzian tails outside [a, b], of order
    eps / (pi * distance from the spectrum to the interval ends); compare with
    a tolerance accordingly.
    """
    if not a < b:
        raise ValidationError("interval needs a < b")
    proj = np.asarray(projection)
    if proj.shape != (ed.dimension, ed.dimension):
        raise ValidationError("projection does not match the operator")
    psi = np.asarray(psi, dtype=complex)
    sel = ed.selection(a, b)
    c = ed.coefficients(psi)[sel]
    energies = ed.eigenvalues[sel]
    pv = proj @ ed.eigenvectors[:, sel]
    spread = float(energies.max() - energies.min()) if energies.size else 0.0

    out = []
    for eps in epsilons:
        if eps <= 0:
            raise ValidationError("epsilon must be positive")
        horizon = time_horizon if time_horizon is not None else math.log(1.0 / _TIME_CUTOFF) / (2 * eps)
        dt = horizon / 200 if spread == 0 else min(0.2 / spread, horizon / 200)
        steps = int(math.ceil(horizon / dt))
        steps += steps % 2
        times = np.linspace(0.0, horizon, steps + 1)
        norms = np.empty(times.size)
        for start in range(0, times.size, 4096):
            chunk = times[start:start + 4096]
            amp = _evolve_grid(pv, energies, c, chunk)
            norms[start:start + chunk.size] = np.sum(np.abs(amp) ** 2, axis=0)
        lhs = uniform_simpson(2 * eps * np.exp(-2 * eps * times) * norms, times[1] - times[0])

        rhs = integrate(
            lambda e: (eps / math.pi) * _resolvent_norm_sq(ed, psi, e, eps, proj),
            a,
            b,
            points=resonance_points(ed.eigenvalues, eps, a, b),
            epsrel=1e-8,
            limit=500,
        )
        out.append((float(eps), lhs, rhs))
    return out


# ---- Eigenfunction correlator ----

def eigenfunction_correlator(ed: EigenDecomposition, fv: FiniteVolume, a: float, b: float, x: int, y: int) -> float:
    """sum over E_j in (a,b) of |v_j(x)| |v_j(y)|, which dominates sup_t |<x, e^(-itH) P_(a,b) y>|."""
    sel = ed.selection(a, b)
    v = ed.eigenvectors[:, sel]
    return float(np.sum(np.abs(v[fv.local(x)]) * np.abs(v[fv.local(y)])))


def correlator_decay_bound(
    g: Graph,
    fv: FiniteVolume,
    x: int,
    y: int,
    s: float,
    lam: float,
    rho_sup: float,
    a: float,
    b: float,
) -> float:
    """max(pi, ||rho||) C' (b-a)/pi * sum_k C^((d(x,k)+d(k,y))/2) sqrt(c_x(d(x,k)) c_k(d(k,y)))."""
    if not a < b:
        raise ValidationError("interval needs a < b")
    c, c_prime = theorem1_constants(s, lam, rho_sup)
    d_x = g.distances_from(x)
    d_y = g.distances_from(y)
    ks = np.asarray(fv.gamma)
    c_x = count_saws(g, x, int(d_x[ks].max())).counts
    total = 0.0
    for k in fv.gamma:
        n1, n2 = int(d_x[k]), int(d_y[k])
        c_k = count_saws(g, k, n2).counts[n2]
        total += c ** ((n1 + n2) / 2) * math.sqrt(c_x[n1] * c_k)
    return max(math.pi, rho_sup) * c_prime * (b - a) / math.pi * total


def correlator_mc(
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    interval: tuple[float, float],
    x: int,
    y: int,
    trials: int,
    *,
    workers: Optional[int] = None,
) -> MomentEstimate:
    """Disorder average of the eigenfunction correlator."""
    a, b = interval
    if trials < 2:
        raise ValidationError("need at least two trials")

    def one_trial(trial: int) -> float:
        return eigenfunction_correlator(eig(realize(g, fv, m, trial)), fv, a, b, x, y)

    values = np.asarray(run_trials(one_trial, trials, workers=workers))
    d = graph_distance(g, x, y)
    return MomentEstimate(
        kind="correlator",
        x=x,
        y=y,
        d=d,
        order=1.0,
        mean=float(values.mean()),
        stderr=float(values.std(ddof=1) / math.sqrt(trials)),
        trials=trials,
        clean=d <= clean_radius(g, x),
    )


def verify_correlator(
    estimate: MomentEstimate,
    g: Graph,
    fv: FiniteVolume,
    m: DisorderModel,
    s: float,
    interval: tuple[float, float],
    *,
    k: Optional[float] = None,
) -> BoundReport:
    k = Config.CI_K if k is None else k
    a, b = interval
    c, c_prime = theorem1_constants(s, m.lam, m.rho_sup)
    bound = correlator_decay_bound(g, fv, estimate.x, estimate.y, s, m.lam, m.rho_sup, a, b)
    c_xd = max(1, count_saws(g, estimate.x, estimate.d).counts[estimate.d])
    return BoundReport(
        estimate=estimate,
        bound_value=bound,
        C=c,
        C_prime=c_prime,
        d=estimate.d,
        c_xd=c_xd,
        k=k,
        prefactor=max(math.pi, m.rho_sup) * (b - a) / math.pi,
        passed=estimate.mean + k * estimate.stderr <= bound,
        lam=m.lam,
        s=s,
    )


__all__ = [
    "EigenDecomposition",
    "eig",
    "spectral_projection",
    "evolve",
    "position_moment",
    "log_time_grid",
    "edge_distances",
    "dynamical_scan",
    "PiecewiseConstant",
    "approx_identity_check",
    "stone_variant_check",
    "graf_inequality_check",
    "eigenfunction_correlator",
    "correlator_decay_bound",
    "correlator_mc",
    "verify_correlator",
]
