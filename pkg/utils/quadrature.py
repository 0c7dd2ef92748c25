"""Thin wrappers around scipy.integrate for the lemma checks.

``integrate`` runs adaptive Gauss-Kronrod (quad) and turns a non-converged
result into QuadratureError instead of a warning. ``resonance_points`` places
breakpoints around the narrow Lorentzian peaks of resolvent integrands.
"""
from __future__ import annotations

import logging
from typing import Callable, Iterable, Optional

import numpy as np
from scipy.integrate import quad, simpson

from core.errors import QuadratureError

logger = logging.getLogger(__name__)

# Offsets (in units of epsilon) of the breakpoints placed around each peak.
_PEAK_OFFSETS = (0.0, 1.0, 10.0, 100.0, 1000.0)


def integrate(
    f: Callable[[float], float],
    a: float,
    b: float,
    *,
    points: Optional[Iterable[float]] = None,
    weight: Optional[str] = None,
    wvar=None,
    epsabs: float = 1e-12,
    epsrel: float = 1e-10,
    limit: int = 200,
) -> float:
    """Integral of f over [a, b]; raises QuadratureError when quad gives up."""
    kwargs = {"epsabs": epsabs, "epsrel": epsrel, "full_output": 1}
    if weight is not None:
        kwargs.update(weight=weight, wvar=wvar)
        pts: list[float] = []
    else:
        pts = sorted({float(p) for p in (points or ()) if a < p < b})
        if pts:
            kwargs["points"] = pts
    kwargs["limit"] = max(limit, 4 * len(pts) + 50)
    res = quad(f, a, b, **kwargs)
    value, abserr = float(res[0]), float(res[1])
    if len(res) > 3:
        # quad flagged the result; accept it only if the error estimate is still small
        if not np.isfinite(value) or abserr > 1e3 * max(epsabs, epsrel * abs(value)):
            raise QuadratureError(f"quad did not converge on [{a:g}, {b:g}]: {res[3]} (abserr={abserr:.3g})")
        logger.debug("quad on [%g, %g] accepted with abserr=%.3g: %s", a, b, abserr, res[3])
    return value


def resonance_points(centers: Iterable[float], eps: float, a: float, b: float) -> list[float]:
    """Breakpoints at c and c +- m*eps for every peak center c, clipped to (a, b)."""
    pts = set()
    for c in centers:
        for m in _PEAK_OFFSETS:
            for p in (c - m * eps, c + m * eps):
                if a < p < b:
                    pts.add(float(p))
    return sorted(pts)


def uniform_simpson(values: np.ndarray, dx: float) -> float:
    """Composite Simpson rule on a uniform grid (values along axis 0)."""
    return float(simpson(values, dx=dx, axis=0))


__all__ = ["integrate", "resonance_points", "uniform_simpson"]
