"""Pydantic result records produced by the calculators.

These are the rows and summaries written by the run repository. Numeric
payloads are plain floats/ints so that identical runs serialize to identical
bytes.
"""
from __future__ import annotations

from datetime import datetime
from typing import Any, Literal, Optional

from pydantic import BaseModel, Field, field_validator, model_validator


class SawTable(BaseModel):
    """Exact self-avoiding walk counts c_x(0..n_max) from one vertex.

    Counts for n > clean_radius are exact for the finite graph but are not
    trusted as infinite-graph quantities (see ``is_clean``).
    """

    origin: int
    counts: list[int]
    clean_radius: int
    max_degree: int = 0
    origin_degree: Optional[int] = None

    @field_validator("counts")
    @classmethod
    def _starts_at_one(cls, v):
        if not v or v[0] != 1:
            raise ValueError("c(0) must be 1")
        if any(c < 0 for c in v):
            raise ValueError("walk counts are non-negative")
        return v

    @model_validator(mode="after")
    def _growth_within_degree(self):
        c = self.counts
        if self.origin_degree is not None and len(c) > 1 and c[1] != self.origin_degree:
            raise ValueError(f"c(1) = {c[1]} but the origin has degree {self.origin_degree}")
        if self.max_degree > 0:
            for n in range(len(c) - 1):
                if c[n + 1] > c[n] * self.max_degree:
                    raise ValueError(f"c({n + 1}) = {c[n + 1]} exceeds c({n}) * max degree {self.max_degree}")
        return self

    @property
    def n_max(self) -> int:
        return len(self.counts) - 1

    def is_clean(self, n: int) -> bool:
        return n <= self.clean_radius

    @property
    def clean_counts(self) -> list[int]:
        return self.counts[: min(self.n_max, self.clean_radius) + 1]

    def rows(self) -> list[dict[str, Any]]:
        return [{"n": n, "c_n": c, "clean": self.is_clean(n)} for n, c in enumerate(self.counts)]


Verdict = Literal["converging", "diverging", "inconclusive"]


class AssumptionReport(BaseModel):
    """Partial sums of an Assumption series with a ratio-test verdict.

    The verdict is a finite-data heuristic: ``converging`` if every shell
    ratio in the trailing window is below 1 - tolerance, ``diverging`` if
    every one is above 1 + tolerance, else ``inconclusive``.
    """

    which: Literal["alpha", "beta"]
    parameter: float = Field(..., gt=0, lt=1)
    truncation_radius: int
    partial_sums: list[float]
    shell_ratios: list[Optional[float]]
    verdict: Verdict
    estimated_critical: Optional[float] = None
    window: int
    tolerance: float
    p: Optional[float] = None
    heuristic: bool = True
    note: str = ""

    @field_validator("partial_sums")
    @classmethod
    def _non_decreasing(cls, v):
        for a, b in zip(v, v[1:]):
            if b < a * (1 - 1e-12) - 1e-300:
                raise ValueError("partial sums must be non-decreasing")
        return v

    def rows(self) -> list[dict[str, Any]]:
        return [
            {"R": r, "partial_sum": s, "shell_ratio": q, "verdict": self.verdict}
            for r, (s, q) in enumerate(zip(self.partial_sums, self.shell_ratios))
        ]


class MomentEstimate(BaseModel):
    """Monte Carlo mean and standard error of a Green-function moment."""

    kind: Literal["fractional", "second", "correlator"]
    x: int
    y: int
    d: int
    order: float
    mean: float = Field(..., ge=0)
    stderr: float = Field(..., ge=0)
    trials: int = Field(..., ge=2)
    z_re: float = 0.0
    z_im: float = 0.0
    clean: bool = True


class BoundReport(BaseModel):
    """One-sided comparison of a moment estimate with its closed-form bound."""

    estimate: MomentEstimate
    bound_value: float
    C: float
    C_prime: float
    d: int
    c_xd: int
    k: float
    prefactor: float = 1.0
    passed: bool
    large_disorder: bool = False
    lam: Optional[float] = None
    # Spectral s used in C; differs from estimate.order for second moments.
    s: Optional[float] = None

    @model_validator(mode="after")
    def _large_disorder_means_contraction(self):
        if self.large_disorder and not self.C < 1:
            raise ValueError(f"large-disorder mode declared but C = {self.C:.6g} >= 1")
        return self

    def row(self, run_id: str) -> dict[str, Any]:
        e = self.estimate
        return {
            "run_id": run_id,
            "x": e.x,
            "y": e.y,
            "d": self.d,
            "c_xd": self.c_xd,
            "order": e.order,
            "s": self.s,
            "lambda": self.lam,
            "z_re": e.z_re,
            "z_im": e.z_im,
            "trials": e.trials,
            "mean": e.mean,
            "stderr": e.stderr,
            "C": self.C,
            "C_prime": self.C_prime,
            "bound": self.bound_value,
            "passed": self.passed,
            "kind": e.kind,
        }


class DynamicsReport(BaseModel):
    """Position-moment curve of one disorder trial on a time grid."""

    trial: int
    o: int
    p: float = Field(..., ge=0)
    a: float
    b: float
    times: list[float]
    moments: list[float]
    supremum: float = Field(..., ge=0)
    max_norm_error: float = 0.0
    boundary_mass: float = 0.0
    boundary_flag: bool = False

    @field_validator("moments")
    @classmethod
    def _non_negative(cls, v):
        if any(m < 0 for m in v):
            raise ValueError("position moments are non-negative")
        return v

    def rows(self) -> list[dict[str, Any]]:
        return [{"trial": self.trial, "t": t, "moment": m} for t, m in zip(self.times, self.moments)]


class RunRecord(BaseModel):
    """Everything a run wrote, with provenance."""

    run_id: str
    kind: str
    config: dict[str, Any]
    config_hash: str
    version: str
    started_at: datetime
    duration_ms: float
    rows: list[dict[str, Any]] = Field(default_factory=list)
    summary: dict[str, Any] = Field(default_factory=dict)

    def numeric_payload(self) -> dict[str, Any]:
        """The part of the record that must reproduce bit-exactly."""
        return {"rows": [{k: v for k, v in r.items() if k != "run_id"} for r in self.rows], "summary": self.summary}


__all__ = [
    "SawTable",
    "AssumptionReport",
    "MomentEstimate",
    "BoundReport",
    "DynamicsReport",
    "RunRecord",
    "Verdict",
]
