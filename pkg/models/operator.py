"""Finite-volume random Schroedinger operators H = -Laplacian + lambda * V.

- DisorderModel: disorder strength, single-site density and master seed.
- FiniteVolume: ordered vertex set Gamma with an optional depletion set Lambda.
- HamiltonianMatrix: sparse real-symmetric restriction of H to Gamma.

The diagonal always carries the valence of the *infinite* graph, m(x), also
for vertices at the edge of Gamma. Restricting H to Gamma is then the same as
taking a principal submatrix, which is what ``restrict`` does.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Literal, Optional

import numpy as np
import scipy.sparse as sp
from pydantic import BaseModel, Field, field_validator, model_validator

from core.errors import ValidationError
from models.graph import Graph, ball
from utils.rng import vertex_uniforms

logger = logging.getLogger(__name__)


# --- Disorder ---

class UniformDensity(BaseModel):
    """Uniform single-site density on [a, b]."""

    kind: Literal["uniform"] = "uniform"
    a: float = -1.0
    b: float = 1.0

    model_config = {"frozen": True, "extra": "forbid"}

    @model_validator(mode="after")
    def _ordered(self):
        if not self.a < self.b:
            raise ValueError("density support needs a < b")
        return self

    @property
    def sup_norm(self) -> float:
        return 1.0 / (self.b - self.a)

    @property
    def l1_norm(self) -> float:
        return 1.0

    @property
    def support(self) -> tuple[float, float]:
        return self.a, self.b

    def pdf(self, xi):
        xi = np.asarray(xi, dtype=float)
        return np.where((xi >= self.a) & (xi <= self.b), self.sup_norm, 0.0)

    def transform(self, u: np.ndarray) -> np.ndarray:
        """Map U[0,1) draws onto the support."""
        return self.a + (self.b - self.a) * np.asarray(u, dtype=float)


class DisorderModel(BaseModel):
    """lambda, density and master seed of one disorder ensemble.

    Accepts ``lambda`` and ``seed`` as input names (``lambda`` is a keyword in
    Python, so the attribute is ``lam``).
    """

    lam: float = Field(..., gt=0, alias="lambda")
    density: UniformDensity = Field(default_factory=UniformDensity)
    master_seed: int = Field(default=0, alias="seed")

    model_config = {"frozen": True, "extra": "forbid", "populate_by_name": True}

    @field_validator("master_seed")
    @classmethod
    def _seed_fits_64_bits(cls, v):
        if not 0 <= v < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")
        return v

    @property
    def rho_sup(self) -> float:
        return self.density.sup_norm


# --- Volumes ---

@dataclass(frozen=True)
class FiniteVolume:
    """Ordered vertex subset Gamma of a graph, with optional depletion set Lambda."""

    gamma: tuple[int, ...]
    depletion: Optional[frozenset[int]] = None
    index: dict[int, int] = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.gamma:
            raise ValidationError("finite volume is empty")
        idx = {x: i for i, x in enumerate(self.gamma)}
        if len(idx) != len(self.gamma):
            raise ValidationError("finite volume lists a vertex twice")
        object.__setattr__(self, "index", idx)
        if self.depletion is not None:
            stray = [x for x in self.depletion if x not in idx]
            if stray:
                raise ValidationError(f"depletion set is not inside the volume (e.g. vertex {stray[0]})")

    @classmethod
    def ball(cls, g: Graph, center: int, radius: int) -> "FiniteVolume":
        return cls(tuple(ball(g, center, radius)))

    @classmethod
    def whole(cls, g: Graph) -> "FiniteVolume":
        return cls(tuple(g.vertices))

    @property
    def size(self) -> int:
        return len(self.gamma)

    def local(self, x: int) -> int:
        try:
            return self.index[x]
        except KeyError:
            raise ValidationError(f"vertex {x} is not in the finite volume") from None

    def with_depletion(self, vertices: Iterable[int]) -> "FiniteVolume":
        return FiniteVolume(self.gamma, frozenset(vertices))

    def without(self, vertices: Iterable[int]) -> "FiniteVolume":
        """Gamma minus the given vertices (depletion is dropped)."""
        drop = set(vertices)
        return FiniteVolume(tuple(x for x in self.gamma if x not in drop))

    @cached_property
    def depletion_mask(self) -> np.ndarray:
        mask = np.zeros(self.size, dtype=bool)
        if self.depletion:
            mask[[self.index[x] for x in self.depletion]] = True
        return mask


# --- Matrices ---

@dataclass(frozen=True, eq=False)
class HamiltonianMatrix:
    """Sparse H_Gamma (or H_Gamma^Lambda) plus the data it was built from."""

    matrix: sp.csr_matrix
    volume: FiniteVolume
    lam: float
    omega: np.ndarray
    depleted: bool = False
    seed: Optional[int] = None
    trial: Optional[int] = None

    @property
    def dimension(self) -> int:
        return self.matrix.shape[0]

    @cached_property
    def dense(self) -> np.ndarray:
        return self.matrix.toarray()

    @cached_property
    def norm_bound(self) -> float:
        """Max absolute row sum, an upper bound for the operator norm."""
        return float(abs(self.matrix).sum(axis=1).max())

    def is_hermitian(self) -> bool:
        return (self.matrix != self.matrix.T).nnz == 0

    def entry(self, x: int, y: int) -> float:
        return float(self.matrix[self.volume.local(x), self.volume.local(y)])


def sample_potential(m: DisorderModel, fv: FiniteVolume, trial: int) -> np.ndarray:
    """One omega per Gamma vertex, drawn from the (seed, trial) stream.

    The stream is indexed by graph vertex, so the value at x does not depend
    on which volume it is sampled for.
    """
    u = vertex_uniforms(m.master_seed, trial, max(fv.gamma) + 1)
    return m.density.transform(u[np.asarray(fv.gamma)])


def _assemble(g: Graph, fv: FiniteVolume, omega, lam: float, deplete: bool) -> sp.csr_matrix:
    omega = np.asarray(omega, dtype=float)
    if omega.shape != (fv.size,):
        raise ValidationError(f"omega has length {omega.size}, volume has {fv.size} vertices")
    mask = fv.depletion_mask if deplete else None
    rows: list[int] = []
    cols: list[int] = []
    for i, x in enumerate(fv.gamma):
        for y in g.adjacency[x]:
            j = fv.index.get(y)
            if j is None:
                continue
            if mask is not None and mask[i] != mask[j]:
                continue
            rows.append(i)
            cols.append(j)
    diag = np.array([g.full_degrees[x] for x in fv.gamma], dtype=float) + lam * omega
    off = sp.csr_matrix(
        (np.full(len(rows), -1.0), (np.asarray(rows, dtype=np.int64), np.asarray(cols, dtype=np.int64))),
        shape=(fv.size, fv.size),
    )
    return (off + sp.diags(diag)).tocsr()


def assemble(
    g: Graph,
    fv: FiniteVolume,
    omega,
    lam: float,
    *,
    seed: Optional[int] = None,
    trial: Optional[int] = None,
) -> HamiltonianMatrix:
    """H_Gamma = -Laplacian_Gamma + lambda V_Gamma, ignoring any depletion set."""
    mat = _assemble(g, fv, omega, lam, deplete=False)
    return HamiltonianMatrix(mat, fv, float(lam), np.asarray(omega, dtype=float), False, seed, trial)


def assemble_depleted(
    g: Graph,
    fv: FiniteVolume,
    omega,
    lam: float,
    *,
    seed: Optional[int] = None,
    trial: Optional[int] = None,
) -> HamiltonianMatrix:
    """H_Gamma^Lambda: hopping between Lambda and Gamma minus Lambda removed."""
    if not fv.depletion:
        raise ValidationError("depleted assembly needs a non-empty depletion set")
    mat = _assemble(g, fv, omega, lam, deplete=True)
    return HamiltonianMatrix(mat, fv, float(lam), np.asarray(omega, dtype=float), True, seed, trial)


def hopping_difference(full: HamiltonianMatrix, depleted: HamiltonianMatrix) -> sp.csr_matrix:
    """T = Laplacian_Gamma - Laplacian_Gamma^Lambda (= H^Lambda - H): +1 on cut edges."""
    if full.volume.gamma != depleted.volume.gamma:
        raise ValidationError("hopping difference needs matrices on the same volume")
    if full.lam != depleted.lam or not np.array_equal(full.omega, depleted.omega):
        raise ValidationError("hopping difference needs the same disorder realization")
    t = (depleted.matrix - full.matrix).tocsr()
    t.eliminate_zeros()
    return t


def restrict(h: HamiltonianMatrix, vertices: Iterable[int]) -> HamiltonianMatrix:
    """H_{Gamma'} for Gamma' a subset of Gamma, as a principal submatrix."""
    if h.depleted:
        raise ValidationError("restrict the full H_Gamma, not a depleted matrix")
    sub = FiniteVolume(tuple(vertices))
    idx = np.array([h.volume.local(x) for x in sub.gamma], dtype=np.int64)
    mat = h.matrix[idx][:, idx].tocsr()
    return HamiltonianMatrix(mat, sub, h.lam, h.omega[idx], False, h.seed, h.trial)


def realize(g: Graph, fv: FiniteVolume, m: DisorderModel, trial: int) -> HamiltonianMatrix:
    """Sample omega for one trial and assemble H_Gamma."""
    omega = sample_potential(m, fv, trial)
    return assemble(g, fv, omega, m.lam, seed=m.master_seed, trial=trial)


__all__ = [
    "UniformDensity",
    "DisorderModel",
    "FiniteVolume",
    "HamiltonianMatrix",
    "sample_potential",
    "assemble",
    "assemble_depleted",
    "hopping_difference",
    "restrict",
    "realize",
]
