"""Locally finite graphs and their finite truncations.

Infinite graphs are handled through finite truncations. Each builder records
the valence every vertex has in the *infinite* graph (``full_degrees``); a
vertex whose truncated degree is smaller is "cut". The clean radius of a
vertex is its distance to the nearest cut vertex: inside that radius balls,
spheres, distances and self-avoiding walk counts coincide with the infinite
graph's.

Vertex handles are dense integers in ``[0, |V|)``; builders expose a
coordinate -> handle lookup through ``Graph.index_of``.
"""
from __future__ import annotations

import itertools
import logging
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.sparse import csgraph

from config import Config
from core.errors import BudgetExceededError, ValidationError

logger = logging.getLogger(__name__)

# Clean radius reported for graphs without any cut vertex.
CLEAN_UNBOUNDED = 2**31 - 1


@dataclass(frozen=True)
class Graph:
    """Immutable locally finite graph (or finite truncation of one).

    Fields:
    - family / params: builder name and its integer parameters.
    - adjacency: per vertex, the sorted tuple of neighbor handles.
    - labels: human-readable coordinate strings.
    - coords: builder coordinates (lattice points, (generation, index), ...).
    - full_degrees: valence in the infinite graph; equals the degree for
      vertices untouched by truncation.
    - origin: the distinguished vertex (lattice center, tree root).
    - truncation_radius: the builder's truncation parameter, None for
      graphs that are finite in their own right.
    """

    family: str
    params: tuple[int, ...]
    adjacency: tuple[tuple[int, ...], ...]
    labels: tuple[str, ...]
    coords: tuple[tuple[int, ...], ...]
    full_degrees: tuple[int, ...]
    origin: int = 0
    truncation_radius: int | None = None
    _distance_cache: dict = field(default_factory=dict, init=False, repr=False, compare=False)

    def __post_init__(self):
        n = len(self.adjacency)
        if not (len(self.labels) == len(self.coords) == len(self.full_degrees) == n):
            raise ValidationError("adjacency, labels, coords and full_degrees must have equal length")
        if n == 0:
            raise ValidationError("graph has no vertices")

    # ---- Basic queries ----
    @property
    def n_vertices(self) -> int:
        return len(self.adjacency)

    @property
    def vertices(self) -> range:
        return range(len(self.adjacency))

    @cached_property
    def _lookup(self) -> dict[tuple[int, ...], int]:
        return {c: i for i, c in enumerate(self.coords)}

    def index_of(self, coord: Sequence[int]) -> int:
        try:
            return self._lookup[tuple(coord)]
        except KeyError:
            raise ValidationError(f"no vertex at {tuple(coord)} in {self.family} graph") from None

    def edges(self) -> list[tuple[int, int]]:
        """Edge list with id1 < id2, sorted."""
        return [(x, y) for x, nbrs in enumerate(self.adjacency) for y in nbrs if x < y]

    @cached_property
    def csr(self) -> sp.csr_matrix:
        rows = np.repeat(np.arange(self.n_vertices), [len(a) for a in self.adjacency])
        cols = np.fromiter(itertools.chain.from_iterable(self.adjacency), dtype=np.int64, count=len(rows))
        data = np.ones(len(rows), dtype=np.int8)
        return sp.csr_matrix((data, (rows, cols)), shape=(self.n_vertices, self.n_vertices))

    @cached_property
    def max_degree(self) -> int:
        return max(len(a) for a in self.adjacency)

    # ---- Distances ----
    def distances_from(self, y: int) -> np.ndarray:
        """BFS levels from y as an int array (read-only, cached)."""
        self._check_vertex(y)
        cached = self._distance_cache.get(y)
        if cached is not None:
            return cached
        dist = csgraph.shortest_path(self.csr, method="D", unweighted=True, indices=y)
        out = dist.astype(np.int64)
        out.setflags(write=False)
        self._distance_cache[y] = out
        return out

    @cached_property
    def cut_vertices(self) -> tuple[int, ...]:
        return tuple(x for x in self.vertices if len(self.adjacency[x]) < self.full_degrees[x])

    @cached_property
    def clean_radii(self) -> np.ndarray:
        """Distance of every vertex to the nearest cut vertex."""
        n = self.n_vertices
        cut = self.cut_vertices
        if not cut:
            out = np.full(n, CLEAN_UNBOUNDED, dtype=np.int64)
            out.setflags(write=False)
            return out
        # Multi-source BFS through an extra vertex joined to every cut vertex.
        hub = sp.csr_matrix(
            (np.ones(len(cut), dtype=np.int8), (np.zeros(len(cut), dtype=np.int64), np.asarray(cut))),
            shape=(1, n),
        )
        augmented = sp.bmat([[self.csr, hub.T], [hub, None]], format="csr")
        dist = csgraph.shortest_path(augmented, method="D", unweighted=True, indices=n)
        out = (dist[:n] - 1).astype(np.int64)
        out.setflags(write=False)
        return out

    def _check_vertex(self, x: int) -> None:
        if not 0 <= int(x) < self.n_vertices:
            raise ValidationError(f"vertex {x} out of range [0, {self.n_vertices})")

    # ---- Invariants ----
    def validate(self) -> None:
        """Check symmetry, loops, duplicate neighbors and connectivity."""
        for x, nbrs in enumerate(self.adjacency):
            if len(set(nbrs)) != len(nbrs):
                raise ValidationError(f"duplicate neighbors at vertex {x}")
            if x in nbrs:
                raise ValidationError(f"loop at vertex {x}")
            if list(nbrs) != sorted(nbrs):
                raise ValidationError(f"unsorted neighbor list at vertex {x}")
            for y in nbrs:
                if x not in self.adjacency[y]:
                    raise ValidationError(f"asymmetric edge {x}-{y}")
            if len(nbrs) > self.full_degrees[x]:
                raise ValidationError(f"vertex {x} has more neighbors than its full valence")
        n_comp, _ = csgraph.connected_components(self.csr, directed=False)
        if n_comp != 1:
            raise ValidationError(f"graph is not connected ({n_comp} components)")


# ---- Queries (module-level API) ----

def graph_distance(g: Graph, x: int, y: int) -> int:
    """Length of the shortest x-y path."""
    g._check_vertex(x)
    return int(g.distances_from(y)[x])


def sphere(g: Graph, y: int, n: int) -> frozenset[int]:
    if n < 0:
        raise ValidationError("sphere radius must be non-negative")
    return frozenset(np.flatnonzero(g.distances_from(y) == n).tolist())


def ball(g: Graph, y: int, radius: int) -> list[int]:
    if radius < 0:
        raise ValidationError("ball radius must be non-negative")
    return np.flatnonzero(g.distances_from(y) <= radius).tolist()


def degree(g: Graph, x: int) -> int:
    g._check_vertex(x)
    return len(g.adjacency[x])


def full_degree(g: Graph, x: int) -> int:
    g._check_vertex(x)
    return g.full_degrees[x]


def clean_radius(g: Graph, x: int) -> int:
    g._check_vertex(x)
    return int(g.clean_radii[x])


# ---- Builders ----

def _check_budget(count: int, family: str) -> None:
    if count > Config.VERTEX_BUDGET:
        raise BudgetExceededError(
            f"{family} graph needs {count} vertices, budget is {Config.VERTEX_BUDGET}"
        )


def from_edges(
    family: str,
    params: Iterable[int],
    edges: Iterable[tuple[int, int]],
    *,
    labels: Sequence[str],
    coords: Sequence[tuple[int, ...]] | None = None,
    full_degrees: Sequence[int] | None = None,
    origin: int = 0,
    truncation_radius: int | None = None,
) -> Graph:
    """Build and validate a Graph from an undirected edge list."""
    n = len(labels)
    _check_budget(n, family)
    nbrs: list[set[int]] = [set() for _ in range(n)]
    for a, b in edges:
        if a == b:
            raise ValidationError(f"loop at vertex {a}")
        nbrs[a].add(b)
        nbrs[b].add(a)
    adjacency = tuple(tuple(sorted(s)) for s in nbrs)
    g = Graph(
        family=family,
        params=tuple(int(p) for p in params),
        adjacency=adjacency,
        labels=tuple(labels),
        coords=tuple(coords) if coords is not None else tuple((i,) for i in range(n)),
        full_degrees=tuple(full_degrees) if full_degrees is not None else tuple(len(a) for a in adjacency),
        origin=origin,
        truncation_radius=truncation_radius,
    )
    g.validate()
    logger.debug("built %s%s: %d vertices, %d cut", family, g.params, n, len(g.cut_vertices))
    return g


def _coord_label(c: tuple[int, ...]) -> str:
    return "(" + ",".join(str(v) for v in c) + ")"


def build_lattice_box(dimension: int, radius: int) -> Graph:
    """l-infinity box of radius `radius` in Z^d with nearest-neighbor edges."""
    if dimension < 1 or radius < 0:
        raise ValidationError("lattice box needs dimension >= 1 and radius >= 0")
    _check_budget((2 * radius + 1) ** dimension, "lattice")
    coords = list(itertools.product(range(-radius, radius + 1), repeat=dimension))
    index = {c: i for i, c in enumerate(coords)}
    edges = []
    for i, c in enumerate(coords):
        for axis in range(dimension):
            if c[axis] < radius:
                nb = c[:axis] + (c[axis] + 1,) + c[axis + 1:]
                edges.append((i, index[nb]))
    return from_edges(
        "lattice",
        (dimension, radius),
        edges,
        labels=[_coord_label(c) for c in coords],
        coords=coords,
        full_degrees=[2 * dimension] * len(coords),
        origin=index[(0,) * dimension],
        truncation_radius=radius,
    )


def build_path(n_vertices: int) -> Graph:
    """A finite path graph (not a truncation: its ends are genuine leaves)."""
    if n_vertices < 2:
        raise ValidationError("path needs at least 2 vertices")
    return from_edges(
        "path",
        (n_vertices,),
        [(i, i + 1) for i in range(n_vertices - 1)],
        labels=[str(i) for i in range(n_vertices)],
        origin=n_vertices // 2,
    )


def build_cycle(n_vertices: int) -> Graph:
    if n_vertices < 3:
        raise ValidationError("cycle needs at least 3 vertices")
    return from_edges(
        "cycle",
        (n_vertices,),
        [(i, (i + 1) % n_vertices) for i in range(n_vertices)],
        labels=[str(i) for i in range(n_vertices)],
    )


def log_tree_offspring(generation: int) -> int:
    """O(g) = log2(g) when log2(g) is a positive integer, else 1."""
    if generation >= 2 and generation & (generation - 1) == 0:
        return generation.bit_length() - 1
    return 1


def _build_rooted_tree(family: str, params: tuple[int, ...], depth: int, offspring) -> Graph:
    coords: list[tuple[int, int]] = [(0, 0)]
    full: list[int] = [offspring(0)]
    edges: list[tuple[int, int]] = []
    frontier = [0]
    for gen in range(1, depth + 1):
        nxt: list[int] = []
        for parent in frontier:
            for _ in range(offspring(gen - 1)):
                child = len(coords)
                coords.append((gen, len(nxt)))
                full.append(1 + offspring(gen))
                edges.append((parent, child))
                nxt.append(child)
        _check_budget(len(coords), family)
        frontier = nxt
    return from_edges(
        family,
        params,
        edges,
        labels=[f"g{gen}.{idx}" for gen, idx in coords],
        coords=coords,
        full_degrees=full,
        origin=0,
        truncation_radius=depth,
    )


def build_log_tree(max_generation: int) -> Graph:
    """Rooted tree with O(g) offspring per generation-g vertex, cut at max_generation.

    The root is generation 0. Vertices of the last generation keep their
    infinite-tree valence in ``full_degrees`` (their children are cut).
    """
    if max_generation < 1:
        raise ValidationError("log tree needs max_generation >= 1")
    return _build_rooted_tree("logtree", (max_generation,), max_generation, log_tree_offspring)


def build_regular_tree(branching: int, depth: int) -> Graph:
    """Rooted tree where every vertex has `branching` children, cut at `depth`."""
    if branching < 2 or depth < 1:
        raise ValidationError("regular tree needs branching >= 2 and depth >= 1")
    return _build_rooted_tree("regulartree", (branching, depth), depth, lambda _g: branching)


def _hub_levels(radius: int) -> list[int]:
    """Hub exponents n >= 3 whose l1-sphere can reach the box of this radius."""
    levels = []
    n = 3
    while 2**n - n <= radius:
        levels.append(n)
        n += 1
    return levels


def build_hub_lattice(radius: int) -> Graph:
    """Z^2 box with extra hub edges from (2^n, 0) to its l1-sphere of radius n.

    A hub level is kept only when the full sphere lies inside the box; hubs
    whose sphere is cut are dropped entirely, so every kept degree is exact.
    """
    if radius < 1:
        raise ValidationError("hub lattice needs radius >= 1")
    _check_budget((2 * radius + 1) ** 2, "hublattice")
    coords = list(itertools.product(range(-radius, radius + 1), repeat=2))
    index = {c: i for i, c in enumerate(coords)}
    edges = []
    for i, (x, y) in enumerate(coords):
        if x < radius:
            edges.append((i, index[(x + 1, y)]))
        if y < radius:
            edges.append((i, index[(x, y + 1)]))

    levels = _hub_levels(radius)
    for n in levels:
        hx = 2**n
        if hx + n > radius:
            continue
        hub = index[(hx, 0)]
        for dx in range(-n, n + 1):
            dy = n - abs(dx)
            for yy in {dy, -dy}:
                edges.append((hub, index[(hx + dx, yy)]))

    full = []
    for x, y in coords:
        m = 4
        for n in levels:
            hx = 2**n
            if (x, y) == (hx, 0):
                m += 4 * n
            elif abs(x - hx) + abs(y) == n:
                m += 1
        full.append(m)

    return from_edges(
        "hublattice",
        (radius,),
        edges,
        labels=[_coord_label(c) for c in coords],
        coords=coords,
        full_degrees=full,
        origin=index[(0, 0)],
        truncation_radius=radius,
    )


BUILDERS = {
    "lattice": build_lattice_box,
    "path": build_path,
    "cycle": build_cycle,
    "logtree": build_log_tree,
    "regulartree": build_regular_tree,
    "hublattice": build_hub_lattice,
}


def build(family: str, *params: int) -> Graph:
    try:
        builder = BUILDERS[family]
    except KeyError:
        raise ValidationError(f"unknown graph family {family!r}; known: {sorted(BUILDERS)}") from None
    return builder(*params)


__all__ = [
    "Graph",
    "CLEAN_UNBOUNDED",
    "graph_distance",
    "sphere",
    "ball",
    "degree",
    "full_degree",
    "clean_radius",
    "from_edges",
    "build_lattice_box",
    "build_path",
    "build_cycle",
    "build_log_tree",
    "build_regular_tree",
    "build_hub_lattice",
    "log_tree_offspring",
    "build",
    "BUILDERS",
]
