"""Line-oriented text persistence for graphs.

Format:
    graph <family> <param> <param> ...
    v <id> <label>
    e <id1> <id2>        (id1 < id2)

Known families are rebuilt from the header on load (so the infinite-graph
valences survive the round trip) and the stored edge list is checked against
the rebuilt graph. Unknown families load as plain finite graphs.
"""
from __future__ import annotations

import logging
import os
import tempfile
from pathlib import Path

from core.errors import ValidationError
from models.graph import BUILDERS, Graph, build, from_edges

logger = logging.getLogger(__name__)


class GraphRepository:
    """Reads and writes graphs in the text format above."""

    def __init__(self, root: str | os.PathLike | None = None):
        self._root = Path(root) if root is not None else None

    def _path(self, path: str | os.PathLike) -> Path:
        p = Path(path)
        return p if self._root is None or p.is_absolute() else self._root / p

    # ---- Write ----
    @staticmethod
    def dumps(g: Graph) -> str:
        lines = ["graph " + " ".join([g.family, *(str(p) for p in g.params)])]
        lines += [f"v {i} {label}" for i, label in enumerate(g.labels)]
        lines += [f"e {a} {b}" for a, b in g.edges()]
        return "\n".join(lines) + "\n"

    def save(self, g: Graph, path: str | os.PathLike) -> Path:
        target = self._path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=target.parent, prefix=".graph-", suffix=".tmp")
        try:
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                fh.write(self.dumps(g))
            os.replace(tmp, target)
        except Exception:
            try:
                os.unlink(tmp)
            except OSError:
                pass
            raise
        logger.info("saved %s graph (%d vertices) to %s", g.family, g.n_vertices, target)
        return target

    # ---- Read ----
    @staticmethod
    def loads(text: str) -> Graph:
        family: str | None = None
        params: list[int] = []
        labels: dict[int, str] = {}
        edges: list[tuple[int, int]] = []
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line:
                continue
            tag, _, rest = line.partition(" ")
            try:
                if tag == "graph":
                    parts = rest.split()
                    family, params = parts[0], [int(p) for p in parts[1:]]
                elif tag == "v":
                    vid, _, label = rest.partition(" ")
                    labels[int(vid)] = label
                elif tag == "e":
                    a, b = (int(t) for t in rest.split())
                    if a >= b:
                        raise ValidationError(f"line {lineno}: edge ids must satisfy id1 < id2")
                    edges.append((a, b))
                else:
                    raise ValidationError(f"line {lineno}: unknown record {tag!r}")
            except (ValueError, IndexError):
                raise ValidationError(f"line {lineno}: malformed {tag!r} record") from None
        if family is None:
            raise ValidationError("missing 'graph' header")
        if sorted(labels) != list(range(len(labels))):
            raise ValidationError("vertex ids must be dense in [0, |V|)")

        if family in BUILDERS:
            g = build(family, *params)
            if g.n_vertices != len(labels) or sorted(edges) != g.edges():
                raise ValidationError(f"stored {family} graph does not match its builder output")
            return g
        return from_edges(family, params, edges, labels=[labels[i] for i in range(len(labels))])

    def load(self, path: str | os.PathLike) -> Graph:
        source = self._path(path)
        try:
            text = source.read_text(encoding="utf-8")
        except OSError as exc:
            raise ValidationError(f"cannot read graph file {source}: {exc.strerror}") from None
        g = self.loads(text)
        logger.debug("loaded %s graph (%d vertices) from %s", g.family, g.n_vertices, source)
        return g


__all__ = ["GraphRepository"]
