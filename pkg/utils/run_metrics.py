"""Per-run timing metrics.

A run (one experiment dispatch) collects linear-solve and eigensolver timings
so the CLI can log a one-line summary:

    run <id> -> <kind> | total=..ms solves=N/..ms eig=N/..ms

The current run lives in a context variable. Worker threads record into it when
their task was submitted through ``contextvars.copy_context().run`` (see
utils/trial_pool.py); outside a run every recorder is a no-op.
"""
from __future__ import annotations

import contextvars
import dataclasses
import threading
import time
from typing import Any, Dict, List, Optional


@dataclasses.dataclass
class SolveCall:
    dimension: int
    duration_ms: float
    trial: Optional[int] = None


@dataclasses.dataclass
class EigCall:
    dimension: int
    duration_ms: float
    trial: Optional[int] = None


@dataclasses.dataclass
class RunMetrics:
    run_id: str
    kind: str
    started_ts: float
    solves: List[SolveCall]
    eig: List[EigCall]
    total_ms: Optional[float] = None
    _lock: threading.Lock = dataclasses.field(default_factory=threading.Lock, repr=False)

    def summarize(self) -> Dict[str, Any]:
        with self._lock:
            solve_ms = sum(c.duration_ms for c in self.solves)
            eig_ms = sum(c.duration_ms for c in self.eig)
            n_solves, n_eig = len(self.solves), len(self.eig)
        total = self.total_ms
        if total is None:
            total = (time.perf_counter() - self.started_ts) * 1000.0
        return {
            "run_id": self.run_id,
            "kind": self.kind,
            "total_ms": total,
            "solve_ms": solve_ms,
            "solve_count": n_solves,
            "eig_ms": eig_ms,
            "eig_count": n_eig,
        }


_current: contextvars.ContextVar[Optional[RunMetrics]] = contextvars.ContextVar("run_metrics", default=None)


def start_run(run_id: str, kind: str) -> RunMetrics:
    rm = RunMetrics(run_id=run_id, kind=kind, started_ts=time.perf_counter(), solves=[], eig=[])
    _current.set(rm)
    return rm


def finish_run() -> Optional[Dict[str, Any]]:
    rm = _current.get()
    if rm is None:
        return None
    rm.total_ms = (time.perf_counter() - rm.started_ts) * 1000.0
    _current.set(None)
    return rm.summarize()


def record_solve(dimension: int, *, duration_ms: float, trial: Optional[int] = None) -> None:
    rm = _current.get()
    if rm is None:
        return
    with rm._lock:
        rm.solves.append(SolveCall(dimension=dimension, duration_ms=duration_ms, trial=trial))


def record_eig(dimension: int, *, duration_ms: float, trial: Optional[int] = None) -> None:
    rm = _current.get()
    if rm is None:
        return
    with rm._lock:
        rm.eig.append(EigCall(dimension=dimension, duration_ms=duration_ms, trial=trial))


def current() -> Optional[RunMetrics]:
    return _current.get()


def format_summary(s: Dict[str, Any]) -> str:
    return (
        f"run {s['run_id']} -> {s['kind']} | total={s['total_ms']:.1f}ms "
        f"solves={s['solve_count']}/{s['solve_ms']:.1f}ms eig={s['eig_count']}/{s['eig_ms']:.1f}ms"
    )
