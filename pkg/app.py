"""Command-line entry point.

    python app.py run experiment.cfg
    python app.py graph build --family lattice --param 2 --param 8 --out z2.graph
    python app.py saw count --graph z2.graph --origin 0,0 --nmax 6
    python app.py bounds verify --family path --param 201 --lambda 10 --trials 2000
    python app.py report runs/<run_id>.json

Subcommands other than ``graph build`` and ``report`` translate their options
into dotted config keys and go through the same validation as config files.
Exit status: 0 success, 2 config/validation error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
import traceback
from typing import Any, Optional, Sequence

from config import Config
from core.errors import NUMERIC_ERRORS, ConfigError, LabError, ValidationError
from core.response import json_error, json_success
from models.graph import build
from repositories.graph_repo import GraphRepository
from schemas.experiment import config_from_mapping
from services.experiment_service import ExperimentService, render_report

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

_logging_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    global _logging_configured
    if _logging_configured:
        return
    logging.basicConfig(
        level=(level or Config.LOG_LEVEL).upper(),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    _logging_configured = True


# ---- Option -> config key tables ----

_VOLUME_KEYS = {
    "graph": "volume.file",
    "family": "volume.family",
    "param": "volume.params",
    "radius": "volume.radius",
    "center": "volume.center",
}
_RUN_KEYS = {
    "seed": "seed",
    "trials": "trials",
    "workers": "workers",
    "out": "output",
    "density_a": "density.a",
    "density_b": "density.b",
}
_DISORDER_KEYS = {"lam": "lambda", "s": "spectral.s", "z_re": "spectral.z_re", "z_im": "spectral.z_im"}
_TARGET_KEYS = {"x": "targets.x", "y": "targets.y", "distances": "targets.distances", "moment": "moment"}

_COMMAND_KEYS: dict[str, tuple[str, dict[str, str]]] = {
    "saw count": ("saw", {"origin": "saw.origin", "nmax": "saw.n_max"}),
    "saw assumption": (
        "assumption",
        {
            "which": "assumption.which",
            "alpha": "assumption.alpha",
            "beta": "assumption.beta",
            "p": "assumption.p",
            "assumption_radius": "assumption.radius",
            "y": "assumption.y",
            "o": "assumption.o",
            "no_critical": "assumption.critical",
        },
    ),
    "moments estimate": ("moments", {**_DISORDER_KEYS, **_TARGET_KEYS}),
    "bounds verify": ("bounds", {**_DISORDER_KEYS, **_TARGET_KEYS, "large_disorder": "large_disorder"}),
    "dynamics scan": (
        "dynamics",
        {
            "lam": "lambda",
            "interval": "dynamics.a:dynamics.b",
            "p": "dynamics.p",
            "origin": "dynamics.origin",
            "tmin": "dynamics.tmin",
            "tmax": "dynamics.tmax",
            "points": "dynamics.points",
        },
    ),
    "lemmas check": (
        "lemmas",
        {
            "lam": "lambda",
            "which": "lemmas.which",
            "eps": "lemmas.epsilons",
            "a": "lemmas.a",
            "b": "lemmas.b",
            "jumps": "lemmas.jumps",
            "values": "lemmas.values",
            "margin": "lemmas.margin",
        },
    ),
}


def _text(v: Any) -> str:
    if isinstance(v, (list, tuple)):
        return ",".join(_text(x) for x in v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return str(v)


def options_to_mapping(command: str, args: argparse.Namespace) -> dict[str, str]:
    """Flat dotted-key mapping for one subcommand's parsed options."""
    kind, keys = _COMMAND_KEYS[command]
    flat = {"kind": kind}
    for dest, key in {**_VOLUME_KEYS, **_RUN_KEYS, **keys}.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        if dest == "no_critical":
            if v:
                flat[key] = "false"
            continue
        if dest == "large_disorder":
            if v:
                flat[key] = "true"
            continue
        if ":" in key:
            for k, part in zip(key.split(":"), v):
                flat[k] = _text(part)
            continue
        flat[key] = _text(v)
    return flat


# ---- Parser ----

def _add_volume(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("volume")
    g.add_argument("--graph", help="saved graph file")
    g.add_argument("--family", help="graph family to build")
    g.add_argument("--param", type=int, action="append", help="builder parameter (repeatable)")
    g.add_argument("--radius", type=int, help="restrict to the ball of this radius")
    g.add_argument("--center", help="ball center (label or id); default origin")


def _add_run(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("run")
    g.add_argument("--seed", type=int)
    g.add_argument("--trials", type=int)
    g.add_argument("--workers", type=int)
    g.add_argument("--out", help="output directory, or a .csv/.json path")
    g.add_argument("--density-a", dest="density_a", type=float)
    g.add_argument("--density-b", dest="density_b", type=float)


def _add_disorder(p: argparse.ArgumentParser, spectral: bool = True) -> None:
    p.add_argument("--lambda", dest="lam", type=float)
    if spectral:
        p.add_argument("--s", type=float)
        p.add_argument("--z-re", dest="z_re", type=float)
        p.add_argument("--z-im", dest="z_im", type=float)


def _add_targets(p: argparse.ArgumentParser) -> None:
    p.add_argument("--x")
    p.add_argument("--y")
    p.add_argument("--distances", type=int, nargs="+")
    p.add_argument("--moment", choices=["fractional", "second"])


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="loclab", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--log-level", dest="log_level")
    sub = ap.add_subparsers(dest="group", required=True)

    p = sub.add_parser("run", help="run an experiment config file")
    p.add_argument("config")

    p = sub.add_parser("report", help="summarize a run record")
    p.add_argument("record")

    graph = sub.add_parser("graph").add_subparsers(dest="command", required=True)
    p = graph.add_parser("build")
    p.add_argument("--family", required=True)
    p.add_argument("--param", type=int, action="append", default=[])
    p.add_argument("--out", required=True)

    saw = sub.add_parser("saw").add_subparsers(dest="command", required=True)
    p = saw.add_parser("count")
    _add_volume(p)
    _add_run(p)
    p.add_argument("--origin")
    p.add_argument("--nmax", type=int)
    p = saw.add_parser("assumption")
    _add_volume(p)
    _add_run(p)
    p.add_argument("--which", type=int, choices=[1, 2])
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--p", type=float, nargs="+")
    p.add_argument("--assumption-radius", dest="assumption_radius", type=int)
    p.add_argument("--y")
    p.add_argument("--o")
    p.add_argument("--no-critical", dest="no_critical", action="store_true")

    moments = sub.add_parser("moments").add_subparsers(dest="command", required=True)
    p = moments.add_parser("estimate")
    _add_volume(p)
    _add_run(p)
    _add_disorder(p)
    _add_targets(p)

    bounds = sub.add_parser("bounds").add_subparsers(dest="command", required=True)
    p = bounds.add_parser("verify")
    _add_volume(p)
    _add_run(p)
    _add_disorder(p)
    _add_targets(p)
    p.add_argument("--large-disorder", dest="large_disorder", action="store_true")

    dynamics = sub.add_parser("dynamics").add_subparsers(dest="command", required=True)
    p = dynamics.add_parser("scan")
    _add_volume(p)
    _add_run(p)
    _add_disorder(p, spectral=False)
    p.add_argument("--interval", type=float, nargs=2, metavar=("A", "B"))
    p.add_argument("--p", type=float)
    p.add_argument("--origin")
    p.add_argument("--tmin", type=float)
    p.add_argument("--tmax", type=float)
    p.add_argument("--points", type=int)

    lemmas = sub.add_parser("lemmas").add_subparsers(dest="command", required=True)
    p = lemmas.add_parser("check")
    _add_volume(p)
    _add_run(p)
    _add_disorder(p, spectral=False)
    p.add_argument("--which", choices=["approx", "stone", "graf"])
    p.add_argument("--eps", type=float, nargs="+")
    p.add_argument("--a", type=float)
    p.add_argument("--b", type=float)
    p.add_argument("--jumps", type=float, nargs="+")
    p.add_argument("--values", type=float, nargs="+")
    p.add_argument("--margin", type=float)
    return ap


# ---- Dispatch ----

def _emit(payload: dict) -> None:
    print(json.dumps(payload, indent=2))


def _dispatch(args: argparse.Namespace, service: ExperimentService) -> None:
    if args.group == "report":
        print(service.report(args.record))
        return
    if args.group == "graph":
        g = build(args.family, *args.param)
        path = GraphRepository().save(g, args.out)
        _emit(json_success({"path": str(path), "n_vertices": g.n_vertices, "n_edges": len(g.edges())}))
        return
    if args.group == "run":
        record = service.run(args.config)
    else:
        command = f"{args.group} {args.command}"
        record = service.execute(config_from_mapping(options_to_mapping(command, args)))
    csv_path, json_path = service.runs.paths(record, record.config.get("output"))
    print(render_report(record))
    print(f"wrote {csv_path} and {json_path}")


def main(argv: Optional[Sequence[str]] = None, *, service: Optional[ExperimentService] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.log_level)
    service = service or ExperimentService()
    try:
        _dispatch(args, service)
    except (ConfigError, ValidationError) as exc:
        details = {"line": getattr(exc, "line", None), "key": getattr(exc, "key", None)}
        print(json.dumps(json_error(str(exc), code=exc.code, details=details)), file=sys.stderr)
        return EXIT_CONFIG
    except NUMERIC_ERRORS as exc:
        details = {
            k: getattr(exc, k) for k in ("trial", "residual", "last_completed") if getattr(exc, k, None) is not None
        }
        if Config.SHOW_DETAILED_ERRORS:
            details["traceback"] = traceback.format_exc()
        print(json.dumps(json_error(str(exc), code=exc.code, details=details)), file=sys.stderr)
        return EXIT_NUMERIC
    except LabError as exc:
        print(json.dumps(json_error(str(exc), code=exc.code)), file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
