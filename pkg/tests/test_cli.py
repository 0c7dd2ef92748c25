import csv
import json

import pytest

import app
from config import Config
from core.errors import ConfigError
from models.graph import build_lattice_box
from repositories.run_repo import RunRepository
from schemas.experiment import config_from_mapping, parse_config_text
from schemas.results import RunRecord
from services.experiment_service import decay_fit, render_report, resolve_vertex
from utils.clock import now_utc
from utils.run_metrics import format_summary

BOUNDS_CFG = """\
# chain at large disorder
kind=bounds
volume.family=path
volume.params=41
lambda=10
spectral.z_re=1
spectral.z_im=0.5
spectral.s=0.5
targets.x=20
targets.distances=0,1,2,3
trials=200
seed=7
"""


# ---- Config parsing ----

def test_parse_config_text():
    cfg = parse_config_text(BOUNDS_CFG)
    assert cfg.kind == "bounds"
    assert cfg.lam == 10.0
    assert cfg.volume.params == [41]
    assert cfg.targets.distances == [0, 1, 2, 3]
    assert cfg.spectral.z == complex(1, 0.5)
    assert cfg.config_hash() == parse_config_text(BOUNDS_CFG).config_hash()


def test_unknown_key_is_reported_with_its_line():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("kind=graph\nvolume.family=path\nvolume.colour=red\n")
    assert exc.value.key == "volume.colour"
    assert exc.value.line == 3
    assert "volume.colour" in str(exc.value)


def test_duplicate_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("kind=graph\nkind=saw\n")
    assert exc.value.key == "kind"
    assert exc.value.line == 2


def test_missing_lambda():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("kind=moments\nvolume.family=path\nvolume.params=21\n")
    assert "lambda" in str(exc.value)


def test_bad_lambda_value_names_the_key():
    with pytest.raises(ConfigError) as exc:
        parse_config_text("kind=moments\nvolume.family=path\nlambda=-2\n")
    assert exc.value.key == "lambda"
    assert exc.value.line == 3


def test_lemmas_need_no_volume():
    cfg = config_from_mapping({"kind": "lemmas", "lemmas.which": "approx"})
    assert cfg.volume is None
    assert cfg.lemmas.epsilons == [1e-1, 1e-2, 1e-3, 1e-4]


def test_resolve_vertex_accepts_labels_and_ids():
    g = build_lattice_box(2, 2)
    assert resolve_vertex(g, "0,0", 5) == g.origin
    assert resolve_vertex(g, "(1,-1)", 5) == g.index_of((1, -1))
    assert resolve_vertex(g, "3", 5) == 3
    assert resolve_vertex(g, None, 5) == 5


# ---- Option mapping ----

def test_options_to_mapping():
    args = app.build_parser().parse_args(
        ["bounds", "verify", "--family", "path", "--param", "41", "--lambda", "10", "--distances", "0", "1",
         "--large-disorder"]
    )
    flat = app.options_to_mapping("bounds verify", args)
    assert flat == {
        "kind": "bounds",
        "volume.family": "path",
        "volume.params": "41",
        "lambda": "10.0",
        "targets.distances": "0,1",
        "large_disorder": "true",
    }


def test_interval_option_splits_into_two_keys():
    args = app.build_parser().parse_args(
        ["dynamics", "scan", "--family", "path", "--param", "101", "--lambda", "5", "--interval", "-1", "3"]
    )
    flat = app.options_to_mapping("dynamics scan", args)
    assert flat["dynamics.a"] == "-1.0"
    assert flat["dynamics.b"] == "3.0"
    assert config_from_mapping(flat).dynamics.b == 3.0


# ---- main ----

def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_run_writes_csv_and_json(service, write_config, tmp_path, capsys):
    cfg = write_config(BOUNDS_CFG)
    assert app.main(["run", str(cfg)], service=service) == 0
    out = capsys.readouterr().out
    assert "PASS" in out
    [csv_path] = (tmp_path / "runs").glob("*.csv")
    rows = _read_csv(csv_path)
    assert len(rows) == 4
    assert list(rows[0])[:4] == ["run_id", "x", "y", "d"]
    assert all(r["passed"] == "True" for r in rows)
    record = RunRepository.loads(csv_path.with_suffix(".json").read_text())
    assert record.kind == "bounds"
    assert record.summary["all_passed"] is True


def test_runs_reproduce(service, write_config):
    cfg = write_config(BOUNDS_CFG)
    first = service.run(cfg)
    second = service.run(cfg)
    assert first.numeric_payload() == second.numeric_payload()
    assert first.config_hash == second.config_hash


def test_output_path_override(service, write_config, tmp_path):
    target = tmp_path / "out" / "chain.csv"
    cfg = write_config(BOUNDS_CFG + f"output={target}\n")
    assert app.main(["run", str(cfg)], service=service) == 0
    assert target.exists()
    assert target.with_suffix(".json").exists()


def test_invalid_key_exits_2(service, write_config, capsys):
    cfg = write_config("kind=graph\nvolume.family=path\nvolume.params=5\nvolum.radius=2\n")
    assert app.main(["run", str(cfg)], service=service) == 2
    err = json.loads(capsys.readouterr().err)
    assert err["errors"][0]["details"]["key"] == "volum"
    assert "volum" in err["errors"][0]["message"]


def test_missing_config_file_exits_2(service, tmp_path):
    assert app.main(["run", str(tmp_path / "absent.cfg")], service=service) == 2


def test_budget_overrun_exits_3(service, monkeypatch, capsys):
    monkeypatch.setattr(Config, "SAW_BUDGET", 10)
    code = app.main(
        ["saw", "count", "--family", "lattice", "--param", "2", "--param", "8", "--nmax", "6"], service=service
    )
    assert code == 3
    err = json.loads(capsys.readouterr().err)
    assert err["errors"][0]["code"] == "budget_exceeded"
    assert err["errors"][0]["details"]["last_completed"] == 1


def test_graph_build(tmp_path, capsys):
    out = tmp_path / "z2.graph"
    assert app.main(["graph", "build", "--family", "lattice", "--param", "2", "--param", "3", "--out", str(out)]) == 0
    payload = json.loads(capsys.readouterr().out)
    assert payload["data"]["n_vertices"] == 49
    assert out.read_text().startswith("graph lattice 2 3\n")


def test_saw_count_on_saved_graph(service, tmp_path, capsys):
    out = tmp_path / "z2.graph"
    app.main(["graph", "build", "--family", "lattice", "--param", "2", "--param", "8", "--out", str(out)])
    capsys.readouterr()
    code = app.main(["saw", "count", "--graph", str(out), "--origin", "0,0", "--nmax", "4"], service=service)
    assert code == 0
    [csv_path] = (tmp_path / "runs").glob("*.csv")
    assert [r["c_n"] for r in _read_csv(csv_path)] == ["1", "4", "12", "36", "100"]


def test_lemmas_via_cli(service, capsys):
    code = app.main(["lemmas", "check", "--which", "stone", "--eps", "0.01", "0.001"], service=service)
    assert code == 0
    record = service.runs.load(next(service.runs.root.glob("*.json")))
    assert record.summary["error_decreasing"] is True
    assert [r["target"] for r in record.rows] == [0.5, 0.5]


def test_threshold_with_known_alpha(service):
    record = service.execute(config_from_mapping({"kind": "threshold", "threshold.alpha_star": "1", "threshold.s": "0.5"}))
    assert record.rows[0]["threshold_alpha"] == pytest.approx(16.0)
    assert 0 < record.summary["optimal_s"] < 1


# ---- report ----

def test_report_shows_verdicts_and_decay_fit(service, write_config, tmp_path, capsys):
    service.run(write_config(BOUNDS_CFG))
    [json_path] = (tmp_path / "runs").glob("*.json")
    assert app.main(["report", str(json_path)], service=service) == 0
    out = capsys.readouterr().out
    assert out.count("PASS") == 4
    assert "decay fit" in out
    assert "within tolerance" in out


def test_decay_fit_slope_is_below_log_c(service, write_config):
    record = service.run(write_config(BOUNDS_CFG))
    slope, log_c = decay_fit(record.rows)
    assert slope <= log_c + 0.1


def test_report_of_empty_record():
    record = RunRecord(
        run_id="r", kind="bounds", config={}, config_hash="h", version="0", started_at=now_utc(), duration_ms=1.0
    )
    assert render_report(record).endswith("no rows")


def test_format_summary():
    text = format_summary(
        {"run_id": "r", "kind": "bounds", "total_ms": 12.0, "solve_ms": 5.0, "solve_count": 3, "eig_ms": 0.0,
         "eig_count": 0}
    )
    assert "r" in text
    assert "3" in text
