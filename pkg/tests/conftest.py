import os
import sys

import numpy as np
import pytest

# Ensure project root is on sys.path so tests import the flat packages directly
sys.path.insert(0, os.path.abspath(os.path.join(os.path.dirname(__file__), '..')))

from models.graph import build_lattice_box, build_path  # noqa: E402
from repositories.run_repo import RunRepository  # noqa: E402
from services.experiment_service import ExperimentService  # noqa: E402


@pytest.fixture
def chain():
    """Z truncated to [-20, 20]."""
    return build_lattice_box(1, 20)


@pytest.fixture
def path21():
    return build_path(21)


@pytest.fixture
def z2_small():
    return build_lattice_box(2, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture
def service(tmp_path):
    return ExperimentService(runs=RunRepository(tmp_path / "runs"))


@pytest.fixture
def write_config(tmp_path):
    def _write(text: str, name: str = "experiment.cfg"):
        p = tmp_path / name
        p.write_text(text, encoding="utf-8")
        return p

    return _write
