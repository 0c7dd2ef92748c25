import math

import numpy as np
import pytest

from config import Config
from core.errors import BudgetExceededError, ValidationError
from models.graph import build_path
from models.operator import DisorderModel, FiniteVolume, realize
from utils.dynamics_calculator import (
    PiecewiseConstant,
    approx_identity_check,
    correlator_decay_bound,
    correlator_mc,
    dynamical_scan,
    edge_distances,
    eig,
    eigenfunction_correlator,
    evolve,
    graf_inequality_check,
    log_time_grid,
    position_moment,
    spectral_projection,
    stone_variant_check,
    verify_correlator,
)


def _symmetric(rng, n):
    a = rng.standard_normal((n, n))
    return 0.5 * (a + a.T)


# ---- Eigendecomposition ----

def test_eig_residual(z2_small):
    m = DisorderModel(**{"lambda": 3.0, "seed": 5})
    h = realize(z2_small, FiniteVolume.whole(z2_small), m, 0)
    ed = eig(h)
    assert ed.dimension == z2_small.n_vertices
    assert np.all(np.diff(ed.eigenvalues) >= 0)
    assert np.max(np.abs(h.dense @ ed.eigenvectors - ed.eigenvectors * ed.eigenvalues)) <= 1e-9 * h.norm_bound
    assert ed.trial == 0


def test_eig_limit(monkeypatch, z2_small):
    monkeypatch.setattr(Config, "EIG_LIMIT", 10)
    h = realize(z2_small, FiniteVolume.whole(z2_small), DisorderModel(**{"lambda": 1.0}), 0)
    with pytest.raises(BudgetExceededError):
        eig(h)


def test_eig_rejects_non_symmetric():
    with pytest.raises(ValidationError):
        eig(np.array([[0.0, 1.0], [0.0, 0.0]]))


def test_projection_is_idempotent(rng):
    ed = eig(_symmetric(rng, 12))
    p = spectral_projection(ed, -0.5, 1.0)
    assert np.allclose(p @ p, p, atol=1e-12)
    assert np.allclose(p, p.T)
    assert round(float(np.trace(p))) == int(ed.selection(-0.5, 1.0).sum())


def test_evolution_preserves_norm(rng):
    ed = eig(_symmetric(rng, 15))
    psi = rng.standard_normal(15)
    psi /= np.linalg.norm(psi)
    for t in (0.0, 0.3, 17.0, 250.0):
        assert abs(np.linalg.norm(evolve(ed, psi, t)) - 1.0) <= 1e-12
    assert np.allclose(evolve(ed, psi, 0.0), psi)


def test_evolution_is_a_group(rng):
    ed = eig(_symmetric(rng, 15))
    psi = rng.standard_normal(15)
    for t1, t2 in ((0.4, 1.1), (-3.0, 7.5), (20.0, 0.0)):
        assert np.allclose(evolve(ed, evolve(ed, psi, t1), t2), evolve(ed, psi, t1 + t2), atol=1e-9)


def test_projection_commutes_with_evolution(rng):
    ed = eig(_symmetric(rng, 12))
    p = spectral_projection(ed, -0.5, 1.0)
    psi = rng.standard_normal(12)
    for t in (0.0, 0.7, 13.0):
        assert np.allclose(p @ evolve(ed, psi, t), evolve(ed, p @ psi, t), atol=1e-12)


def test_position_moment():
    g = build_path(7)
    psi = np.zeros(7)
    psi[6] = 1.0
    assert position_moment(g, 3, 1.0, psi) == pytest.approx(3.0)
    assert position_moment(g, 3, 2.0, psi) == pytest.approx(9.0)
    assert position_moment(g, 6, 1.0, psi) == 0.0
    with pytest.raises(ValidationError):
        position_moment(g, 3, -1.0, psi)


def test_log_time_grid():
    grid = log_time_grid()
    assert grid.size == 64
    assert grid[0] == pytest.approx(0.1)
    assert grid[-1] == pytest.approx(200.0)


def test_edge_distances(z2_small):
    dist = edge_distances(z2_small, FiniteVolume.whole(z2_small))
    assert dist[z2_small.index_of((3, 0))] == 0
    assert dist[z2_small.origin] == 3
    path = build_path(9)
    pdist = edge_distances(path, FiniteVolume.whole(path))
    assert pdist.tolist() == [0, 1, 2, 3, 4, 3, 2, 1, 0]


# ---- Dynamical scan ----

def test_scan_reports_one_curve_per_trial(path21):
    fv = FiniteVolume.whole(path21)
    psi = np.zeros(fv.size)
    psi[10] = 1.0
    grid = log_time_grid(0.1, 10.0, 8)
    reports = dynamical_scan(path21, fv, DisorderModel(**{"lambda": 5.0}), (-10.0, 20.0), 10, 1.0, psi, grid, 3)
    assert [r.trial for r in reports] == [0, 1, 2]
    for r in reports:
        assert len(r.moments) == 8
        assert r.supremum == max(r.moments)
        assert r.max_norm_error <= 1e-9


def test_scan_rejects_states_near_the_edge(path21):
    fv = FiniteVolume.whole(path21)
    psi = np.zeros(fv.size)
    psi[1] = 1.0
    with pytest.raises(ValidationError):
        dynamical_scan(path21, fv, DisorderModel(**{"lambda": 5.0}), (-10.0, 20.0), 1, 1.0, psi, [1.0], 1)


@pytest.mark.slow
def test_weak_disorder_spreads_further_than_strong():
    g = build_path(400)
    fv = FiniteVolume.whole(g)
    o = 200
    psi = np.zeros(fv.size)
    psi[o] = 1.0
    grid = log_time_grid()

    def median_sup(lam):
        m = DisorderModel(**{"lambda": lam, "seed": 11})
        reports = dynamical_scan(g, fv, m, (-11.0, 15.0), o, 1.0, psi, grid, 20)
        return float(np.median([r.supremum for r in reports]))

    assert median_sup(0.1) >= 10 * median_sup(10.0)


# ---- Quadrature lemmas ----

def test_piecewise_constant():
    f = PiecewiseConstant((0.0, 2.0), (1.0, 3.0, -1.0))
    assert f(-1.0) == 1.0
    assert f(0.0) == 3.0
    assert f(5.0) == -1.0
    assert f.left_limit(0.0) == 1.0
    assert f.right_limit(0.0) == 3.0
    assert f.midpoint_limit(2.0) == 1.0
    with pytest.raises(ValidationError):
        PiecewiseConstant((0.0,), (1.0,))
    with pytest.raises(ValidationError):
        PiecewiseConstant((1.0, 0.0), (1.0, 2.0, 3.0))


def test_approx_identity_at_a_jump():
    step = PiecewiseConstant((0.0,), (0.0, 1.0))
    for eps, value in approx_identity_check(step, 0.0, [1.0, 0.1, 1e-3]):
        assert value == pytest.approx(0.5, abs=1e-9)


def test_approx_identity_converges_away_from_jumps():
    step = PiecewiseConstant((0.0,), (0.0, 1.0))
    results = approx_identity_check(step, 1.0, [0.1, 0.01, 1e-3])
    errors = [abs(v - 1.0) for _, v in results]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] == pytest.approx(1e-3 / math.pi, rel=1e-3)
    with pytest.raises(ValidationError):
        approx_identity_check(step, 1.0, [0.0])


def test_stone_variant_counts_endpoint_eigenvalues_half():
    ed = eig(np.diag([0.0, 1.0]))
    results = stone_variant_check(ed, None, 0.0, 0.5, np.array([1.0, 0.0]), [1e-2, 1e-3, 1e-4])
    assert all(target == 0.5 for _, _, target in results)
    errors = [abs(lhs - target) for _, lhs, target in results]
    assert all(b < a for a, b in zip(errors, errors[1:]))
    assert errors[-1] <= 1e-2


def test_stone_variant_inside_the_interval(rng):
    ed = eig(_symmetric(rng, 6))
    psi = rng.standard_normal(6)
    e = ed.eigenvalues
    a, b = 0.5 * (e[0] + e[1]), 0.5 * (e[3] + e[4])
    [(_, lhs, target)] = stone_variant_check(ed, None, a, b, psi, [1e-5])
    assert lhs == pytest.approx(target, abs=1e-3 * np.dot(psi, psi))


@pytest.mark.slow
def test_graf_inequality(rng):
    for _ in range(10):
        ed = eig(_symmetric(rng, 20))
        a, b = ed.eigenvalues.min() - 100.0, ed.eigenvalues.max() + 100.0
        proj = np.diag(np.r_[np.ones(10), np.zeros(10)])
        psi = rng.standard_normal(20)
        psi /= np.linalg.norm(psi)
        for eps, lhs, rhs in graf_inequality_check(ed, proj, a, b, psi, [0.1, 0.01]):
            assert lhs <= rhs + 1e-3


def test_graf_rejects_mismatched_projection(rng):
    ed = eig(_symmetric(rng, 4))
    with pytest.raises(ValidationError):
        graf_inequality_check(ed, np.eye(3), -10.0, 10.0, np.ones(4), [0.1])


# ---- Eigenfunction correlator ----

def test_correlator_on_the_diagonal_is_one(path21):
    fv = FiniteVolume.whole(path21)
    ed = eig(realize(path21, fv, DisorderModel(**{"lambda": 2.0}), 0))
    assert eigenfunction_correlator(ed, fv, -100.0, 100.0, 7, 7) == pytest.approx(1.0, abs=1e-12)
    assert eigenfunction_correlator(ed, fv, -100.0, 100.0, 7, 9) <= 1.0 + 1e-12


def test_correlator_bound_holds_at_large_disorder(path21):
    fv = FiniteVolume.whole(path21)
    m = DisorderModel(**{"lambda": 10.0, "seed": 3})
    interval = (-11.0, 15.0)
    est = correlator_mc(path21, fv, m, interval, 10, 12, 20)
    assert est.kind == "correlator"
    assert est.d == 2
    report = verify_correlator(est, path21, fv, m, 0.5, interval)
    assert report.passed
    assert report.lam == 10.0


def test_correlator_decay_bound_on_three_sites():
    g = build_path(3)
    fv = FiniteVolume.whole(g)
    # C = sqrt(2), C' = 4; sites contribute 1 (k = x) and sqrt(2) * sqrt(2 * 1) at each end.
    assert correlator_decay_bound(g, fv, 1, 1, 0.5, 4.0, 0.5, 0.0, 1.0) == pytest.approx(20.0, rel=1e-12)
    assert correlator_decay_bound(g, fv, 1, 1, 0.5, 4.0, 0.5, -1.0, 1.0) == pytest.approx(40.0, rel=1e-12)
    with pytest.raises(ValidationError):
        correlator_decay_bound(g, fv, 1, 1, 0.5, 4.0, 0.5, 1.0, 1.0)
