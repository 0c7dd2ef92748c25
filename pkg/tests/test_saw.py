import math

import pytest
from pydantic import ValidationError as PydanticValidationError

from core.errors import BudgetExceededError, DegenerateDataError, InconclusiveError, NotCleanError, ValidationError
from models.graph import (
    ball,
    build_cycle,
    build_hub_lattice,
    build_lattice_box,
    build_log_tree,
    build_regular_tree,
    degree,
    from_edges,
)
from schemas.results import SawTable
from saw_oracle import brute_force_counts
from utils.green_calculator import theorem1_constants
from utils.saw_calculator import (
    assumption1_partial_sum,
    assumption1_series,
    assumption2_partial_sum,
    connective_estimate,
    count_saws,
    critical_parameter_estimate,
    localization_threshold,
    optimal_threshold,
    ratio_verdict,
    sphere_growth_classify,
)


# ---- Exact counts ----

def test_chain_counts(chain):
    t = count_saws(chain, chain.origin, 10)
    assert t.counts == [1] + [2] * 10
    assert t.counts == brute_force_counts(chain.adjacency, chain.origin, 10)


def test_four_cycle_counts():
    g = build_cycle(4)
    t = count_saws(g, 0, 5)
    assert t.counts == [1, 2, 2, 2, 0, 0]
    assert t.counts == brute_force_counts(g.adjacency, 0, 5)


def test_square_lattice_counts():
    g = build_lattice_box(2, 8)
    t = count_saws(g, g.origin, 6)
    assert t.counts[1:5] == [4, 12, 36, 100]
    assert t.counts == brute_force_counts(g.adjacency, g.origin, 6)


def test_square_lattice_interior_vertex_matches_oracle():
    g = build_lattice_box(2, 8)
    x = g.index_of((2, -1))
    assert count_saws(g, x, 6).counts == brute_force_counts(g.adjacency, x, 6)


def test_log_tree_matches_oracle():
    g = build_log_tree(20)
    for x in (g.origin, g.index_of((9, 0)), g.index_of((17, 3))):
        assert count_saws(g, x, 8).counts == brute_force_counts(g.adjacency, x, 8)


def test_hub_lattice_matches_oracle():
    g = build_hub_lattice(20)
    for coord in ((0, 0), (6, 0), (8, 0)):
        x = g.index_of(coord)
        assert count_saws(g, x, 6).counts == brute_force_counts(g.adjacency, x, 6)


def test_clean_flags(z2_small):
    t = count_saws(z2_small, z2_small.origin, 5)
    assert [r["clean"] for r in t.rows()] == [True, True, True, True, False, False]
    assert t.clean_counts == t.counts[:4]


def test_budget_reports_last_completed_length():
    g = build_lattice_box(2, 8)
    # lengths 1 and 2 use 4 + 16 extensions; length 3 needs 52 more
    with pytest.raises(BudgetExceededError) as exc:
        count_saws(g, g.origin, 6, budget=50)
    assert exc.value.last_completed == 2


def test_count_saws_rejects_negative_length(chain):
    with pytest.raises(ValidationError):
        count_saws(chain, chain.origin, -1)


def test_log_tree_root_counts():
    g = build_log_tree(20)
    t = count_saws(g, g.origin, 6)
    # a single spine down to generation 4, which has two children
    assert t.counts[4] == 1
    assert t.counts[5] == 2


def test_table_records_origin_degree(z2_small):
    t = count_saws(z2_small, z2_small.origin, 3)
    assert t.origin_degree == degree(z2_small, z2_small.origin) == t.counts[1]
    assert t.max_degree == 4


def test_table_rejects_growth_beyond_max_degree():
    with pytest.raises(PydanticValidationError):
        SawTable(origin=0, counts=[1, 4, 100], clean_radius=5, max_degree=4)
    with pytest.raises(PydanticValidationError):
        SawTable(origin=0, counts=[1, 3, 6], clean_radius=5, max_degree=4, origin_degree=4)
    # without a degree the growth check is off
    assert SawTable(origin=0, counts=[1, 4, 100], clean_radius=5).n_max == 2


def test_counts_shrink_on_a_subgraph():
    g = build_lattice_box(2, 8)
    keep = ball(g, g.origin, 3)
    pos = {v: i for i, v in enumerate(keep)}
    sub = from_edges(
        "custom",
        (),
        [(pos[a], pos[b]) for a, b in g.edges() if a in pos and b in pos],
        labels=[g.labels[v] for v in keep],
        origin=pos[g.origin],
    )
    inner = count_saws(sub, sub.origin, 6).counts
    outer = count_saws(g, g.origin, 6).counts
    assert inner == brute_force_counts(sub.adjacency, sub.origin, 6)
    assert all(a <= b for a, b in zip(inner, outer))
    assert inner[:3] == outer[:3]
    assert inner[6] < outer[6]


# ---- Connective constant ----

def test_connective_estimate_square_lattice():
    g = build_lattice_box(2, 8)
    mu = connective_estimate(count_saws(g, g.origin, 8))
    assert mu[0] == 4.0
    assert mu[1] == pytest.approx(math.sqrt(12))
    assert 2.6 < mu[-1] < 3.0


def test_connective_estimate_needs_data(chain):
    with pytest.raises(DegenerateDataError):
        connective_estimate(count_saws(chain, chain.origin, 1))


# ---- Series ----

@pytest.mark.parametrize(
    "terms,verdict",
    [
        ([0.5**n for n in range(8)], "converging"),
        ([2.0**n for n in range(8)], "diverging"),
        ([1.0] * 8, "inconclusive"),
        ([1.0, 0.5], "inconclusive"),
    ],
)
def test_ratio_verdict(terms, verdict):
    assert ratio_verdict(terms, 3, 0.02) == verdict


def test_assumption1_on_chain(chain):
    rep = assumption1_partial_sum(chain, chain.origin, 0.5, 10)
    # shell n >= 1: two vertices, two walks each
    expected = 1 + sum(4 * 0.5**n for n in range(1, 11))
    assert rep.partial_sums[-1] == pytest.approx(expected)
    assert rep.verdict == "converging"
    assert rep.heuristic
    assert rep.shell_ratios[0] is None
    assert all(b >= a for a, b in zip(rep.partial_sums, rep.partial_sums[1:]))


def test_assumption1_partial_sums_are_monotone():
    g = build_lattice_box(2, 8)
    short = assumption1_partial_sum(g, g.origin, 0.3, 2)
    long = assumption1_partial_sum(g, g.origin, 0.3, 4)
    assert long.partial_sums[:3] == pytest.approx(short.partial_sums)
    assert long.partial_sums[-1] > short.partial_sums[-1]
    larger_alpha = assumption1_partial_sum(g, g.origin, 0.6, 4)
    assert all(a < b for a, b in zip(long.partial_sums[1:], larger_alpha.partial_sums[1:]))
    assert long.partial_sums[0] == larger_alpha.partial_sums[0] == 1.0


def test_square_lattice_diverges_at_large_alpha():
    g = build_lattice_box(2, 12)
    rep = assumption1_partial_sum(g, g.origin, 0.9, 6)
    # shell n contributes 4n c(n) 0.9^n; the trailing ratios are about 3.3, 3.2 and 3.0
    assert rep.verdict == "diverging"
    assert all(r > 1.02 for r in rep.shell_ratios[-3:])


def test_assumption1_refuses_unclean_shells(z2_small):
    with pytest.raises(NotCleanError):
        assumption1_series(z2_small, z2_small.origin, 3)


def test_chain_critical_alpha(chain):
    assert critical_parameter_estimate(chain, chain.origin, "alpha", 10) >= 0.99


def test_square_lattice_critical_alpha_tracks_connective_constant():
    g = build_lattice_box(2, 12)
    alpha = critical_parameter_estimate(g, g.origin, "alpha", 6)
    mu = connective_estimate(count_saws(g, g.origin, 6))[-1]
    assert abs(alpha - 1 / mu) <= 0.15 / mu


def test_log_tree_obeys_assumption1():
    g = build_log_tree(24)
    assert assumption1_partial_sum(g, g.origin, 0.2, 12).verdict == "converging"


def test_log_tree_critical_alpha_is_near_one():
    g = build_log_tree(24)
    assert critical_parameter_estimate(g, g.origin, "alpha", 12) >= 0.95


def test_hub_lattice_obeys_assumption1():
    g = build_hub_lattice(20)
    assert assumption1_partial_sum(g, g.origin, 0.2, 5).verdict == "converging"


def test_assumption2_on_line():
    g = build_lattice_box(1, 20)
    rep = assumption2_partial_sum(g, g.origin, g.origin, 0.0, 0.2, 5)
    assert rep.which == "beta"
    assert rep.p == 0.0
    assert rep.verdict == "converging"
    assert "polynomial" in rep.note


def test_assumption2_square_lattice_diverges():
    g = build_lattice_box(2, 9)
    rep = assumption2_partial_sum(g, g.origin, g.origin, 2.0, 0.9, 3)
    # the weight d(o,x)^2 kills the shell-0 term
    assert rep.partial_sums[0] == 0.0
    assert rep.verdict == "diverging"


def test_assumption2_rejects_negative_p(chain):
    with pytest.raises(ValidationError):
        assumption2_partial_sum(chain, chain.origin, chain.origin, -1.0, 0.5, 2)


def test_critical_estimate_without_bracket():
    g = build_regular_tree(3, 8)
    # three shells are fewer than the ratio window needs, so every trial value is inconclusive
    with pytest.raises(InconclusiveError):
        critical_parameter_estimate(g, g.origin, "alpha", 2)


# ---- Growth and thresholds ----

def test_sphere_growth_classes():
    z2 = build_lattice_box(2, 10)
    assert sphere_growth_classify(z2, z2.origin, 10) == "polynomial"
    tree = build_regular_tree(2, 10)
    assert sphere_growth_classify(tree, tree.origin, 10) == "exponential"
    line = build_lattice_box(1, 20)
    assert sphere_growth_classify(line, line.origin, 10) == "polynomial"


def test_sphere_growth_needs_clean_radius(z2_small):
    with pytest.raises(NotCleanError):
        sphere_growth_classify(z2_small, z2_small.origin, 10)


def test_localization_threshold_closed_form():
    assert localization_threshold(0.5, 1.0) == pytest.approx(16.0, rel=1e-12)
    lam = localization_threshold(0.5, 0.3) * 0.5
    c, _ = theorem1_constants(0.5, lam, 0.5)
    assert c == pytest.approx(0.3, rel=1e-12)


def test_optimal_threshold_is_minimal():
    s_star, best = optimal_threshold(0.5)
    assert 0 < s_star < 1
    for s in (0.1, 0.3, 0.5, 0.7, 0.9):
        assert best <= localization_threshold(s, 0.5) * (1 + 1e-9)


def test_threshold_rejects_bad_parameters():
    with pytest.raises(ValidationError):
        localization_threshold(1.0, 0.5)
    with pytest.raises(ValidationError):
        optimal_threshold(0.0)
