import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from klref.estimator import (
    ESTIMATE_COLUMNS,
    SCALED,
    UNSCALED,
    EstimateReport,
    bounds_constants,
    constants_c1_c2,
    dgamma_bound_scaled,
    dgamma_bound_unscaled,
    difference,
    effectivity_index,
    error_estimate,
    report_rows,
    write_estimates,
)
from klref.fem import MASS, OperatorP1
from klref.hhg import build_hierarchy
from klref.macro_mesh import MeshStructureError
from klref.multigrid import FmgState, SolverConfig, fmg, prolongate
from klref.problems import affine, waves, waves_initial_mesh

TABLE_THETA_QUARTER = [(0.53, 1.67), (0.80, 1.24), (0.93, 1.08), (0.98, 1.02)]
TABLE_THETA_LSHAPE = [(0.31, 2.32), (0.53, 1.76), (0.72, 1.37), (0.85, 1.18)]


@pytest.mark.parametrize("theta,table", [(0.25, TABLE_THETA_QUARTER), (2.0 ** (-4.0 / 3.0), TABLE_THETA_LSHAPE)])
def test_c1_c2_table(theta, table):
    for j, (c1, c2) in enumerate(table, start=1):
        got = constants_c1_c2(theta, 0.0, j)
        assert round(got[0], 2) == c1 and round(got[1], 2) == c2


def test_c1_c2_closed_form_values():
    c1, c2 = constants_c1_c2(0.25, 0.0, 1)
    assert c1 == pytest.approx(0.75**2 / 1.0625, rel=1e-15)
    assert c2 == pytest.approx(1.25**2 / 0.9375, rel=1e-15)


def test_c1_c2_approach_one_monotonically():
    vals = [constants_c1_c2(0.25, 0.0, j) for j in range(1, 9)]
    c1 = [v[0] for v in vals]
    c2 = [v[1] for v in vals]
    assert all(a < b for a, b in zip(c1, c1[1:])) and all(a > b for a, b in zip(c2, c2[1:]))
    assert c1[-1] > 0.99 and c2[-1] < 1.01


@given(st.floats(0.01, 0.6), st.floats(0.0, 0.3), st.integers(1, 6))
def test_c1_not_above_c2(theta, eps, j):
    if (1 + eps) * theta >= 1:
        return
    c1, c2 = constants_c1_c2(theta, eps, j)
    assert 0 < c1 <= 1 <= c2


def test_saturation_domain_error():
    with pytest.raises(ValueError):
        constants_c1_c2(0.9, 0.2, 1)
    with pytest.raises(ValueError):
        dgamma_bound_unscaled(0.2, 1.0, 1)


def test_dgamma_scaled_matches_brute_force():
    j = 1
    grid = np.linspace(0.01, 0.25, 60)
    c1 = np.array([constants_c1_c2(t, 0.0, j)[0] for t in grid])
    c2 = np.array([constants_c1_c2(t, 0.0, j)[1] for t in grid])
    worst = (c2[:, None] / c1[None, :]).max()
    assert dgamma_bound_scaled(0.25, 0.0, j) == pytest.approx(worst, rel=1e-12)
    assert dgamma_bound_scaled(0.25, 0.0, 1) == pytest.approx((1.0625 / 0.9375) * (1.25 / 0.75) ** 2)
    assert dgamma_bound_scaled(1e-9, 0.0, 2) == pytest.approx(1.0, abs=1e-8)
    b = [dgamma_bound_scaled(t, 0.0, 2) for t in np.linspace(0.05, 0.5, 10)]
    assert all(x < y for x, y in zip(b, b[1:]))


def test_dgamma_unscaled_values():
    assert dgamma_bound_unscaled(0.25, 0.25, 1) == pytest.approx(5 / 3)
    assert dgamma_bound_unscaled(0.25, 0.5, 2) == pytest.approx(17 / 3)
    seq = [dgamma_bound_unscaled(0.4, 0.4, j) for j in (1, 4, 16, 40)]
    assert all(x > y > 1 for x, y in zip(seq, seq[1:]))
    assert seq[-1] == pytest.approx(1.0, abs=1e-12)


def test_bounds_constants_default_theta():
    b = bounds_constants(q=2)
    assert b.theta == 0.25 and b.contains(1.0) and not b.contains(2.0)
    assert bounds_constants(j=2).c1 == pytest.approx(constants_c1_c2(0.25, 0.0, 2)[0])


def _crafted_state(c0, c1):
    h = build_hierarchy(waves_initial_mesh(), 2)
    u = [np.zeros(h.dofs(lev)) for lev in range(3)]
    w = [np.full(h.dofs(1), c0), np.full(h.dofs(2), c1)]
    return FmgState(h, SolverConfig(), u, w, [None] * 3)


def test_arithmetic_of_global_estimate():
    rep = error_estimate(_crafted_state(0.4, 0.1), 1)
    assert rep.norm_prev == pytest.approx(0.4, rel=1e-13)
    assert rep.norm == pytest.approx(0.1, rel=1e-13)
    assert rep.theta == pytest.approx(0.25, rel=1e-12)
    assert rep.eta == pytest.approx(0.025, rel=1e-12)


@pytest.fixture(scope="module")
def waves_state():
    p = waves(2.0, 6.0 * np.pi)
    h = build_hierarchy(waves_initial_mesh(), 5)
    return fmg(p, h, SolverConfig(nu=2))


@pytest.mark.parametrize("j", [1, 2, 3, 4])
def test_estimate_identities(waves_state, j):
    rep = error_estimate(waves_state, j, UNSCALED)
    assert rep.eta == pytest.approx(rep.norm ** (j + 1) / rep.norm_prev**j, rel=1e-12)
    assert np.sum(rep.eta_T**2) == pytest.approx(rep.norm**2, rel=1e-12)
    # mass-matrix oracle for the global norm
    e = difference(waves_state, rep.level)
    M = OperatorP1.build(waves_state.hierarchy, 5, MASS)
    assert rep.norm**2 == pytest.approx(e @ M.matvec(e), rel=1e-12)


def test_scaled_is_theta_t_times_unscaled(waves_state):
    un = error_estimate(waves_state, 1, UNSCALED)
    sc = error_estimate(waves_state, 1, SCALED)
    assert np.allclose(sc.eta_T, un.eta_T * (un.local / un.local_prev), rtol=1e-12)
    assert sc.eta == un.eta


def test_difference_uses_stored_w(waves_state):
    e = difference(waves_state, 4)
    assert np.array_equal(e, waves_state.u[5] - prolongate(waves_state.hierarchy, 4, waves_state.u[4]))


def test_estimate_affine_vanishes():
    h = build_hierarchy(waves_initial_mesh(), 4)
    state = fmg(affine(), h, SolverConfig(nu=2))
    rep = error_estimate(state, 1)
    assert rep.norm <= 1e-10 and rep.eta <= 1e-10


def test_j_out_of_range(waves_state):
    with pytest.raises(MeshStructureError):
        error_estimate(waves_state, 0)
    with pytest.raises(MeshStructureError):
        error_estimate(waves_state, 5)
    with pytest.raises(ValueError):
        error_estimate(waves_state, 1, "energy")


def _report(eta, eta_T):
    n = len(eta_T)
    return EstimateReport(1, 3, 1.0, 1.0, 1.0, eta, np.arange(n), np.asarray(eta_T, float), UNSCALED,
                          np.ones(n), np.ones(n))


def test_effectivity_index_cases():
    eff = effectivity_index(_report(0.3, [0.1, 0.2]), 0.3, [0.1, 0.2])
    assert eff.gamma == 1.0 and eff.dgamma == 1.0 and eff.valid
    zero = effectivity_index(_report(0.3, [0.1, 0.2]), 0.0)
    assert not zero.valid and math.isnan(zero.gamma)
    eff = effectivity_index(_report(0.3, [0.1, 0.4]), 0.3, [0.1, 0.2])
    assert eff.dgamma == pytest.approx(2.0)
    # macros with round-off level error are skipped
    eff = effectivity_index(_report(0.3, [0.1, 0.4, 5.0]), 0.3, [0.1, 0.2, 1e-20])
    assert math.isnan(eff.gamma_T[2]) and eff.dgamma == pytest.approx(2.0)


def test_report_rows_and_csv(tmp_path, waves_state):
    rep = error_estimate(waves_state, 1)
    rows = report_rows(rep, 3, 0.5, np.full(32, 0.1))
    assert len(rows) == 33 and rows[-1]["macro_id"] == "all"
    assert float(rows[-1]["eta_T"]) == rep.eta
    path = tmp_path / "est.csv"
    write_estimates(path, rows)
    lines = path.read_text().splitlines()
    assert lines[0] == ",".join(ESTIMATE_COLUMNS)
    assert len(lines) == 34
