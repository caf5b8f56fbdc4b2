import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from klref.problems import (
    PROBLEM_IDS,
    TEST_PROBLEM_IDS,
    get_problem,
    lshape,
    quadratic,
    waves,
    waves_derivatives,
)


def test_ids_resolve():
    for name in PROBLEM_IDS + TEST_PROBLEM_IDS:
        assert get_problem(name).name == name
    with pytest.raises(KeyError):
        get_problem("helmholtz")


def test_waves_parameters_and_boundary():
    p = get_problem("waves2d")
    assert p.meta == {"alpha": 10.0, "omega": 16.0 * np.pi}
    t = np.linspace(0.0, 1.0, 17)
    for x, y in ((0 * t, t), (0 * t + 1, t), (t, 0 * t), (t, 0 * t + 1)):
        assert np.abs(p.u(x, y)).max() <= 1e-12


def test_waves_derivatives_by_differences():
    a, w = 2.0, 6.0 * np.pi
    t = np.linspace(0.05, 0.95, 13)
    d = 1e-5
    f0, f1, f2 = waves_derivatives(a, w, t)
    fp, _, _ = waves_derivatives(a, w, t + d)
    fm, _, _ = waves_derivatives(a, w, t - d)
    assert np.allclose((fp - fm) / (2 * d), f1, rtol=1e-6, atol=1e-6)
    assert np.allclose((fp - 2 * f0 + fm) / d**2, f2, rtol=1e-4, atol=1e-3)


@given(st.floats(0.05, 0.95), st.floats(0.05, 0.95))
def test_waves_source_is_minus_laplacian(x, y):
    p = waves(2.0, 6.0 * np.pi)
    d = 1e-4
    lap = (p.u(x + d, y) + p.u(x - d, y) + p.u(x, y + d) + p.u(x, y - d) - 4 * p.u(x, y)) / d**2
    assert -lap == pytest.approx(float(p.f(x, y)), rel=1e-4, abs=1e-3)


def test_lshape_values():
    p = lshape()
    assert p.corner == (0.0, 0.0) and p.area == 3.0
    assert float(p.u(0.0, 1.0)) == pytest.approx(np.sin(np.pi / 3))
    assert float(p.u(-1.0, 0.0)) == pytest.approx(np.sin(2 * np.pi / 3))
    # vanishes on both edges at the reentrant corner
    s = np.linspace(0.0, 1.0, 9)
    assert np.abs(p.u(s, 0 * s)).max() <= 1e-15
    assert np.abs(p.u(0 * s, -s)).max() <= 1e-12
    assert np.all(p.f(s, s) == 0.0)


@given(st.floats(0.1, 0.9), st.floats(0.05, 1.45))
def test_lshape_harmonic(r, phi_over_pi):
    p = lshape()
    phi = phi_over_pi * np.pi
    x, y = r * np.cos(phi), r * np.sin(phi)
    d = 1e-4
    lap = (p.u(x + d, y) + p.u(x - d, y) + p.u(x, y + d) + p.u(x, y - d) - 4 * p.u(x, y)) / d**2
    assert abs(lap) < 1e-3


def test_quadratic():
    q = quadratic()
    assert float(q.u(0.5, 0.7)) == 0.25 and float(q.f(0.1, 0.2)) == -2.0


def test_waves_derivative_examples():
    w, w1, _ = waves_derivatives(3.0, 16.0 * np.pi, 0.0)
    assert w == 0.0 and w1 == 0.0
    assert abs(waves_derivatives(2.0, 6.0 * np.pi, 1.0)[0]) <= 1e-15
    a, om, t, d = 10.0, 16.0 * np.pi, 0.7, 1e-6
    fd = (waves_derivatives(a, om, t + d)[1] - waves_derivatives(a, om, t - d)[1]) / (2 * d)
    assert fd == pytest.approx(float(waves_derivatives(a, om, t)[2]), rel=1e-6)


@given(st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_waves_range(x, y):
    w = waves_derivatives(10.0, 16.0 * np.pi, np.array([x, y]))[0]
    assert np.all((0.0 <= w) & (w <= 2.0))
    # the product of two factors in [0, 2]
    assert 0.0 <= float(waves().u(x, y)) <= 4.0


def test_lshape_discrete_maximum_principle():
    from klref.hhg import build_hierarchy
    from klref.multigrid import solve_reference

    p = lshape()
    h = build_hierarchy(p.initial_mesh(), 4)
    u = solve_reference(p, h)
    g = p.u(*h.coordinates(4)[h[4].boundary].T)
    assert u.min() >= g.min() - 1e-10 and u.max() <= g.max() + 1e-10
