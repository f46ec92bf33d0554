import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from elastrtm.quadrature import (PoleSpec, QuadratureError, ToleranceSpec, adaptive_integrate, branch_sqrt,
                                 pv_integrate, sokhotski_limit_check, truncated_axis_integrate)


def test_branch_sqrt_examples():
    assert branch_sqrt(-4 + 0j) == pytest.approx(2j)
    assert branch_sqrt(3 + 4j) == pytest.approx(2 + 1j)
    assert branch_sqrt(3 - 4j) == pytest.approx(-2 + 1j)


@settings(max_examples=80, deadline=None)
@given(st.complex_numbers(max_magnitude=1e3, allow_nan=False, allow_infinity=False))
def test_branch_sqrt_property(z):
    if z.imag == 0 and z.real > 0:
        with pytest.raises(ValueError):
            branch_sqrt(z)
        return
    r = branch_sqrt(z)
    assert np.imag(r) >= 0
    assert r * r == pytest.approx(z, rel=1e-12, abs=1e-12)


def test_pv_examples():
    tol = ToleranceSpec(rel_tol=1e-12)
    assert abs(pv_integrate(lambda t: 1 / t, -1, 1, [PoleSpec(0.0, 1.0)], tol)) < 1e-12
    assert pv_integrate(lambda t: 1 / (t - 0.3), -1, 1, [PoleSpec(0.3, 1.0)], tol) == pytest.approx(
        np.log(0.7 / 1.3), abs=1e-12)
    # removable singularity: t/(t - 0) = 1
    val = pv_integrate(lambda t: np.ones_like(t), -1, 1, [PoleSpec(1e-3, 0.0)], tol)
    assert val == pytest.approx(2.0, abs=1e-12)


@settings(max_examples=25, deadline=None)
@given(st.floats(-0.9, 0.9), st.floats(0.5, 3.0))
def test_pv_against_antiderivative(t0, c):
    # p.v. int (c + t)/(t - t0) = 2 + (c + t0) log((1 - t0)/(1 + t0))
    f = lambda t: (c + t) / (t - t0)
    val = pv_integrate(f, -1, 1, [PoleSpec(t0, c + t0)], ToleranceSpec(rel_tol=1e-11))
    assert val == pytest.approx(2 + (c + t0) * np.log((1 - t0) / (1 + t0)), abs=1e-9)


def test_pv_rejects_bad_poles():
    with pytest.raises(ValueError):
        pv_integrate(lambda t: t, -1, 1, [PoleSpec(1.5, 1.0)])
    with pytest.raises(ValueError):
        PoleSpec(np.nan, 1.0)


def test_sokhotski():
    one = lambda t: np.ones_like(t)
    assert sokhotski_limit_check(one, 0.0, +1) == pytest.approx(1j * np.pi, abs=1e-8)
    assert sokhotski_limit_check(one, 0.0, -1) == pytest.approx(-1j * np.pi, abs=1e-8)
    for side in (1, -1):
        assert sokhotski_limit_check(lambda t: t, 0.0, side) == pytest.approx(2.0, abs=1e-8)
    with pytest.raises(ValueError):
        sokhotski_limit_check(one, 0.0, 0)


def test_sokhotski_matches_small_offset():
    # int 1/(t - i e) over [-1, 1] in closed form
    e = 1e-9
    direct = np.log((1 - 1j * e) / (-1 - 1j * e))
    assert sokhotski_limit_check(lambda t: np.ones_like(t), 0.0, 1) == pytest.approx(direct, abs=1e-8)


def test_truncated_axis():
    tol = ToleranceSpec(rel_tol=1e-10, abs_tol=1e-13)
    assert truncated_axis_integrate(lambda x: np.exp(-np.abs(x)), 1.0, tol, breakpoints=[0.0]) == pytest.approx(
        2.0, rel=1e-9)
    assert truncated_axis_integrate(lambda x: np.exp(-x * x), 1.0, tol) == pytest.approx(np.sqrt(np.pi), rel=1e-9)
    val = truncated_axis_integrate(lambda x: np.cos(10 * x) * np.exp(-np.abs(x)), 1.0, tol,
                                   breakpoints=[0.0], phase_rate=10.0)
    assert val == pytest.approx(2 / 101, rel=1e-8)


def test_adaptive_vector_valued_and_error():
    val = adaptive_integrate(lambda t: np.stack([np.sin(t), np.cos(t)], axis=-1), 0, np.pi)
    np.testing.assert_allclose(val, [2.0, 0.0], atol=1e-12)
    with pytest.raises(QuadratureError):
        adaptive_integrate(lambda t: 1 / np.sqrt(np.abs(t - 0.3)) * np.sin(1 / np.abs(t - 0.3)), 0, 1,
                           ToleranceSpec(rel_tol=1e-14, abs_tol=1e-300, max_panels=16))


def test_tolerance_spec_validation():
    with pytest.raises(ValueError):
        ToleranceSpec(rel_tol=0)
    with pytest.raises(ValueError):
        ToleranceSpec(max_panels=4)
