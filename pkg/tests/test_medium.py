import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq

from elastrtm.medium import (ElasticMedium, beta, delta, delta_factor, delta_prime, gamma, mu_alpha,
                             rayleigh_root)

# k_R/k_s for kappa = 1/2 from the Rayleigh cubic (np.roots), frozen
K_RATIO = 1.0723562677


def test_wavenumbers_default(medium):
    wn = medium.wavenumbers
    assert wn.k_p == pytest.approx(2 * np.pi, rel=1e-15)
    assert wn.k_s == pytest.approx(4 * np.pi, rel=1e-15)
    assert wn.kappa == pytest.approx(0.5, rel=1e-15)
    assert wn.d_R == pytest.approx(0.5 * (wn.k_R - wn.k_s))


def test_wavenumbers_unit_constants():
    wn = ElasticMedium(1.0, 1.0, 1.0).wavenumbers
    assert wn.k_p == pytest.approx(1 / np.sqrt(3))
    assert wn.k_s == pytest.approx(1.0)
    assert wn.kappa == pytest.approx(1 / np.sqrt(3))


@pytest.mark.parametrize("lam,mu,omega", [(0, 1, 1), (1, -1, 1), (1, 1, 0)])
def test_invalid_medium(lam, mu, omega):
    with pytest.raises(ValueError):
        ElasticMedium(lam, mu, omega)


def test_rayleigh_ratio_against_independent_root(medium):
    wn = medium.wavenumbers
    kappa = 0.5
    f = lambda t: (2 * t - 1) ** 2 - 4 * t * np.sqrt(t - 1) * np.sqrt(t - kappa**2)
    t_star = brentq(f, 1 + 1e-15, (2 - kappa**2) / (1 - kappa**2), xtol=1e-15)
    assert wn.k_R / wn.k_s == pytest.approx(np.sqrt(t_star), abs=1e-12)
    assert wn.k_R / wn.k_s == pytest.approx(K_RATIO, abs=1e-9)
    assert abs(delta(wn.k_R, wn.k_p, wn.k_s)) / wn.k_s**4 < 1e-10


@settings(max_examples=40, deadline=None)
@given(st.floats(0.05, 0.69))
def test_rayleigh_root_properties(kappa):
    k_s = 3.0
    k_r = rayleigh_root(kappa * k_s, k_s)
    assert k_r > k_s
    assert abs(delta(k_r, kappa * k_s, k_s)) < 1e-9 * k_s**4
    # the Rayleigh speed lies below the shear speed by at most ~13%
    assert k_s / k_r > 0.87


def test_mu_alpha_examples():
    assert mu_alpha(0.0, 2.0) == pytest.approx(2.0)
    assert mu_alpha(2.0, 1.0) == pytest.approx(1j * np.sqrt(3))
    assert mu_alpha(1.5, 1.5) == 0


@settings(max_examples=60, deadline=None)
@given(st.floats(-50, 50), st.floats(0.1, 20))
def test_mu_alpha_branch(xi, k):
    m = mu_alpha(xi, k)
    assert np.imag(m) >= 0 and np.real(m) >= 0
    assert m * m == pytest.approx(k * k - xi * xi, rel=1e-10, abs=1e-10)


def test_delta_examples(medium):
    wn = medium.wavenumbers
    assert delta(0.0, wn.k_p, wn.k_s) == pytest.approx(wn.k_s**4)
    assert delta(wn.k_s, wn.k_p, wn.k_s) == pytest.approx(wn.k_s**4)
    assert beta(0.0, wn.k_s) == pytest.approx(wn.k_s**2)


def test_delta_prime_matches_difference(medium):
    wn = medium.wavenumbers
    for xi in (wn.k_R, 1.3 * wn.k_R, 0.5 * wn.k_p):
        h = 1e-6 * xi
        fd = (delta(xi + h, wn.k_p, wn.k_s) - delta(xi - h, wn.k_p, wn.k_s)) / (2 * h)
        assert delta_prime(xi, wn.k_p, wn.k_s) == pytest.approx(fd, rel=1e-6)


def test_delta_factor(medium):
    wn = medium.wavenumbers
    assert delta_factor(wn.k_R, wn) == pytest.approx(wn.delta_prime(wn.k_R) / (2 * wn.k_R), rel=1e-12)
    for s in (-1, 1):
        assert abs(delta_factor(wn.k_R + s * wn.d_R / 2, wn)) >= 0.1 * wn.k_s**2
    xs = np.concatenate([np.linspace(wn.k_R - wn.d_R, wn.k_R - 1e-3, 10),
                         -np.linspace(wn.k_R + 1e-3, wn.k_R + wn.d_R, 10)])
    d1 = delta_factor(xs, wn)
    np.testing.assert_allclose(d1 * (xs**2 - wn.k_R**2), wn.delta(xs), rtol=1e-12)
    with pytest.raises(ValueError):
        delta_factor(wn.k_s, wn)


def test_gamma(medium):
    wn = medium.wavenumbers
    k_s, k_p = wn.k_s, wn.k_p
    assert gamma(0.0, k_p, k_s) == pytest.approx(k_s * k_p)
    ref = 4 * k_s**2 - np.sqrt(3 * k_s**2) * np.sqrt(4 * k_s**2 - k_p**2)
    assert gamma(2 * k_s, k_p, k_s) == pytest.approx(ref)
    assert ref > 0
    xs = np.geomspace(1e-3 * k_s, 10 * k_s, 100)
    assert np.all(np.abs(gamma(xs, k_p, k_s)) > 0)
