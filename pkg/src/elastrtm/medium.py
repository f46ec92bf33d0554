"""Elastic medium parameters and the spectral scalar functions of the half space.

All spectral functions accept real ``xi`` (scalar or array).  The wavenumbers
may be complex, which is how the limiting-absorption oracle in
:mod:`elastrtm.green` evaluates the same expressions at ``omega*(1+i*eps)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = [
    "ElasticMedium",
    "WaveNumbers",
    "derive_wavenumbers",
    "mu_alpha",
    "beta",
    "delta",
    "delta_prime",
    "delta_factor",
    "gamma",
    "rayleigh_root",
]


def mu_alpha(xi, k):
    """Vertical wavenumber ``(k**2 - xi**2)**(1/2)`` on the ``Im >= 0`` branch.

    For real ``k`` the one-sided limit is taken on the positive real axis:
    ``+sqrt(k^2-xi^2)`` for ``|xi| < k`` and ``+i sqrt(xi^2-k^2)`` otherwise.
    """
    xi = np.asarray(xi)
    if np.iscomplexobj(k) and np.imag(k) != 0:
        from .quadrature import branch_sqrt

        return branch_sqrt(k * k - xi * xi)
    k = float(np.real(k))
    xr = np.real(xi)
    d = k * k - xr * xr
    out = np.where(d >= 0, np.sqrt(np.abs(d)) + 0j, 1j * np.sqrt(np.abs(d)))
    return out if out.ndim else complex(out)


def beta(xi, k_s):
    return k_s * k_s - 2.0 * np.asarray(xi) ** 2


def delta(xi, k_p, k_s):
    """Rayleigh function ``beta^2 + 4 xi^2 mu_s mu_p``."""
    xi = np.asarray(xi)
    return beta(xi, k_s) ** 2 + 4.0 * xi**2 * mu_alpha(xi, k_s) * mu_alpha(xi, k_p)


def delta_prime(xi, k_p, k_s):
    """Derivative of :func:`delta` (valid away from the branch points)."""
    xi = np.asarray(xi)
    ms, mp = mu_alpha(xi, k_s), mu_alpha(xi, k_p)
    b = beta(xi, k_s)
    return -8.0 * xi * b + 8.0 * xi * ms * mp - 4.0 * xi**3 * (mp / ms + ms / mp)


def gamma(xi, k_p, k_s):
    """Denominator ``xi^2 + mu_s mu_p`` of the Dirichlet spectral tensor."""
    xi = np.asarray(xi)
    return xi**2 + mu_alpha(xi, k_s) * mu_alpha(xi, k_p)


def _rayleigh_f(t, kappa):
    return (2 * t - 1) ** 2 - 4 * t * np.sqrt(t - 1) * np.sqrt(t - kappa**2)


def rayleigh_root(k_p: float, k_s: float, rtol: float = 1e-14) -> float:
    """Positive real zero ``k_R > k_s`` of :func:`delta`.

    Bisection on the reduced function ``f(t) = delta(k_s sqrt(t)) / k_s^4``,
    which is strictly decreasing on ``t >= 1`` with ``f(1) = 1``, followed by a
    single Newton step on ``delta`` itself.
    """
    kappa = k_p / k_s
    lo, hi = 1.0, (2 - kappa**2) / (1 - kappa**2)
    if not (_rayleigh_f(lo, kappa) > 0 > _rayleigh_f(hi, kappa)):
        raise ArithmeticError("Rayleigh function bracket lost its sign change")
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if _rayleigh_f(mid, kappa) > 0:
            lo = mid
        else:
            hi = mid
    k_r = k_s * np.sqrt(0.5 * (lo + hi))
    dp = np.real(delta_prime(k_r, k_p, k_s))
    if dp != 0:
        k_r -= np.real(delta(k_r, k_p, k_s)) / dp
    return float(k_r)


@dataclass(frozen=True)
class WaveNumbers:
    k_p: float
    k_s: float
    kappa: float
    k_R: float
    d_R: float

    def mu_p(self, xi):
        return mu_alpha(xi, self.k_p)

    def mu_s(self, xi):
        return mu_alpha(xi, self.k_s)

    def delta(self, xi):
        return delta(xi, self.k_p, self.k_s)

    def delta_prime(self, xi):
        return delta_prime(xi, self.k_p, self.k_s)

    def gamma(self, xi):
        return gamma(xi, self.k_p, self.k_s)

    def delta_factor(self, xi):
        return delta_factor(xi, self)


@dataclass(frozen=True)
class ElasticMedium:
    """Isotropic homogeneous elastic half space at unit density.

    Parameters
    ----------
    lam, mu : float
        Lamé constants, both strictly positive.
    omega : float
        Circular frequency.
    """

    lam: float
    mu: float
    omega: float
    rho: float = 1.0

    def __post_init__(self):
        if not (self.lam > 0 and self.mu > 0):
            raise ValueError(f"Lamé constants must be positive, got lam={self.lam}, mu={self.mu}")
        if not self.omega > 0:
            raise ValueError(f"omega must be positive, got {self.omega}")
        if self.rho != 1.0:
            raise ValueError("only unit density is supported")

    @cached_property
    def wavenumbers(self) -> WaveNumbers:
        return derive_wavenumbers(self)

    def with_omega(self, omega: float) -> "ElasticMedium":
        return ElasticMedium(self.lam, self.mu, omega)


def derive_wavenumbers(medium: ElasticMedium) -> WaveNumbers:
    k_p = medium.omega / np.sqrt(medium.lam + 2 * medium.mu)
    k_s = medium.omega / np.sqrt(medium.mu)
    k_r = rayleigh_root(k_p, k_s)
    return WaveNumbers(k_p=float(k_p), k_s=float(k_s), kappa=float(k_p / k_s),
                       k_R=k_r, d_R=float(0.5 * (k_r - k_s)))


def delta_factor(xi, wn: WaveNumbers):
    """``delta(xi) / (xi^2 - k_R^2)`` on the band ``k_R - d_R <= |xi| <= k_R + d_R``.

    The removable point ``|xi| = k_R`` evaluates to ``delta'(k_R) / (2 k_R)``.
    """
    xi = np.asarray(xi, dtype=float)
    a = np.abs(xi)
    if np.any(a < wn.k_R - wn.d_R - 1e-12 * wn.k_R) or np.any(a > wn.k_R + wn.d_R + 1e-12 * wn.k_R):
        raise ValueError("delta_factor is only defined on |xi| in [k_R - d_R, k_R + d_R]")
    den = xi**2 - wn.k_R**2
    near = np.abs(a - wn.k_R) < 1e-9 * wn.k_R
    safe = np.where(near, 1.0, den)
    val = wn.delta(xi) / safe
    lim = wn.delta_prime(wn.k_R) / (2 * wn.k_R)
    out = np.where(near, lim, val)
    return out if out.ndim else complex(out)
