"""Quadrature kernels for the spectral (Sommerfeld-type) integrals.

Two families live here:

* adaptive Gauss-Kronrod integration (:func:`adaptive_integrate`) and the
  routines built on it: principal values with explicit pole subtraction,
  the Sokhotski-Plemelj one-sided limits and integration over a truncated
  real axis;
* fixed composite rules on the real spectral axis (:func:`spectral_rule`)
  used for batched Green-tensor evaluation, where one set of nodes serves
  every source/receiver pair of a geometry.
"""
from __future__ import annotations

import heapq
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "ToleranceSpec",
    "PoleSpec",
    "QuadratureError",
    "branch_sqrt",
    "adaptive_integrate",
    "pv_integrate",
    "sokhotski_limit_check",
    "truncated_axis_integrate",
    "SpectralRule",
    "spectral_rule",
]


class QuadratureError(ArithmeticError):
    """Adaptive integration ran out of panels before meeting its tolerance."""

    def __init__(self, message, value=None, error_estimate=None):
        super().__init__(message)
        self.value = value
        self.error_estimate = error_estimate


@dataclass(frozen=True)
class ToleranceSpec:
    rel_tol: float = 1e-8
    abs_tol: float = 1e-12
    max_panels: int = 4000

    def __post_init__(self):
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be positive")
        if self.max_panels < 16:
            raise ValueError("max_panels must be at least 16")


@dataclass(frozen=True)
class PoleSpec:
    """Simple pole ``residue_factor / (t - location)`` contained in an integrand."""

    location: float
    residue_factor: complex

    def __post_init__(self):
        if not (np.isfinite(self.location) and np.isfinite(self.residue_factor)):
            raise ValueError("pole location and residue factor must be finite")


def branch_sqrt(z):
    """Square root with ``Im >= 0``, branch cut on the positive real axis.

    Points on the positive real axis are rejected because the side of the
    cut is ambiguous there; use :func:`elastrtm.medium.mu_alpha`, which
    encodes the one-sided limit used for real wavenumbers.
    """
    z = np.asarray(z, dtype=complex)
    x, y = z.real, z.imag
    if np.any((y == 0) & (x > 0)):
        raise ValueError("branch_sqrt is ambiguous on the positive real axis")
    # larger component directly, smaller one as |y|/(2a) to avoid cancellation
    a = np.sqrt(0.5 * (np.abs(z) + np.abs(x)))
    b = np.divide(np.abs(y), 2 * a, out=np.zeros_like(a), where=a > 0)
    re = np.where(x >= 0, a, b)
    im = np.where(x >= 0, b, a)
    out = np.where(y < 0, -re, re) + 1j * im
    return out if out.ndim else complex(out)


# Gauss-Kronrod 7/15 abscissae and weights on [-1, 1]
_XK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])
_GK_X = np.concatenate([-_XK[:-1], _XK[::-1]])
_GK_WK = np.concatenate([_WK[:-1], _WK[::-1]])
# Gauss nodes are the odd-indexed Kronrod nodes
_GK_WG = np.zeros(15)
_GK_WG[1::2] = np.concatenate([_WG[:-1], _WG[::-1]])


def _panel(f, a, b):
    c, h = 0.5 * (a + b), 0.5 * (b - a)
    vals = np.asarray(f(c + h * _GK_X))
    shape = vals.shape[1:]
    vals = vals.reshape(15, -1)
    k = h * (_GK_WK @ vals)
    g = h * (_GK_WG @ vals)
    resabs = float(np.max(abs(h) * (_GK_WK @ np.abs(vals))))
    return k, float(np.max(np.abs(k - g))), shape, resabs


_ROUNDOFF = 50 * np.finfo(float).eps


def adaptive_integrate(f: Callable, a: float, b: float, tol: ToleranceSpec = ToleranceSpec(),
                       breakpoints: Sequence[float] = (), max_width: float | None = None,
                       full_output: bool = False):
    """Globally adaptive G7/K15 integration of a (vector-valued) integrand.

    ``f`` maps an array of abscissae of shape ``(n,)`` to values of shape
    ``(n, ...)``.  Panels are split at ``breakpoints`` and never wider than
    ``max_width``.  The panel with the largest error estimate is bisected
    until the summed estimate meets ``max(abs_tol, rel_tol*|I|)`` or reaches
    the roundoff floor ``~50 eps int|f|``, below which bisection cannot help.

    Returns the integral (scalar or array); with ``full_output`` a tuple
    ``(value, error_estimate, n_panels)``.
    """
    if not b > a:
        raise ValueError("integration interval must satisfy b > a")
    edges = sorted({a, b, *[p for p in breakpoints if a < p < b]})
    panels = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        n = 1 if not max_width else max(1, int(np.ceil((hi - lo) / max_width)))
        e = np.linspace(lo, hi, n + 1)
        panels.extend(zip(e[:-1], e[1:]))

    heap = []
    total = err = absum = 0.0
    shape = first = None
    for lo, hi in panels:
        v, e, shape, ra = _panel(f, lo, hi)
        first = v if first is None else first
        total, err, absum = total + v, err + e, absum + ra
        heapq.heappush(heap, (-e, lo, hi, ra, v))
    best = (total, err)
    n_panels = len(panels)
    while err > max(tol.abs_tol, tol.rel_tol * float(np.max(np.abs(total))), 2 * _ROUNDOFF * absum):
        if n_panels >= tol.max_panels:
            v, e = best
            raise QuadratureError(
                f"adaptive quadrature did not converge within {tol.max_panels} panels "
                f"(error estimate {e:.3e})", value=v, error_estimate=e)
        neg_e, lo, hi, ra, v = heapq.heappop(heap)
        total, err, absum = total - v, err + neg_e, absum - ra
        mid = 0.5 * (lo + hi)
        for p in ((lo, mid), (mid, hi)):
            v, e, _, ra = _panel(f, *p)
            total, err, absum = total + v, err + e, absum + ra
            heapq.heappush(heap, (-e, *p, ra, v))
        n_panels += 1
        if err < best[1]:
            best = (total, err)
    value, err = best
    value = value.reshape(shape) if shape else complex(value[0]) if np.iscomplexobj(first) else float(value[0])
    if full_output:
        return value, err, n_panels
    return value


def pv_integrate(f: Callable, a: float, b: float, poles: Sequence[PoleSpec],
                 tol: ToleranceSpec = ToleranceSpec(), full_output: bool = False,
                 breakpoints: Sequence[float] = (), max_width: float | None = None):
    """Cauchy principal value of ``f`` over ``[a, b]``.

    Each pole's singular part ``r/(t - t0)`` is removed from the integrand
    and its principal value ``r log((b - t0)/(t0 - a))`` added back
    analytically; the regular remainder is integrated adaptively with the
    pole locations as panel breakpoints.
    """
    locs = [p.location for p in poles]
    for t0 in locs:
        if not a < t0 < b:
            raise ValueError(f"pole {t0} is not strictly inside ({a}, {b})")
    srt = sorted(locs)
    if any(q - p <= 10 * np.finfo(float).eps * (b - a) for p, q in zip(srt[:-1], srt[1:])):
        raise ValueError("poles are not separated")

    def regular(t):
        v = np.asarray(f(t))
        out = v.astype(complex)
        for p in poles:
            sub = p.residue_factor / (t - p.location)
            out = out - sub.reshape((-1,) + (1,) * (out.ndim - 1))
        return out

    res = adaptive_integrate(regular, a, b, tol, breakpoints=[*locs, *breakpoints],
                             max_width=max_width, full_output=full_output)
    log_part = sum(p.residue_factor * np.log((b - p.location) / (p.location - a)) for p in poles)
    if full_output:
        return (res[0] + log_part, *res[1:])
    return res + log_part


def sokhotski_limit_check(gamma_fn: Callable, t0: float, side: int, a: float = -1.0, b: float = 1.0,
                          tol: ToleranceSpec = ToleranceSpec()):
    """One-sided limit of ``int_a^b gamma(t)/(t - z) dt`` as ``z -> t0`` from ``Im z = side*0+``.

    Equals ``p.v. int gamma(t)/(t - t0) dt + side * i*pi*gamma(t0)``.
    """
    if side not in (1, -1):
        raise ValueError("side must be +1 or -1")
    g0 = complex(np.asarray(gamma_fn(np.array([t0])))[0])
    pv = pv_integrate(lambda t: np.asarray(gamma_fn(t)) / (t - t0), a, b, [PoleSpec(t0, g0)], tol)
    return pv + side * 1j * np.pi * g0


def truncated_axis_integrate(f: Callable, decay_rate: float, tol: ToleranceSpec = ToleranceSpec(),
                             onset: float = 0.0, bound: float = 1.0, phase_rate: float = 0.0,
                             breakpoints: Sequence[float] = (), full_output: bool = False):
    """Integrate over the real line an integrand bounded by ``bound*exp(-c(|xi| - onset))``.

    The axis is cut at ``Xi = onset + max(10, -log(abs_tol/bound))/c`` and
    panels are no wider than a quarter period of ``exp(i*phase_rate*xi)``.
    """
    if not decay_rate > 0:
        raise ValueError("decay_rate must be positive")
    xi_max = onset + max(10.0, -np.log(tol.abs_tol / bound)) / decay_rate
    width = np.pi / (2 * phase_rate) if phase_rate > 0 else None
    return adaptive_integrate(f, -xi_max, xi_max, tol, breakpoints=breakpoints,
                              max_width=width, full_output=full_output)


@dataclass(frozen=True)
class SpectralRule:
    """Fixed composite rule on ``[-xi_max, xi_max]``: ``sum(w * f(nodes))``."""

    nodes: np.ndarray
    weights: np.ndarray
    xi_max: float

    def __len__(self):
        return self.nodes.size


_GL_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _gauss_legendre(order):
    if order not in _GL_CACHE:
        _GL_CACHE[order] = np.polynomial.legendre.leggauss(order)
    return _GL_CACHE[order]


def _composite(a, b, n_panels, order, cos_map):
    x, w = _gauss_legendre(order)
    e = np.linspace(0.0, 1.0, n_panels + 1)
    s = (0.5 * (e[:-1, None] + e[1:, None]) + 0.5 * (e[1:, None] - e[:-1, None]) * x[None, :]).ravel()
    ws = (0.5 * (e[1:, None] - e[:-1, None]) * w[None, :]).ravel()
    if cos_map:
        # xi = a + (b-a)(1-cos(pi s))/2 makes sqrt endpoint behaviour analytic in s
        xi = a + 0.5 * (b - a) * (1 - np.cos(np.pi * s))
        wx = ws * 0.5 * (b - a) * np.pi * np.sin(np.pi * s)
    else:
        xi = a + (b - a) * s
        wx = ws * (b - a)
    return xi, wx


def _mu_variation(a, b, k, depth):
    """Total phase plus decay change of ``exp(i mu_alpha(xi) depth)`` over ``[a, b]``."""
    ma = np.sqrt(complex(k * k - a * a))
    mb = np.sqrt(complex(k * k - b * b))
    return depth * (abs(ma.real - mb.real) + abs(ma.imag - mb.imag))


def spectral_rule(k_p: float, k_s: float, k_R: float, offset: float, depth_min: float,
                  depth_max: float | None = None, tol: float = 1e-13, order: int = 16,
                  oscillations_per_panel: float = 2.0, min_panels: int = 2,
                  pole_window: bool = True) -> SpectralRule:
    """Composite Gauss-Legendre rule for spectral integrands of the half space.

    The integrands have the form ``g(xi) exp(i xi t + i mu_a x2 + i mu_b y2)``
    with ``|t| <= offset`` and ``depth_min <= x2 + y2 <= depth_max``.  The axis
    is truncated where ``exp(-sqrt(xi^2 - k_s^2) depth_min)`` drops below
    ``tol`` (with a safety margin for algebraic growth of ``g``).

    Panel edges sit at ``0, k_p, k_s, k_R -+ d_R`` and ``xi_max`` (mirrored to
    the negative axis), so no panel straddles a branch point or the Rayleigh
    pole.  Intervals ending at a branch point use a cosine map that removes
    the square-root endpoint behaviour.  With ``pole_window`` the interval
    ``[k_R - d_R, k_R + d_R]`` is tiled symmetrically about ``k_R``; the
    discrete rule then satisfies ``sum w/(xi - k_R) = 0``, so applying it to
    ``g(xi)/delta(xi)`` is exactly the pole-subtracted principal value.
    Panel counts keep roughly ``oscillations_per_panel`` periods (or the
    equivalent amount of exponential variation) per panel.
    """
    if not depth_min > 0:
        raise ValueError("spectral_rule needs a strictly positive minimum depth")
    depth_max = depth_min if depth_max is None else max(depth_max, depth_min)
    d_r = 0.5 * (k_R - k_s)
    xi_max = np.sqrt(k_s**2 + ((-np.log(tol) + 5.0) / depth_min) ** 2)
    if pole_window:
        xi_max = max(xi_max, k_R + 2 * d_r)
    else:
        xi_max = max(xi_max, k_s * (1 + 1e-3))
    per = 2 * np.pi * oscillations_per_panel

    def count(a, b, stretch):
        phase = offset * (b - a) + _mu_variation(a, b, k_s, depth_max) + _mu_variation(a, b, k_p, depth_max)
        return max(min_panels, int(np.ceil(stretch * phase / per)))

    cos_stretch = 0.5 * np.pi
    parts = []
    for a, b in ((0.0, k_p), (k_p, k_s)):
        parts.append(_composite(a, b, count(a, b, cos_stretch), order, True))
    if pole_window:
        a, b = k_s, k_R - d_r
        parts.append(_composite(a, b, count(a, b, cos_stretch), order, True))
        half = max(count(k_R - d_r, k_R, 1.0), count(k_R, k_R + d_r, 1.0))
        parts.append(_composite(k_R - d_r, k_R, half, order, False))
        parts.append(_composite(k_R, k_R + d_r, half, order, False))
        a, b = k_R + d_r, xi_max
        parts.append(_composite(a, b, count(a, b, 1.0), order, False))
    else:
        parts.append(_composite(k_s, xi_max, count(k_s, xi_max, cos_stretch), order, True))
    xi = np.concatenate([p[0] for p in parts])
    w = np.concatenate([p[1] for p in parts])
    nodes = np.concatenate([-xi[::-1], xi])
    weights = np.concatenate([w[::-1], w])
    return SpectralRule(nodes=nodes, weights=weights, xi_max=float(xi_max))
