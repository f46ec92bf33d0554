"""Green tensors of the elastic half space.

Conventions
-----------
Spectral transforms use ``f(x1) = (1/2pi) int fhat(xi) exp(i (x1 - y1) xi) dxi``.
A 2x2 tensor ``M(x, y)`` acts on a polarization ``q`` through ``M @ q``; the
column ``M[:, j]`` is the displacement (or traction) produced by ``q = e_j``.
Batched evaluators return arrays of shape ``(M, N, 2, 2)`` for targets ``X``
of shape ``(M, 2)`` and sources ``Y`` of shape ``(N, 2)``.

Evaluation paths
----------------
* ``G`` (full space) in closed form from outgoing Hankel functions.
* ``N`` (traction-free half space) as ``G(x, y) - G(x, y') + C(x, y)`` with
  ``y' = (y1, -y2)`` and a smooth spectral correction ``C`` evaluated by a
  fixed real-axis rule (principal value at ``+-k_R``) plus the residue
  bracket.  On the surface the printed reduced spectral form is used.
* ``T_D`` (surface traction of the Dirichlet tensor) by the same rule; its
  spectral density has no real poles.
* Adaptive reference paths (``method="adaptive"``) and the complex-frequency
  oracle serve as independent checks.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

import numpy as np
from scipy import special

from .medium import ElasticMedium, mu_alpha
from .quadrature import PoleSpec, ToleranceSpec, pv_integrate, spectral_rule, truncated_axis_integrate

__all__ = [
    "Tensor2C",
    "as_tensor2c",
    "SpectralPieces",
    "spectral_pieces",
    "spectral_fullspace",
    "spectral_neumann_bulk",
    "spectral_neumann_surface",
    "spectral_dirichlet_traction",
    "fullspace_green",
    "fullspace_green_gradient",
    "fullspace_green_bessel_j",
    "traction_from_gradient",
    "neumann_correction",
    "neumann_green_matrix",
    "neumann_traction_matrix",
    "surface_neumann_matrix",
    "neumann_green",
    "neumann_green_stress",
    "neumann_green_complex_freq",
    "residue_bracket",
    "dirichlet_traction_matrix",
    "dirichlet_traction",
    "GreenCache",
]

Tensor2C = np.ndarray
P_FLIP = np.diag([1.0, -1.0])


def as_tensor2c(a) -> Tensor2C:
    a = np.asarray(a, dtype=complex)
    if a.shape != (2, 2):
        raise ValueError(f"expected a 2x2 tensor, got shape {a.shape}")
    if not np.all(np.isfinite(a)):
        raise FloatingPointError("tensor has non-finite entries")
    return a


def _m22(a11, a12, a21, a22):
    a11, a12, a21, a22 = np.broadcast_arrays(a11, a12, a21, a22)
    return np.stack([np.stack([a11, a12], -1), np.stack([a21, a22], -1)], -2)


@dataclass(frozen=True)
class _Params:
    """Wavenumbers and moduli; complex ``k`` and ``omega`` for damped media."""

    k_p: complex
    k_s: complex
    omega: complex
    lam: float
    mu: float
    k_R: float = np.nan

    @classmethod
    def of(cls, medium: ElasticMedium, eps: float = 0.0):
        wn = medium.wavenumbers
        f = 1.0 + 1j * eps if eps else 1.0
        return cls(wn.k_p * f, wn.k_s * f, medium.omega * f, medium.lam, medium.mu, wn.k_R)

    def mus(self, xi):
        return mu_alpha(xi, self.k_p), mu_alpha(xi, self.k_s)


# ---------------------------------------------------------------------------
# spectral densities


def _scalars(xi, par):
    xi = np.asarray(xi, dtype=float)
    mp, ms = par.mus(xi)
    b = par.k_s**2 - 2 * xi**2
    dlt = b**2 + 4 * xi**2 * ms * mp
    return xi, mp, ms, b, dlt


def _a_matrices(xi, mp, ms, b):
    x2, x3, x4 = xi**2, xi**3, xi**4
    return {
        ("s", "s"): _m22(b**2 * ms, -4 * x3 * ms * mp, -xi * b**2, 4 * x4 * mp),
        ("s", "p"): _m22(2 * x2 * b * ms, -2 * xi * b * ms * mp, -2 * x3 * b, 2 * x2 * b * mp),
        ("p", "s"): _m22(2 * x2 * b * ms, 2 * x3 * b, 2 * xi * b * ms * mp, 2 * x2 * b * mp),
        ("p", "p"): _m22(4 * x4 * ms, xi * b**2, 4 * x3 * ms * mp, b**2 * mp),
    }


def _b_matrices(xi, mp, ms):
    bss = _m22(xi**2 * ms, -xi * ms * mp, -(xi**3), xi**2 * mp)
    bpp = _m22(xi**2 * ms, xi**3, xi * ms * mp, xi**2 * mp)
    return {("s", "s"): bss, ("s", "p"): -bss, ("p", "s"): -bpp, ("p", "p"): bpp}


def _surface_matrices(xi, mp, ms, b, mu):
    c = 1j / mu
    n_p = c * _m22(2 * xi**2 * ms, -2 * xi * ms * mp, -xi * b, mp * b)
    n_s = c * _m22(ms * b, xi * b, 2 * xi * ms * mp, 2 * xi**2 * mp)
    return n_p, n_s


def _traction_matrices(xi, mp, ms):
    g = (xi**2 + ms * mp)[..., None, None]
    t_p = _m22(xi**2, -xi * mp, -xi * ms, mp * ms) / g
    t_s = _m22(ms * mp, xi * mp, xi * ms, xi**2) / g
    return t_p, t_s


@dataclass(frozen=True)
class SpectralPieces:
    """Matrix-valued spectral building blocks at one real ``xi``."""

    xi: float
    beta: complex
    delta: complex
    gamma: complex
    N_p: Tensor2C
    N_s: Tensor2C
    T_p: Tensor2C
    T_s: Tensor2C
    A: dict
    B: dict


def spectral_pieces(xi: float, medium: ElasticMedium) -> SpectralPieces:
    par = _Params.of(medium)
    xi, mp, ms, b, dlt = _scalars(float(xi), par)
    n_p, n_s = _surface_matrices(xi, mp, ms, b, par.mu)
    t_p, t_s = _traction_matrices(xi, mp, ms)
    return SpectralPieces(
        xi=float(xi), beta=complex(b), delta=complex(dlt), gamma=complex(xi**2 + ms * mp),
        N_p=n_p, N_s=n_s, T_p=t_p, T_s=t_s,
        A=_a_matrices(xi, mp, ms, b), B=_b_matrices(xi, mp, ms),
    )


def _ghat(xi, x2, y2, par):
    xi = np.asarray(xi, dtype=float)
    mp, ms = par.mus(xi)
    dz = x2 - y2
    sg = np.sign(dz)
    c = 1j / (2 * par.omega**2)
    # the 1/mu_alpha branch points are integrable; quadrature never samples them exactly
    with np.errstate(divide="ignore", invalid="ignore"):
        gs = c * _m22(ms, -xi * sg, -xi * sg, xi**2 / ms) * np.exp(1j * ms * abs(dz))[..., None, None]
        gp = c * _m22(xi**2 / mp, xi * sg, xi * sg, mp) * np.exp(1j * mp * abs(dz))[..., None, None]
    return gs + gp


def spectral_fullspace(xi, x2: float, y2: float, medium: ElasticMedium, eps: float = 0.0):
    """Spectral full-space tensor ``Ghat_s + Ghat_p``; requires ``x2 != y2``."""
    if x2 == y2:
        raise ValueError("spectral_fullspace is discontinuous at x2 == y2")
    return _ghat(xi, x2, y2, _Params.of(medium, eps))


def _bulk_correction_density(xi, x2, y2, par):
    xi, mp, ms, b, dlt = _scalars(xi, par)
    mus = {"p": mp, "s": ms}
    out = 0
    for (a, bb), m in _a_matrices(xi, mp, ms, b).items():
        out = out + m * np.exp(1j * (mus[a] * x2 + mus[bb] * y2))[..., None, None]
    return out * (1j / (par.omega**2 * dlt))[..., None, None]


def _check_not_pole(xi, par):
    if np.isfinite(par.k_R) and np.any(np.isclose(np.abs(xi), par.k_R, rtol=1e-13, atol=0)):
        raise ValueError("spectral Neumann density evaluated at the Rayleigh pole")


def spectral_neumann_bulk(xi, x2: float, y2: float, medium: ElasticMedium, eps: float = 0.0):
    """Spectral Neumann tensor ``Ghat(x2;y2) - Ghat(x2;-y2) + (i/(omega^2 delta)) sum A e^{...}``."""
    if not (x2 > 0 and y2 > 0):
        raise ValueError("spectral_neumann_bulk needs x2 > 0 and y2 > 0")
    par = _Params.of(medium, eps)
    if not eps:
        _check_not_pole(xi, par)
    return _ghat(xi, x2, y2, par) - _ghat(xi, x2, -y2, par) + _bulk_correction_density(xi, x2, y2, par)


def _surface_density(xi, y2, par):
    xi, mp, ms, b, dlt = _scalars(xi, par)
    n_p, n_s = _surface_matrices(xi, mp, ms, b, par.mu)
    ep = np.exp(1j * mp * y2)[..., None, None]
    es = np.exp(1j * ms * y2)[..., None, None]
    return (n_p * ep + n_s * es) / dlt[..., None, None]


def spectral_neumann_surface(xi, y2: float, medium: ElasticMedium, eps: float = 0.0):
    """Spectral Neumann tensor with the receiver on the surface, ``(N_p e^{i mu_p y2} + N_s e^{i mu_s y2})/delta``."""
    if not y2 > 0:
        raise ValueError("spectral_neumann_surface needs y2 > 0")
    par = _Params.of(medium, eps)
    if not eps:
        _check_not_pole(xi, par)
    return _surface_density(xi, y2, par)


def _dirichlet_traction_density(xi, y2, par):
    xi = np.asarray(xi, dtype=float)
    mp, ms = par.mus(xi)
    t_p, t_s = _traction_matrices(xi, mp, ms)
    return t_p * np.exp(1j * mp * y2)[..., None, None] + t_s * np.exp(1j * ms * y2)[..., None, None]


def spectral_dirichlet_traction(xi, y2: float, medium: ElasticMedium, eps: float = 0.0):
    """Surface traction density ``T_p e^{i mu_p y2} + T_s e^{i mu_s y2}`` of the Dirichlet tensor."""
    return _dirichlet_traction_density(xi, y2, _Params.of(medium, eps))


# ---------------------------------------------------------------------------
# full-space tensor in closed form


def _y2_regular(x):
    """``Y_2(x) + 4/(pi x^2)`` without cancellation for small ``x``."""
    x = np.asarray(x)
    out = np.empty(x.shape, dtype=np.result_type(x, float))
    small = np.abs(x) < 1.0
    xl = x[~small]
    out[~small] = special.yv(2, xl) + 4 / (np.pi * xl**2) if not np.iscomplexobj(x) else \
        ((special.hankel1(2, xl) - special.jv(2, xl)) / 1j) + 4 / (np.pi * xl**2)
    xs = x[small]
    if xs.size:
        h = 0.5 * xs
        term = h**2 / 2.0
        acc = np.zeros_like(xs)
        for k in range(18):
            acc = acc + (special.digamma(k + 1) + special.digamma(k + 3)) * term
            term = term * (-(h**2)) / ((k + 1) * (k + 3))
        out[small] = -1 / np.pi + (2 / np.pi) * np.log(h) * special.jv(2, xs) - acc / np.pi
    return out


def _hankel_parts(x):
    """``H0, H1`` and the regularized ``H2 + 4i/(pi x^2)`` with its derivative."""
    h0 = special.hankel1(0, x)
    h1 = special.hankel1(1, x)
    h2 = special.jv(2, x) + 1j * _y2_regular(x)
    dh2 = h1 - 2 * h2 / x
    return h0, h1, h2, dh2


def _bessel_j_parts(x):
    j0, j1, j2 = special.jv(0, x), special.jv(1, x), special.jv(2, x)
    with np.errstate(invalid="ignore", divide="ignore"):
        dj2 = np.where(x == 0, 0.0, j1 - 2 * j2 / np.where(x == 0, 1.0, x))
    return j0, j1, j2, dj2


def _radial(r, par, kind):
    """Coefficients ``A, B`` of ``G = A I + B rhat rhat^T`` and their radial derivatives."""
    cs, cp = 1 / par.mu, 1 / (par.lam + 2 * par.mu)
    parts = _hankel_parts if kind == "h" else _bessel_j_parts
    out = []
    for k in (par.k_s, par.k_p):
        z0, z1, z2, dz2 = parts(k * r)
        out.append((z0, -z1 * k, z2, dz2 * k))
    (s0, ds0, s2, ds2), (p0, dp0, p2, dp2) = out
    a = 0.125j * ((s0 - s2) * cs + (p0 + p2) * cp)
    da = 0.125j * ((ds0 - ds2) * cs + (dp0 + dp2) * cp)
    b = 0.25j * (s2 * cs - p2 * cp)
    db = 0.25j * (ds2 * cs - dp2 * cp)
    return a, da, b, db


def _geometry(x, y):
    d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
    r = np.hypot(d[..., 0], d[..., 1])
    with np.errstate(invalid="ignore", divide="ignore"):
        rh = np.where(r[..., None] > 0, d / np.where(r > 0, r, 1.0)[..., None], 0.0)
    return r, rh


def _green_from_radial(r, rh, a, b):
    eye = np.eye(2)
    return a[..., None, None] * eye + b[..., None, None] * rh[..., :, None] * rh[..., None, :]


def _gradient_from_radial(r, rh, a, da, b, db):
    eye = np.eye(2)
    with np.errstate(invalid="ignore", divide="ignore"):
        bor = np.where(r > 0, b / np.where(r > 0, r, 1.0), 0.0)
    rk = rh[..., :, None, None]
    ri = rh[..., None, :, None]
    rj = rh[..., None, None, :]
    e_ij = eye[None, :, :]
    e_ik = eye[:, :, None]
    e_jk = eye[:, None, :]
    return (da[..., None, None, None] * rk * e_ij
            + db[..., None, None, None] * rk * ri * rj
            + bor[..., None, None, None] * (e_ik * rj + e_jk * ri - 2 * ri * rj * rk))


def fullspace_green(x, y, medium: ElasticMedium):
    """Outgoing fundamental tensor of the full space; broadcasts over leading axes."""
    par = _Params.of(medium)
    r, rh = _geometry(x, y)
    if np.any(r == 0):
        raise ValueError("fullspace_green is singular at x == y")
    a, _, b, _ = _radial(r, par, "h")
    return _green_from_radial(r, rh, a, b)


def fullspace_green_gradient(x, y, medium: ElasticMedium):
    """``D[..., k, i, j] = d/dx_k G_ij(x, y)``."""
    par = _Params.of(medium)
    r, rh = _geometry(x, y)
    if np.any(r == 0):
        raise ValueError("fullspace_green_gradient is singular at x == y")
    a, da, b, db = _radial(r, par, "h")
    return _gradient_from_radial(r, rh, a, da, b, db)


def fullspace_green_bessel_j(x, y, medium: ElasticMedium, gradient: bool = False):
    """``G`` with Bessel ``J`` in place of Hankel functions (entire in ``x - y``).

    For real wavenumbers this equals ``i Im G``; it is the coefficient of the
    logarithmic singularity, ``G = (2i/pi) G_J log r + (less singular)``.
    """
    par = _Params.of(medium)
    r, rh = _geometry(x, y)
    a, da, b, db = _radial(r, par, "j")
    if gradient:
        return _gradient_from_radial(r, rh, a, da, b, db)
    return _green_from_radial(r, rh, a, b)


def traction_from_gradient(grad, normal, medium: ElasticMedium):
    """Traction ``sigma(u) nu`` for displacement columns with gradient ``grad[..., k, i, j]``."""
    lam, mu = medium.lam, medium.mu
    nu = np.asarray(normal, dtype=float)
    div = np.einsum("...kkj->...j", grad)
    t = lam * nu[..., :, None] * div[..., None, :]
    t = t + mu * (np.einsum("...lij,...l->...ij", grad, nu) + np.einsum("...ilj,...l->...ij", grad, nu))
    return t


# ---------------------------------------------------------------------------
# Neumann tensor: spectral correction, batched


_CHUNK_BYTES = 48 * 2**20


def _rule_for(par, offset, depth_min, depth_max, pole_window=True, tol=1e-13):
    return spectral_rule(float(np.real(par.k_p)), float(np.real(par.k_s)), par.k_R, offset,
                         depth_min, depth_max, tol=tol, pole_window=pole_window)


def _pair_extent(X, Y):
    offset = float(np.max(X[:, 0]) - np.min(Y[:, 0]))
    offset = max(offset, float(np.max(Y[:, 0]) - np.min(X[:, 0])), 0.0)
    dmin = float(np.min(X[:, 1]) + np.min(Y[:, 1]))
    dmax = float(np.max(X[:, 1]) + np.max(Y[:, 1]))
    return offset, dmin, dmax


def _correction_nodes(par, X, Y, tol):
    offset, dmin, dmax = _pair_extent(X, Y)
    if not dmin > 0:
        raise ValueError("spectral correction needs x2 + y2 > 0 for every pair")
    rule = _rule_for(par, offset, dmin, dmax, tol=tol)
    xi = rule.nodes
    _, mp, ms, b, dlt = _scalars(xi, par)
    coef = rule.weights * 1j / (2 * np.pi * par.omega**2 * dlt)
    # residue bracket -(1/(2 omega^2)) [sum A/delta' e^{...}]_{-k_R}^{k_R} as two extra nodes
    kr = np.array([par.k_R, -par.k_R])
    _, mpr, msr, br, _ = _scalars(kr, par)
    dpr = -8 * kr * br + 8 * kr * msr * mpr - 4 * kr**3 * (mpr / msr + msr / mpr)
    coef_r = np.array([-1.0, 1.0]) / (2 * par.omega**2 * dpr)
    return (np.concatenate([xi, kr]), np.concatenate([mp, mpr]), np.concatenate([ms, msr]),
            np.concatenate([b, br]), np.concatenate([coef, coef_r]))


def neumann_correction(X, Y, medium: ElasticMedium, gradient: bool = False, tol: float = 1e-13):
    """Smooth part ``C = N - G(x, y) + G(x, y')`` for all target/source pairs.

    Returns ``C`` of shape ``(M, N, 2, 2)`` and, with ``gradient``, also
    ``dC[m, n, k, i, j] = d/dx_k C_ij``.  Targets may lie on or (for finite
    difference checks) marginally below the surface as long as ``x2 + y2 > 0``.
    """
    par = _Params.of(medium)
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    xi, mp, ms, b, coef = _correction_nodes(par, X, Y, tol)
    m, n = len(X), len(Y)
    out = np.zeros((3 if gradient else 1, m, 4 * n), dtype=complex)
    chunk = max(64, int(_CHUNK_BYTES // (16 * 4 * n)))
    for lo in range(0, xi.size, chunk):
        sl = slice(lo, lo + chunk)
        xs, mus = xi[sl], {"p": mp[sl], "s": ms[sl]}
        amat = _a_matrices(xs, mus["p"], mus["s"], b[sl])
        ey = {k: np.exp(1j * (v[:, None] * Y[None, :, 1] - xs[:, None] * Y[None, :, 0])) for k, v in mus.items()}
        for a in ("p", "s"):
            w = 0
            for bb in ("p", "s"):
                w = w + (coef[sl, None, None] * amat[(a, bb)])[:, :, :, None] * ey[bb][:, None, None, :]
            w = w.reshape(len(xs), 4 * n)
            ex = np.exp(1j * (X[:, 1:2] * mus[a][None, :] + X[:, 0:1] * xs[None, :]))
            out[0] += ex @ w
            if gradient:
                out[1] += (ex * (1j * xs)[None, :]) @ w
                out[2] += (ex * (1j * mus[a])[None, :]) @ w
    out = out.reshape(out.shape[0], m, 2, 2, n).transpose(0, 1, 4, 2, 3)
    if gradient:
        return out[0], np.moveaxis(out[1:], 0, 2)
    return out[0]


def _image(Y):
    Yp = np.array(Y, dtype=float, copy=True)
    Yp[..., 1] *= -1
    return Yp


def neumann_green_matrix(X, Y, medium: ElasticMedium, tol: float = 1e-13):
    """``N(x_m, y_n)`` for all pairs (shape ``(M, N, 2, 2)``); pairs must not coincide."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    c = neumann_correction(X, Y, medium, tol=tol)
    xx, yy = X[:, None, :], Y[None, :, :]
    return fullspace_green(xx, yy, medium) - fullspace_green(xx, _image(yy), medium) + c


def neumann_traction_matrix(X, normals, Y, medium: ElasticMedium, tol: float = 1e-13):
    """Traction ``sigma_x(N(x_m, y_n) e_j) nu_m`` (shape ``(M, N, 2, 2)``)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    _, dc = neumann_correction(X, Y, medium, gradient=True, tol=tol)
    xx, yy = X[:, None, :], Y[None, :, :]
    grad = dc + fullspace_green_gradient(xx, yy, medium) - fullspace_green_gradient(xx, _image(yy), medium)
    return traction_from_gradient(grad, np.asarray(normals, dtype=float)[:, None, :], medium)


def surface_neumann_matrix(x1, Y, medium: ElasticMedium, tol: float = 1e-13):
    """``N((x1_m, 0), y_n)`` from the reduced surface spectral form (shape ``(M, N, 2, 2)``)."""
    par = _Params.of(medium)
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    if np.any(Y[:, 1] <= 0):
        raise ValueError("sources must lie strictly below the surface")
    X = np.column_stack([x1, np.zeros_like(x1)])
    offset, dmin, dmax = _pair_extent(X, Y)
    rule = _rule_for(par, offset, dmin, dmax, tol=tol)
    xi = rule.nodes
    _, mp, ms, b, dlt = _scalars(xi, par)
    n_p, n_s = _surface_matrices(xi, mp, ms, b, par.mu)
    coef = rule.weights / (2 * np.pi * dlt)
    # residue bracket (i/2)[sum N_a/delta' e^{...}]_{-k_R}^{k_R}
    kr = np.array([par.k_R, -par.k_R])
    _, mpr, msr, br, _ = _scalars(kr, par)
    dpr = -8 * kr * br + 8 * kr * msr * mpr - 4 * kr**3 * (mpr / msr + msr / mpr)
    npr, nsr = _surface_matrices(kr, mpr, msr, br, par.mu)
    xi = np.concatenate([xi, kr])
    mp, ms = np.concatenate([mp, mpr]), np.concatenate([ms, msr])
    n_p, n_s = np.concatenate([n_p, npr]), np.concatenate([n_s, nsr])
    coef = np.concatenate([coef, 0.5j * np.array([1.0, -1.0]) / dpr])
    m, n = len(x1), len(Y)
    out = np.zeros((m, 4 * n), dtype=complex)
    chunk = max(64, int(_CHUNK_BYTES // (16 * 4 * n)))
    for lo in range(0, xi.size, chunk):
        sl = slice(lo, lo + chunk)
        xs = xi[sl]
        phase = np.exp(-1j * xs[:, None] * Y[None, :, 0])
        w = (n_p[sl, :, :, None] * np.exp(1j * mp[sl, None] * Y[None, :, 1])[:, None, None, :]
             + n_s[sl, :, :, None] * np.exp(1j * ms[sl, None] * Y[None, :, 1])[:, None, None, :])
        w = (coef[sl, None, None, None] * w * phase[:, None, None, :]).reshape(len(xs), 4 * n)
        out += np.exp(1j * x1[:, None] * xs[None, :]) @ w
    return out.reshape(m, 2, 2, n).transpose(0, 3, 1, 2)


def residue_bracket(x, y, medium: ElasticMedium):
    """The ``+-k_R`` residue contribution to ``N(x, y)`` (bulk form; ``x2 >= 0``)."""
    par = _Params.of(medium)
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    kr = np.array([par.k_R, -par.k_R])
    _, mp, ms, b, _ = _scalars(kr, par)
    dp = -8 * kr * b + 8 * kr * ms * mp - 4 * kr**3 * (mp / ms + ms / mp)
    mus = {"p": mp, "s": ms}
    tot = 0
    for (a, bb), m in _a_matrices(kr, mp, ms, b).items():
        e = np.exp(1j * (mus[a] * x[1] + mus[bb] * y[1]) + 1j * (x[0] - y[0]) * kr)
        tot = tot + m * (e / dp)[:, None, None]
    return -(tot[0] - tot[1]) / (2 * par.omega**2)


def _adaptive_tol(rel_tol):
    return ToleranceSpec(rel_tol=rel_tol, abs_tol=1e-300, max_panels=20000)


def _delta_prime(xi, par):
    _, mp, ms, b, _ = _scalars(xi, par)
    return -8 * xi * b + 8 * xi * ms * mp - 4 * xi**3 * (mp / ms + ms / mp)


def _neumann_adaptive(x, y, medium, rel_tol):
    """Principal value by explicit pole subtraction plus the residue bracket."""
    par = _Params.of(medium)
    t = x[0] - y[0]
    depth = x[1] + y[1]
    if x[1] == 0:
        def num(xi):
            xi, mp, ms, b, _ = _scalars(xi, par)
            n_p, n_s = _surface_matrices(xi, mp, ms, b, par.mu)
            return n_p * np.exp(1j * mp * y[1])[..., None, None] + n_s * np.exp(1j * ms * y[1])[..., None, None]
        base = _surface_residue(x, y, par)
    else:
        def num(xi):
            xi, mp, ms, b, _ = _scalars(xi, par)
            mus = {"p": mp, "s": ms}
            out = 0
            for (a, bb), m in _a_matrices(xi, mp, ms, b).items():
                out = out + m * np.exp(1j * (mus[a] * x[1] + mus[bb] * y[1]))[..., None, None]
            return out * 1j / par.omega**2
        base = (fullspace_green(x, y, medium) - fullspace_green(x, _image(y), medium)
                + residue_bracket(x, y, medium))

    def f(xi):
        dl = _scalars(xi, par)[4]
        return (num(xi) * (np.exp(1j * xi * t) / dl)[:, None, None]).reshape(-1, 4) / (2 * np.pi)

    kr = par.k_R
    k_p, k_s = float(np.real(par.k_p)), float(np.real(par.k_s))
    poles = []
    for xi0 in (kr, -kr):
        g = num(np.array([xi0]))[0] * np.exp(1j * xi0 * t) / (2 * np.pi * _delta_prime(np.array([xi0]), par)[0])
        poles.append((xi0, g.reshape(4)))
    xi_max = np.sqrt(k_s**2 + (40.0 / depth) ** 2) + 2 * kr
    bps = [-k_s, -k_p, k_p, k_s]
    width = np.pi / (2 * abs(t)) if t else None
    vals = np.zeros(4, dtype=complex)
    for comp in range(4):
        pole_specs = [PoleSpec(p, complex(g[comp])) for p, g in poles]
        vals[comp] = pv_integrate(lambda xi, c=comp: f(xi)[:, c], -xi_max, xi_max, pole_specs,
                                  _adaptive_tol(rel_tol), breakpoints=bps, max_width=width)
    return base + vals.reshape(2, 2)


def _surface_residue(x, y, par):
    kr = np.array([par.k_R, -par.k_R])
    _, mp, ms, b, _ = _scalars(kr, par)
    dp = -8 * kr * b + 8 * kr * ms * mp - 4 * kr**3 * (mp / ms + ms / mp)
    n_p, n_s = _surface_matrices(kr, mp, ms, b, par.mu)
    e = np.exp(1j * (x[0] - y[0]) * kr)
    tot = (n_p * np.exp(1j * mp * y[1])[:, None, None] + n_s * np.exp(1j * ms * y[1])[:, None, None])
    tot = tot * (e / dp)[:, None, None]
    return 0.5j * (tot[0] - tot[1])


def neumann_green(x, y, medium: ElasticMedium, method: str = "rule", rel_tol: float = 1e-10) -> Tensor2C:
    """Half-space Neumann Green tensor ``N(x, y)`` for ``x2 >= 0``, ``y2 > 0``.

    ``method="rule"`` uses the fixed spectral rule (fast, default);
    ``method="adaptive"`` integrates the principal value adaptively with
    explicit pole subtraction and is used as a reference.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not y[1] > 0 or x[1] < 0:
        raise ValueError("neumann_green needs x2 >= 0 and y2 > 0")
    if np.allclose(x, y, rtol=0, atol=1e-14):
        raise ValueError("neumann_green is singular at x == y")
    if method == "adaptive":
        return as_tensor2c(_neumann_adaptive(x, y, medium, rel_tol))
    if method != "rule":
        raise ValueError(f"unknown method {method!r}")
    if x[1] == 0:
        return as_tensor2c(surface_neumann_matrix([x[0]], y[None], medium)[0, 0])
    return as_tensor2c(neumann_green_matrix(x[None], y[None], medium)[0, 0])


def neumann_green_stress(x, normal, y, q, medium: ElasticMedium):
    """Traction vector ``sigma(N(., y) q)(x) normal``."""
    t = neumann_traction_matrix(np.asarray(x, dtype=float)[None], np.asarray(normal, dtype=float)[None],
                                np.asarray(y, dtype=float)[None], medium)[0, 0]
    return t @ np.asarray(q)


def neumann_green_complex_freq(x, y, eps: float, medium: ElasticMedium, rel_tol: float = 1e-10) -> Tensor2C:
    """``N`` at the damped frequency ``omega (1 + i eps)`` by plain adaptive Fourier inversion."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if not (y[1] > 0 and x[1] >= 0):
        raise ValueError("neumann_green_complex_freq needs x2 >= 0 and y2 > 0")
    par = _Params.of(medium, eps)
    t = x[0] - y[0]
    if x[1] == 0:
        def dens(xi):
            return _surface_density(xi, y[1], par)
        depth = y[1]
    else:
        if x[1] == y[1]:
            raise ValueError("bulk complex-frequency form needs x2 != y2")

        def dens(xi):
            return (_ghat(xi, x[1], y[1], par) - _ghat(xi, x[1], -y[1], par)
                    + _bulk_correction_density(xi, x[1], y[1], par))
        depth = abs(x[1] - y[1])

    def f(xi):
        return (dens(xi) * np.exp(1j * xi * t)[:, None, None]).reshape(-1, 4) / (2 * np.pi)

    k_p, k_s, k_r = float(np.real(par.k_p)), float(np.real(par.k_s)), par.k_R
    probe = np.linspace(-k_r * 1.5, k_r * 1.5, 301)
    bound = float(np.max(np.abs(f(probe))))
    tol = ToleranceSpec(rel_tol=rel_tol, abs_tol=1e-14 * bound, max_panels=20000)
    width = np.pi / (2 * abs(t)) if t else None
    val = truncated_axis_integrate(f, depth, tol, onset=k_s, bound=bound,
                                   breakpoints=[-k_r, -k_s, -k_p, 0.0, k_p, k_s, k_r],
                                   phase_rate=np.pi / (2 * width) if width else 0.0)
    return as_tensor2c(np.asarray(val).reshape(2, 2))


# ---------------------------------------------------------------------------
# Dirichlet surface traction


def dirichlet_traction_matrix(x1, Z, medium: ElasticMedium, tol: float = 1e-13):
    """``T_D((x1_m, 0), z_p)`` for all pairs (shape ``(M, P, 2, 2)``).

    Points sharing a depth are processed together: for each distinct ``z2``
    the spectral density is formed once and contracted against the
    separable phases ``exp(i xi x1)`` and ``exp(-i xi z1)``.
    """
    par = _Params.of(medium)
    x1 = np.atleast_1d(np.asarray(x1, dtype=float))
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    if np.any(Z[:, 1] <= 0):
        raise ValueError("dirichlet_traction needs z2 > 0")
    X = np.column_stack([x1, np.zeros_like(x1)])
    offset, dmin, dmax = _pair_extent(X, Z)
    rule = _rule_for(par, offset, dmin, dmax, pole_window=False, tol=tol)
    xi = rule.nodes
    mp, ms = par.mus(xi)
    t_p, t_s = _traction_matrices(xi, mp, ms)
    w = rule.weights / (2 * np.pi)
    ex = np.exp(1j * x1[:, None] * xi[None, :])
    out = np.empty((len(x1), len(Z), 2, 2), dtype=complex)
    depths, inverse = np.unique(Z[:, 1], return_inverse=True)
    for k, z2 in enumerate(depths):
        idx = np.flatnonzero(inverse == k)
        dens = (t_p * np.exp(1j * mp * z2)[:, None, None] + t_s * np.exp(1j * ms * z2)[:, None, None])
        dens = dens * w[:, None, None]
        ez = np.exp(-1j * xi[:, None] * Z[idx, 0][None, :])
        rhs = (dens[:, :, :, None] * ez[:, None, None, :]).reshape(len(xi), 4 * len(idx))
        out[:, idx] = (ex @ rhs).reshape(len(x1), 2, 2, len(idx)).transpose(0, 3, 1, 2)
    return out


def dirichlet_traction(x, z, medium: ElasticMedium, method: str = "rule", rel_tol: float = 1e-10) -> Tensor2C:
    """Surface traction ``T_D(x, z)`` of the Dirichlet tensor for ``x`` on the surface."""
    x = np.asarray(x, dtype=float).reshape(-1)
    z = np.asarray(z, dtype=float)
    x1 = float(x[0])
    if x.size > 1 and x[1] != 0:
        raise ValueError("dirichlet_traction needs x on the surface")
    if method == "rule":
        return as_tensor2c(dirichlet_traction_matrix([x1], z[None], medium)[0, 0])
    if method != "adaptive":
        raise ValueError(f"unknown method {method!r}")
    par = _Params.of(medium)
    t = x1 - z[0]

    def f(xi):
        return (_dirichlet_traction_density(xi, z[1], par) * np.exp(1j * xi * t)[:, None, None]).reshape(-1, 4) / (2 * np.pi)

    k_p, k_s = float(par.k_p), float(par.k_s)
    tol = ToleranceSpec(rel_tol=rel_tol, abs_tol=1e-15, max_panels=20000)
    val = truncated_axis_integrate(f, z[1], tol, onset=k_s, bound=1.0, breakpoints=[-k_s, -k_p, k_p, k_s],
                                   phase_rate=abs(t))
    return as_tensor2c(np.asarray(val).reshape(2, 2))


# ---------------------------------------------------------------------------
# memo cache


class GreenCache:
    """Memo table for a Green evaluator keyed by quantized ``(x1 - y1, x2, y2)``.

    Inputs are rounded to 12 significant digits before evaluation, so a hit
    returns exactly what a fresh evaluation at the same key would.  Inserts
    are insert-if-absent under a lock; readers never see partial entries.
    """

    def __init__(self, evaluator, batch_evaluator=None):
        self._evaluator = evaluator
        self._batch = batch_evaluator
        self._table: dict[tuple, np.ndarray] = {}
        self._lock = threading.Lock()
        self.hits = 0
        self.misses = 0

    @staticmethod
    def quantize(v: float) -> float:
        return float(f"{float(v):.12e}")

    def key(self, dx1, x2, y2):
        return (self.quantize(dx1), self.quantize(x2), self.quantize(y2))

    def get(self, dx1: float, x2: float, y2: float) -> Tensor2C:
        k = self.key(dx1, x2, y2)
        val = self._table.get(k)
        if val is not None:
            self.hits += 1
            return val
        self.misses += 1
        fresh = np.asarray(self._evaluator(*k), dtype=complex)
        fresh.setflags(write=False)
        with self._lock:
            return self._table.setdefault(k, fresh)

    def get_batch(self, dx1, x2: float, y2: float) -> np.ndarray:
        """Tensors for an array of offsets; misses are evaluated in one batched call.

        The batch evaluator maps ``(dx1_array, x2, y2)`` to ``(n, 2, 2)``.
        Without one, misses fall back to the scalar evaluator.
        """
        keys = [self.key(d, x2, y2) for d in np.ravel(dx1)]
        missing = sorted({k for k in keys if k not in self._table})
        absent = set(missing)
        n_miss = sum(1 for k in keys if k in absent)
        self.misses += n_miss
        self.hits += len(keys) - n_miss
        if missing:
            if self._batch is not None:
                vals = np.asarray(self._batch(np.array([k[0] for k in missing]), missing[0][1], missing[0][2]),
                                  dtype=complex)
            else:
                vals = [np.asarray(self._evaluator(*k), dtype=complex) for k in missing]
            with self._lock:
                for k, v in zip(missing, vals):
                    v = np.array(v)
                    v.setflags(write=False)
                    self._table.setdefault(k, v)
        return np.stack([self._table[k] for k in keys])

    def __len__(self):
        return len(self._table)
