"""Point spread functions of the surface back-propagation operator.

Three evaluators of the 2x2 tensor that images a point source at ``y``:

* ``J_d`` integrates ``T_D(x, z)^T conj(N(x, y))`` over the aperture ``|x1| < d``;
* ``J`` is the infinite-aperture limit, written in the Fourier domain as a
  principal value plus a residue bracket at the Rayleigh poles;
* ``F`` keeps only the propagating band ``|xi| < k_s``; it carries the
  resolution (peak of ``-Im F_ii`` at ``z = y``).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import green
from .green import GreenCache, Tensor2C, as_tensor2c
from .io_utils import atomic_write_text
from .medium import ElasticMedium
from .quadrature import PoleSpec, ToleranceSpec, _composite, adaptive_integrate, pv_integrate

__all__ = [
    "PsfConfig",
    "PsfReport",
    "psf_F",
    "psf_F_decomposed",
    "psf_F_grid",
    "psf_J",
    "psf_J_residue",
    "psf_Jd",
    "psf_Jd_grid",
    "SurfaceTensorCache",
    "psf_resolution_profile",
    "write_grid_csv",
]


# ---------------------------------------------------------------------------
# spectral pieces (conjugations exactly as in the Parseval form)


def _pieces(xi, medium: ElasticMedium):
    wn = medium.wavenumbers
    xi = np.asarray(xi, dtype=float)
    mp, ms = wn.mu_p(xi), wn.mu_s(xi)
    b = wn.k_s**2 - 2 * xi**2
    dlt = b**2 + 4 * xi**2 * ms * mp
    g = (xi**2 + ms * mp)[..., None, None]
    c = 1j / medium.mu
    t = {"p": _m22(xi**2, -xi * mp, -xi * ms, mp * ms) / g,
         "s": _m22(ms * mp, xi * mp, xi * ms, xi**2) / g}
    n = {"p": c * _m22(2 * xi**2 * ms, -2 * xi * ms * mp, -xi * b, mp * b),
         "s": c * _m22(ms * b, xi * b, 2 * xi * ms * mp, 2 * xi**2 * mp)}
    return {"p": mp, "s": ms}, t, n, dlt


def _m22(a, b, c, d):
    a, b, c, d = np.broadcast_arrays(*(np.asarray(v, dtype=complex) for v in (a, b, c, d)))
    return np.stack([np.stack([a, b], -1), np.stack([c, d], -1)], -2)


def _check_points(*pts):
    out = []
    for p in pts:
        p = np.asarray(p, dtype=float).reshape(2)
        if not p[1] > 0:
            raise ValueError("PSF points must lie strictly below the surface (x2 > 0)")
        out.append(p)
    return out


def _band_integral(f, a, b, rate, rel_tol):
    tol = ToleranceSpec(rel_tol=rel_tol, abs_tol=1e-300, max_panels=20000)
    width = np.pi / (2 * rate) if rate > 0 else None
    return adaptive_integrate(f, a, b, tol, max_width=width)


def psf_F(z, y, medium: ElasticMedium, rel_tol: float = 1e-12) -> Tensor2C:
    """Propagating-band PSF ``F(z, y)`` from the direct spectral form.

    ``(1/2pi) sum_a int_{|xi|<k_a} T_a^T conj(N_a) / conj(delta) exp(i mu_a (z2-y2) + i (y1-z1) xi)``.
    """
    z, y = _check_points(z, y)
    wn = medium.wavenumbers
    t1, t2 = y[0] - z[0], z[1] - y[1]

    def integrand(alpha):
        def f(xi):
            mus, t, n, dlt = _pieces(xi, medium)
            m = np.swapaxes(t[alpha], -1, -2) @ np.conj(n[alpha])
            ph = np.exp(1j * mus[alpha] * t2 + 1j * xi * t1) / np.conj(dlt)
            return (m * ph[:, None, None]).reshape(-1, 4) / (2 * np.pi)
        return f

    rate = abs(t1) + abs(t2) * wn.k_s
    total = _band_integral(integrand("p"), -wn.k_p, wn.k_p, rate, rel_tol)
    for a, b in ((-wn.k_s, -wn.k_p), (-wn.k_p, wn.k_p), (wn.k_p, wn.k_s)):
        total = total + _band_integral(integrand("s"), a, b, rate, rel_tol)
    return as_tensor2c(np.asarray(total).reshape(2, 2))


def psf_F_decomposed(z, y, medium: ElasticMedium, rel_tol: float = 1e-12):
    """``F`` as the sum of its three real-form band integrals.

    Returns ``(III1, III2, III3)``: the compressional part on ``|xi| < k_p``,
    the shear part on ``|xi| < k_p`` and the shear part on
    ``k_p < |xi| < k_s`` where ``mu_p`` is imaginary.
    """
    z, y = _check_points(z, y)
    wn = medium.wavenumbers
    mu = medium.mu
    t1, t2 = y[0] - z[0], z[1] - y[1]

    def base(xi):
        mp, ms = wn.mu_p(xi), wn.mu_s(xi)
        b = wn.k_s**2 - 2 * xi**2
        dlt = b**2 + 4 * xi**2 * ms * mp
        gam = xi**2 + ms * mp
        return xi, mp, ms, dlt, gam

    def f1(xi):
        xi, mp, ms, dlt, gam = base(xi)
        m = _m22(xi**2, -xi * mp, -xi * mp, mp**2)
        c = -1j * wn.k_s**2 * ms / (mu * gam * dlt) * np.exp(1j * mp * t2 + 1j * xi * t1)
        return (c[:, None, None] * m).reshape(-1, 4) / (2 * np.pi)

    def f2(xi):
        xi, mp, ms, dlt, gam = base(xi)
        m = _m22(ms**2, xi * ms, xi * ms, xi**2)
        c = -1j * wn.k_s**2 * mp / (mu * gam * dlt) * np.exp(1j * ms * t2 + 1j * xi * t1)
        return (c[:, None, None] * m).reshape(-1, 4) / (2 * np.pi)

    def f3(xi):
        xi, mp, ms, dlt, gam = base(xi)
        m = _m22(ms**2, xi * ms, xi * ms, xi**2)
        c = -1j * (wn.k_s**2 - 4 * xi**2) * mp / (mu * gam * np.conj(dlt)) * np.exp(1j * ms * t2 + 1j * xi * t1)
        return (c[:, None, None] * m).reshape(-1, 4) / (2 * np.pi)

    rate = abs(t1) + abs(t2) * wn.k_s
    iii1 = _band_integral(f1, -wn.k_p, wn.k_p, rate, rel_tol)
    iii2 = _band_integral(f2, -wn.k_p, wn.k_p, rate, rel_tol)
    iii3 = (_band_integral(f3, -wn.k_s, -wn.k_p, rate, rel_tol)
            + _band_integral(f3, wn.k_p, wn.k_s, rate, rel_tol))
    return tuple(as_tensor2c(np.asarray(v).reshape(2, 2)) for v in (iii1, iii2, iii3))


def psf_F_grid(Z, y, medium: ElasticMedium, order: int = 16) -> np.ndarray:
    """``F(z, y)`` for many ``z`` at once with a fixed cosine-mapped band rule.

    Returns shape ``(len(Z), 2, 2)``.  Agrees with :func:`psf_F` to
    quadrature accuracy; used for grid sweeps.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    (y,) = _check_points(y)
    if np.any(Z[:, 1] <= 0):
        raise ValueError("PSF points must lie strictly below the surface (x2 > 0)")
    wn = medium.wavenumbers
    t1 = y[0] - Z[:, 0]
    t2 = Z[:, 1] - y[1]
    spread = float(np.max(np.abs(t1)) + np.max(np.abs(t2)))
    out = np.zeros((len(Z), 4), dtype=complex)
    bands = [("p", -wn.k_p, wn.k_p), ("s", -wn.k_s, -wn.k_p), ("s", -wn.k_p, wn.k_p), ("s", wn.k_p, wn.k_s)]
    for alpha, a, b in bands:
        n_pan = max(2, int(np.ceil(0.5 * np.pi * spread * (b - a + wn.k_s) / (4 * np.pi))) + 1)
        xi, w = _composite(a, b, n_pan, order, True)
        mus, t, n, dlt = _pieces(xi, medium)
        m = (np.swapaxes(t[alpha], -1, -2) @ np.conj(n[alpha])).reshape(-1, 4)
        m = m * (w / (2 * np.pi * np.conj(dlt)))[:, None]
        ph = np.exp(1j * (np.outer(t2, mus[alpha]) + np.outer(t1, xi)))
        out += ph @ m
    return out.reshape(-1, 2, 2)


# ---------------------------------------------------------------------------
# infinite aperture


def _j_numerator(xi, z, y, medium):
    mus, t, n, _ = _pieces(xi, medium)
    out = 0
    for a in ("p", "s"):
        for b in ("p", "s"):
            m = np.swapaxes(t[a], -1, -2) @ np.conj(n[b])
            ph = np.exp(1j * (mus[a] * z[1] - np.conj(mus[b]) * y[1]) + 1j * (y[0] - z[0]) * xi)
            out = out + m * ph[..., None, None]
    return out


def psf_J_residue(z, y, medium: ElasticMedium) -> Tensor2C:
    """Rayleigh-pole bracket ``-(i/2) [sum T_a^T conj(N_b) / conj(delta') e^{...}]_{-k_R}^{k_R}``."""
    z, y = _check_points(z, y)
    wn = medium.wavenumbers
    kr = np.array([wn.k_R, -wn.k_R])
    num = _j_numerator(kr, z, y, medium)
    dp = np.conj(wn.delta_prime(kr))
    val = num / dp[:, None, None]
    return as_tensor2c(-0.5j * (val[0] - val[1]))


def psf_J(z, y, medium: ElasticMedium, rel_tol: float = 1e-10) -> Tensor2C:
    """Infinite-aperture PSF: principal-value spectral integral plus the Rayleigh bracket."""
    z, y = _check_points(z, y)
    wn = medium.wavenumbers
    depth = z[1] + y[1]
    xi_max = max(2 * wn.k_R, np.sqrt(wn.k_s**2 + (40.0 / depth) ** 2))
    t1 = y[0] - z[0]

    def f(xi):
        dl = np.conj(wn.delta(xi))
        return (_j_numerator(xi, z, y, medium) / dl[:, None, None]).reshape(-1, 4) / (2 * np.pi)

    res = {}
    for x0 in (wn.k_R, -wn.k_R):
        g = _j_numerator(np.array([x0]), z, y, medium)[0] / np.conj(wn.delta_prime(x0))
        res[x0] = (g / (2 * np.pi)).reshape(4)
    tol = ToleranceSpec(rel_tol=rel_tol, abs_tol=1e-300, max_panels=20000)
    rate = abs(t1) + abs(z[1] - y[1]) * wn.k_s
    width = np.pi / (2 * rate) if rate > 0 else None
    vals = np.zeros(4, dtype=complex)
    bps = [-wn.k_s, -wn.k_p, wn.k_p, wn.k_s]
    for c in range(4):
        poles = [PoleSpec(x0, complex(r[c])) for x0, r in res.items()]
        vals[c] = pv_integrate(lambda xi, c=c: f(xi)[:, c], -xi_max, xi_max, poles, tol,
                               breakpoints=bps, max_width=width)
    return as_tensor2c(vals.reshape(2, 2) + psf_J_residue(z, y, medium))


# ---------------------------------------------------------------------------
# finite aperture


class SurfaceTensorCache:
    """Cached surface tensors ``T_D((x1,0), (0,z2))`` and ``N((x1,0), (0,y2))`` keyed by offset and depth."""

    def __init__(self, medium: ElasticMedium):
        self.medium = medium
        self.traction = GreenCache(
            lambda dx, x2, z2: green.dirichlet_traction([dx, 0.0], [0.0, z2], medium),
            lambda dx, x2, z2: green.dirichlet_traction_matrix(dx, [[0.0, z2]], medium)[:, 0])
        self.neumann = GreenCache(
            lambda dx, x2, y2: green.neumann_green([dx, 0.0], [0.0, y2], medium),
            lambda dx, x2, y2: green.surface_neumann_matrix(dx, [[0.0, y2]], medium)[:, 0])


def _line_rule(d, panel_width, order=16):
    """Gauss-Legendre on panels aligned to a fixed lattice so nested apertures share nodes."""
    n_half = int(np.ceil(d / panel_width - 1e-12))
    edges = np.concatenate([np.arange(-n_half, n_half + 1) * panel_width])
    edges = np.clip(edges, -d, d)
    edges = np.unique(edges)
    x, w = np.polynomial.legendre.leggauss(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    nodes = (0.5 * (lo + hi) + 0.5 * (hi - lo) * x[None, :]).ravel()
    weights = (0.5 * (hi - lo) * w[None, :]).ravel()
    return nodes, weights


def psf_Jd(z, y, d: float, medium: ElasticMedium, cache: SurfaceTensorCache | None = None,
           panel_width: float | None = None, order: int = 16) -> Tensor2C:
    """Finite-aperture PSF ``int_{-d}^{d} T_D(x, z)^T conj(N(x, y)) dx1``.

    Composite Gauss-Legendre with panels of a quarter shear wavelength; the
    integrand is analytic in ``x1``, so the rule is spectrally accurate.
    """
    z, y = _check_points(z, y)
    if d < 0:
        raise ValueError("aperture must be non-negative")
    if d == 0:
        return as_tensor2c(np.zeros((2, 2)))
    cache = cache or SurfaceTensorCache(medium)
    h = panel_width or 0.25 * 2 * np.pi / medium.wavenumbers.k_s
    x, w = _line_rule(d, h, order)
    td = cache.traction.get_batch(x - z[0], 0.0, z[1])
    nn = cache.neumann.get_batch(x - y[0], 0.0, y[1])
    val = np.einsum("n,nki,nkj->ij", w, td, np.conj(nn))
    return as_tensor2c(val)


def psf_Jd_grid(Z, y, d: float, medium: ElasticMedium, panel_width: float | None = None, order: int = 16):
    """``J_d(z, y)`` for many ``z`` (shape ``(len(Z), 2, 2)``), batched per depth."""
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    (y,) = _check_points(y)
    h = panel_width or 0.25 * 2 * np.pi / medium.wavenumbers.k_s
    x, w = _line_rule(d, h, order)
    nn = green.surface_neumann_matrix(x, y[None], medium)[:, 0]
    rhs = w[:, None, None] * np.conj(nn)
    out = np.empty((len(Z), 2, 2), dtype=complex)
    for z2 in np.unique(Z[:, 1]):
        idx = np.flatnonzero(Z[:, 1] == z2)
        td = green.dirichlet_traction_matrix(x, Z[idx], medium)  # (nx, k, 2, 2)
        out[idx] = np.einsum("nzki,nkj->zij", td, rhs)
    return out


# ---------------------------------------------------------------------------
# resolution profile


@dataclass(frozen=True)
class PsfConfig:
    """PSF sweep setup: aperture ``d`` and rectangular window ``(z1_min, z1_max, z2_min, z2_max)``.

    The window must satisfy ``max |z1| <= c1 d`` and ``diam <= c2 h`` with
    ``h`` the window depth.
    """

    medium: ElasticMedium
    d: float
    window: tuple = (-2.0, 2.0, 8.0, 12.0)
    n1: int = 41
    n2: int = 41
    rel_tol: float = 1e-10
    c1: float = 0.9
    c2: float = 10.0

    def __post_init__(self):
        z1a, z1b, z2a, z2b = self.window
        if not (z1b > z1a and z2b > z2a and z2a > 0):
            raise ValueError("window must be a non-empty rectangle below the surface")
        if not self.d > 0:
            raise ValueError("aperture d must be positive")
        if self.n1 < 2 or self.n2 < 2:
            raise ValueError("grid needs at least 2 points per axis")
        if not (0 < self.c1 < 1 and self.c2 > 0):
            raise ValueError("need 0 < c1 < 1 and c2 > 0")
        if max(abs(z1a), abs(z1b)) > self.c1 * self.d:
            raise ValueError(f"window exceeds c1*d = {self.c1 * self.d:g} horizontally")
        if np.hypot(z1b - z1a, z2b - z2a) > self.c2 * z2a:
            raise ValueError(f"window diameter exceeds c2*h = {self.c2 * z2a:g}")

    @property
    def axes(self):
        z1a, z1b, z2a, z2b = self.window
        return np.linspace(z1a, z1b, self.n1), np.linspace(z2a, z2b, self.n2)

    @property
    def center(self):
        z1a, z1b, z2a, z2b = self.window
        return np.array([0.5 * (z1a + z1b), 0.5 * (z2a + z2b)])


@dataclass
class PsfReport:
    """Grids (shape ``(n1, n2)``, indexed ``[i1, i2]``) and scalar summaries of a PSF sweep."""

    z1: np.ndarray
    z2: np.ndarray
    y: np.ndarray
    grids: dict
    summary: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, g in self.grids.items():
            if g.shape != (len(self.z1), len(self.z2)):
                raise ValueError(f"grid {name} has shape {g.shape}")
            if not np.all(np.isfinite(g)):
                raise ValueError(f"grid {name} has non-finite entries")

    def write(self, out_dir) -> list:
        from pathlib import Path

        out = Path(out_dir)
        paths = []
        for name in sorted(self.grids):
            p = out / f"psf_{name}.csv"
            write_grid_csv(p, self.z1, self.z2, self.grids[name])
            paths.append(p)
        p = out / "psf_summary.txt"
        lines = [f"{k} = {_fmt_summary(v)}" for k, v in sorted(self.summary.items())]
        atomic_write_text(p, "\n".join(lines) + "\n")
        paths.append(p)
        return paths


def _fmt_summary(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return " ".join(f"{float(x):.16e}" for x in np.ravel(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.16e}"
    return str(v)


def write_grid_csv(path, z1, z2, values) -> None:
    """Rows ``z1,z2,value`` in row-major order over ``values[i1, i2]``."""
    values = np.asarray(values, dtype=float)
    rows = ["z1,z2,value"]
    for i, a in enumerate(z1):
        for j, b in enumerate(z2):
            rows.append(f"{a:.16e},{b:.16e},{values[i, j]:.16e}")
    atomic_write_text(path, "\n".join(rows) + "\n")


def _half_width(axis, profile, peak_index):
    """Full width at half maximum of ``profile`` around ``peak_index`` (linear interpolation)."""
    half = 0.5 * profile[peak_index]

    def walk(step):
        i = peak_index
        while 0 <= i + step < len(profile) and profile[i + step] >= half:
            i += step
        if not 0 <= i + step < len(profile):
            return axis[i]
        a, b = profile[i], profile[i + step]
        return axis[i] + (axis[i + step] - axis[i]) * (a - half) / (a - b)

    return float(abs(walk(1) - walk(-1)))


def psf_resolution_profile(config: PsfConfig, with_jd: bool = True) -> PsfReport:
    """Sweep ``z`` over the window with ``y`` at its center and summarize the peak."""
    med = config.medium
    z1, z2 = config.axes
    y = config.center
    Z = np.array([(a, b) for a in z1 for b in z2])
    F = psf_F_grid(Z, y, med)
    shape = (len(z1), len(z2))
    grids = {
        "im_F11": F[:, 0, 0].imag.reshape(shape),
        "im_F22": F[:, 1, 1].imag.reshape(shape),
        "abs_F": np.linalg.norm(F, axis=(1, 2)).reshape(shape),
    }
    if with_jd:
        Jd = psf_Jd_grid(Z, y, config.d, med)
        grids["abs_Jd_minus_F"] = np.linalg.norm(Jd - F, axis=(1, 2)).reshape(shape)
    neg = -grids["im_F11"]
    i, j = np.unravel_index(int(np.argmax(neg)), shape)
    summary = {
        "y": y,
        "peak_value": float(neg[i, j]),
        "peak_location": np.array([z1[i], z2[j]]),
        "background_median": float(np.median(neg)),
        "half_width_z1": _half_width(z1, neg[:, j], i),
        "half_width_z2": _half_width(z2, neg[i, :], j),
        "omega": med.omega,
        "d": config.d,
    }
    return PsfReport(z1, z2, y, grids, summary)
