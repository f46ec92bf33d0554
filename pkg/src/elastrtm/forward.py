"""Forward scattering: obstacle curves, Nyström boundary integral solver, data synthesis.

The scattered field is represented as a single-layer potential with the
half-space Neumann tensor as kernel,

    u(x) = int_{Gamma_D} N(x, y) phi(y) ds(y),

so the traction-free surface condition holds automatically.  On each
obstacle boundary the kernel is split as ``N = G(x, y) + [-G(x, y') + C]``:
only the full-space part ``G`` is singular, and it is integrated with the
periodic logarithmic quadrature of Kress; the traction of the single layer
also has a Cauchy part, integrated with the periodic Hilbert-kernel rule.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy import linalg

from . import green
from .medium import ElasticMedium

__all__ = [
    "BoundaryCurve",
    "Obstacle",
    "SurveyGeometry",
    "ScatterDataSet",
    "CurveDiscretization",
    "BoundaryOperator",
    "ForwardSolver",
    "IllConditionedWarning",
    "make_curve",
    "curve_kinds",
    "assemble_single_layer",
    "assemble_traction_operator",
    "solve_density",
    "synthesize_data",
    "add_noise",
    "write_dataset",
    "read_dataset",
    "DATASET_FORMAT_VERSION",
]

DATASET_FORMAT_VERSION = 1
BC_KINDS = ("dirichlet", "neumann", "impedance")
EULER_GAMMA = 0.57721566490153286061


class IllConditionedWarning(RuntimeWarning):
    """Boundary operator close to singular (e.g. near an interior resonance)."""


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class BoundaryCurve:
    """Smooth closed curve ``theta -> x(theta)``, counter-clockwise, in the lower medium.

    ``position``, ``derivative`` and ``second_derivative`` map an array of
    parameters of shape ``(n,)`` to arrays of shape ``(n, 2)``.
    """

    position: Callable
    derivative: Callable
    second_derivative: Callable
    kind: str = "custom"
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        t = np.linspace(0.0, 2 * np.pi, 513)
        p = self.position(t)
        if not np.all(np.isfinite(p)):
            raise ValueError("curve has non-finite points")
        scale = np.max(np.abs(p - p.mean(axis=0)))
        if np.linalg.norm(p[0] - p[-1]) > 1e-10 * max(scale, 1.0):
            raise ValueError("curve is not closed")
        if np.min(p[:, 1]) <= 0:
            raise ValueError(f"curve must lie strictly below the surface (min depth {np.min(p[:, 1]):.4g})")
        if _signed_area(p[:-1]) <= 0:
            raise ValueError("curve must be oriented counter-clockwise")
        if _self_intersects(p[:-1]):
            raise ValueError("curve is self-intersecting")

    def speed(self, t):
        return np.linalg.norm(self.derivative(t), axis=-1)

    def normal(self, t):
        """Outward unit normal ``(x2', -x1') / |x'|``."""
        d = self.derivative(t)
        return np.column_stack([d[:, 1], -d[:, 0]]) / np.linalg.norm(d, axis=-1)[:, None]

    def curvature(self, t):
        d, dd = self.derivative(t), self.second_derivative(t)
        return (d[:, 0] * dd[:, 1] - d[:, 1] * dd[:, 0]) / np.linalg.norm(d, axis=-1) ** 3

    def length(self, n: int = 512) -> float:
        t = 2 * np.pi * np.arange(n) / n
        return float(2 * np.pi / n * self.speed(t).sum())

    def contains(self, pts, n: int = 1024) -> np.ndarray:
        """Even-odd test of ``pts`` (shape ``(k, 2)``) against a fine polygon."""
        t = 2 * np.pi * np.arange(n) / n
        return _inside_polygon(self.position(t), np.atleast_2d(pts))

    def descriptor(self) -> str:
        return json.dumps({"kind": self.kind, **self.params}, sort_keys=True)


def _signed_area(p):
    x, y = p[:, 0], p[:, 1]
    return 0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y))


def _inside_polygon(poly, pts):
    x, y = pts[:, 0:1], pts[:, 1:2]
    x0, y0 = poly[None, :, 0], poly[None, :, 1]
    x1, y1 = np.roll(poly[:, 0], -1)[None, :], np.roll(poly[:, 1], -1)[None, :]
    crosses = (y0 > y) != (y1 > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xc = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
    return (np.sum(crosses & (x < xc), axis=1) % 2) == 1


def _self_intersects(p) -> bool:
    """Segment-intersection scan of the closed polygon through ``p``."""
    a = p
    b = np.roll(p, -1, axis=0)
    n = len(p)

    def orient(p0, p1, q):
        return (p1[..., 0] - p0[..., 0]) * (q[..., 1] - p0[..., 1]) - (p1[..., 1] - p0[..., 1]) * (q[..., 0] - p0[..., 0])

    for i in range(n):
        j = np.arange(i + 2, n)
        if i == 0:
            j = j[j != n - 1]
        if j.size == 0:
            continue
        d1 = orient(a[i], b[i], a[j])
        d2 = orient(a[i], b[i], b[j])
        d3 = orient(a[j], b[j], a[i][None, :])
        d4 = orient(a[j], b[j], b[i][None, :])
        if np.any((d1 * d2 < 0) & (d3 * d4 < 0)):
            return True
    return False


def _radial_curve(r, dr, ddr, center, kind, params):
    cx, cy = center

    def pos(t):
        t = np.asarray(t, dtype=float)
        rr = r(t)
        return np.column_stack([cx + rr * np.cos(t), cy + rr * np.sin(t)])

    def der(t):
        t = np.asarray(t, dtype=float)
        rr, d1 = r(t), dr(t)
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([d1 * c - rr * s, d1 * s + rr * c])

    def der2(t):
        t = np.asarray(t, dtype=float)
        rr, d1, d2 = r(t), dr(t), ddr(t)
        c, s = np.cos(t), np.sin(t)
        return np.column_stack([d2 * c - 2 * d1 * s - rr * c, d2 * s + 2 * d1 * c - rr * s])

    return BoundaryCurve(pos, der, der2, kind, params)


def _param_curve(fx, fy, center, kind, params):
    """Curve from Fourier-type component functions returning value and two derivatives."""
    cx, cy = center

    def pos(t):
        t = np.asarray(t, dtype=float)
        return np.column_stack([cx + fx(t, 0), cy + fy(t, 0)])

    def der(t):
        t = np.asarray(t, dtype=float)
        return np.column_stack([fx(t, 1), fy(t, 1)])

    def der2(t):
        t = np.asarray(t, dtype=float)
        return np.column_stack([fx(t, 2), fy(t, 2)])

    return BoundaryCurve(pos, der, der2, kind, params)


def _cos_deriv(t, k, order):
    return [np.cos(k * t), -k * np.sin(k * t), -k * k * np.cos(k * t)][order]


def _sin_deriv(t, k, order):
    return [np.sin(k * t), k * np.cos(k * t), -k * k * np.sin(k * t)][order]


def _make_circle(center, radius=1.0):
    if not radius > 0:
        raise ValueError("radius must be positive")
    one = lambda t: radius + 0 * t  # noqa: E731
    zero = lambda t: 0 * t  # noqa: E731
    return _radial_curve(one, zero, zero, center, "circle", {"radius": radius, "center": list(center)})


def _make_kite(center, scale=1.0):
    if not scale > 0:
        raise ValueError("scale must be positive")

    def fx(t, o):
        base = _cos_deriv(t, 1, o) + 0.65 * _cos_deriv(t, 2, o) - (0.65 if o == 0 else 0.0)
        return scale * base

    def fy(t, o):
        return scale * 1.5 * _sin_deriv(t, 1, o)

    return _param_curve(fx, fy, center, "kite", {"scale": scale, "center": list(center)})


def _make_leaf(center, p=3, amplitude=0.2, scale=1.0):
    p = int(p)
    if p < 1 or not scale > 0 or not 0 <= amplitude < 1:
        raise ValueError("p-leaf needs p >= 1, scale > 0 and 0 <= amplitude < 1")
    r = lambda t: scale * (1 + amplitude * np.cos(p * t))  # noqa: E731
    dr = lambda t: -scale * amplitude * p * np.sin(p * t)  # noqa: E731
    ddr = lambda t: -scale * amplitude * p * p * np.cos(p * t)  # noqa: E731
    return _radial_curve(r, dr, ddr, center, "leaf",
                         {"p": p, "amplitude": amplitude, "scale": scale, "center": list(center)})


def _make_peanut(center, amplitude=0.2, scale=1.0):
    if not scale > 0:
        raise ValueError("scale must be positive")

    def fx(t, o):
        return scale * (_cos_deriv(t, 1, o) + amplitude * _cos_deriv(t, 3, o))

    def fy(t, o):
        return scale * (_sin_deriv(t, 1, o) + amplitude * _sin_deriv(t, 3, o))

    return _param_curve(fx, fy, center, "peanut", {"amplitude": amplitude, "scale": scale, "center": list(center)})


def _make_rounded_square(center, scale=1.0):
    if not scale > 0:
        raise ValueError("scale must be positive")

    def s(t):
        return 0.25 * (3 + np.cos(4 * t))

    def r(t):
        return scale * s(t) ** -0.25

    def dr(t):
        return scale * 0.25 * s(t) ** -1.25 * np.sin(4 * t)

    def ddr(t):
        st, ds, dds = s(t), -np.sin(4 * t), -4 * np.cos(4 * t)
        return scale * (5.0 / 16.0 * st**-2.25 * ds**2 - 0.25 * st**-1.25 * dds)

    return _radial_curve(r, dr, ddr, center, "rounded_square", {"scale": scale, "center": list(center)})


_CURVES = {
    "circle": _make_circle,
    "kite": _make_kite,
    "leaf": _make_leaf,
    "peanut": _make_peanut,
    "rounded_square": _make_rounded_square,
}


def curve_kinds() -> tuple:
    return tuple(_CURVES)


def make_curve(kind: str, params: dict | None = None, center=(0.0, 10.0)) -> BoundaryCurve:
    """Build one of the standard obstacle shapes translated to ``center``.

    Kinds and parameters: ``circle(radius)``, ``kite(scale)``,
    ``leaf(p, amplitude, scale)`` with ``r = scale (1 + amplitude cos(p theta))``,
    ``peanut(amplitude, scale)`` and ``rounded_square(scale)`` with
    ``r = scale (cos^4 + sin^4)^(-1/4)``.
    """
    if kind not in _CURVES:
        raise ValueError(f"unknown curve kind {kind!r}; expected one of {sorted(_CURVES)}")
    center = tuple(float(c) for c in center)
    try:
        return _CURVES[kind](center, **(params or {}))
    except TypeError as exc:
        raise ValueError(f"bad parameters for {kind}: {exc}") from None


@dataclass(frozen=True)
class Obstacle:
    """Sound-hard/soft/impedance obstacle: a curve plus its boundary condition.

    ``eta`` is a non-negative constant or a callable of the curve parameter
    (impedance only).
    """

    curve: BoundaryCurve
    bc_kind: str = "dirichlet"
    eta: float | Callable = 0.0

    def __post_init__(self):
        if self.bc_kind not in BC_KINDS:
            raise ValueError(f"bc_kind must be one of {BC_KINDS}, got {self.bc_kind!r}")
        if not callable(self.eta) and self.eta < 0:
            raise ValueError("impedance must be non-negative")
        if callable(self.eta):
            vals = np.asarray(self.eta(np.linspace(0, 2 * np.pi, 64, endpoint=False)), dtype=float)
            if np.any(vals < 0):
                raise ValueError("impedance must be non-negative")

    def eta_at(self, t) -> np.ndarray:
        if self.bc_kind == "neumann":
            return np.zeros_like(np.asarray(t, dtype=float))
        if callable(self.eta):
            return np.asarray(self.eta(t), dtype=float)
        return np.full(np.shape(t), float(self.eta))

    def descriptor(self) -> dict:
        d = json.loads(self.curve.descriptor())
        d["bc"] = self.bc_kind
        if self.bc_kind == "impedance":
            d["eta"] = "callable" if callable(self.eta) else float(self.eta)
        return d


@dataclass(frozen=True)
class SurveyGeometry:
    """Sources and receivers uniformly spaced on ``[-d, d]`` at the surface."""

    d: float
    n_src: int
    n_rcv: int

    def __post_init__(self):
        if not self.d > 0:
            raise ValueError("aperture d must be positive")
        if self.n_src < 1 or self.n_rcv < 1:
            raise ValueError("need at least one source and one receiver")

    @staticmethod
    def _line(d, n):
        return np.zeros(1) if n == 1 else np.linspace(-d, d, n)

    @property
    def sources(self) -> np.ndarray:
        return self._line(self.d, self.n_src)

    @property
    def receivers(self) -> np.ndarray:
        return self._line(self.d, self.n_rcv)

    @property
    def aperture_length(self) -> float:
        return 2.0 * self.d


@dataclass(frozen=True)
class ScatterDataSet:
    """Scattered displacements ``data[s, r, q, c] = u^s_{e_q}(x_r, x_s) . e_c``."""

    omega: float
    lam: float
    mu: float
    survey: SurveyGeometry
    data: np.ndarray
    obstacle: str = "{}"
    seed: int | None = None
    sigma: float = 0.0

    def __post_init__(self):
        shape = (self.survey.n_src, self.survey.n_rcv, 2, 2)
        arr = np.asarray(self.data)
        if arr.shape != shape:
            raise ValueError(f"data shape {arr.shape} does not match survey {shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("dataset has non-finite entries")

    @property
    def medium(self) -> ElasticMedium:
        return ElasticMedium(self.lam, self.mu, self.omega)


# ---------------------------------------------------------------------------
# Nyström discretization


def _kress_weights(diff, n):
    """Weights ``R`` of ``int_0^2pi log(4 sin^2((t - tau)/2)) f(tau) dtau ~ sum R(t - t_j) f(t_j)``."""
    m = np.arange(1, n)
    diff = np.asarray(diff, dtype=float)
    acc = np.cos(diff[..., None] * m) @ (1.0 / m)
    return -(2 * np.pi / n) * acc - (np.pi / n**2) * np.cos(n * diff)


@dataclass
class CurveDiscretization:
    """Equispaced parameter grid ``t_j = pi j / n`` (``2n`` points) on one curve."""

    curve: BoundaryCurve
    n_points: int

    def __post_init__(self):
        if self.n_points < 8 or self.n_points % 2:
            raise ValueError("n_points must be an even number >= 8")
        self.t = 2 * np.pi * np.arange(self.n_points) / self.n_points
        self.points = self.curve.position(self.t)
        self.deriv = self.curve.derivative(self.t)
        self.speed = np.linalg.norm(self.deriv, axis=1)
        self.normals = self.curve.normal(self.t)
        self.weights = (2 * np.pi / self.n_points) * self.speed

    @property
    def half(self) -> int:
        return self.n_points // 2


def default_n_points(curve: BoundaryCurve, medium: ElasticMedium, points_per_wavelength: float = 10.0,
                     minimum: int = 64) -> int:
    lam_s = 2 * np.pi / medium.wavenumbers.k_s
    n = int(np.ceil(points_per_wavelength * curve.length() / lam_s))
    n = max(minimum, n)
    return n + (n % 2)


def _single_layer_rows(disc: CurveDiscretization, medium: ElasticMedium, t_eval, on_grid: bool):
    """Rows of the discretized single layer at curve parameters ``t_eval``.

    Returns an array ``(len(t_eval), n_points, 2, 2)`` of 2x2 blocks acting on
    the density values at the grid nodes.
    """
    n = disc.half
    t_eval = np.asarray(t_eval, dtype=float)
    x = disc.curve.position(t_eval)
    y, sp = disc.points, disc.speed
    diff = t_eval[:, None] - disc.t[None, :]
    log_w = _kress_weights(diff, n)
    xx, yy = x[:, None, :], y[None, :, :]
    coincide = np.isclose(np.mod(diff + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-13)
    gj = green.fullspace_green_bessel_j(xx, yy, medium)
    k1 = (1j / np.pi) * gj * sp[None, :, None, None]
    safe_y = np.where(coincide[..., None], yy + 1.0, yy)
    g = green.fullspace_green(xx, safe_y, medium)
    with np.errstate(divide="ignore"):
        lg = np.log(4 * np.sin(0.5 * diff) ** 2)
    k2 = g * sp[None, :, None, None] - k1 * np.where(coincide, 0.0, lg)[..., None, None]
    if np.any(coincide):
        i, j = np.nonzero(coincide)
        k2[i, j] = _single_layer_diagonal(disc, medium, j)
    smooth = -green.fullspace_green(xx, yy * np.array([1.0, -1.0]), medium)
    smooth = smooth + green.neumann_correction(x, y, medium)
    return (log_w[..., None, None] * k1 + (np.pi / n) * k2
            + (np.pi / n) * sp[None, :, None, None] * smooth)


def _single_layer_diagonal(disc, medium, j):
    """Limit of ``G |x'| - K1 log(4 sin^2)`` at coincident parameters."""
    lam, mu = medium.lam, medium.mu
    wn = medium.wavenumbers
    cs, cp = 1 / mu, 1 / (lam + 2 * mu)
    a0 = 0.125j * ((1 + 1j * (2 / np.pi) * (np.log(wn.k_s / 2) + EULER_GAMMA) + 1j / np.pi) * cs
                   + (1 + 1j * (2 / np.pi) * (np.log(wn.k_p / 2) + EULER_GAMMA) - 1j / np.pi) * cp)
    a_log = (cs + cp) / (4 * np.pi)
    b0 = (cs - cp) / (4 * np.pi)
    sp = disc.speed[j]
    tau = disc.deriv[j] / sp[:, None]
    blocks = ((a0 - a_log * np.log(sp))[:, None, None] * np.eye(2)
              + b0 * tau[:, :, None] * tau[:, None, :])
    return blocks * sp[:, None, None]


def _traction_rows(disc: CurveDiscretization, medium: ElasticMedium):
    """Discretized traction of the single layer (principal value, no jump term)."""
    n = disc.half
    N = disc.n_points
    t = disc.t
    x, sp, nu = disc.points, disc.speed, disc.normals
    diff = t[:, None] - t[None, :]
    log_w = _kress_weights(diff, n)
    eye = np.eye(N, dtype=bool)
    odd = (np.subtract.outer(np.arange(N), np.arange(N)) % 2) == 1
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = np.where(eye, 0.0, 1.0 / np.tan(0.5 * diff))
    jrot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    c0 = medium.mu / (2 * np.pi * (medium.lam + 2 * medium.mu))
    hilbert = (np.pi / n) * np.where(odd, cot, 0.0)[..., None, None] * (c0 * jrot)

    l1, l2 = _traction_kernels(disc, medium, x, nu, t[:, None], t[None, :], sp[None, :],
                               disc.points[None, :, :], exclude_diag=True)
    l2[np.arange(N), np.arange(N)] = _traction_diagonal(disc, medium)
    # smooth remainder: traction of -G(x, y') + C
    _, dc = green.neumann_correction(x, x, medium, gradient=True)
    grad_img = green.fullspace_green_gradient(x[:, None, :], (x * np.array([1.0, -1.0]))[None, :, :], medium)
    smooth = green.traction_from_gradient(dc - grad_img, nu[:, None, :], medium)
    return hilbert + log_w[..., None, None] * l1 + (np.pi / n) * l2 + (np.pi / n) * sp[None, :, None, None] * smooth


def _traction_kernels(disc, medium, x, nu, t, tau, sp_tau, y, exclude_diag=False):
    """Log coefficient ``L1`` and remainder ``L2`` of the full-space traction kernel."""
    xx = x[:, None, :] if x.ndim == 2 else x
    nn = nu[:, None, :] if nu.ndim == 2 else nu
    diff = t - tau
    gj_grad = green.fullspace_green_bessel_j(xx, y, medium, gradient=True)
    l1 = (1j / np.pi) * green.traction_from_gradient(gj_grad, nn, medium) * sp_tau[..., None, None]
    same = np.isclose(np.mod(diff + np.pi, 2 * np.pi) - np.pi, 0.0, atol=1e-13) if exclude_diag else \
        np.zeros(np.broadcast_shapes(np.shape(diff)), dtype=bool)
    safe_y = np.where(same[..., None], y + 1.0, y)
    grad = green.fullspace_green_gradient(xx, safe_y, medium)
    kern = green.traction_from_gradient(grad, nn, medium) * sp_tau[..., None, None]
    c0 = medium.mu / (2 * np.pi * (medium.lam + 2 * medium.mu))
    jrot = np.array([[0.0, 1.0], [-1.0, 0.0]])
    with np.errstate(divide="ignore", invalid="ignore"):
        cot = np.where(same, 0.0, 0.5 / np.tan(0.5 * diff))
        lg = np.where(same, 0.0, np.log(4 * np.sin(0.5 * diff) ** 2))
    l2 = kern - cot[..., None, None] * (c0 * jrot) - l1 * lg[..., None, None]
    l1 = np.where(same[..., None, None], 0.0, l1)
    return l1, l2


def _traction_diagonal(disc, medium, steps=(4e-3, 2e-3, 1e-3)):
    """Continuous limit of the traction remainder at coincident parameters.

    The remainder is averaged over ``tau = t +- h`` (cancelling the odd
    terms) and extrapolated to ``h = 0`` by fitting ``a + b h^2 + c h^2 log h``
    through three steps; tiny steps lose digits to cancellation.
    """
    t = disc.t
    vals = []
    for h in steps:
        acc = 0
        for s in (h, -h):
            tau = t + s
            _, l2 = _traction_kernels(disc, medium, disc.points[:, None, :], disc.normals[:, None, :],
                                      t[:, None], tau[:, None], disc.curve.speed(tau)[:, None],
                                      disc.curve.position(tau)[:, None, :])
            acc = acc + 0.5 * l2[:, 0]
        vals.append(acc)
    h = np.asarray(steps)
    basis = np.column_stack([np.ones_like(h), h**2, h**2 * np.log(h)])
    coef = np.linalg.solve(basis, np.eye(3))[0]
    return sum(c * v for c, v in zip(coef, vals))


def _blocks_to_matrix(blocks):
    m, n = blocks.shape[:2]
    return blocks.transpose(0, 2, 1, 3).reshape(2 * m, 2 * n)


def assemble_single_layer(curve: BoundaryCurve, medium: ElasticMedium, n_points: int | None = None) -> np.ndarray:
    """Dense ``2n x 2n`` Nyström matrix of the single layer with Neumann-tensor kernel.

    Block ``(i, j)`` (rows ``2i:2i+2``, columns ``2j:2j+2``) couples the
    density at node ``j`` to the field at node ``i``.
    """
    disc = CurveDiscretization(curve, n_points or default_n_points(curve, medium))
    return _blocks_to_matrix(_single_layer_rows(disc, medium, disc.t, True))


def assemble_traction_operator(curve: BoundaryCurve, medium: ElasticMedium, n_points: int | None = None) -> np.ndarray:
    """Dense Nyström matrix of the traction (normal stress) of the single layer, ``K'``."""
    disc = CurveDiscretization(curve, n_points or default_n_points(curve, medium))
    return _blocks_to_matrix(_traction_rows(disc, medium))


# ---------------------------------------------------------------------------
# operator assembly for (possibly several) obstacles


@dataclass
class BoundaryOperator:
    """Factorized boundary operator for a set of disjoint obstacles at one frequency."""

    obstacles: list
    medium: ElasticMedium
    discs: list
    matrix: np.ndarray
    single_layer: np.ndarray
    condition: float
    lu: tuple = None

    @property
    def n_unknowns(self) -> int:
        return self.matrix.shape[0]

    @property
    def offsets(self) -> list:
        out, k = [], 0
        for d in self.discs:
            out.append(k)
            k += 2 * d.n_points
        return out

    @property
    def nodes(self) -> np.ndarray:
        return np.concatenate([d.points for d in self.discs])

    @property
    def normals(self) -> np.ndarray:
        return np.concatenate([d.normals for d in self.discs])

    @property
    def weights(self) -> np.ndarray:
        return np.concatenate([d.weights for d in self.discs])

    @property
    def eta(self) -> np.ndarray:
        return np.concatenate([o.eta_at(d.t) for o, d in zip(self.obstacles, self.discs)])

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return linalg.lu_solve(self.lu, rhs)


def _cross_blocks(di, dj, medium, traction):
    if traction:
        t = green.neumann_traction_matrix(di.points, di.normals, dj.points, medium)
    else:
        t = green.neumann_green_matrix(di.points, dj.points, medium)
    return t * dj.weights[None, :, None, None]


def build_operator(obstacles: Sequence[Obstacle], medium: ElasticMedium, n_points=None,
                   points_per_wavelength: float = 10.0, cond_limit: float = 1e12) -> BoundaryOperator:
    """Assemble and LU-factorize the boundary operator for all obstacles.

    All obstacles must share one boundary-condition kind.  Dirichlet uses
    the first-kind system ``S phi = f``; Neumann/impedance use
    ``(-I/2 + K' + i eta S) phi = f``.
    """
    obstacles = list(obstacles)
    if not obstacles:
        raise ValueError("no obstacles given")
    kinds = {o.bc_kind for o in obstacles}
    if len(kinds) != 1:
        raise ValueError("all obstacles must share one boundary-condition kind")
    kind = kinds.pop()
    if n_points is None:
        n_points = [default_n_points(o.curve, medium, points_per_wavelength) for o in obstacles]
    elif np.isscalar(n_points):
        n_points = [int(n_points)] * len(obstacles)
    discs = [CurveDiscretization(o.curve, n) for o, n in zip(obstacles, n_points)]
    _check_disjoint(discs)
    nb = len(discs)
    s_blocks = [[None] * nb for _ in range(nb)]
    k_blocks = [[None] * nb for _ in range(nb)]
    for i, di in enumerate(discs):
        for j, dj in enumerate(discs):
            if i == j:
                s_blocks[i][j] = _blocks_to_matrix(_single_layer_rows(di, medium, di.t, True))
                if kind != "dirichlet":
                    k_blocks[i][j] = _blocks_to_matrix(_traction_rows(di, medium))
            else:
                s_blocks[i][j] = _blocks_to_matrix(_cross_blocks(di, dj, medium, False))
                if kind != "dirichlet":
                    k_blocks[i][j] = _blocks_to_matrix(_cross_blocks(di, dj, medium, True))
    s_mat = np.block(s_blocks)
    if kind == "dirichlet":
        mat = s_mat
    else:
        eta = np.concatenate([o.eta_at(d.t) for o, d in zip(obstacles, discs)])
        eta2 = np.repeat(eta, 2)
        mat = -0.5 * np.eye(s_mat.shape[0]) + np.block(k_blocks) + 1j * eta2[:, None] * s_mat
    cond = float(np.linalg.cond(mat))
    if cond > cond_limit:
        warnings.warn(f"boundary operator condition estimate {cond:.3e} exceeds {cond_limit:.1e}; "
                      "the frequency may be close to an interior resonance (perturb omega by ~0.1%)",
                      IllConditionedWarning, stacklevel=2)
    op = BoundaryOperator(obstacles, medium, discs, mat, s_mat, cond)
    op.lu = linalg.lu_factor(mat, check_finite=True)
    return op


def _check_disjoint(discs):
    for i, a in enumerate(discs):
        for b in discs[i + 1:]:
            if np.any(a.curve.contains(b.points)) or np.any(b.curve.contains(a.points)):
                raise ValueError("obstacles overlap")


def incident_rhs(op: BoundaryOperator, x_src) -> np.ndarray:
    """Right-hand sides for sources at surface abscissas ``x_src`` and both polarizations.

    Column ``2 s + q`` holds the boundary data for source ``s``, polarization ``e_q``.
    """
    x_src = np.atleast_1d(np.asarray(x_src, dtype=float))
    nodes = op.nodes
    kind = op.obstacles[0].bc_kind
    # N(x_i, x_s) = N(x_s, x_i)^T by reciprocity; the surface form is exact for x_s on the surface
    ns = green.surface_neumann_matrix(x_src, nodes, op.medium)  # (S, M, 2, 2)
    n_inc = ns.transpose(1, 0, 3, 2)  # (M, S, c, q)
    if kind == "dirichlet":
        f = -n_inc
    else:
        src = np.column_stack([x_src, np.zeros_like(x_src)])
        trac = green.neumann_traction_matrix(nodes, op.normals, src, op.medium)  # (M, S, c, q)
        f = -(trac + 1j * op.eta[:, None, None, None] * n_inc)
    return f.transpose(0, 2, 1, 3).reshape(2 * len(nodes), 2 * len(x_src))


def solve_density(op: BoundaryOperator, x_s: float, q) -> np.ndarray:
    """Density (shape ``(n_nodes, 2)``) for one surface source ``x_s`` and polarization ``q``."""
    rhs = incident_rhs(op, [x_s])
    q = np.asarray(q, dtype=complex)
    return op.solve(rhs @ q).reshape(-1, 2)


def field_at_surface(op: BoundaryOperator, density: np.ndarray, x_rcv) -> np.ndarray:
    """Scattered displacement at surface points for densities of shape ``(n_nodes*2, k)``."""
    x_rcv = np.atleast_1d(np.asarray(x_rcv, dtype=float))
    nr = green.surface_neumann_matrix(x_rcv, op.nodes, op.medium) * op.weights[None, :, None, None]
    nr_mat = _blocks_to_matrix(nr)  # (2R, 2M)
    return nr_mat @ density


def field_at_points(op: BoundaryOperator, density: np.ndarray, X) -> np.ndarray:
    """Scattered displacement at interior points ``X`` (away from the boundary)."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    nm = green.neumann_green_matrix(X, op.nodes, op.medium) * op.weights[None, :, None, None]
    return _blocks_to_matrix(nm) @ density


def boundary_residual(op: BoundaryOperator, density: np.ndarray, rhs_fn: Callable) -> float:
    """Relative Dirichlet residual of ``S phi = f`` at off-grid midpoints of every curve.

    ``rhs_fn(points)`` returns the boundary data ``f`` at the given points
    with shape ``(n, 2, k)``.
    """
    num = den = 0.0
    for o, disc in zip(op.obstacles, op.discs):
        tm = disc.t + np.pi / disc.n_points
        val = 0
        for dj, off in zip(op.discs, op.offsets):
            phi = density[off:off + 2 * dj.n_points]
            if dj is disc:
                rows = _single_layer_rows(disc, op.medium, tm, False)
            else:
                pts = disc.curve.position(tm)
                rows = green.neumann_green_matrix(pts, dj.points, op.medium) * dj.weights[None, :, None, None]
            val = val + _blocks_to_matrix(rows) @ phi
        f = rhs_fn(disc.curve.position(tm)).reshape(2 * len(tm), -1)
        num += float(np.sum(np.abs(val - f) ** 2))
        den += float(np.sum(np.abs(f) ** 2))
    return float(np.sqrt(num / den))


class ForwardSolver:
    """Synthesizes surface data for fixed obstacles and frequency.

    The boundary operator is factorized once and reused for every source.

    Parameters
    ----------
    obstacles : Obstacle or sequence of Obstacle
        Disjoint obstacles sharing one boundary-condition kind.
    medium : ElasticMedium
    n_points : int or list of int, optional
        Nodes per obstacle; default is ``points_per_wavelength`` nodes per
        shear wavelength of arc length.
    """

    def __init__(self, obstacles, medium: ElasticMedium, n_points=None, points_per_wavelength: float = 10.0):
        if isinstance(obstacles, Obstacle):
            obstacles = [obstacles]
        self.obstacles = list(obstacles)
        self.medium = medium
        self.n_points = n_points
        self.points_per_wavelength = points_per_wavelength
        self._op = None

    @property
    def operator(self) -> BoundaryOperator:
        if self._op is None:
            self._op = build_operator(self.obstacles, self.medium, self.n_points, self.points_per_wavelength)
        return self._op

    def densities(self, x_src) -> np.ndarray:
        """Densities for all sources; shape ``(2 n_nodes, 2 n_src)`` with column ``2 s + q``."""
        op = self.operator
        return op.solve(incident_rhs(op, x_src))

    def synthesize(self, survey: SurveyGeometry) -> ScatterDataSet:
        return synthesize_data(self.obstacles, survey, self.medium, solver=self)


def _descriptor(obstacles) -> str:
    return json.dumps([o.descriptor() for o in obstacles], sort_keys=True, separators=(",", ":"))


def synthesize_data(obstacles, survey: SurveyGeometry, medium: ElasticMedium, n_points=None,
                    points_per_wavelength: float = 10.0, solver: ForwardSolver | None = None) -> ScatterDataSet:
    """Scattered surface data for every source, polarization and receiver.

    An empty obstacle list yields the all-zero dataset.
    """
    if isinstance(obstacles, Obstacle):
        obstacles = [obstacles]
    obstacles = list(obstacles)
    ns, nr = survey.n_src, survey.n_rcv
    if not obstacles:
        return ScatterDataSet(medium.omega, medium.lam, medium.mu, survey,
                              np.zeros((ns, nr, 2, 2), dtype=complex), "[]")
    solver = solver or ForwardSolver(obstacles, medium, n_points, points_per_wavelength)
    dens = solver.densities(survey.sources)  # (2M, 2S)
    u = field_at_surface(solver.operator, dens, survey.receivers)  # (2R, 2S): row 2r+c, col 2s+q
    data = u.reshape(nr, 2, ns, 2).transpose(2, 0, 3, 1)
    data = np.ascontiguousarray(data)
    return ScatterDataSet(medium.omega, medium.lam, medium.mu, survey, data, _descriptor(obstacles))


# ---------------------------------------------------------------------------
# noise


def _counter_normals(seed: int, count: int) -> np.ndarray:
    """Pairs of standard normals as a pure function of ``(seed, index)``.

    Philox is counter based: raw word ``k`` depends only on the key and
    ``k``, so entry ``i`` of the output is fixed by ``(seed, i)`` regardless
    of how the array is traversed.  Box-Muller turns two uniforms into two
    normals.
    """
    bg = np.random.Philox(key=int(seed) & (2**64 - 1))
    raw = bg.random_raw(2 * count).reshape(count, 2)
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0**-53
    rad = np.sqrt(-2.0 * np.log(u[:, 0]))
    ang = 2 * np.pi * u[:, 1]
    return np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])


def add_noise(data: ScatterDataSet, sigma: float, seed: int) -> ScatterDataSet:
    """Additive complex Gaussian noise ``(sigma max|u| / sqrt 2)(e1 + i e2)``.

    The draws for entry ``(s, r, q, c)`` depend only on the seed and the
    entry's position in the canonical ``(s, r, q, c)`` order.
    """
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return ScatterDataSet(data.omega, data.lam, data.mu, data.survey, data.data.copy(),
                              data.obstacle, seed, 0.0)
    u = data.data
    eps = _counter_normals(seed, u.size)
    scale = sigma * float(np.max(np.abs(u))) / np.sqrt(2.0)
    noise = scale * (eps[:, 0] + 1j * eps[:, 1]).reshape(u.shape)
    return ScatterDataSet(data.omega, data.lam, data.mu, data.survey, u + noise, data.obstacle, seed, float(sigma))


# ---------------------------------------------------------------------------
# dataset files


_HEADER_KEYS = ("format_version", "omega", "lam", "mu", "d", "n_src", "n_rcv", "obstacle", "seed", "sigma")


def _fmt(v: float) -> str:
    return f"{v:.16e}"


def dataset_to_text(ds: ScatterDataSet) -> str:
    lines = ["# elastrtm scatter dataset"]
    hdr = {
        "format_version": str(DATASET_FORMAT_VERSION),
        "omega": _fmt(ds.omega), "lam": _fmt(ds.lam), "mu": _fmt(ds.mu), "d": _fmt(ds.survey.d),
        "n_src": str(ds.survey.n_src), "n_rcv": str(ds.survey.n_rcv), "obstacle": ds.obstacle,
        "seed": "none" if ds.seed is None else str(int(ds.seed)), "sigma": _fmt(ds.sigma),
    }
    lines += [f"{k} = {hdr[k]}" for k in _HEADER_KEYS]
    lines.append("# s r q c re im")
    lines.append("data")
    ns, nr = ds.survey.n_src, ds.survey.n_rcv
    flat = ds.data.reshape(-1)
    idx = np.indices((ns, nr, 2, 2)).reshape(4, -1).T
    for (s, r, q, c), v in zip(idx, flat):
        lines.append(f"{s} {r} {q + 1} {c + 1} {_fmt(v.real)} {_fmt(v.imag)}")
    return "\n".join(lines) + "\n"


def write_dataset(path, ds: ScatterDataSet) -> None:
    from .io_utils import atomic_write_text

    atomic_write_text(path, dataset_to_text(ds))


def read_dataset(path) -> ScatterDataSet:
    """Parse a dataset file; unknown format versions are rejected."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    hdr = {}
    body = None
    for i, line in enumerate(lines):
        if line.startswith("#") or not line.strip():
            continue
        if line.strip() == "data":
            body = lines[i + 1:]
            break
        key, sep, val = line.partition("=")
        if not sep:
            raise ValueError(f"malformed header line: {line!r}")
        hdr[key.strip()] = val.strip()
    if hdr.get("format_version") != str(DATASET_FORMAT_VERSION):
        raise ValueError(f"unsupported dataset format version {hdr.get('format_version')!r}")
    missing = [k for k in _HEADER_KEYS if k not in hdr]
    if missing or body is None:
        raise ValueError(f"dataset header incomplete (missing {missing or ['data']})")
    survey = SurveyGeometry(float(hdr["d"]), int(hdr["n_src"]), int(hdr["n_rcv"]))
    rows = [ln.split() for ln in body if ln.strip() and not ln.startswith("#")]
    expected = survey.n_src * survey.n_rcv * 4
    if len(rows) != expected:
        raise ValueError(f"dataset has {len(rows)} rows, expected {expected}")
    arr = np.array(rows, dtype=float)
    idx = np.indices((survey.n_src, survey.n_rcv, 2, 2)).reshape(4, -1).T
    if not np.array_equal(arr[:, :4].astype(int), idx + np.array([0, 0, 1, 1])):
        raise ValueError("dataset rows are not in canonical (s, r, q, c) order")
    data = (arr[:, 4] + 1j * arr[:, 5]).reshape(survey.n_src, survey.n_rcv, 2, 2)
    seed = None if hdr["seed"] == "none" else int(hdr["seed"])
    return ScatterDataSet(float(hdr["omega"]), float(hdr["lam"]), float(hdr["mu"]), survey, data,
                          hdr["obstacle"], seed, float(hdr["sigma"]))
