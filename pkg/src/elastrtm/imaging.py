"""Reverse time migration: incident and back-propagated fields, the imaging function, stacking.

For sources and receivers on the surface line ``|x1| < d`` the discrete
imaging function is

    I(z) = Im sum_q (|G|^2 / (Ns Nr)) sum_s sum_r [T_D(x_s, z)^T q] . [T_D(x_r, z)^T conj(u^s_q(x_r, x_s))]

with ``|G| = 2d``.  The double sum factorizes per ``z``: the surface
tractions are evaluated once per (surface point, z) and contracted against
the data by two matrix products.
"""
from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import green
from .forward import ScatterDataSet, SurveyGeometry
from .io_utils import atomic_write_bytes, atomic_write_text
from .medium import ElasticMedium

__all__ = [
    "ImagingGrid",
    "WindowWarning",
    "check_window",
    "incident_field",
    "backprop_field",
    "image",
    "stack",
    "RTMImager",
    "write_grid",
    "read_grid_csv",
    "write_pgm",
    "peak_to_background",
]


class WindowWarning(UserWarning):
    """Imaging window violates the standing geometric assumption on the aperture."""


@dataclass(frozen=True)
class ImagingGrid:
    """Rectangular sampling grid with values indexed ``[i1, i2]`` (``z1`` first)."""

    origin: tuple
    spacing: tuple
    counts: tuple
    values: np.ndarray | None = None

    def __post_init__(self):
        if min(self.spacing) <= 0:
            raise ValueError("grid spacing must be positive")
        if min(self.counts) < 1:
            raise ValueError("grid counts must be positive")
        if not self.origin[1] > 0:
            raise ValueError("grid must lie strictly below the surface")
        if self.values is not None and np.shape(self.values) != tuple(self.counts):
            raise ValueError(f"values shape {np.shape(self.values)} does not match counts {self.counts}")

    @classmethod
    def from_window(cls, window, n1: int, n2: int) -> "ImagingGrid":
        z1a, z1b, z2a, z2b = (float(v) for v in window)
        if not (z1b > z1a and z2b > z2a):
            raise ValueError("window must be a non-empty rectangle")
        if n1 < 2 or n2 < 2:
            raise ValueError("grid needs at least 2 points per axis")
        return cls((z1a, z2a), ((z1b - z1a) / (n1 - 1), (z2b - z2a) / (n2 - 1)), (int(n1), int(n2)))

    @property
    def z1(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.counts[0])

    @property
    def z2(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.counts[1])

    @property
    def points(self) -> np.ndarray:
        """All grid points in row-major ``[i1, i2]`` order, shape ``(n1*n2, 2)``."""
        a, b = np.meshgrid(self.z1, self.z2, indexing="ij")
        return np.column_stack([a.ravel(), b.ravel()])

    @property
    def window(self) -> tuple:
        return (self.z1[0], self.z1[-1], self.z2[0], self.z2[-1])

    def with_values(self, values) -> "ImagingGrid":
        return ImagingGrid(self.origin, self.spacing, self.counts, np.asarray(values, dtype=float))

    def same_geometry(self, other: "ImagingGrid") -> bool:
        return (np.allclose(self.origin, other.origin, rtol=0, atol=1e-12)
                and np.allclose(self.spacing, other.spacing, rtol=0, atol=1e-12)
                and tuple(self.counts) == tuple(other.counts))


def check_window(grid: ImagingGrid, d: float, c1: float = 0.9, c2: float = 10.0) -> list:
    """Warn (not fail) when ``max|z1| > c1 d`` or ``diam > c2 h``; returns the messages."""
    z1a, z1b, z2a, z2b = grid.window
    msgs = []
    if max(abs(z1a), abs(z1b)) > c1 * d:
        msgs.append(f"window reaches |z1| = {max(abs(z1a), abs(z1b)):g} > c1*d = {c1 * d:g}")
    diam = float(np.hypot(z1b - z1a, z2b - z2a))
    if diam > c2 * z2a:
        msgs.append(f"window diameter {diam:g} > c2*h = {c2 * z2a:g}")
    for m in msgs:
        warnings.warn(m, WindowWarning, stacklevel=2)
    return msgs


def _medium(ds: ScatterDataSet) -> ElasticMedium:
    return ElasticMedium(ds.lam, ds.mu, ds.omega)


def incident_field(z, x_s: float, q, medium: ElasticMedium) -> np.ndarray:
    """Incident displacement ``T_D(x_s, z)^T q`` at ``z`` from a surface source at ``x_s``."""
    z = np.asarray(z, dtype=float)
    if not z[1] > 0:
        raise ValueError("z must lie strictly below the surface")
    t = green.dirichlet_traction_matrix([x_s], z[None], medium)[0, 0]
    return t.T @ np.asarray(q, dtype=complex)


def _surface_weights(survey_d: float, n: int, weights: str) -> np.ndarray:
    w = np.full(n, 2.0 * survey_d / n)
    if weights == "trapezoid" and n > 1:
        w = np.full(n, 2.0 * survey_d / (n - 1))
        w[[0, -1]] *= 0.5
    elif weights != "uniform":
        raise ValueError("weights must be 'uniform' or 'trapezoid'")
    return w


def backprop_field(z, data_row, survey: SurveyGeometry, medium: ElasticMedium,
                   weights: str = "uniform") -> np.ndarray:
    """Back-propagated field ``(|G|/Nr) sum_r T_D(x_r, z)^T conj(u(x_r))``.

    ``data_row`` holds the receiver displacements for one source and
    polarization, shape ``(n_rcv, 2)``.
    """
    data_row = np.asarray(data_row, dtype=complex)
    if data_row.shape != (survey.n_rcv, 2):
        raise ValueError(f"data row shape {data_row.shape} does not match ({survey.n_rcv}, 2)")
    z = np.asarray(z, dtype=float)
    t = green.dirichlet_traction_matrix(survey.receivers, z[None], medium)[:, 0]  # (R, c, j)
    w = _surface_weights(survey.d, survey.n_rcv, weights)
    return np.einsum("r,rcj,rc->j", w, t, np.conj(data_row))


def _image_values(ds: ScatterDataSet, points: np.ndarray, weights: str = "uniform",
                  chunk: int = 2048) -> np.ndarray:
    med = _medium(ds)
    sv = ds.survey
    ws = _surface_weights(sv.d, sv.n_src, weights)
    wr = _surface_weights(sv.d, sv.n_rcv, weights)
    ns, nr = sv.n_src, sv.n_rcv
    # conj(u)[s, q, r, c] as a (2Ns, 2Nr) matrix, weights folded in
    cu = np.conj(ds.data).transpose(0, 2, 1, 3) * ws[:, None, None, None] * wr[None, None, :, None]
    cu = cu.reshape(2 * ns, 2 * nr)
    same = ns == nr and np.array_equal(sv.sources, sv.receivers)
    out = np.empty(len(points))
    for lo in range(0, len(points), chunk):
        pts = points[lo:lo + chunk]
        tr = green.dirichlet_traction_matrix(sv.receivers, pts, med)  # (R, z, c, j)
        ts = tr if same else green.dirichlet_traction_matrix(sv.sources, pts, med)  # (S, z, q, j)
        b = tr.transpose(0, 2, 1, 3).reshape(2 * nr, len(pts) * 2)  # [(r,c), (z,j)]
        v = (cu @ b).reshape(ns, 2, len(pts), 2)  # [s, q, z, j]
        out[lo:lo + chunk] = np.einsum("szqj,sqzj->z", ts, v).imag
    return out


def image(dataset: ScatterDataSet, grid: ImagingGrid, weights: str = "uniform",
          warn_window: bool = True) -> ImagingGrid:
    """Single-frequency imaging function on ``grid``."""
    if warn_window:
        check_window(grid, dataset.survey.d)
    vals = _image_values(dataset, grid.points, weights)
    return grid.with_values(vals.reshape(grid.counts))


def stack(images) -> ImagingGrid:
    """Pointwise sum of images on identical grids.

    Sums are correctly rounded (``math.fsum``), so the result does not
    depend on the order of ``images``.
    """
    images = list(images)
    if not images:
        raise ValueError("nothing to stack")
    ref = images[0]
    for im in images[1:]:
        if not ref.same_geometry(im):
            raise ValueError("cannot stack images with different grid geometry")
    cube = np.stack([np.asarray(im.values, dtype=float).ravel() for im in images], axis=1)
    total = np.fromiter((math.fsum(row) for row in cube), dtype=float, count=cube.shape[0])
    return ref.with_values(total.reshape(ref.counts))


def peak_to_background(values: np.ndarray, mask_far: np.ndarray) -> float:
    """Peak ``|I|`` over mean ``|I|`` on the far-field mask."""
    a = np.abs(values)
    return float(a.max() / a[mask_far].mean())


class RTMImager(TransformerMixin, BaseEstimator):
    """Estimator wrapper of the RTM imaging function.

    Parameters
    ----------
    window : tuple
        ``(z1_min, z1_max, z2_min, z2_max)`` of the imaging window.
    n1, n2 : int
        Grid counts along ``z1`` and ``z2``.
    weights : {"uniform", "trapezoid"}
        Surface quadrature weights; ``uniform`` uses ``2d/N`` everywhere.
    warn_window : bool
        Emit a warning when the window violates the aperture assumption.

    Attributes
    ----------
    grid_ : ImagingGrid
        Geometry of the fitted image.
    images_ : list of ImagingGrid
        One image per input dataset (frequency).
    image_ : ImagingGrid
        Stacked image.
    frequencies_ : ndarray
    """

    def __init__(self, window=(-2.0, 2.0, 8.0, 12.0), n1: int = 101, n2: int = 101,
                 weights: str = "uniform", warn_window: bool = True):
        self.window = window
        self.n1 = n1
        self.n2 = n2
        self.weights = weights
        self.warn_window = warn_window

    def _validate(self, X):
        if isinstance(X, ScatterDataSet):
            X = [X]
        X = list(X)
        if not X:
            raise ValueError("at least one dataset (frequency) is required")
        for ds in X:
            if not isinstance(ds, ScatterDataSet):
                raise TypeError(f"expected ScatterDataSet, got {type(ds).__name__}")
        ref = X[0].survey
        for ds in X[1:]:
            if ds.survey != ref:
                raise ValueError("all datasets must share one survey geometry")
        if self.weights not in ("uniform", "trapezoid"):
            raise ValueError("weights must be 'uniform' or 'trapezoid'")
        return X

    def _grid(self):
        return ImagingGrid.from_window(self.window, self.n1, self.n2)

    def fit(self, X, y=None):
        X = self._validate(X)
        self.grid_ = self._grid()
        self.images_ = [image(ds, self.grid_, self.weights, self.warn_window) for ds in X]
        self.image_ = stack(self.images_)
        self.frequencies_ = np.array([ds.omega for ds in X])
        self.datasets_ = X
        return self

    def transform(self, X):
        """Stacked image values (shape ``(n1, n2)``) for ``X`` on this estimator's grid."""
        X = self._validate(X)
        grid = self._grid()
        return stack(image(ds, grid, self.weights, self.warn_window) for ds in X).values

    def predict(self, Z):
        """Stacked imaging function of the fitted datasets at arbitrary points ``Z`` (shape ``(k, 2)``)."""
        if not hasattr(self, "datasets_"):
            from sklearn.exceptions import NotFittedError

            raise NotFittedError("RTMImager is not fitted yet")
        Z = np.atleast_2d(np.asarray(Z, dtype=float))
        if Z.shape[1] != 2 or np.any(Z[:, 1] <= 0):
            raise ValueError("points must have shape (k, 2) with z2 > 0")
        return sum(_image_values(ds, Z, self.weights) for ds in self.datasets_)

    def peak_location(self) -> np.ndarray:
        g = self.image_
        i, j = np.unravel_index(int(np.argmax(g.values)), g.counts)
        return np.array([g.z1[i], g.z2[j]])


# ---------------------------------------------------------------------------
# output files


def write_grid(path, grid: ImagingGrid, frequencies=(), dataset_digests=()) -> list:
    """CSV ``z1,z2,value`` rows (row-major over ``[i1, i2]``) plus a JSON sidecar."""
    from .psf import write_grid_csv

    path = Path(path)
    write_grid_csv(path, grid.z1, grid.z2, grid.values)
    side = path.with_suffix(path.suffix + ".json")
    meta = {
        "origin": [float(v) for v in grid.origin],
        "spacing": [float(v) for v in grid.spacing],
        "counts": [int(v) for v in grid.counts],
        "order": "row-major, z1 outer, z2 inner",
        "frequencies": [float(f) for f in frequencies],
        "dataset_sha256": list(dataset_digests),
    }
    atomic_write_text(side, json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return [path, side]


def read_grid_csv(path, counts) -> np.ndarray:
    arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return arr[:, 2].reshape(counts)


def write_pgm(path, grid: ImagingGrid) -> Path:
    """8-bit binary PGM with per-grid min-max scaling.

    Columns run along ``z1``; row 0 is the shallowest depth ``z2_min`` (the
    side facing the surface).
    """
    v = np.asarray(grid.values, dtype=float).T  # rows = z2, cols = z1
    lo, hi = float(v.min()), float(v.max())
    if hi > lo:
        pix = np.rint(255.0 * (v - lo) / (hi - lo))
    else:
        pix = np.zeros_like(v)
    pix = np.clip(pix, 0, 255).astype(np.uint8)
    h, w = pix.shape
    payload = f"P5\n{w} {h}\n255\n".encode("ascii") + pix.tobytes()
    return atomic_write_bytes(path, payload)
