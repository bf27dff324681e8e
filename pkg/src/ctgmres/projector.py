"""Sparse CT system matrices (line, strip and Joseph models) and unmatched pairs.

All three models are assembled pixel-driven: for one projection angle every
pixel has a footprint along the detector axis that depends only on the
offset ``t`` between a ray and the pixel's projected centre, so a whole
angle is evaluated with array arithmetic.

* Line: chord length of the ray through the unit square. As a function of
  ``t`` this is a trapezoid of height ``1/max(|cos|,|sin|)``, plateau
  half-width ``||cos|-|sin||/2`` and support half-width ``(|cos|+|sin|)/2``.
  The values are identical to a Siddon traversal of each ray.
* Strip: overlap area of the detector strip with the pixel divided by the
  strip width, i.e. the trapezoid averaged over the cell.
* Joseph: stepping along the dominant axis with linear interpolation between
  the two straddling pixels gives each pixel a triangular footprint of
  half-width ``max(|cos|,|sin|)`` and height ``1/max(|cos|,|sin|)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import ScanGeometry
from .sparsecore import SparseMatrix, frob_diff, frob_norm, transpose, DimensionError

EPS = 1e-12


class ProjModel(enum.Enum):
    LINE = "line"
    STRIP = "strip"
    JOSEPH = "joseph"

    @classmethod
    def parse(cls, name) -> "ProjModel":
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower()
        aliases = {"l": "line", "s": "strip", "i": "joseph", "interp": "joseph",
                   "interpolation": "joseph"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            raise ValueError(f"unknown projector model {name!r} "
                             "(expected line, strip or joseph)") from None

    @property
    def short(self) -> str:
        return {"line": "l", "strip": "s", "joseph": "i"}[self.value]


@dataclass(frozen=True)
class ProjectorPair:
    A: SparseMatrix
    B: SparseMatrix
    label_A: str = "A"
    label_B: str = "B"

    def __post_init__(self):
        if self.A.rows != self.B.cols or self.A.cols != self.B.rows:
            raise DimensionError(f"B{self.B.shape} does not conform with A{self.A.shape}")


def _trapezoid_antideriv(x, h1, h2, H):
    """Integral of the line footprint from 0 to ``x`` (odd in ``x``)."""
    ax = np.abs(x)
    ramp = h2 - h1
    if ramp < EPS:
        g = H * np.minimum(ax, h2)
    else:
        g = np.where(ax <= h1, H * ax,
                     np.where(ax <= h2,
                              H * h1 + H * (ramp**2 - (h2 - ax) ** 2) / (2 * ramp),
                              H * (h1 + h2) / 2))
    return np.sign(x) * g


def _footprint(model: ProjModel, t, cos_t: float, sin_t: float, width: float):
    a, b = abs(cos_t), abs(sin_t)
    big = max(a, b)
    if model is ProjModel.JOSEPH:
        # x-stepping when |sin| >= |cos| (the 45-degree tie included); both
        # branches reduce to the same triangle, only the driving length differs
        m = b if b >= a else a
        return np.maximum(0.0, 1.0 - np.abs(t) / m) / m
    h1, h2, H = abs(a - b) / 2, (a + b) / 2, 1.0 / big
    if model is ProjModel.LINE:
        if h2 - h1 < EPS:
            # axis-aligned: half-open pixel [lo, hi) so a ray on a shared edge counts once
            return np.where((t >= -h2 - EPS) & (t < h2 - EPS), H, 0.0)
        at = np.abs(t)
        return np.where(at <= h1, H, np.maximum(0.0, H * (h2 - at) / (h2 - h1)))
    hw = width / 2
    return (_trapezoid_antideriv(t + hw, h1, h2, H) - _trapezoid_antideriv(t - hw, h1, h2, H)) / width


def _support(model: ProjModel, cos_t: float, sin_t: float, width: float) -> float:
    a, b = abs(cos_t), abs(sin_t)
    if model is ProjModel.JOSEPH:
        return max(a, b)
    if model is ProjModel.LINE:
        return (a + b) / 2
    return (a + b) / 2 + width / 2


def _angle_entries(g: ScanGeometry, model: ProjModel, k: int, px, py):
    th = np.deg2rad(g.angles_deg[k])
    c, s = float(np.cos(th)), float(np.sin(th))
    proj = px * c + py * s
    w = g.det_width
    centre = (g.n_det - 1) / 2
    R = _support(model, c, s, w)
    j0 = np.floor((proj - R - g.det_offset) / w + centre).astype(np.int64)
    span = int(np.floor(2 * R / w)) + 2
    rows, cols, vals = [], [], []
    pix = np.arange(px.size)
    for off in range(span):
        j = j0 + off
        ok = (j >= 0) & (j < g.n_det)
        jj, pp = j[ok], pix[ok]
        t = (jj - centre) * w + g.det_offset - proj[ok]
        v = _footprint(model, t, c, s, w)
        keep = v >= EPS
        rows.append(k * g.n_det + jj[keep])
        cols.append(pp[keep])
        vals.append(v[keep])
    return np.concatenate(rows), np.concatenate(cols), np.concatenate(vals)


def build_matrix(g: ScanGeometry, model) -> SparseMatrix:
    """System matrix of shape ``(n_angles*n_det, N*N)`` for one model."""
    model = ProjModel.parse(model)
    px, py = g.pixel_centers()
    parts = [_angle_entries(g, model, k, px, py) for k in range(g.n_angles)]
    i = np.concatenate([p[0] for p in parts])
    j = np.concatenate([p[1] for p in parts])
    v = np.concatenate([p[2] for p in parts])
    return SparseMatrix.from_coo(g.m, g.n, i, j, v)


def build_pair(g: ScanGeometry, model_a, model_b) -> ProjectorPair:
    """``A`` from ``model_a`` and ``B`` the transpose of the ``model_b`` matrix."""
    ma, mb = ProjModel.parse(model_a), ProjModel.parse(model_b)
    A = build_matrix(g, ma)
    Bsrc = A if mb is ma else build_matrix(g, mb)
    return ProjectorPair(A, transpose(Bsrc), f"A_{ma.short}", f"A_{mb.short}^T")


def threshold_transpose(A: SparseMatrix, tau: float) -> SparseMatrix:
    """``B_tau``: the transpose of ``A`` keeping entries ``>= tau * max(A)``."""
    if tau < 0:
        raise ValueError("tau must be nonnegative")
    if A.nnz and A.values.min() < 0:
        raise ValueError("threshold_transpose needs a matrix with nonnegative entries")
    At = transpose(A)
    if tau == 0:
        return At
    keep = At.values >= tau * A.max_value()
    row_ids = np.repeat(np.arange(At.rows), np.diff(At.row_offsets))
    counts = np.bincount(row_ids[keep], minlength=At.rows)
    offsets = np.concatenate([[0], np.cumsum(counts)])
    return SparseMatrix(At.rows, At.cols, offsets, At.col_indices[keep], At.values[keep])


def unmatchedness(pair: ProjectorPair) -> float:
    """``||B - A^T||_F / ||A||_F``."""
    return frob_diff(pair.B, transpose(pair.A)) / frob_norm(pair.A)


def matrix_filename(model, g: ScanGeometry) -> str:
    model = ProjModel.parse(model)
    return f"A_{model.value}_{g.n_pixels}x{g.n_angles}x{g.n_det}.mtx"
