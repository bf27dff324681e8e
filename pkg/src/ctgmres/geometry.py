"""2D parallel-beam scan geometry.

Conventions shared by every projector model:

* the image is ``N x N`` unit pixels centred on the origin; pixel ``(i, j)``
  (row ``i`` from the top, column ``j`` from the left) has centre
  ``x = j - (N-1)/2``, ``y = (N-1)/2 - i`` and flat index ``i*N + j``;
* at angle ``theta`` the beam travels along ``d = (-sin, cos)`` and the
  detector axis is ``a = (cos, sin)``;
* ray ``(angle k, detector j)`` is row ``k*N_det + j`` of the system matrix.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScanGeometry:
    n_pixels: int
    angles_deg: tuple[float, ...]
    n_det: int
    det_width: float = 1.0
    det_offset: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "angles_deg", tuple(float(a) for a in self.angles_deg))
        if self.n_pixels < 1 or self.n_det < 1:
            raise ValueError("n_pixels and n_det must be at least 1")
        if not self.angles_deg:
            raise ValueError("at least one projection angle is required")
        if not self.det_width > 0:
            raise ValueError("det_width must be positive")

    @property
    def n_angles(self) -> int:
        return len(self.angles_deg)

    @property
    def m(self) -> int:
        return self.n_angles * self.n_det

    @property
    def n(self) -> int:
        return self.n_pixels ** 2

    @property
    def angles_rad(self) -> np.ndarray:
        return np.deg2rad(np.asarray(self.angles_deg))

    def det_coords(self) -> np.ndarray:
        """Signed detector-cell centre coordinates along the detector axis."""
        return (np.arange(self.n_det) - (self.n_det - 1) / 2) * self.det_width + self.det_offset

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Flat ``(x, y)`` arrays of pixel centres in index order."""
        c = np.arange(self.n_pixels) - (self.n_pixels - 1) / 2
        x = np.tile(c, self.n_pixels)
        y = np.repeat(c[::-1], self.n_pixels)
        return x, y

    def to_config(self) -> dict[str, str]:
        return {
            "n_pixels": str(self.n_pixels),
            "angles": ",".join(repr(a) for a in self.angles_deg),
            "n_det": str(self.n_det),
            "det_width": repr(self.det_width),
            "det_offset": repr(self.det_offset),
        }


def angle_range(start: float, step: float, count: int) -> tuple[float, ...]:
    # start + k*step, not cumulative sums, so 0.3-degree grids stay exact-ish
    return tuple(start + k * step for k in range(count))


def standard_geometry(size_class: str) -> ScanGeometry:
    """The ``small`` / ``large`` test setups and the reduced ``desk`` setup."""
    if size_class == "small":
        return ScanGeometry(128, angle_range(0.0, 1.0, 180), 128)
    if size_class == "large":
        return ScanGeometry(420, angle_range(0.0, 0.3, 600), 420)
    if size_class == "desk":
        return ScanGeometry(64, angle_range(0.0, 2.0, 90), 64)
    raise ValueError(f"unknown size class {size_class!r} (expected small, large or desk)")


def ray_of(g: ScanGeometry, angle_index: int, det_index: int):
    """Central line of one detector cell.

    Returns ``(point, direction, half_width)`` where ``point`` is the cell
    centre on the detector axis (a point on the ray) and ``direction`` the
    unit beam direction.
    """
    if not 0 <= angle_index < g.n_angles:
        raise IndexError(f"angle index {angle_index} out of range [0, {g.n_angles})")
    if not 0 <= det_index < g.n_det:
        raise IndexError(f"detector index {det_index} out of range [0, {g.n_det})")
    th = np.deg2rad(g.angles_deg[angle_index])
    c, s = np.cos(th), np.sin(th)
    u = (det_index - (g.n_det - 1) / 2) * g.det_width + g.det_offset
    point = np.array([u * c, u * s])
    direction = np.array([-s, c])
    return point, direction, g.det_width / 2
