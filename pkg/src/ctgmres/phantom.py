"""Ground-truth phantoms, inverse-crime sinograms and seeded white noise.

Every random draw comes from a splitmix64 stream so results are identical
across runs and platforms.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .sparsecore import SparseMatrix, matvec, DimensionError

_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


class SplitMix64:
    """splitmix64 generator; ``next_u64(k)`` returns the next ``k`` outputs."""

    def __init__(self, seed: int):
        self.state = int(seed) & _MASK

    def next_u64(self, count: int = 1) -> np.ndarray:
        with np.errstate(over="ignore"):
            steps = np.arange(1, count + 1, dtype=np.uint64)
            z = np.uint64(self.state) + steps * _GAMMA
            z = (z ^ (z >> np.uint64(30))) * _M1
            z = (z ^ (z >> np.uint64(27))) * _M2
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + count * int(_GAMMA)) & _MASK
        return z

    def uniform(self, count: int = 1) -> np.ndarray:
        """Doubles in ``[0, 1)`` from the top 53 bits."""
        return (self.next_u64(count) >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self, count: int) -> np.ndarray:
        """Standard normals via Box-Muller, two per pair of outputs."""
        pairs = (count + 1) // 2
        z = self.next_u64(2 * pairs) >> np.uint64(11)
        u1 = (z[0::2].astype(np.float64) + 1.0) * 2.0**-53   # (0, 1], safe for log
        u2 = z[1::2].astype(np.float64) * 2.0**-53
        rad = np.sqrt(-2.0 * np.log(u1))
        out = np.empty(2 * pairs)
        out[0::2] = rad * np.cos(2 * np.pi * u2)
        out[1::2] = rad * np.sin(2 * np.pi * u2)
        return out[:count]


@dataclass(frozen=True, eq=False)
class Phantom:
    n: int
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (self.n * self.n,):
            raise ValueError("phantom values must have length n*n")
        if v.size and (v.min() < 0 or v.max() > 1):
            raise ValueError("phantom values must lie in [0, 1]")
        object.__setattr__(self, "values", v)

    @property
    def image(self) -> np.ndarray:
        return self.values.reshape(self.n, self.n)


@dataclass(frozen=True)
class NoiseSpec:
    rel_level: float
    seed: int

    def __post_init__(self):
        if self.rel_level < 0:
            raise ValueError("rel_level must be nonnegative")


def _centres(n: int):
    c = np.arange(n) - (n - 1) / 2
    return np.meshgrid(c, c[::-1])   # x grows to the right, y upward


def _threephases(n: int, seed: int) -> np.ndarray:
    rng = SplitMix64(seed)
    X, Y = _centres(n)
    img = np.zeros((n, n))
    scale = (n / 128) ** 2
    R = 0.45 * n

    def centre():
        u = rng.uniform(2)
        r, phi = R * math.sqrt(u[0]), 2 * math.pi * u[1]
        return r * math.cos(phi), r * math.sin(phi)

    for _ in range(int(round(60 * scale))):
        cx, cy = centre()
        rad = (0.01 + 0.02 * rng.uniform(1)[0]) * n
        img[(X - cx) ** 2 + (Y - cy) ** 2 <= rad**2] = 0.35
    for _ in range(int(round(12 * scale))):
        cx, cy = centre()
        ax, ay = (0.05 + 0.10 * rng.uniform(2)) * n
        img[((X - cx) / ax) ** 2 + ((Y - cy) / ay) ** 2 <= 1.0] = 0.7
    for _ in range(5):
        cx, cy = centre()
        rad = (0.1 + 0.1 * rng.uniform(1)[0]) * n
        img[(X - cx) ** 2 + (Y - cy) ** 2 <= rad**2] = 1.0
    img[X**2 + Y**2 > (n / 2) ** 2] = 0.0
    return img


# (intensity, semi-axis a, semi-axis b, x0, y0, rotation in degrees)
_SHEPP_LOGAN = (
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.8740, 0.0, -0.0184, 0.0),
    (-0.2, 0.1100, 0.3100, 0.22, 0.0, -18.0),
    (-0.2, 0.1600, 0.4100, -0.22, 0.0, 18.0),
    (0.1, 0.2100, 0.2500, 0.0, 0.35, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, 0.1, 0.0),
    (0.1, 0.0460, 0.0460, 0.0, -0.1, 0.0),
    (0.1, 0.0460, 0.0230, -0.08, -0.605, 0.0),
    (0.1, 0.0230, 0.0230, 0.0, -0.606, 0.0),
    (0.1, 0.0230, 0.0460, 0.06, -0.605, 0.0),
)


def _shepp_logan(n: int) -> np.ndarray:
    X, Y = _centres(n)
    X, Y = X / (n / 2), Y / (n / 2)
    img = np.zeros((n, n))
    for val, a, b, x0, y0, phi in _SHEPP_LOGAN:
        t = math.radians(phi)
        xr = (X - x0) * math.cos(t) + (Y - y0) * math.sin(t)
        yr = -(X - x0) * math.sin(t) + (Y - y0) * math.cos(t)
        img[(xr / a) ** 2 + (yr / b) ** 2 <= 1.0] += val
    return np.clip(img, 0.0, 1.0)


def make_phantom(kind: str, n: int, seed: int = 0) -> Phantom:
    """``threephases`` (seeded random shapes) or ``sheppLogan`` (modified table)."""
    if n < 8:
        raise ValueError("phantom size must be at least 8")
    key = kind.lower()
    if key == "threephases":
        img = _threephases(n, seed)
    elif key in ("shepplogan", "shepp-logan", "shepp_logan"):
        img = _shepp_logan(n)
    else:
        raise ValueError(f"unknown phantom kind {kind!r} (expected threephases or sheppLogan)")
    return Phantom(n, img.ravel())


def synth_sinogram(A: SparseMatrix, x: Phantom | np.ndarray) -> np.ndarray:
    """Noise-free data ``A @ x``."""
    v = x.values if isinstance(x, Phantom) else np.asarray(x, dtype=np.float64)
    if v.shape != (A.cols,):
        raise DimensionError(f"phantom has {v.size} pixels, A has {A.cols} columns")
    return matvec(A, v)


def add_noise(b_exact, spec: NoiseSpec):
    """Return ``(b, ||e||)`` with ``||e|| / ||b_exact||`` equal to ``spec.rel_level``."""
    b_exact = np.asarray(b_exact, dtype=np.float64)
    if spec.rel_level == 0:
        return b_exact.copy(), 0.0
    bnorm = np.linalg.norm(b_exact)
    if bnorm == 0:
        raise ValueError("cannot scale relative noise against zero data")
    g = SplitMix64(spec.seed).normal(b_exact.size)
    e = g * (spec.rel_level * bnorm / np.linalg.norm(g))
    return b_exact + e, float(np.linalg.norm(e))


def write_pgm(path, values, n: int | None = None) -> None:
    """16-bit plain (P2) PGM; values are clipped to [0, 1] first."""
    v = np.asarray(values, dtype=np.float64).ravel()
    n = n or int(round(math.sqrt(v.size)))
    if n * n != v.size:
        raise ValueError("values do not form a square image")
    q = np.rint(np.clip(v, 0.0, 1.0) * 65535).astype(np.int64).reshape(n, n)
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(f"P2\n{n} {n}\n65535\n")
        for row in q:
            f.write(" ".join(map(str, row.tolist())) + "\n")


def read_pgm(path) -> np.ndarray:
    with open(path, "r", encoding="ascii") as f:
        toks = [t for line in f for t in line.split("#", 1)[0].split()]
    if toks[0] != "P2":
        raise ValueError("not a plain PGM file")
    w, h, maxval = int(toks[1]), int(toks[2]), int(toks[3])
    return np.array(toks[4:4 + w * h], dtype=np.float64).reshape(h, w) / maxval
