"""Stopping rules aimed at the point of semi-convergence.

Two rules are provided: the discrepancy principle (DP) and a normalized
cumulative periodogram (NCP) test on the residual sinogram.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np


class StoppingConfigError(ValueError):
    pass


@dataclass(frozen=True)
class StoppingConfig:
    """Parameters of the stopping rules.

    ``rule`` selects which rule terminates a solver (``"none"``, ``"dp"`` or
    ``"ncp"``); diagnostics for every rule whose inputs are available are
    recorded regardless. ``layout`` is ``(n_det, n_ang)``.
    """

    rule: str = "none"
    dp_tau: float = 1.0
    noise_norm: Optional[float] = None
    ncp_patience: int = 3
    layout: Optional[tuple[int, int]] = None

    def __post_init__(self):
        rule = self.rule.lower()
        object.__setattr__(self, "rule", rule)
        if rule not in ("none", "dp", "ncp"):
            raise StoppingConfigError(f"unknown stopping rule {self.rule!r}")
        if self.dp_tau < 1:
            raise StoppingConfigError("dp_tau is a safety factor and must be >= 1")
        if self.noise_norm is not None and self.noise_norm < 0:
            raise StoppingConfigError("noise_norm must be nonnegative")
        if rule == "dp" and self.noise_norm is None:
            raise StoppingConfigError("the discrepancy principle needs noise_norm")
        if rule == "ncp" and self.layout is None:
            raise StoppingConfigError("the NCP rule needs the sinogram layout (n_det, n_ang)")
        if self.ncp_patience < 1:
            raise StoppingConfigError("ncp_patience must be at least 1")

    def check_layout(self, m: int) -> None:
        if self.layout is not None and self.layout[0] * self.layout[1] != m:
            raise StoppingConfigError(
                f"layout {self.layout} does not match residual length {m}")


def dp_check(resnorm: float, cfg: StoppingConfig) -> bool:
    """True iff ``resnorm <= dp_tau * noise_norm``."""
    if cfg.noise_norm is None:
        raise StoppingConfigError("the discrepancy principle needs noise_norm")
    return resnorm <= cfg.dp_tau * cfg.noise_norm


def ncp_distance(residual, layout: tuple[int, int]) -> float:
    """Mean over projection angles of ``||c - c_white||_2``.

    The residual is arranged as an ``n_det x n_ang`` sinogram. For each
    column the periodogram of frequencies ``1..floor(n_det/2)`` (DC
    dropped) is cumulatively summed and normalized to end at 1, then
    compared with the straight line of white noise. Columns without any
    non-DC power count as distance 0.
    """
    n_det, n_ang = layout
    r = np.asarray(residual, dtype=np.float64)
    if r.shape != (n_det * n_ang,):
        raise StoppingConfigError(f"residual of length {r.size} does not fit layout {layout}")
    q = n_det // 2
    if q == 0:
        return 0.0
    sino = r.reshape(n_ang, n_det)
    power = np.abs(np.fft.rfft(sino, axis=1)[:, 1:q + 1]) ** 2
    cum = np.cumsum(power, axis=1)
    total = cum[:, -1]
    live = total > 0
    white = np.arange(1, q + 1) / q
    dist = np.zeros(n_ang)
    dist[live] = np.linalg.norm(cum[live] / total[live, None] - white, axis=1)
    return float(dist.mean())


def ncp_stop(distances: Sequence[float], patience: int = 3) -> Optional[int]:
    """1-based index of the minimum once it has stood for ``patience`` iterations."""
    if len(distances) == 0:
        raise ValueError("need at least one distance")
    d = np.asarray(distances, dtype=np.float64)
    best = int(np.argmin(d))   # first occurrence on ties
    if len(d) - 1 - best >= patience:
        return best + 1
    return None


def first_dp_index(resnorms: Sequence[float], tau: float, noise_norm: float) -> Optional[int]:
    """Smallest 1-based ``k`` with ``resnorms[k-1] <= tau*noise_norm``."""
    hits = np.flatnonzero(np.asarray(resnorms) <= tau * noise_norm)
    return int(hits[0]) + 1 if hits.size else None


def first_ncp_index(distances: Sequence[float], patience: int = 3) -> Optional[int]:
    """Replays :func:`ncp_stop` over a recorded distance history."""
    for k in range(1, len(distances) + 1):
        hit = ncp_stop(distances[:k], patience)
        if hit is not None:
            return hit
    return None
