"""Spectral and perturbation diagnostics for desk-scale problems.

Everything here works on dense copies and is therefore limited by the caps
in :mod:`ctgmres.sparsecore`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .projector import ProjectorPair
from .solvers import SolverTrace
from .sparsecore import (DEFAULT_EIG_CAP, DEFAULT_SVD_CAP, SparseMatrix, CapExceededError,
                         dense_eig, dense_svd, _as_dense)

PINV_RTOL = 1e-12
RANK_RTOL = 1e-10


class AcutenessError(ValueError):
    """A perturbation is not acute (some projection difference has norm >= 1)."""


class BoundViolation(ArithmeticError):
    pass


@dataclass
class SpectralReport:
    sigma: np.ndarray
    picard_exact: np.ndarray
    picard_noisy: np.ndarray
    U: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    exact_coeffs: Optional[np.ndarray] = None
    coeffs_per_iterate: dict[int, np.ndarray] = field(default_factory=dict)
    noise_floor_index: Optional[int] = None

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["i", "sigma", "picard_exact", "picard_noisy"])
            for i, row in enumerate(zip(self.sigma, self.picard_exact, self.picard_noisy), 1):
                w.writerow([i, *map(repr, map(float, row))])


def noise_floor_index(coeffs, window: int = 200, drop: float = 0.5) -> Optional[int]:
    """Index where the trailing-window median stops decreasing for good.

    ``med[i]`` is the median of the ``window`` coefficients ending at ``i``.
    The floor starts at the first ``i`` whose median is never undercut by
    more than the factor ``drop`` afterwards and that leaves at least one
    full window behind it. Plateaus inside a decaying signal are therefore
    not mistaken for the floor. Returns None for sequences that keep decaying.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    w = min(window, max(len(c) // 4, 1))
    if len(c) < 2 * w:
        return None
    med = np.array([np.median(c[i - w + 1:i + 1]) for i in range(w - 1, len(c))])
    later_min = np.minimum.accumulate(med[::-1])[::-1]
    for j in range(len(med) - w):
        if later_min[j] >= drop * med[j]:
            return j + w - 1
    return None


def picard_report(A, b_exact, b, x_true=None, window: int = 200,
                  cap: int = DEFAULT_SVD_CAP) -> SpectralReport:
    """SVD of ``A`` with ``|u_i^T b_exact|``, ``|u_i^T b|`` and the noise-floor index."""
    U, s, V = dense_svd(A, cap=cap)
    pe = np.abs(U.T @ np.asarray(b_exact, dtype=np.float64))
    pn = np.abs(U.T @ np.asarray(b, dtype=np.float64))
    xc = None if x_true is None else np.abs(V.T @ np.asarray(x_true, dtype=np.float64))
    return SpectralReport(s, pe, pn, U, V, exact_coeffs=xc,
                          noise_floor_index=noise_floor_index(pn, window))


def iterate_svd_coeffs(V: np.ndarray, trace: SolverTrace, ks: Sequence[int]) -> dict[int, np.ndarray]:
    """``|V^T x_k|`` for each requested ``k`` (``k = 0`` is the starting vector)."""
    return {k: np.abs(V.T @ trace.iterate(k)) for k in ks}


@dataclass
class SpectrumSummary:
    min_real: float
    max_modulus: float
    n_negative_real: int


def ba_spectrum(pair: ProjectorPair, cap: int = DEFAULT_EIG_CAP, neg_tol: float = 1e-8):
    """All eigenvalues of ``B A`` (densified) and a summary."""
    n = pair.A.cols
    if n > cap:
        raise CapExceededError(f"B*A has order {n}, above the dense eigenvalue cap {cap}; "
                               "use the 'desk' geometry or smaller")
    BA = (pair.B.to_scipy() @ pair.A.to_scipy()).toarray()
    ev = dense_eig(BA, cap=cap)
    summary = SpectrumSummary(float(ev.real.min()), float(np.abs(ev).max()),
                              int(np.sum(ev.real < -neg_tol)))
    return ev, summary


def write_spectrum_csv(path, eigenvalues) -> None:
    ev = np.asarray(eigenvalues)
    order = np.lexsort((ev.imag, ev.real))
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["re", "im"])
        for z in ev[order]:
            w.writerow([repr(float(z.real)), repr(float(z.imag))])


def landweber_far_iterate(pair: ProjectorPair, b, omega: float, k: int,
                          cap: int = DEFAULT_EIG_CAP) -> np.ndarray:
    """Landweber iterate ``x_k`` (``x_0 = 0``) by binary powering of the affine map.

    ``x_k = T x_{k-1} + c`` with ``T = I - omega*B*A`` and ``c = omega*B*b``;
    about ``2*log2(k)`` dense products replace ``k`` sparse sweeps, which
    makes iteration counts in the millions reachable at desk scale.
    """
    n = pair.A.cols
    if n > cap:
        raise CapExceededError(f"order {n} exceeds the dense cap {cap}")
    if k < 0:
        raise ValueError("k must be nonnegative")
    T = np.eye(n) - omega * (pair.B.to_scipy() @ pair.A.to_scipy()).toarray()
    s = omega * (pair.B.to_scipy() @ np.asarray(b, dtype=np.float64))
    x = np.zeros(n)
    # invariant: (T, s) maps x_j to x_{j+2^i}; x accumulates the set bits of k
    while k:
        if k & 1:
            x = T @ x + s
        k >>= 1
        if k:
            s = T @ s + s
            T = T @ T
    return x


# ---------------------------------------------------------------------------
# Subspace geometry


def _range_basis(M: np.ndarray, rtol: float = RANK_RTOL):
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    r = int(np.sum(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    return U[:, :r], Vt[:r].T, s, r


def _sin_theta(Q1: np.ndarray, Q2: np.ndarray) -> np.ndarray:
    """Sines of the principal angles between ``range(Q1)`` and ``range(Q2)``."""
    resid = Q1 - Q2 @ (Q2.T @ Q1)
    return np.clip(np.linalg.svd(resid, compute_uv=False), 0.0, 1.0)


def sin_theta_check(A, B, norm: str = "2", check: bool = True):
    """Extended sin-theta bound for an unmatched pair.

    Returns ``(lhs, rhs, rhs_alt)``: the combined sine norm for the pairs
    ``(R(B), R(A^T))`` and ``(R(B^T), R(A))``, the bound
    ``sqrt(2)*||B - A^T|| / max(sigma_r(A), sigma_r(B))`` and the 2-norm
    condition-number form of the same bound.
    """
    A, B = _as_dense(A), _as_dense(B)
    UA, VA, sA, rA = _range_basis(A)
    UB, VB, sB, rB = _range_basis(B)
    if rA != rB:
        raise ValueError(f"rank(A)={rA} differs from rank(B)={rB}")
    s1 = _sin_theta(UB, VA)    # R(B) vs R(A^T)
    s2 = _sin_theta(VB, UA)    # R(B^T) vs R(A)
    D = B - A.T
    if norm == "2":
        lhs = math.hypot(s1.max(initial=0.0), s2.max(initial=0.0))
        dn = np.linalg.norm(D, 2)
    elif norm == "fro":
        lhs = math.sqrt(float(s1 @ s1 + s2 @ s2))
        dn = np.linalg.norm(D, "fro")
    else:
        raise ValueError("norm must be '2' or 'fro'")
    sig_rA, sig_rB = sA[rA - 1], sB[rB - 1]
    rhs = math.sqrt(2) * dn / max(sig_rA, sig_rB)
    d2 = np.linalg.norm(D, 2)
    kA, kB = sA[0] / sig_rA, sB[0] / sig_rB
    rhs_alt = math.sqrt(2) * min(kA * d2 / sA[0], kB * d2 / sB[0])
    # rounding slack: matched pairs give lhs ~ 1e-15 against rhs = 0
    if check and lhs > rhs * (1 + 1e-10) + 1e-12:
        raise BoundViolation(f"sin-theta bound violated: {lhs} > {rhs}")
    return lhs, rhs, rhs_alt


# ---------------------------------------------------------------------------
# First-order perturbation bound


@dataclass
class PerturbationInstance:
    """Perturbed model ``A+E1``, back projector ``A^T+E2^T`` and data ``b_exact+db``."""

    A: np.ndarray
    E1: np.ndarray
    E2: np.ndarray
    b_exact: np.ndarray
    db: np.ndarray
    epsilon: float = 0.0


def pinv(M: np.ndarray, rtol: float = PINV_RTOL) -> np.ndarray:
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    if not s.size or s[0] == 0:
        return np.zeros(M.T.shape)
    keep = s > rtol * s[0]
    return (Vt[keep].T / s[keep]) @ U[:, keep].T


def _proj(Q: np.ndarray) -> np.ndarray:
    return Q @ Q.T


def acuteness(inst: PerturbationInstance) -> dict[str, float]:
    """2-norms of the four projection differences; all must be < 1."""
    A = inst.A
    At, Bt = A + inst.E1, A.T + inst.E2.T
    UA, VA, _, _ = _range_basis(A)
    Ua, Va, _, _ = _range_basis(At)
    Ub, Vb, _, _ = _range_basis(Bt)
    return {
        "R(A~) vs R(A)": np.linalg.norm(_proj(Ua) - _proj(UA), 2),
        "R(A~^T) vs R(A^T)": np.linalg.norm(_proj(Va) - _proj(VA), 2),
        "R(B~) vs R(A^T)": np.linalg.norm(_proj(Ub) - _proj(VA), 2),
        "R(B~^T) vs R(A)": np.linalg.norm(_proj(Vb) - _proj(UA), 2),
    }


def perturbation_bound(inst: PerturbationInstance):
    """Observed ``||dx_min|| / ||x_min||`` and its first-order bound.

    ``x_min = A^+ b_exact``; the perturbed solution is the minimum-norm
    least squares solution ``(B~ A~)^+ B~ b``.
    """
    A = np.asarray(inst.A, dtype=np.float64)
    At, Bt = A + inst.E1, A.T + inst.E2.T
    UA, _, sA, r = _range_basis(A)
    for name, val in acuteness(inst).items():
        if not val < 1:
            raise AcutenessError(f"perturbation not acute: ||P[{name}]|| = {val:.3g} >= 1")
    for name, M in (("A+E1", At), ("A^T+E2^T", Bt)):
        if _range_basis(M)[3] != r:
            raise AcutenessError(f"rank({name}) differs from rank(A)={r}")

    bbar = np.asarray(inst.b_exact, dtype=np.float64)
    b = bbar + inst.db
    x_min = pinv(A) @ bbar
    x_pert = pinv(Bt @ At) @ (Bt @ b)
    x_norm = np.linalg.norm(x_min)
    observed = float(np.linalg.norm(x_pert - x_min) / x_norm) if x_norm else 0.0

    sig1, sigr = sA[0], sA[r - 1]
    kappa = sig1 / sigr
    bn = np.linalg.norm(bbar)
    b_in = UA @ (UA.T @ bbar)
    b_out = bbar - b_in
    db_in = UA @ (UA.T @ inst.db)
    bound = kappa * ((2 * np.linalg.norm(inst.E1, 2) * np.linalg.norm(b_in) / bn
                      + np.linalg.norm(inst.E2, 2) * np.linalg.norm(b_out) / bn) / sigr
                     + np.linalg.norm(db_in) / bn)
    return observed, float(bound)


def random_low_rank(rng: np.random.Generator, m: int, n: int, r: int):
    """``A = X Y^T`` with Gaussian factors, plus the factors."""
    X, Y = rng.standard_normal((m, r)), rng.standard_normal((n, r))
    return X @ Y.T, X, Y


def random_instance(rng: np.random.Generator, m: int = 10, n: int = 7, r: int = 5,
                    eps: float = 1e-3, residual: float = 0.1, corollary: bool = False,
                    directions=None) -> PerturbationInstance:
    """Seeded rank-preserving perturbation instance.

    Perturbations act on the factors of ``A = X Y^T`` so ``A+E1`` and
    ``A^T+E2^T`` keep rank ``r``. ``residual`` is the relative size of the
    part of ``b_exact`` outside ``R(A)``. With ``corollary`` set, ``E1 = 0``
    and ``b_exact`` lies in ``R(A)``. ``directions`` may fix the random
    perturbation directions ``(X1, Y1, X2, Y2, d)`` so one instance can be
    replayed along an epsilon ladder.
    """
    if directions is None:
        A, X, Y = random_low_rank(rng, m, n, r)
        x = rng.standard_normal(n)
        perp = rng.standard_normal(m)
        directions = (A, X, Y, x, perp,
                      rng.standard_normal((m, r)), rng.standard_normal((n, r)),
                      rng.standard_normal((m, r)), rng.standard_normal((n, r)),
                      rng.standard_normal(m))
    A, X, Y, x, perp, X1, Y1, X2, Y2, d = directions
    Q = np.linalg.qr(X)[0]
    bin_ = A @ x
    if corollary:
        bbar = bin_
        E1 = np.zeros_like(A)
    else:
        perp = perp - Q @ (Q.T @ perp)
        bbar = bin_ + residual * np.linalg.norm(bin_) * perp / np.linalg.norm(perp)
        E1 = (X + eps * X1) @ (Y + eps * Y1).T - A
    # B~ = (A + E2)^T with A + E2 of rank r
    E2 = (X + eps * X2) @ (Y + eps * Y2).T - A
    db = eps * np.linalg.norm(bbar) * d / np.linalg.norm(d)
    inst = PerturbationInstance(A, E1, E2, bbar, db, eps)
    inst.directions = directions
    return inst


def write_bound_csv(path, rows) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["epsilon", "observed", "bound", "instance"])
        for inst, eps, obs, bnd in rows:
            w.writerow([repr(float(eps)), repr(float(obs)), repr(float(bnd)), inst])


# ---------------------------------------------------------------------------


def error_history(trace: SolverTrace, x_true) -> tuple[np.ndarray, int, float]:
    """Relative errors ``||x_true - x_k|| / ||x_true||``, the 1-based argmin and the minimum.

    Uses the recorded history when present, otherwise the retained iterates.
    """
    if trace.errnorms:
        err = np.asarray(trace.errnorms)
    else:
        xt = np.asarray(x_true, dtype=np.float64)
        ks = sorted(k for k in trace.iterates if k >= 1)
        if len(ks) != trace.n_iter:
            raise KeyError("error history needs every iterate retained")
        err = np.array([np.linalg.norm(xt - trace.iterates[k]) for k in ks]) / np.linalg.norm(xt)
    k = int(np.argmin(err))
    return err, k + 1, float(err[k])
