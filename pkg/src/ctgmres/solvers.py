"""Iterative solvers for ``A x ~ b`` with a possibly unmatched back projector ``B``.

``ab_gmres`` and ``ba_gmres`` run GMRES on ``A B`` (right preconditioned)
and ``B A`` (left preconditioned) respectively. ``lsqr`` and ``lsmr`` are
the matched-transpose references, ``landweber`` the basic SIRT iteration.
Every solver returns a :class:`SolverTrace`.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .sparsecore import SparseMatrix, matvec, transpose, DimensionError, NonFiniteError
from .stopping import StoppingConfig, dp_check, ncp_distance, ncp_stop


@dataclass
class SolverOptions:
    max_iter: int = 100
    x0: Optional[np.ndarray] = None
    x_true: Optional[np.ndarray] = None
    stopping: Optional[StoppingConfig] = None
    keep_every: int = 1          # 0 keeps no intermediate iterates
    reorth: bool = False         # second MGS pass in Arnoldi
    breakdown_tol: float = 1e-14


@dataclass
class ArnoldiState:
    """Orthonormal basis ``W`` (rows are ``w_1..w_{k+1}``) and Hessenberg ``H``."""

    W: np.ndarray
    H: np.ndarray
    beta: float

    @property
    def k(self) -> int:
        return self.H.shape[1]

    def orthogonality_error(self) -> float:
        G = self.W @ self.W.T
        return float(np.abs(G - np.eye(G.shape[0])).max())

    def relation_residuals(self, op) -> np.ndarray:
        """Columnwise ``||op(w_j) - W_{k+1}^T h_j||`` for the Arnoldi relation."""
        return np.array([np.linalg.norm(op(self.W[j]) - self.W.T @ self.H[:, j])
                         for j in range(self.k)])


@dataclass
class SolverTrace:
    method: str
    vector_length: int
    iterates: dict[int, np.ndarray] = field(default_factory=dict)
    true_resnorms: list[float] = field(default_factory=list)
    inner_resnorms: list[float] = field(default_factory=list)
    errnorms: list[float] = field(default_factory=list)
    dp_rhs: Optional[float] = None
    ncp_distances: list[float] = field(default_factory=list)
    stop_index: Optional[int] = None
    stop_reason: str = "max_iter"
    x: Optional[np.ndarray] = None       # last iterate
    x_stop: Optional[np.ndarray] = None  # iterate at stop_index
    diverged: bool = False
    arnoldi: Optional[ArnoldiState] = None

    @property
    def n_iter(self) -> int:
        return len(self.true_resnorms)

    def basis_storage(self, k: Optional[int] = None) -> int:
        """Floats held by ``k`` Krylov basis vectors (``k*m`` for AB, ``k*n`` for BA)."""
        return (self.n_iter if k is None else k) * self.vector_length

    def iterate(self, k: int) -> np.ndarray:
        if k not in self.iterates:
            raise KeyError(f"iterate {k} was not retained (keep_every thinning)")
        return self.iterates[k]

    def to_csv(self, path) -> None:
        rhs = "" if self.dp_rhs is None else repr(self.dp_rhs)
        with open(path, "w", newline="") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["k", "true_resnorm", "inner_resnorm", "errnorm", "stop_flag",
                        "dp_lhs", "dp_rhs", "ncp_distance"])
            for i in range(self.n_iter):
                k = i + 1
                w.writerow([
                    k, repr(self.true_resnorms[i]), repr(self.inner_resnorms[i]),
                    repr(self.errnorms[i]) if self.errnorms else "",
                    int(self.stop_index == k),
                    repr(self.true_resnorms[i]), rhs,
                    repr(self.ncp_distances[i]) if self.ncp_distances else "",
                ])


class _Recorder:
    """Shared per-iteration bookkeeping: norms, stopping checks, iterate retention."""

    def __init__(self, trace: SolverTrace, b, opts: SolverOptions, m: int):
        self.t = trace
        self.b = b
        self.opts = opts
        self.cfg = opts.stopping
        if self.cfg is not None:
            self.cfg.check_layout(m)
            if self.cfg.noise_norm is not None:
                trace.dp_rhs = self.cfg.dp_tau * self.cfg.noise_norm
        self.xt = None if opts.x_true is None else np.asarray(opts.x_true, dtype=np.float64)
        self.xt_norm = None if self.xt is None else np.linalg.norm(self.xt)
        self.best_ncp = (math.inf, None)

    def start(self, x0):
        if self.opts.keep_every:
            self.t.iterates[0] = x0.copy()

    def record(self, k: int, x, r, inner: float) -> bool:
        """Store iteration ``k``; return True when a stopping rule fires."""
        t, cfg = self.t, self.cfg
        if not np.all(np.isfinite(x)):
            raise NonFiniteError(f"{t.method}: non-finite iterate at iteration {k}")
        rn = float(np.linalg.norm(r))
        if not (math.isfinite(rn) and math.isfinite(inner)):
            raise NonFiniteError(f"{t.method}: non-finite residual norm at iteration {k}")
        t.true_resnorms.append(rn)
        t.inner_resnorms.append(float(inner))
        if self.xt is not None:
            t.errnorms.append(float(np.linalg.norm(self.xt - x) / self.xt_norm))
        ke = self.opts.keep_every
        if ke and k % ke == 0:
            t.iterates[k] = x.copy()
        t.x = x
        if cfg is None:
            return False
        if cfg.layout is not None:
            d = ncp_distance(r, cfg.layout)
            t.ncp_distances.append(d)
            if d < self.best_ncp[0]:
                self.best_ncp = (d, x.copy())
        if cfg.rule == "dp" and dp_check(rn, cfg):
            t.stop_index, t.stop_reason, t.x_stop = k, "discrepancy principle", x.copy()
            return True
        if cfg.rule == "ncp":
            hit = ncp_stop(t.ncp_distances, cfg.ncp_patience)
            if hit is not None:
                t.stop_index, t.stop_reason, t.x_stop = hit, "ncp minimum", self.best_ncp[1]
                return True
        return False


def _check_shapes(A: SparseMatrix, B: Optional[SparseMatrix], b, x0):
    b = np.asarray(b, dtype=np.float64)
    if b.shape != (A.rows,):
        raise DimensionError(f"b has shape {b.shape}, A is {A.shape}")
    if B is not None and B.shape != (A.cols, A.rows):
        raise DimensionError(f"B{B.shape} does not conform with A{A.shape}")
    x0 = np.zeros(A.cols) if x0 is None else np.array(x0, dtype=np.float64)
    if x0.shape != (A.cols,):
        raise DimensionError(f"x0 has shape {x0.shape}, expected ({A.cols},)")
    return b, x0


def _gmres(kind: str, A: SparseMatrix, B: SparseMatrix, b, opts: SolverOptions) -> SolverTrace:
    if opts.max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    b, x0 = _check_shapes(A, B, b, opts.x0)
    ab = kind == "ab"
    length = A.rows if ab else A.cols
    trace = SolverTrace(f"{kind.upper()}-GMRES", length)
    rec = _Recorder(trace, b, opts, A.rows)
    rec.start(x0)

    op = (lambda w: matvec(A, matvec(B, w))) if ab else (lambda w: matvec(B, matvec(A, w)))
    r0 = b - matvec(A, x0)
    if not ab:
        r0 = matvec(B, r0)
    beta = float(np.linalg.norm(r0))
    if not math.isfinite(beta):
        raise NonFiniteError(f"{trace.method}: non-finite initial residual norm")
    trace.x = x0
    if beta == 0.0:
        trace.stop_reason = "zero initial residual"
        return trace

    kmax = min(opts.max_iter, length)
    W = np.empty((kmax + 1, length))
    W[0] = r0 / beta
    H = np.zeros((kmax + 1, kmax))
    R = np.zeros((kmax, kmax))        # triangular factor after Givens rotations
    cs, sn = np.zeros(kmax), np.zeros(kmax)
    g = np.zeros(kmax + 1)
    g[0] = beta
    h_frob2 = 0.0

    for j in range(kmax):
        k = j + 1
        q = op(W[j])
        for i in range(k):
            H[i, j] = W[i] @ q
            q -= H[i, j] * W[i]
        if opts.reorth:
            for i in range(k):
                c = W[i] @ q
                H[i, j] += c
                q -= c * W[i]
        hnext = float(np.linalg.norm(q))
        H[k, j] = hnext
        h_frob2 += float(H[:k + 1, j] @ H[:k + 1, j])

        col = H[:k + 1, j].copy()
        for i in range(j):
            a, bb = col[i], col[i + 1]
            col[i], col[i + 1] = cs[i] * a + sn[i] * bb, -sn[i] * a + cs[i] * bb
        denom = math.hypot(col[j], col[k])
        if denom == 0.0:
            cs[j], sn[j] = 1.0, 0.0
        else:
            cs[j], sn[j] = col[j] / denom, col[k] / denom
        col[j], col[k] = denom, 0.0
        R[:k, j] = col[:k]
        g[k] = -sn[j] * g[j]
        g[j] = cs[j] * g[j]

        y = _back_substitute(R[:k, :k], g[:k])
        z = W[:k].T @ y
        x = x0 + (matvec(B, z) if ab else z)
        r = b - matvec(A, x)

        breakdown = hnext <= opts.breakdown_tol * math.sqrt(h_frob2)
        if not breakdown:
            W[k] = q / hnext
        if rec.record(k, x, r, abs(g[k])):
            break
        if breakdown:
            trace.stop_reason = "breakdown"
            break
    k = trace.n_iter
    basis = W[:k] if trace.stop_reason == "breakdown" else W[:k + 1]
    trace.arnoldi = ArnoldiState(basis, H[:basis.shape[0], :k], beta)
    return trace


def _back_substitute(R, g):
    n = len(g)
    y = np.zeros(n)
    for i in range(n - 1, -1, -1):
        s = g[i] - R[i, i + 1:] @ y[i + 1:]
        y[i] = s / R[i, i] if R[i, i] != 0 else 0.0
    return y


def ab_gmres(A: SparseMatrix, B: SparseMatrix, b, opts: Optional[SolverOptions] = None) -> SolverTrace:
    """GMRES on ``min_u ||b - A B u||``, iterates ``x_k = x0 + B W_k y_k``.

    ``inner_resnorms`` holds the Givens-recurrence residual, which in exact
    arithmetic equals the explicitly recomputed ``||b - A x_k||``.
    """
    return _gmres("ab", A, B, b, opts or SolverOptions())


def ba_gmres(A: SparseMatrix, B: SparseMatrix, b, opts: Optional[SolverOptions] = None) -> SolverTrace:
    """GMRES on ``min_x ||B b - B A x||``; ``inner_resnorms`` track that objective."""
    return _gmres("ba", A, B, b, opts or SolverOptions())


def lsqr(A: SparseMatrix, b, opts: Optional[SolverOptions] = None) -> SolverTrace:
    """LSQR via Golub-Kahan bidiagonalization, no reorthogonalization.

    ``inner_resnorms`` holds the recurrence estimate ``phibar`` of ``||r_k||``.
    """
    opts = opts or SolverOptions()
    if opts.max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    b, x = _check_shapes(A, None, b, opts.x0)
    At = transpose(A)
    trace = SolverTrace("LSQR", A.cols)
    rec = _Recorder(trace, b, opts, A.rows)
    rec.start(x)
    trace.x = x

    u = b - matvec(A, x)
    beta = np.linalg.norm(u)
    if beta == 0:
        trace.stop_reason = "zero initial residual"
        return trace
    u /= beta
    v = matvec(At, u)
    alpha = np.linalg.norm(v)
    if alpha == 0:
        trace.stop_reason = "A^T b = 0"
        return trace
    v /= alpha
    w = v.copy()
    phibar, rhobar = beta, alpha

    for k in range(1, opts.max_iter + 1):
        u = matvec(A, v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
        v = matvec(At, u) - beta * v
        alpha = np.linalg.norm(v)
        if alpha > 0:
            v /= alpha
        rho = math.hypot(rhobar, beta)
        c, s = rhobar / rho, beta / rho
        theta = s * alpha
        rhobar = -c * alpha
        phi = c * phibar
        phibar = s * phibar
        x = x + (phi / rho) * w
        w = v - (theta / rho) * w
        if rec.record(k, x, b - matvec(A, x), phibar):
            break
        if alpha == 0 or beta == 0:
            trace.stop_reason = "bidiagonalization terminated"
            break
    return trace


def lsmr(A: SparseMatrix, b, opts: Optional[SolverOptions] = None) -> SolverTrace:
    """LSMR (MINRES on the normal equations), undamped.

    ``inner_resnorms`` holds the recurrence estimate of ``||A^T r_k||``.
    """
    opts = opts or SolverOptions()
    if opts.max_iter < 1:
        raise ValueError("max_iter must be at least 1")
    b, x = _check_shapes(A, None, b, opts.x0)
    At = transpose(A)
    trace = SolverTrace("LSMR", A.cols)
    rec = _Recorder(trace, b, opts, A.rows)
    rec.start(x)
    trace.x = x

    u = b - matvec(A, x)
    beta = np.linalg.norm(u)
    if beta == 0:
        trace.stop_reason = "zero initial residual"
        return trace
    u /= beta
    v = matvec(At, u)
    alpha = np.linalg.norm(v)
    if alpha == 0:
        trace.stop_reason = "A^T b = 0"
        return trace
    v /= alpha

    zetabar = alpha * beta
    alphabar = alpha
    rho = rhobar = cbar = 1.0
    sbar = 0.0
    h = v.copy()
    hbar = np.zeros_like(x)

    for k in range(1, opts.max_iter + 1):
        u = matvec(A, v) - alpha * u
        beta = np.linalg.norm(u)
        if beta > 0:
            u /= beta
        v = matvec(At, u) - beta * v
        alpha = np.linalg.norm(v)
        if alpha > 0:
            v /= alpha

        rhoold = rho
        rho = math.hypot(alphabar, beta)
        c, s = alphabar / rho, beta / rho
        thetanew = s * alpha
        alphabar = c * alpha

        rhobarold = rhobar
        thetabar = sbar * rho
        rhotemp = cbar * rho
        rhobar = math.hypot(rhotemp, thetanew)
        cbar, sbar = rhotemp / rhobar, thetanew / rhobar
        zeta = cbar * zetabar
        zetabar = -sbar * zetabar

        hbar = h - (thetabar * rho / (rhoold * rhobarold)) * hbar
        x = x + (zeta / (rho * rhobar)) * hbar
        h = v - (thetanew / rho) * h
        if rec.record(k, x, b - matvec(A, x), abs(zetabar)):
            break
        if alpha == 0 or beta == 0:
            trace.stop_reason = "bidiagonalization terminated"
            break
    return trace


def landweber(A: SparseMatrix, B: SparseMatrix, b, omega: float, iters: int,
              x0=None, x_true=None, divergence_factor: float = 1e6,
              scale: Optional[float] = None, keep_every: int = 0) -> SolverTrace:
    """``x_k = x_{k-1} + omega * B (b - A x_{k-1})``.

    Divergence is reported, not raised: the run stops with
    ``diverged=True`` once ``||x_k|| > divergence_factor * scale``, where
    ``scale`` defaults to ``||x_true||`` (or 1 without a reference).
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    b, x = _check_shapes(A, B, b, x0)
    opts = SolverOptions(max_iter=iters, x_true=x_true, keep_every=keep_every)
    trace = SolverTrace("Landweber", A.cols)
    rec = _Recorder(trace, b, opts, A.rows)
    rec.start(x)
    trace.x = x
    if scale is None:
        scale = float(np.linalg.norm(x_true)) if x_true is not None else 1.0
    limit = divergence_factor * scale
    r = b - matvec(A, x)
    for k in range(1, iters + 1):
        try:
            with np.errstate(over="ignore", invalid="ignore"):
                x = x + omega * matvec(B, r)
            blown = not np.all(np.isfinite(x)) or np.linalg.norm(x) > limit
        except NonFiniteError:
            blown = True
        if blown:
            trace.diverged = True
            trace.stop_index, trace.stop_reason = k, "diverged"
            break
        r = b - matvec(A, x)
        rec.record(k, x, r, np.linalg.norm(r))
    return trace
