"""Command-line experiment runner.

Usage::

    ctgmres build-matrix --config exp.cfg
    ctgmres solve        --config exp.cfg [--out DIR] [--threads 1]
    ctgmres sweep-tau    --config exp.cfg --taus 0,0.01,0.1,0.3,0.5
    ctgmres analyze      --config exp.cfg --what picard|spectrum|coeffs|bound

The config is flat ``key = value`` text, one pair per line, ``#`` starts a
comment. Exit codes: 0 success, 2 config error, 3 numerical failure,
4 IO error.
"""
from __future__ import annotations

import argparse
import csv
import sys
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Optional

import numpy as np

from . import analysis
from .geometry import ScanGeometry, angle_range, standard_geometry
from .phantom import NoiseSpec, add_noise, make_phantom, synth_sinogram, write_pgm
from .projector import (ProjModel, ProjectorPair, build_matrix, matrix_filename,
                        threshold_transpose, unmatchedness)
from .solvers import SolverOptions, SolverTrace, ab_gmres, ba_gmres, landweber, lsmr, lsqr
from .sparsecore import (CapExceededError, NonFiniteError, SparseMatrix, matvec, mm_write,
                         set_threads, transpose)
from .stopping import StoppingConfig, StoppingConfigError, first_dp_index, first_ncp_index

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_IO = 0, 2, 3, 4
SOLVERS = ("ab", "ba", "lsqr", "lsmr", "landweber")


class ConfigError(ValueError):
    pass


class NumericalFailure(ArithmeticError):
    pass


@dataclass
class ExperimentConfig:
    geometry: Optional[str] = None
    n_pixels: Optional[int] = None
    angles: Optional[tuple] = None
    n_det: Optional[int] = None
    det_width: float = 1.0
    det_offset: float = 0.0
    model_a: str = "strip"
    model_b: str = "strip"
    models: Optional[tuple] = None
    phantom_kind: str = "threephases"
    phantom_seed: int = 42
    noise_level: float = 0.003
    noise_seed: int = 7
    solver: str = "ab"
    omega: Optional[float] = None
    max_iter: int = 100
    stop_rule: str = "none"
    dp_tau: float = 1.0
    ncp_patience: int = 3
    halt_at_stop: bool = False
    output_dir: str = "out"
    keep_iterates: int = 1
    reorth: bool = False
    coeff_iters: tuple = (1, 5, 20)
    bound_instances: int = 20

    # -- derived objects -------------------------------------------------

    def scan_geometry(self) -> ScanGeometry:
        if self.geometry is not None:
            base = standard_geometry(self.geometry)
        elif None in (self.n_pixels, self.angles, self.n_det):
            raise ConfigError("give either 'geometry' or all of n_pixels, angles, n_det")
        else:
            base = None
        try:
            return ScanGeometry(
                self.n_pixels if self.n_pixels is not None else base.n_pixels,
                self.angles if self.angles is not None else base.angles_deg,
                self.n_det if self.n_det is not None else base.n_det,
                self.det_width, self.det_offset)
        except ValueError as exc:
            raise ConfigError(f"geometry: {exc}") from None

    @property
    def threshold_tau(self) -> Optional[float]:
        if self.model_b.startswith("threshold:"):
            return float(self.model_b.split(":", 1)[1])
        return None


def _parse_bool(s: str) -> bool:
    low = s.lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _parse_angles(s: str) -> tuple:
    if ":" in s:
        start, step, count = s.split(":")
        return angle_range(float(start), float(step), int(count))
    return tuple(float(a) for a in s.split(","))


def _parse_model_b(s: str) -> str:
    if s.lower().startswith("threshold:"):
        tau = float(s.split(":", 1)[1])
        if tau < 0:
            raise ValueError("threshold must be nonnegative")
        return f"threshold:{tau!r}"
    return ProjModel.parse(s).value


_PARSERS = {
    "geometry": lambda s: standard_geometry(s) and s.lower(),
    "n_pixels": int, "n_det": int, "angles": _parse_angles,
    "det_width": float, "det_offset": float,
    "model_a": lambda s: ProjModel.parse(s).value,
    "model_b": _parse_model_b,
    "models": lambda s: tuple(ProjModel.parse(t).value for t in s.split(",")),
    "phantom_kind": lambda s: make_phantom(s, 8) and s,
    "phantom_seed": int, "noise_level": float, "noise_seed": int,
    "solver": str.lower, "omega": float, "max_iter": int,
    "stop_rule": str.lower, "dp_tau": float, "ncp_patience": int,
    "halt_at_stop": _parse_bool, "output_dir": str, "keep_iterates": int,
    "reorth": _parse_bool,
    "coeff_iters": lambda s: tuple(int(t) for t in s.split(",")),
    "bound_instances": int,
}


def parse_config(text: str) -> ExperimentConfig:
    """Parse flat ``key = value`` text; unknown or malformed keys raise :class:`ConfigError`."""
    known = {f.name for f in fields(ExperimentConfig)}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (p.strip() for p in line.split("=", 1))
        if key not in known:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        try:
            values[key] = _PARSERS[key](val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key!r}: {exc}") from None
    cfg = ExperimentConfig(**values)
    if cfg.solver not in SOLVERS:
        raise ConfigError(f"'solver' must be one of {', '.join(SOLVERS)}")
    if cfg.max_iter < 1:
        raise ConfigError("'max_iter' must be at least 1")
    if cfg.keep_iterates < 0:
        raise ConfigError("'keep_iterates' must be nonnegative")
    if not 0 <= cfg.noise_level:
        raise ConfigError("'noise_level' must be nonnegative")
    if cfg.omega is not None and cfg.omega <= 0:
        raise ConfigError("'omega' must be positive")
    if cfg.stop_rule not in ("none", "dp", "ncp"):
        raise ConfigError("'stop_rule' must be none, dp or ncp")
    if cfg.dp_tau < 1:
        raise ConfigError("'dp_tau' must be >= 1")
    if cfg.ncp_patience < 1:
        raise ConfigError("'ncp_patience' must be at least 1")
    cfg.scan_geometry()
    return cfg


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise OSError(f"cannot read config {path}: {exc.strerror or exc}") from None
    return parse_config(text)


# ---------------------------------------------------------------------------
# Experiment plumbing


@dataclass
class Problem:
    geometry: ScanGeometry
    pair: ProjectorPair
    x_true: np.ndarray
    b_exact: np.ndarray
    b: np.ndarray
    noise_norm: float


def make_pair(cfg: ExperimentConfig, g: ScanGeometry, A: Optional[SparseMatrix] = None,
              tau: Optional[float] = None) -> ProjectorPair:
    ma = ProjModel(cfg.model_a)
    A = build_matrix(g, ma) if A is None else A
    tau = cfg.threshold_tau if tau is None else tau
    if tau is not None:
        return ProjectorPair(A, threshold_transpose(A, tau), f"A_{ma.short}", f"B_{tau!r}")
    mb = ProjModel(cfg.model_b)
    Bsrc = A if mb is ma else build_matrix(g, mb)
    return ProjectorPair(A, transpose(Bsrc), f"A_{ma.short}", f"A_{mb.short}^T")


def make_problem(cfg: ExperimentConfig, pair: Optional[ProjectorPair] = None,
                 noise_level: Optional[float] = None) -> Problem:
    g = cfg.scan_geometry()
    pair = make_pair(cfg, g) if pair is None else pair
    x_true = make_phantom(cfg.phantom_kind, g.n_pixels, cfg.phantom_seed).values
    b_exact = synth_sinogram(pair.A, x_true)
    level = cfg.noise_level if noise_level is None else noise_level
    b, e_norm = add_noise(b_exact, NoiseSpec(level, cfg.noise_seed))
    return Problem(g, pair, x_true, b_exact, b, e_norm)


def _power_norm(M: SparseMatrix, iters: int = 100) -> float:
    """Deterministic power estimate of ``||M||_2``."""
    Mt = transpose(M)
    v = np.ones(M.cols) / np.sqrt(M.cols)
    s = 0.0
    for _ in range(iters):
        w = matvec(Mt, matvec(M, v))
        s = np.linalg.norm(w)
        if s == 0:
            return 0.0
        v = w / s
    return float(np.sqrt(s))


def default_omega(pair: ProjectorPair) -> float:
    """``1 / (||A|| ||B||)``, so that ``|omega*lambda(BA)| <= 1``."""
    return 1.0 / (_power_norm(pair.A) * _power_norm(pair.B))


def run_solver(cfg: ExperimentConfig, prob: Problem, solver: Optional[str] = None,
               max_iter: Optional[int] = None) -> SolverTrace:
    solver = solver or cfg.solver
    max_iter = max_iter or cfg.max_iter
    g, pair = prob.geometry, prob.pair
    try:
        stop = StoppingConfig(
            rule=cfg.stop_rule if cfg.halt_at_stop else "none",
            dp_tau=cfg.dp_tau,
            noise_norm=prob.noise_norm if prob.noise_norm > 0 else None,
            ncp_patience=cfg.ncp_patience,
            layout=(g.n_det, g.n_angles))
    except StoppingConfigError as exc:
        raise ConfigError(str(exc)) from None
    opts = SolverOptions(max_iter=max_iter, x_true=prob.x_true, stopping=stop,
                         keep_every=cfg.keep_iterates, reorth=cfg.reorth)
    if solver == "ab":
        tr = ab_gmres(pair.A, pair.B, prob.b, opts)
    elif solver == "ba":
        tr = ba_gmres(pair.A, pair.B, prob.b, opts)
    elif solver == "lsqr":
        tr = lsqr(pair.A, prob.b, opts)
    elif solver == "lsmr":
        tr = lsmr(pair.A, prob.b, opts)
    else:
        omega = cfg.omega if cfg.omega is not None else default_omega(pair)
        tr = landweber(pair.A, pair.B, prob.b, omega, max_iter, x_true=prob.x_true,
                       scale=1.0, keep_every=cfg.keep_iterates)
    if tr.stop_index is None and not cfg.halt_at_stop:
        tr.stop_index = post_hoc_stop(cfg, tr, prob.noise_norm)
    return tr


def post_hoc_stop(cfg: ExperimentConfig, tr: SolverTrace, noise_norm: float) -> Optional[int]:
    if cfg.stop_rule == "dp" and noise_norm > 0:
        return first_dp_index(tr.true_resnorms, cfg.dp_tau, noise_norm)
    if cfg.stop_rule == "ncp" and tr.ncp_distances:
        return first_ncp_index(tr.ncp_distances, cfg.ncp_patience)
    return None


def _best_retained(tr: SolverTrace):
    ks = [k for k in sorted(tr.iterates) if 1 <= k <= len(tr.errnorms)]
    if not ks:
        return None, tr.x
    k = min(ks, key=lambda j: (tr.errnorms[j - 1], j))
    return k, tr.iterates[k]


def _out_dir(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _fmt(x) -> str:
    return "NA" if x is None else (f"{x:.6g}" if isinstance(x, float) else str(x))


# ---------------------------------------------------------------------------
# Commands


def cmd_build_matrix(cfg: ExperimentConfig, args) -> int:
    g = cfg.scan_geometry()
    if cfg.models is not None:
        models = cfg.models
    else:
        models = (cfg.model_a,) if cfg.threshold_tau is not None else (cfg.model_a, cfg.model_b)
    out = _out_dir(cfg)
    rows = []
    for name in dict.fromkeys(models):
        A = build_matrix(g, name)
        fname = matrix_filename(name, g)
        mm_write(A, out / fname)
        rows.append([name, fname, A.rows, A.cols, A.nnz, repr(A.sparsity)])
        print(f"{fname}: {A.rows} x {A.cols}, nnz {A.nnz}, sparsity {A.sparsity:.5f}")
    with open(out / "summary.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["model", "file", "rows", "cols", "nnz", "sparsity"])
        w.writerows(rows)
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig, args) -> int:
    prob = make_problem(cfg)
    tr = run_solver(cfg, prob)
    out = _out_dir(cfg)
    tr.to_csv(out / "trace.csv")
    n = prob.geometry.n_pixels
    write_pgm(out / "recon_final.pgm", tr.x, n)
    _, errs_kmin, err_min = (None, None, None)
    if tr.errnorms:
        errs, errs_kmin, err_min = analysis.error_history(tr, prob.x_true)
    _, x_best = _best_retained(tr)
    write_pgm(out / "recon_best.pgm", x_best, n)
    k_stop = None if tr.diverged else tr.stop_index
    err_stop = tr.errnorms[k_stop - 1] if k_stop is not None and tr.errnorms else None
    storage = tr.basis_storage(errs_kmin) if errs_kmin is not None else None
    line = (f"solver={cfg.solver} pair=({prob.pair.label_A},{prob.pair.label_B}) "
            f"iters={tr.n_iter} k_min={_fmt(errs_kmin)} err_min={_fmt(err_min)} "
            f"stop_rule={cfg.stop_rule} k_stop={_fmt(k_stop)} err_stop={_fmt(err_stop)} "
            f"storage={_fmt(storage)} diverged={int(tr.diverged)}")
    (out / "summary.txt").write_text(line + "\n")
    print(line)
    if tr.diverged:
        print(f"error: {tr.method} diverged at iteration {tr.stop_index}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


def cmd_sweep_tau(cfg: ExperimentConfig, args) -> int:
    if cfg.threshold_tau is None:
        raise ConfigError("sweep-tau needs model_b = threshold:<tau>")
    try:
        taus = [float(t) for t in args.taus.split(",")]
    except ValueError:
        raise ConfigError(f"--taus: cannot parse {args.taus!r}") from None
    if any(t < 0 for t in taus):
        raise ConfigError("--taus: thresholds must be nonnegative")
    g = cfg.scan_geometry()
    A = build_matrix(g, cfg.model_a)
    rows = []
    for tau in taus:
        pair = make_pair(cfg, g, A, tau)
        u = unmatchedness(pair)
        row = [repr(tau), repr(u)]
        for level in (0.0, cfg.noise_level):
            prob = make_problem(cfg, pair, level)
            tr = run_solver(cfg, prob)
            _, k, e = analysis.error_history(tr, prob.x_true)
            row += [k, repr(e)]
        rows.append(row)
        print(f"tau={tau:g} unmatchedness={u:.5f} err_min_clean={float(row[3]):.5f} "
              f"err_min_noisy={float(row[5]):.5f}")
    out = _out_dir(cfg)
    with open(out / "sweep.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["tau", "unmatchedness", "k_min_clean", "err_min_clean",
                    "k_min_noisy", "err_min_noisy"])
        w.writerows(rows)
    if len(rows) > 2:
        u = np.array([float(r[1]) for r in rows])
        e = np.array([float(r[5]) for r in rows])
        if np.ptp(u) > 0 and np.ptp(e) > 0:
            print(f"pearson(err_min_noisy, unmatchedness) = {np.corrcoef(u, e)[0, 1]:.4f}")
    return EXIT_OK


def _analyze_picard(cfg, out: Path) -> None:
    prob = make_problem(cfg)
    rep = analysis.picard_report(prob.pair.A, prob.b_exact, prob.b)
    rep.to_csv(out / "picard.csv")
    print(f"picard: {rep.sigma.size} singular values, noise floor index "
          f"{_fmt(rep.noise_floor_index)}")


def _analyze_spectrum(cfg, out: Path) -> None:
    g = cfg.scan_geometry()
    pair = make_pair(cfg, g)
    ev, s = analysis.ba_spectrum(pair)
    analysis.write_spectrum_csv(out / "spectrum.csv", ev)
    print(f"spectrum ({pair.label_A},{pair.label_B}): min_real={s.min_real:.6g} "
          f"max_modulus={s.max_modulus:.6g} n_negative_real={s.n_negative_real}")


def _analyze_coeffs(cfg, out: Path) -> None:
    prob = make_problem(cfg)
    U, s, V = analysis.dense_svd(prob.pair.A)
    ks = sorted(set(cfg.coeff_iters))
    if ks and ks[-1] > cfg.max_iter:
        raise ConfigError(f"coeff_iters asks for iterate {ks[-1]} beyond max_iter")
    tr = run_solver(cfg, prob, max_iter=max(ks[-1], 1) if ks else 1)
    try:
        coeffs = analysis.iterate_svd_coeffs(V, tr, ks)
    except KeyError as exc:
        raise ConfigError(f"{exc.args[0]}; set keep_iterates to divide every coeff_iters entry") from None
    exact = np.abs(V.T @ prob.x_true)
    with open(out / "coeffs.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["i", "sigma", "exact"] + [f"k{k}" for k in ks])
        for i in range(s.size):
            w.writerow([i + 1, repr(float(s[i])), repr(float(exact[i]))]
                       + [repr(float(coeffs[k][i])) for k in ks])
    print(f"coeffs: {s.size} components for iterates {','.join(map(str, ks))}")


def _analyze_bound(cfg, out: Path) -> None:
    ladder = (1e-3, 1e-4, 1e-5)
    rows = []
    worst = 0.0
    for i in range(cfg.bound_instances):
        rng = np.random.default_rng([cfg.noise_seed, i])
        base = analysis.random_instance(rng, eps=ladder[0])
        res = []
        for eps in ladder:
            inst = analysis.random_instance(rng, eps=eps, directions=base.directions)
            obs, bnd = analysis.perturbation_bound(inst)
            res.append((eps, obs, bnd))
            rows.append((i, eps, obs, bnd))
        worst = max(worst, max(o / b for _, o, b in res if b > 0))
    analysis.write_bound_csv(out / "bound.csv", rows)
    print(f"bound: {cfg.bound_instances} instances, max observed/bound = {worst:.4g}")


ANALYSES = {"picard": _analyze_picard, "spectrum": _analyze_spectrum,
            "coeffs": _analyze_coeffs, "bound": _analyze_bound}


def cmd_analyze(cfg: ExperimentConfig, args) -> int:
    out = _out_dir(cfg)
    ANALYSES[args.what](cfg, out)
    return EXIT_OK


COMMANDS = {"build-matrix": cmd_build_matrix, "solve": cmd_solve,
            "sweep-tau": cmd_sweep_tau, "analyze": cmd_analyze}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ctgmres", description=__doc__.split("\n\n")[0])
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", required=True, help="flat key = value experiment file")
    common.add_argument("--threads", type=int, default=None,
                        help="BLAS thread count; 1 gives bit-reproducible runs")
    common.add_argument("--out", default=None, help="override output_dir")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("build-matrix", parents=[common], help="write system matrices")
    sub.add_parser("solve", parents=[common], help="run one reconstruction")
    sw = sub.add_parser("sweep-tau", parents=[common], help="threshold back projector sweep")
    sw.add_argument("--taus", default="0,0.01,0.1,0.3,0.5")
    an = sub.add_parser("analyze", parents=[common], help="dense spectral diagnostics")
    an.add_argument("--what", required=True, choices=sorted(ANALYSES))
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.out is not None:
            cfg.output_dir = args.out
        if args.threads is not None:
            if args.threads < 1:
                raise ConfigError("--threads must be at least 1")
            set_threads(args.threads)
        return COMMANDS[args.command](cfg, args)
    except (ConfigError, CapExceededError, StoppingConfigError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"io error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteError, NumericalFailure, ArithmeticError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
