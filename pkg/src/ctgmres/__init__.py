"""Unmatched-projector CT reconstruction with AB- and BA-GMRES."""
from .sparsecore import (SparseMatrix, DimensionError, NonFiniteError, CapExceededError,
                         MatrixMarketError, matvec, transpose, frob_norm, frob_diff,
                         mm_read, mm_write, dense_svd, dense_eig, set_threads)
from .geometry import ScanGeometry, angle_range, standard_geometry, ray_of
from .projector import (ProjModel, ProjectorPair, build_matrix, build_pair,
                        threshold_transpose, unmatchedness, matrix_filename)
from .phantom import (SplitMix64, Phantom, NoiseSpec, make_phantom, synth_sinogram,
                      add_noise, write_pgm, read_pgm)
from .stopping import StoppingConfig, StoppingConfigError, dp_check, ncp_distance, ncp_stop
from .solvers import (SolverOptions, SolverTrace, ArnoldiState, ab_gmres, ba_gmres,
                      lsqr, lsmr, landweber)
from .analysis import (SpectralReport, PerturbationInstance, picard_report,
                       iterate_svd_coeffs, ba_spectrum, sin_theta_check,
                       perturbation_bound, error_history)

__version__ = "0.1.0"
