import functools

import numpy as np
import pytest

from ctgmres.geometry import standard_geometry
from ctgmres.phantom import NoiseSpec, add_noise, make_phantom, synth_sinogram
from ctgmres.projector import build_matrix
from ctgmres.sparsecore import transpose


@functools.lru_cache(maxsize=None)
def desk_matrix(model):
    return build_matrix(standard_geometry("desk"), model)


@functools.lru_cache(maxsize=None)
def desk_phantom():
    return make_phantom("threephases", 64, seed=42).values


@functools.lru_cache(maxsize=None)
def desk_data(model="strip", level=0.003):
    A = desk_matrix(model)
    bbar = synth_sinogram(A, desk_phantom())
    b, e_norm = add_noise(bbar, NoiseSpec(level, seed=7))
    return bbar, b, e_norm


@pytest.fixture(scope="session")
def desk():
    return standard_geometry("desk")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def desk_pair(ma, mb):
    return desk_matrix(ma), transpose(desk_matrix(mb))


# -- acceptance summary ------------------------------------------------------

ACCEPTANCE_LOG = []


@pytest.fixture
def report(request):
    """``report(tag, ok, detail)`` prints and records one PASS/FAIL line."""
    def _report(tag, ok, detail=""):
        line = f"{'PASS' if ok else 'FAIL'} [{tag}] {detail}".rstrip()
        ACCEPTANCE_LOG.append(line)
        print(line)
        return ok
    return _report


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LOG:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LOG:
            terminalreporter.write_line(line)
