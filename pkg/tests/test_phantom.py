import hashlib

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from _oracles import chord_length
from conftest import desk_data, desk_matrix, desk_phantom
from ctgmres.geometry import ScanGeometry
from ctgmres.phantom import (NoiseSpec, Phantom, SplitMix64, add_noise, make_phantom,
                             read_pgm, synth_sinogram, write_pgm)
from ctgmres.projector import build_matrix
from ctgmres.sparsecore import DimensionError

# recorded from the first build; any change here is a reproducibility break
GOLDEN = {
    "threephases64": "69b237aa092831037eecb1937a90cb94836d1c2fedaa18c86f84ccfb3b54e76a",
    "sinogram": "a275745282eedda8aa66c3d6b001f0117ca27206f38fdf0b33c6f581b23097fe",
    "noise": "6a60be649f432ab2b58729b6518b5ab317b3acba167b1cad6f9394cf1a5b8a51",
    "shepplogan64": "eaeb579f6bee1eb1e84ca51bcc7d9eea7e371379af4b03279908d3d5bb090f86",
}


def sha(a):
    return hashlib.sha256(np.ascontiguousarray(a, dtype="<f8").tobytes()).hexdigest()


def test_splitmix64_reference_vector():
    out = SplitMix64(0).next_u64(3)
    assert [int(v) for v in out] == [0xE220A8397B1DCDAF, 0x6E789E6AA1B965F4, 0x06C45D188009454F]


def test_splitmix64_chunking_is_transparent():
    a = SplitMix64(123).next_u64(10)
    r = SplitMix64(123)
    b = np.concatenate([r.next_u64(3), r.next_u64(7)])
    np.testing.assert_array_equal(a, b)


def test_uniform_and_normal_statistics():
    r = SplitMix64(5)
    u = r.uniform(100_000)
    assert 0 <= u.min() and u.max() < 1
    assert u.mean() == pytest.approx(0.5, abs=0.005)
    z = SplitMix64(6).normal(100_001)
    assert z.size == 100_001
    assert z.mean() == pytest.approx(0.0, abs=0.01)
    assert z.std() == pytest.approx(1.0, abs=0.01)


@pytest.mark.parametrize("kind", ["threephases", "sheppLogan"])
@pytest.mark.parametrize("n", [8, 33, 64])
def test_phantom_range_and_corners(kind, n):
    img = make_phantom(kind, n, seed=3).image
    assert img.min() >= 0 and img.max() <= 1
    assert img[0, 0] == img[0, -1] == img[-1, 0] == img[-1, -1] == 0


def test_threephases_levels():
    v = desk_phantom()
    assert set(np.unique(v)) <= {0.0, 0.35, 0.7, 1.0}
    assert {0.35, 0.7, 1.0} <= set(np.unique(v))


def test_golden_phantoms():
    assert sha(make_phantom("threephases", 64, 42).values) == GOLDEN["threephases64"]
    assert sha(make_phantom("sheppLogan", 64).values) == GOLDEN["shepplogan64"]


def test_seed_changes_threephases():
    assert not np.array_equal(make_phantom("threephases", 64, 1).values,
                              make_phantom("threephases", 64, 2).values)


def test_shepp_logan_fill_fraction():
    frac = np.count_nonzero(make_phantom("sheppLogan", 64).values) / 64**2
    assert 0.3 < frac < 0.8


def test_phantom_errors():
    with pytest.raises(ValueError, match="unknown phantom"):
        make_phantom("disk", 16)
    with pytest.raises(ValueError, match="at least 8"):
        make_phantom("threephases", 4)
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        Phantom(2, np.array([0, 0.5, 1.2, 0]))


def test_sinogram_golden_and_noise_golden():
    bbar, b, e_norm = desk_data("strip", 0.003)
    assert sha(bbar) == GOLDEN["sinogram"]
    assert sha(b - bbar) == GOLDEN["noise"]


def test_zero_phantom_zero_sinogram():
    A = desk_matrix("line")
    assert not synth_sinogram(A, np.zeros(A.cols)).any()
    with pytest.raises(DimensionError):
        synth_sinogram(A, np.zeros(10))


def test_constant_phantom_gives_chords():
    g = ScanGeometry(16, (0.0, 23.0, 45.0, 100.0), 24, det_offset=0.1)
    b = synth_sinogram(build_matrix(g, "line"), np.ones(g.n))
    th = np.deg2rad(g.angles_deg)
    want = [chord_length(16, u, np.cos(t), np.sin(t)) for t in th for u in g.det_coords()]
    np.testing.assert_allclose(b, want, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(level=st.floats(1e-6, 0.5), seed=st.integers(0, 2**64 - 1))
def test_noise_level_exact(level, seed):
    bbar = np.linspace(1.0, 2.0, 97)
    b, e_norm = add_noise(bbar, NoiseSpec(level, seed))
    rel = np.linalg.norm(b - bbar) / np.linalg.norm(bbar)
    assert rel == pytest.approx(level, rel=1e-13)
    assert e_norm == pytest.approx(level * np.linalg.norm(bbar), rel=1e-14)


def test_noise_edge_cases():
    bbar = np.arange(5.0)
    b, e = add_noise(bbar, NoiseSpec(0.0, 1))
    np.testing.assert_array_equal(b, bbar)
    assert e == 0.0
    with pytest.raises(ValueError):
        add_noise(np.zeros(4), NoiseSpec(0.1, 1))
    with pytest.raises(ValueError):
        NoiseSpec(-0.1, 1)
    np.testing.assert_array_equal(add_noise(bbar + 1, NoiseSpec(0.1, 9))[0],
                                  add_noise(bbar + 1, NoiseSpec(0.1, 9))[0])


def test_pgm_roundtrip_and_clipping(tmp_path):
    v = np.array([-0.5, 0.0, 0.25, 1.0, 1.7, 0.5, 0.3, 0.9, 0.1])
    write_pgm(tmp_path / "a.pgm", v)
    text = (tmp_path / "a.pgm").read_text()
    assert text.startswith("P2\n3 3\n65535\n")
    back = read_pgm(tmp_path / "a.pgm").ravel()
    np.testing.assert_allclose(back, np.clip(v, 0, 1), atol=1 / 65535)
    assert back[0] == 0 and back[4] == 1
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros(5))
