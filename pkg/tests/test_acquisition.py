import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reactmc.acquisition import (
    add_noise_to_snr,
    corrupt_with_motion,
    draw_motion,
    make_coil_maps,
    make_epi_trajectory,
    make_phantom,
    make_spiral_trajectory,
    measure_snr,
    roi_mask,
    sample_kspace,
)
from reactmc.data import Acquisition, ImageVolume, KSpaceSegment
from reactmc.exceptions import ValidationError
from reactmc.io import TrajectoryParseError, load_trajectory_file, write_trajectory_file
from reactmc.recon import reconstruct_sos
from reactmc.rigid import MotionTrajectory, correct_segment


def _random_skeleton(rng, n=16, m=40, segments=2):
    k = rng.uniform(-0.5, 0.5, size=(segments * m, 3)) * [1, 1, 0]
    segs = [KSpaceSegment(i, k[i * m:(i + 1) * m]) for i in range(segments)]
    return Acquisition(segs, (1, n, n), (1.0, 1.0, 1.0))


def _brute_dft(img, coil, k, spacing=1.0):
    """Double-loop DFT oracle with positions in mm from the image center."""
    ny, nx = img.shape
    out = np.zeros(k.shape[0], dtype=complex)
    for m in range(k.shape[0]):
        acc = 0j
        for iy in range(ny):
            for ix in range(nx):
                y, x = (iy - ny // 2) * spacing, (ix - nx // 2) * spacing
                acc += coil[iy, ix] * img[iy, ix] * np.exp(-2j * np.pi * (k[m, 0] * x + k[m, 1] * y))
        out[m] = acc
    return out


# phantom and coils ---------------------------------------------------------------

def test_phantom_contract():
    img, mask = make_phantom(64, 64, seed=7)
    assert img.shape == (1, 64, 64)
    assert img.data.max() <= 1.0 and img.data.min() >= 0.0
    assert np.all(img.data[~mask] == 0.0)
    assert np.array_equal(mask, roi_mask(64, 64))
    again, _ = make_phantom(64, 64, seed=7)
    assert np.array_equal(img.data, again.data)
    other, _ = make_phantom(64, 64, seed=8)
    assert not np.array_equal(img.data, other.data)


def test_phantom_full_size_and_small_dims():
    img, mask = make_phantom(384, 320, seed=1)
    assert img.shape == (1, 384, 320) and mask.shape == (1, 384, 320)
    with pytest.raises(ValidationError):
        make_phantom(8, 64)


def test_coil_maps():
    one = make_coil_maps((64, 64), 1)
    assert one.n_coils == 1 and np.array_equal(one.maps, np.ones((1, 1, 64, 64)))
    coils = make_coil_maps((64, 64), 8)
    _, mask = make_phantom(64, 64, seed=0)
    sos = np.sum(np.abs(coils.maps) ** 2, axis=0)
    assert coils.n_coils == 8 and np.all(sos[mask] > 0)
    with pytest.raises(ValidationError):
        make_coil_maps((64, 64), 0)


def test_coil_magnitude_is_affine_along_gradient():
    coils = make_coil_maps((64, 64), 4)
    # coil 0 ramps along +x, coil 1 along +y
    row = np.abs(coils.maps[0, 0, 32, :])
    np.testing.assert_allclose(np.diff(row, 2), 0, atol=1e-12)
    col = np.abs(coils.maps[1, 0, :, 32])
    np.testing.assert_allclose(np.diff(col, 2), 0, atol=1e-12)
    assert np.ptp(row) > 0 and np.ptp(col) > 0


# trajectories ---------------------------------------------------------------------

def test_epi_study_geometry():
    acq = make_epi_trajectory(24, 16, 384, 320)
    assert acq.n_segments == 24
    ky = np.concatenate([np.unique(s.k[:, 1]) for s in acq.segments])
    assert ky.size == 384 and np.unique(ky).size == 384
    for s in acq.segments:
        assert s.n_samples == 16 * 320
        assert np.unique(s.k[:, 0]).size == 320


def test_epi_partition_and_stride():
    ny, shots = 48, 6
    acq = make_epi_trajectory(shots, ny // shots, ny, 32)
    lines = []
    for i, s in enumerate(acq.segments):
        idx = np.unique(np.round(s.k[:, 1] * ny + ny // 2).astype(int))
        assert np.array_equal(idx, np.arange(i, ny, shots))
        lines.extend(idx.tolist())
    assert sorted(lines) == list(range(ny))


def test_epi_single_shot_is_cartesian_and_mismatch_rejected():
    acq = make_epi_trajectory(1, 16, 16, 12)
    assert acq.n_segments == 1 and acq.segments[0].n_samples == 16 * 12
    k = acq.segments[0].k
    assert len({(a, b) for a, b in k[:, :2]}) == 16 * 12
    with pytest.raises(ValidationError):
        make_epi_trajectory(5, 16, 64, 64)


def test_spiral_geometry():
    acq = make_spiral_trajectory(192.0, 1.0, 30, 2000)
    assert acq.n_segments == 30
    kmax = 1 / (2 * 1.0)
    for s in acq.segments:
        r = np.linalg.norm(s.k, axis=1)
        assert r[0] == 0.0
        assert abs(r[-1] - kmax) <= 1e-9
    ang = [math.atan2(s.k[-1, 1], s.k[-1, 0]) for s in acq.segments[:2]]
    assert (ang[1] - ang[0]) % (2 * math.pi) == pytest.approx(2 * math.pi / 30)


# trajectory file --------------------------------------------------------------

def test_trajectory_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    skel = _random_skeleton(rng, m=4)
    acq = sample_kspace(ImageVolume(rng.random((1, 16, 16))), make_coil_maps((16, 16), 2), skel)
    write_trajectory_file(acq, tmp_path / "t.txt")
    back = load_trajectory_file(tmp_path / "t.txt", (1, 16, 16))
    assert back.n_segments == 2
    for a, b in zip(acq.segments, back.segments):
        assert np.max(np.abs(a.k - b.k)) <= 1e-12
        assert np.max(np.abs(a.data - b.data)) <= 1e-12 * np.max(np.abs(a.data))


def test_trajectory_file_errors(tmp_path):
    p = tmp_path / "t.txt"
    p.write_text("")
    with pytest.raises(TrajectoryParseError, match=":1:"):
        load_trajectory_file(p, (1, 16, 16))
    p.write_text("1 0 UNITS=cyc/mm\n0 0.1 0.1 0.0\n0 0.1 oops 0.0\n")
    with pytest.raises(TrajectoryParseError, match=":3:"):
        load_trajectory_file(p, (1, 16, 16))
    p.write_text("1 0 UNITS=rad/m\n0 0.1 0.1 0.0\n")
    with pytest.raises(TrajectoryParseError):
        load_trajectory_file(p, (1, 16, 16))
    p.write_text("1 0 UNITS=cyc/mm\n0 0.9 0.0 0.0\n")
    with pytest.raises(ValidationError, match="k_max"):
        load_trajectory_file(p, (1, 16, 16))


# forward model ----------------------------------------------------------------

def test_impulse_at_center_is_constant():
    img = np.zeros((1, 16, 16))
    img[0, 8, 8] = 1.0
    acq = sample_kspace(ImageVolume(img), make_coil_maps((16, 16), 1),
                        _random_skeleton(np.random.default_rng(1)))
    for s in acq.segments:
        np.testing.assert_allclose(s.data, 1.0, atol=1e-12)


def test_shifted_impulse_obeys_shift_theorem():
    img = np.zeros((1, 16, 16))
    img[0, 8 + 3, 8 - 2] = 1.0  # d = (x=-2, y=3) mm
    skel = _random_skeleton(np.random.default_rng(2))
    acq = sample_kspace(ImageVolume(img), make_coil_maps((16, 16), 1), skel)
    for s in acq.segments:
        expected = np.exp(-2j * np.pi * (s.k[:, 0] * -2 + s.k[:, 1] * 3))
        np.testing.assert_allclose(s.data[0], expected, atol=1e-12)
        np.testing.assert_allclose(np.abs(s.data), 1.0, atol=1e-12)


@pytest.mark.parametrize("cartesian", [False, True])
def test_forward_model_vs_brute_force_dft(cartesian):
    rng = np.random.default_rng(3)
    img = rng.random((16, 16))
    coils = make_coil_maps((16, 16), 3)
    skel = make_epi_trajectory(4, 4, 16, 16) if cartesian else _random_skeleton(rng)
    acq = sample_kspace(ImageVolume(img[None]), coils, skel)
    for s in acq.segments:
        for c in range(3):
            ref = _brute_dft(img, coils.maps[c, 0], s.k)
            assert np.max(np.abs(s.data[c] - ref)) < 1e-10 * np.max(np.abs(ref))


def test_forward_model_linearity():
    rng = np.random.default_rng(4)
    coils = make_coil_maps((16, 16), 2)
    skel = _random_skeleton(rng)
    i1, i2 = rng.random((1, 16, 16)), rng.random((1, 16, 16))
    a, b = 0.7, -1.9
    s1 = sample_kspace(ImageVolume(i1), coils, skel)
    s2 = sample_kspace(ImageVolume(i2), coils, skel)
    s12 = sample_kspace(ImageVolume(a * i1 + b * i2), coils, skel)
    for x, y, z in zip(s1.segments, s2.segments, s12.segments):
        ref = a * x.data + b * y.data
        assert np.max(np.abs(z.data - ref)) < 1e-10 * np.max(np.abs(ref))


def test_sample_kspace_dimension_mismatch():
    with pytest.raises(ValidationError):
        sample_kspace(ImageVolume(np.zeros((1, 16, 16))), make_coil_maps((16, 12), 1),
                      make_epi_trajectory(4, 4, 16, 16))


# motion -----------------------------------------------------------------------

def _clean_epi(n=32, shots=4):
    img, _ = make_phantom(n, n, seed=0)
    return sample_kspace(img, make_coil_maps((n, n), 4), make_epi_trajectory(shots, n // shots, n, n))


def test_zero_motion_is_identity():
    clean = _clean_epi()
    out = corrupt_with_motion(clean, MotionTrajectory.zeros(4))
    for a, b in zip(clean.segments, out.segments):
        assert np.array_equal(a.k, b.k) and np.array_equal(a.data, b.data)
    with pytest.raises(ValidationError):
        corrupt_with_motion(clean, MotionTrajectory.zeros(3))


def test_corruption_phase_example():
    seg = KSpaceSegment(0, np.array([[0.5, 0.0, 0.0]]), np.array([[2.0 + 1j]]))
    acq = Acquisition([seg], (1, 2, 2), (1.0, 1.0, 1.0))
    X = MotionTrajectory(np.array([[1.0, 0, 0, 0, 0, 0]]))
    out = corrupt_with_motion(acq, X)
    np.testing.assert_allclose(out.segments[0].data, (2.0 + 1j) * np.exp(-1j * np.pi), atol=1e-15)


def test_corruption_round_trip_20_random_trajectories():
    clean = _clean_epi()
    rng = np.random.default_rng(5)
    for _ in range(20):
        P = np.zeros((4, 6))
        P[:, :3] = rng.uniform(-2, 2, (4, 3))
        P[:, 3:] = rng.uniform(-0.05, 0.05, (4, 3))
        X = MotionTrajectory(P)
        bad = corrupt_with_motion(clean, X)
        for seg, c, x in zip(bad.segments, clean.segments, X.params):
            fixed = correct_segment(seg, x)
            assert np.max(np.abs(fixed.k - c.k)) <= 1e-12
            assert np.max(np.abs(fixed.data - c.data)) < 1e-10 * np.max(np.abs(c.data))


def test_draw_motion():
    X = draw_motion(24, 2.0, seed=3)
    assert len(X) == 24
    assert np.all(np.abs(X.translations) <= 2.0) and np.all(X.params[:, 2:] == 0)
    assert X == draw_motion(24, 2.0, seed=3)
    assert np.all(draw_motion(5, 0.0, seed=1).params == 0)
    R = draw_motion(100, 1.0, math.radians(2), seed=4, ndim=3)
    assert np.all(np.abs(R.rotvecs) <= math.radians(2)) and np.any(R.rotvecs[:, 0] != 0)
    with pytest.raises(ValidationError):
        draw_motion(3, -1.0)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 50), st.floats(0, 5), st.integers(0, 2**32 - 1))
def test_draw_motion_ranges_property(n, r, seed):
    X = draw_motion(n, r, seed=seed)
    assert np.all(np.abs(X.translations) <= r)


# noise ------------------------------------------------------------------------

def _noise_only_snr(acq, signal, mask, sigma, seed):
    rng = np.random.default_rng(seed)
    noise = [sigma * (rng.standard_normal(s.data.shape) + 1j * rng.standard_normal(s.data.shape))
             / math.sqrt(2) for s in acq.segments]
    nacq = acq.with_segments([s.replace(data=n) for s, n in zip(acq.segments, noise)])
    return measure_snr(signal.data, reconstruct_sos(nacq).data, mask)


@pytest.fixture(scope="module")
def noise_setup():
    img, mask = make_phantom(96, 80, seed=1)
    clean = sample_kspace(img, make_coil_maps((96, 80), 8), make_epi_trajectory(12, 8, 96, 80))
    return clean, reconstruct_sos(clean), mask


def test_infinite_snr_and_invalid_target(noise_setup):
    clean, signal, mask = noise_setup
    assert add_noise_to_snr(clean, signal, mask, math.inf) is clean
    with pytest.raises(ValidationError):
        add_noise_to_snr(clean, signal, mask, 0.0)


def test_noise_is_deterministic(noise_setup):
    clean, signal, mask = noise_setup
    a = add_noise_to_snr(clean, signal, mask, 3.0, seed=9)
    b = add_noise_to_snr(clean, signal, mask, 3.0, seed=9)
    assert all(np.array_equal(x.data, y.data) for x, y in zip(a.segments, b.segments))


def test_noise_calibration_over_ten_seeds(noise_setup):
    clean, signal, mask = noise_setup
    for seed in range(10):
        noisy = add_noise_to_snr(clean, signal, mask, 3.0, seed=seed)
        sigma = noisy.meta["noise_sigma"]
        # the realization that was added
        diff = noisy.with_segments([n.replace(data=n.data - c.data)
                                    for n, c in zip(noisy.segments, clean.segments)])
        snr = measure_snr(signal.data, reconstruct_sos(diff).data, mask)
        assert abs(snr - 3.0) <= 0.05 * 3.0
        # an independent realization at the calibrated level
        snr_new = _noise_only_snr(clean, signal, mask, sigma, seed + 1000)
        assert abs(snr_new - 3.0) <= 0.05 * 3.0


def test_halving_noise_doubles_snr(noise_setup):
    clean, signal, mask = noise_setup
    sigma = add_noise_to_snr(clean, signal, mask, 3.0, seed=0).meta["noise_sigma"]
    full = np.mean([_noise_only_snr(clean, signal, mask, sigma, s) for s in range(10)])
    half = np.mean([_noise_only_snr(clean, signal, mask, sigma / 2, s + 100) for s in range(10)])
    assert half / full == pytest.approx(2.0, rel=0.05)


def test_target_three_on_ci_epi_phantom():
    img, mask = make_phantom(192, 160, seed=1)
    clean = sample_kspace(img, make_coil_maps((192, 160), 8), make_epi_trajectory(24, 8, 192, 160))
    signal = reconstruct_sos(clean)
    noisy = add_noise_to_snr(clean, signal, mask, 3.0, seed=200)
    diff = noisy.with_segments([n.replace(data=n.data - c.data)
                                for n, c in zip(noisy.segments, clean.segments)])
    snr = measure_snr(signal.data, reconstruct_sos(diff).data, mask)
    assert 2.85 <= snr <= 3.15
