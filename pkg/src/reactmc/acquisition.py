"""Synthetic segmented acquisitions: phantom, coils, trajectories, forward model.

The forward model is an exact discrete Fourier transform of the coil-weighted
image, with positions measured from the image center.  Motion corruption is
the exact inverse of :func:`reactmc.rigid.correct_segment`, so correcting
with the true trajectory restores the motion-free data.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import ndimage

from .data import Acquisition, CoilSet, ImageVolume, KSpaceSegment
from .exceptions import ValidationError
from .rigid import MotionTrajectory, N_PARAMS, rotvec_to_matrix

__all__ = [
    "Acquisition", "CoilSet", "ImageVolume", "KSpaceSegment", "make_phantom",
    "make_coil_maps", "make_epi_trajectory", "make_spiral_trajectory", "sample_kspace",
    "corrupt_with_motion", "draw_motion", "add_noise_to_snr",
]


def _ellipse(yy, xx, cy, cx, ry, rx, angle=0.0):
    c, s = math.cos(angle), math.sin(angle)
    u = ((xx - cx) * c + (yy - cy) * s) / rx
    v = (-(xx - cx) * s + (yy - cy) * c) / ry
    return u * u + v * v <= 1.0


def roi_mask(ny, nx):
    """Elliptical ROI used as both phantom support and metric mask."""
    yy, xx = np.mgrid[0:ny, 0:nx]
    return _ellipse(yy, xx, ny // 2, nx // 2, 0.46 * ny, 0.44 * nx)[np.newaxis]


def make_phantom(ny, nx, seed=0, spacing=1.0):
    """Procedural brain-like phantom.

    A bright scalp rim, a dark gap, grey matter with a wavy outline, a white
    matter core with a seeded irregular boundary, dark sulci traced along
    the zero crossings of band-pass noise, ventricles, a few deep nuclei and
    low-amplitude texture.  Feature sizes scale with the matrix, so the same
    anatomy appears at any resolution for a fixed field of view.

    Returns
    -------
    ImageVolume
        Real image in ``[0, 1]``, exactly zero outside the ROI.
    mask : ndarray of bool, shape (1, ny, nx)
        The elliptical ROI enclosing the head.
    """
    if ny < 16 or nx < 16:
        raise ValidationError("phantom needs at least 16 x 16 voxels")
    rng = np.random.default_rng(seed)
    mask = roi_mask(ny, nx)
    yy, xx = np.mgrid[0:ny, 0:nx].astype(float)
    cy, cx = ny // 2, nx // 2
    ry, rx = 0.46 * ny * 0.95, 0.44 * nx * 0.95
    s = max(ny, nx) / 192.0
    rr = np.hypot((yy - cy) / ry, (xx - cx) / rx)
    ang = np.arctan2(yy - cy, xx - cx)

    def smooth_noise(sigma):
        f = ndimage.gaussian_filter(rng.standard_normal((ny, nx)), sigma=sigma * s, mode="wrap")
        return f / f.std()

    img = np.zeros((ny, nx))
    img[rr <= 1.0] = 0.9  # scalp
    img[rr <= 0.94] = 0.08
    wobble = (0.02 * np.cos(5 * ang + rng.uniform(0, 2 * math.pi))
              + 0.015 * np.cos(9 * ang + rng.uniform(0, 2 * math.pi)))
    brain = rr <= 0.9 + wobble
    img[brain] = 0.5
    wm = brain & (rr <= 0.72 + 0.05 * smooth_noise(6.0))
    img[wm] = 0.8
    band = smooth_noise(3.0) - 0.6 * smooth_noise(6.0)
    sulci = (np.abs(band) < 0.12 * band.std()) & brain & (rr > 0.55)
    img[sulci] = 0.1
    for sgn in (-1, 1):
        v = _ellipse(yy, xx, cy - 0.04 * ny, cx + sgn * 0.07 * nx, 0.17 * ny, 0.04 * nx, sgn * 0.25)
        img[v] = 0.1
    for _ in range(20):
        py = cy + rng.uniform(-0.45, 0.45) * ry
        px = cx + rng.uniform(-0.45, 0.45) * rx
        b = _ellipse(yy, xx, py, px, rng.uniform(0.01, 0.03) * ny, rng.uniform(0.01, 0.03) * nx,
                     rng.uniform(0, math.pi))
        img[b & wm] = rng.uniform(0.3, 0.65)
    img = img + 0.04 * smooth_noise(2.0) * brain
    img = np.clip(img, 0.0, 1.0)
    img[~mask[0]] = 0.0
    return ImageVolume(img[np.newaxis], (1.0, spacing, spacing)), mask


def make_coil_maps(dims, n_coils):
    """Linear (plane-ramp) receive sensitivities.

    Coil ``c`` has gradient direction at angle ``2 pi c / n_coils`` in the
    x-y plane, magnitude ``1 + 0.8 * u_c . r / R`` (``R`` the half diagonal,
    in voxels) and a constant phase ``2 pi c / n_coils``.
    """
    if n_coils < 1:
        raise ValidationError("need at least one coil")
    dims = tuple(int(d) for d in dims)
    if len(dims) == 2:
        dims = (1,) + dims
    nz, ny, nx = dims
    if n_coils == 1:
        return CoilSet(np.ones((1,) + dims, dtype=complex))
    y = np.arange(ny) - ny // 2
    x = np.arange(nx) - nx // 2
    R = 0.5 * math.hypot(ny, nx)
    maps = np.empty((n_coils,) + dims, dtype=complex)
    for c in range(n_coils):
        theta = 2 * math.pi * c / n_coils
        ramp = 1.0 + 0.8 * (math.cos(theta) * x[None, :] + math.sin(theta) * y[:, None]) / R
        maps[c] = (ramp * np.exp(1j * theta))[None]
    return CoilSet(maps)


def make_epi_trajectory(n_shots, lines_per_shot, ny, nx, spacing=1.0):
    """Interleaved multi-shot EPI.

    Shot ``i`` acquires the ky lines ``i, i + n_shots, ...``, each fully
    sampled along kx; alternate lines are read in reverse.
    """
    if n_shots < 1 or lines_per_shot < 1 or n_shots * lines_per_shot != ny:
        raise ValidationError(f"{n_shots} shots x {lines_per_shot} lines != {ny} ky lines")
    dy = dx = float(spacing)
    kx = (np.arange(nx) - nx // 2) / (nx * dx)
    segments = []
    for shot in range(n_shots):
        rows = []
        for j, line in enumerate(range(shot, ny, n_shots)):
            ky = (line - ny // 2) / (ny * dy)
            xs = kx if j % 2 == 0 else kx[::-1]
            rows.append(np.column_stack([xs, np.full(nx, ky), np.zeros(nx)]))
        segments.append(KSpaceSegment(shot, np.concatenate(rows)))
    return Acquisition(segments, (1, ny, nx), (1.0, dy, dx),
                       meta={"trajectory": "epi", "density": "uniform",
                             "n_shots": n_shots, "lines_per_shot": lines_per_shot})


def make_spiral_trajectory(fov_mm, res_mm, n_interleaves, samples_per_interleaf):
    """Interleaved Archimedean spiral.

    Each interleaf runs from ``|k| = 0`` to ``k_max = 1 / (2 res_mm)`` with
    enough turns for Nyquist spacing between neighbouring arms; interleaf
    ``m`` is the base spiral rotated by ``2 pi m / n_interleaves``.
    """
    if n_interleaves < 1:
        raise ValidationError("need at least one interleaf")
    if samples_per_interleaf < 2:
        raise ValidationError("need at least two samples per interleaf")
    n = int(round(fov_mm / res_mm))
    spacing = fov_mm / n
    kmax = 0.5 / res_mm
    turns = kmax * fov_mm / n_interleaves
    tau = np.linspace(0.0, 1.0, samples_per_interleaf)
    r = kmax * tau
    phi = 2 * math.pi * turns * tau
    segments = []
    for m in range(n_interleaves):
        ang = phi + 2 * math.pi * m / n_interleaves
        k = np.column_stack([r * np.cos(ang), r * np.sin(ang), np.zeros_like(r)])
        segments.append(KSpaceSegment(m, k))
    return Acquisition(segments, (1, n, n), (1.0, spacing, spacing),
                       meta={"trajectory": "spiral", "density": "radial",
                             "fov_mm": fov_mm, "res_mm": res_mm, "n_interleaves": n_interleaves,
                             "samples_per_interleaf": samples_per_interleaf})


def _positions(shape, spacing):
    return [(np.arange(n) - n // 2) * d for n, d in zip(shape, spacing)]


def _nudft(weighted, spacing, k, chunk=4096):
    """Exact DFT of ``weighted`` (C, nz, ny, nx) at rows of ``k`` (kx, ky, kz)."""
    C, nz, ny, nx = weighted.shape
    z, y, x = _positions((nz, ny, nx), spacing)
    out = np.empty((C, k.shape[0]), dtype=complex)
    flat = weighted.reshape(C * nz * ny, nx)
    for s in range(0, k.shape[0], chunk):
        kc = k[s:s + chunk]
        ex = np.exp(-2j * np.pi * np.outer(kc[:, 0], x))  # (M, nx)
        ey = np.exp(-2j * np.pi * np.outer(kc[:, 1], y))  # (M, ny)
        ez = np.exp(-2j * np.pi * np.outer(kc[:, 2], z))  # (M, nz)
        t = (flat @ ex.T).reshape(C, nz, ny, -1)  # (C, nz, ny, M)
        t = np.einsum("czym,my->czm", t, ey)
        out[:, s:s + chunk] = np.einsum("czm,mz->cm", t, ez)
    return out


def _cartesian_lookup(weighted, spacing, k):
    """DFT values at on-grid samples via FFT, or ``None`` if any sample is off-grid."""
    C, nz, ny, nx = weighted.shape
    fov = np.array([nx * spacing[2], ny * spacing[1], nz * spacing[0]])
    u = k * fov
    iu = np.round(u)
    if np.any(np.abs(u - iu) > 1e-6):
        return None
    iu = iu.astype(np.int64)
    sizes = np.array([nx, ny, nz])
    idx = iu + sizes // 2
    if np.any(idx < 0) or np.any(idx >= sizes):
        return None
    axes = (1, 2, 3)
    ksp = np.fft.fftshift(np.fft.fftn(np.fft.ifftshift(weighted, axes=axes), axes=axes), axes=axes)
    return ksp[:, idx[:, 2], idx[:, 1], idx[:, 0]]


def sample_kspace(img, coils, acq):
    """Fill every segment with ``sum_r coil(r) img(r) exp(-j 2 pi k . r)``.

    Uses an FFT when all samples lie on the Nyquist grid (exact), and a
    direct separable DFT otherwise.
    """
    if not isinstance(img, ImageVolume):
        img = ImageVolume(img)
    if not isinstance(coils, CoilSet):
        coils = CoilSet(coils)
    if coils.maps.shape[1:] != img.shape:
        raise ValidationError(f"coil maps {coils.maps.shape[1:]} do not match image {img.shape}")
    if tuple(acq.matrix) != tuple(img.shape):
        raise ValidationError(f"acquisition matrix {acq.matrix} does not match image {img.shape}")
    weighted = coils.maps * img.data[np.newaxis]
    k = acq.all_k()
    values = _cartesian_lookup(weighted, img.spacing, k)
    if values is None:
        values = _nudft(weighted, img.spacing, k)
    bounds = acq.boundaries()
    segs = [s.replace(data=values[:, bounds[i]:bounds[i + 1]]) for i, s in enumerate(acq.segments)]
    return acq.with_segments(segs)


def corrupt_with_motion(acq, X_true):
    """Apply motion so that correcting beat ``i`` with ``X_true[i]`` undoes it.

    Beat ``i`` gets trajectory ``R(v_i)^T k`` and data multiplied by
    ``exp(-j 2 pi t_i . R(v_i)^T k)``.
    """
    if not isinstance(X_true, MotionTrajectory):
        X_true = MotionTrajectory(X_true)
    if len(X_true) != acq.n_segments:
        raise ValidationError(f"trajectory has {len(X_true)} beats, acquisition has {acq.n_segments}")
    segs = []
    for seg, x in zip(acq.segments, X_true.params):
        t, v = x[:3], x[3:]
        k = seg.k @ rotvec_to_matrix(v) if np.any(v) else seg.k
        data = seg.data
        if data is not None and np.any(t):
            data = data * np.exp(-2j * np.pi * (k @ t))
        segs.append(KSpaceSegment(seg.beat_index, k, data, seg.units))
    return Acquisition(segs, acq.matrix, acq.spacing, dict(acq.meta))


def draw_motion(n_segments, range_mm, rot_range_rad=0.0, seed=0, ndim=2):
    """Independent uniform motion per beat.

    Translations are uniform in ``+-range_mm`` and rotation-vector components
    in ``+-rot_range_rad``.  With ``ndim=2`` only in-plane motion is drawn
    (``tx``, ``ty`` and the rotation about z).
    """
    if range_mm < 0 or rot_range_rad < 0:
        raise ValidationError("motion ranges must be non-negative")
    rng = np.random.default_rng(seed)
    t = rng.uniform(-range_mm, range_mm, size=(n_segments, 3))
    v = rng.uniform(-rot_range_rad, rot_range_rad, size=(n_segments, 3))
    if ndim == 2:
        t[:, 2] = 0.0
        v[:, :2] = 0.0
    params = np.concatenate([t, v], axis=1)
    if range_mm == 0:
        params[:, :3] = 0.0
    if rot_range_rad == 0:
        params[:, 3:] = 0.0
    return MotionTrajectory(params.reshape(n_segments, N_PARAMS))


def _complex_noise(rng, shape):
    return (rng.standard_normal(shape) + 1j * rng.standard_normal(shape)) / math.sqrt(2.0)


def measure_snr(signal_sos, noise_sos, mask):
    """Mean noiseless SoS in the mask over the std of a noise-only SoS there."""
    m = np.asarray(mask, dtype=bool).reshape(signal_sos.shape)
    return float(np.mean(signal_sos[m]) / np.std(noise_sos[m]))


def add_noise_to_snr(acq, img_ref, mask, target_snr, seed=0, recon_cfg=None):
    """Add white complex Gaussian noise calibrated to a target SoS SNR.

    ``img_ref`` is the noiseless SoS reconstruction (signal level).  A
    unit-variance noise realization is reconstructed on its own; its SoS
    standard deviation inside ``mask`` sets the scale so that the SoS SNR of
    the returned data equals ``target_snr``.  ``target_snr=inf`` returns the
    input unchanged.
    """
    from .recon import reconstruct_sos

    if not target_snr > 0:
        raise ValidationError("target SNR must be positive")
    if math.isinf(target_snr):
        return acq
    signal = img_ref.data if isinstance(img_ref, ImageVolume) else np.asarray(img_ref)
    rng = np.random.default_rng(seed)
    noise = [_complex_noise(rng, s.data.shape) for s in acq.segments]
    noise_acq = acq.with_segments([s.replace(data=n) for s, n in zip(acq.segments, noise)])
    noise_sos = reconstruct_sos(noise_acq, None, recon_cfg).data
    unit_snr = measure_snr(signal, noise_sos, mask)
    sigma = unit_snr / float(target_snr)
    segs = [s.replace(data=s.data + sigma * n) for s, n in zip(acq.segments, noise)]
    meta = dict(acq.meta, noise_sigma=sigma, target_snr=float(target_snr), noise_seed=seed)
    return Acquisition(segs, acq.matrix, acq.spacing, meta)
