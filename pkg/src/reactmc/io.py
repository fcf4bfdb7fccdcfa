"""File formats: k-space text trajectories, acquisition dumps and image rasters.

Binary arrays are little-endian float32 with a JSON sidecar describing
shape, spacing and units.  Complex arrays are stored with a trailing axis of
length two (real, imaginary).
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np
from PIL import Image

from .data import KSPACE_UNITS, Acquisition, ImageVolume, KSpaceSegment
from .exceptions import ValidationError

F32 = np.dtype("<f4")


class TrajectoryParseError(ValidationError):
    """Malformed trajectory text file."""


def write_trajectory_file(acq, path):
    """Write segments as ``seg_idx kx ky kz re_c0 im_c0 ...`` lines."""
    n_coils = acq.n_coils if acq.has_data else 0
    with open(path, "w") as fh:
        fh.write(f"{acq.n_segments} {n_coils} UNITS={KSPACE_UNITS}\n")
        for i, seg in enumerate(acq.segments):
            for m in range(seg.n_samples):
                vals = [repr(float(c)) for c in seg.k[m]]
                if n_coils:
                    for c in seg.data[:, m]:
                        vals += [repr(float(c.real)), repr(float(c.imag))]
                fh.write(f"{i} " + " ".join(vals) + "\n")


def load_trajectory_file(path, matrix, spacing=(1.0, 1.0, 1.0), check_kmax=True):
    """Read a trajectory text file.

    Parameters
    ----------
    path : str or Path
    matrix : tuple of int
        Image matrix ``(nz, ny, nx)`` or ``(ny, nx)`` of the acquisition.
    spacing : tuple of float
        Resolution in mm; sets the largest allowed ``|k|`` per axis.
    check_kmax : bool
        Reject samples beyond the resolution's k-space extent.

    Returns
    -------
    Acquisition
        Skeleton when the file has zero coils, otherwise with data.
    """
    lines = Path(path).read_text().splitlines()
    if not lines or not lines[0].strip():
        raise TrajectoryParseError(f"{path}:1: empty trajectory file")
    head = lines[0].split()
    try:
        if len(head) != 3 or not head[2].startswith("UNITS="):
            raise ValueError
        n_seg, n_coils = int(head[0]), int(head[1])
    except ValueError:
        raise TrajectoryParseError(
            f"{path}:1: header must be 'N_SEGMENTS N_COILS UNITS={KSPACE_UNITS}'") from None
    units = head[2].split("=", 1)[1]
    if units != KSPACE_UNITS:
        raise TrajectoryParseError(f"{path}:1: units must be {KSPACE_UNITS}, got {units!r}")
    if n_seg < 1 or n_coils < 0:
        raise TrajectoryParseError(f"{path}:1: bad segment or coil count")
    width = 4 + 2 * n_coils
    ks = [[] for _ in range(n_seg)]
    ds = [[] for _ in range(n_seg)]
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split()
        if len(parts) != width:
            raise TrajectoryParseError(f"{path}:{lineno}: expected {width} fields, got {len(parts)}")
        try:
            seg = int(parts[0])
            vals = [float(p) for p in parts[1:]]
        except ValueError as exc:
            raise TrajectoryParseError(f"{path}:{lineno}: {exc}") from None
        if not 0 <= seg < n_seg:
            raise TrajectoryParseError(f"{path}:{lineno}: segment index {seg} out of range")
        ks[seg].append(vals[:3])
        ds[seg].append(np.array(vals[3::2]) + 1j * np.array(vals[4::2]))
    if not any(ks):
        raise TrajectoryParseError(f"{path}: no samples")
    segments = []
    for i in range(n_seg):
        if not ks[i]:
            raise TrajectoryParseError(f"{path}: segment {i} has no samples")
        data = np.array(ds[i]).T if n_coils else None
        segments.append(KSpaceSegment(i, np.array(ks[i]), data))
    acq = Acquisition(segments, matrix, spacing, meta={"trajectory": "file", "source": str(path)})
    if check_kmax:
        bad = np.abs(acq.all_k()) > acq.k_max * (1 + 1e-9) + 1e-12
        if np.any(bad):
            raise ValidationError(f"{path}: {int(bad.any(axis=1).sum())} samples exceed k_max")
    return acq


def _write_raw(path, arr):
    np.ascontiguousarray(arr, dtype=F32).tofile(path)


def _read_raw(path, shape):
    arr = np.fromfile(path, dtype=F32)
    if arr.size != int(np.prod(shape)):
        raise ValidationError(f"{path}: expected {int(np.prod(shape))} values, found {arr.size}")
    return arr.reshape(shape)


def save_acquisition(acq, directory, seed=None, name="acquisition"):
    """Dump trajectory and data as float32 raw files plus a JSON sidecar."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    k = acq.all_k()
    _write_raw(d / f"{name}_k.f32", k)
    sidecar = {
        "dims": list(acq.matrix),
        "spacing_mm": list(acq.spacing),
        "units": KSPACE_UNITS,
        "seed": seed,
        "n_segments": acq.n_segments,
        "n_coils": acq.n_coils if acq.has_data else 0,
        "segment_boundaries": acq.boundaries().tolist(),
        "k_file": f"{name}_k.f32",
        "k_shape": list(k.shape),
        "dtype": "float32",
        "byte_order": "little",
        "meta": acq.meta,
    }
    if acq.has_data:
        data = np.concatenate([s.data for s in acq.segments], axis=1)
        _write_raw(d / f"{name}_data.f32", np.stack([data.real, data.imag], axis=-1))
        sidecar["data_file"] = f"{name}_data.f32"
        sidecar["data_shape"] = [data.shape[0], data.shape[1], 2]
    (d / f"{name}.json").write_text(json.dumps(sidecar, indent=1, default=_json_default))
    return d / f"{name}.json"


def load_acquisition(directory, name="acquisition"):
    d = Path(directory)
    try:
        side = json.loads((d / f"{name}.json").read_text())
    except FileNotFoundError:
        raise ValidationError(f"{d}: no {name}.json found") from None
    if side.get("units") != KSPACE_UNITS:
        raise ValidationError(f"{d}: unsupported k-space units {side.get('units')!r}")
    k = _read_raw(d / side["k_file"], side["k_shape"]).astype(float)
    data = None
    if side.get("data_file"):
        raw = _read_raw(d / side["data_file"], side["data_shape"]).astype(float)
        data = raw[..., 0] + 1j * raw[..., 1]
    b = side["segment_boundaries"]
    segs = [KSpaceSegment(i, k[b[i]:b[i + 1]], None if data is None else data[:, b[i]:b[i + 1]])
            for i in range(len(b) - 1)]
    return Acquisition(segs, side["dims"], side["spacing_mm"], side.get("meta", {}))


def window(data, percentile=99.5):
    """Map ``data`` to 8 bits over ``[0, percentile]``; returns ``(uint8, (lo, hi))``."""
    mag = np.abs(data)
    hi = float(np.percentile(mag, percentile))
    if not hi > 0:
        hi = float(mag.max()) or 1.0
    out = np.clip(mag / hi, 0.0, 1.0) * 255.0
    return np.round(out).astype(np.uint8), (0.0, hi)


def save_image(img, stem, percentile=99.5, extra=None):
    """Write ``<stem>.f32``, ``<stem>.json`` and an 8-bit ``<stem>.png`` (first slice)."""
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    data = img.data if isinstance(img, ImageVolume) else np.asarray(img)
    spacing = img.spacing if isinstance(img, ImageVolume) else (1.0,) * 3
    if np.iscomplexobj(data):
        data = np.abs(data)
    _write_raw(stem.with_suffix(".f32"), data)
    png, (lo, hi) = window(data[0] if data.ndim == 3 else data, percentile)
    Image.fromarray(png, mode="L").save(stem.with_suffix(".png"))
    side = {"dims": list(data.shape), "spacing_mm": list(spacing), "dtype": "float32",
            "byte_order": "little", "png_window": [lo, hi], "png_level": 0.5 * (lo + hi),
            "png_width": hi - lo, "png_percentile": percentile}
    if extra:
        side.update(extra)
    stem.with_suffix(".json").write_text(json.dumps(side, indent=1, default=_json_default))
    return stem.with_suffix(".f32")


def load_image(stem):
    stem = Path(stem)
    if stem.suffix in (".f32", ".json", ".png"):
        stem = stem.with_suffix("")
    try:
        side = json.loads(stem.with_suffix(".json").read_text())
    except FileNotFoundError:
        raise ValidationError(f"{stem}.json not found") from None
    data = _read_raw(stem.with_suffix(".f32"), side["dims"]).astype(float)
    return ImageVolume(data, tuple(side.get("spacing_mm", (1.0, 1.0, 1.0))))


def _json_default(o):
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    raise TypeError(f"not JSON serializable: {type(o).__name__}")
