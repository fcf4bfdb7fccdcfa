"""Config-driven experiment steps behind the command-line interface.

Each step reads and writes a dataset directory:

``simulate``
    ``acquisition.*`` (k-space dump), ``truth.json``, ``phantom.*``,
    ``mask.*``, ``reference.*`` (motion-free noisy SoS), ``corrupted.*`` and
    ``manifest.json``.
``estimate``
    ``<out>/final.json``, ``<out>/iterations/iter_NNN.json``,
    ``<out>/report.csv``, ``<out>/report.json``, images and ``summary.json``.
``costmap``
    ``<out>/beat_NNN.*``, ``<out>/average.*`` and ``summary.json``.
"""
from __future__ import annotations

import json
import math
import os
import platform
from pathlib import Path

import numpy as np

from . import __version__
from .acquisition import (
    add_noise_to_snr,
    corrupt_with_motion,
    draw_motion,
    make_coil_maps,
    make_epi_trajectory,
    make_phantom,
    make_spiral_trajectory,
    measure_snr,
    sample_kspace,
)
from .config import config_from_dict
from .costmap import cost_maps, write_cost_maps
from .data import ImageVolume
from .exceptions import ValidationError
from .io import load_acquisition, load_image, load_trajectory_file, save_acquisition, save_image
from .metrics import gradient_entropy
from .react import estimate
from .recon import Gridder, reconstruct_sos
from .rigid import MotionTrajectory, translation_rmse

#: Config sections that define the dataset; estimation must agree on them.
DATASET_SECTIONS = ("acquisition", "motion", "noise", "recon")


def threads_from_env():
    """Thread cap from ``REACT_THREADS`` (default 1)."""
    raw = os.environ.get("REACT_THREADS", "1")
    try:
        n = int(raw)
    except ValueError:
        raise ValidationError(f"REACT_THREADS: expected an integer, got {raw!r}") from None
    if n < 1:
        raise ValidationError("REACT_THREADS: must be at least 1")
    return n


def build_skeleton(block):
    """Trajectory-only acquisition described by an acquisition config block."""
    if block.type == "epi":
        return make_epi_trajectory(block.n_shots, block.lines_per_shot, block.ny, block.nx,
                                   block.spacing_mm)
    if block.type == "spiral":
        return make_spiral_trajectory(block.fov_mm, block.res_mm, block.n_interleaves,
                                      block.samples_per_interleaf)
    sp = block.spacing_mm
    return load_trajectory_file(block.path, (1, block.ny, block.nx), (1.0, sp, sp))


def simulate(cfg, out_dir=None):
    """Generate a dataset; returns the manifest dict."""
    out = Path(out_dir or cfg.output_dir)
    a, mo, no = cfg.acquisition, cfg.motion, cfg.noise
    recon_cfg = cfg.recon.to_recon_config(threads_from_env())
    skel = build_skeleton(a)
    _, ny, nx = skel.matrix
    phantom, mask = make_phantom(ny, nx, seed=a.phantom_seed, spacing=skel.spacing[1])
    coils = make_coil_maps((ny, nx), a.n_coils)
    clean = sample_kspace(phantom, coils, skel)
    truth = draw_motion(clean.n_segments, mo.range_mm, math.radians(mo.rot_range_deg), mo.seed)
    corrupted = corrupt_with_motion(clean, truth)
    gr_clean = Gridder(clean, recon_cfg)
    signal = reconstruct_sos(clean, gridder=gr_clean)
    noisy = add_noise_to_snr(corrupted, signal, mask, no.target_snr, seed=no.seed, recon_cfg=recon_cfg)
    reference_acq = add_noise_to_snr(clean, signal, mask, no.target_snr, seed=no.seed,
                                     recon_cfg=recon_cfg)
    reference = reconstruct_sos(reference_acq, gridder=Gridder(reference_acq, recon_cfg))
    corrupted_img = reconstruct_sos(noisy, gridder=Gridder(noisy, recon_cfg))

    out.mkdir(parents=True, exist_ok=True)
    save_acquisition(noisy, out, seed={"phantom": a.phantom_seed, "motion": mo.seed, "noise": no.seed})
    truth.save(out / "truth.json")
    save_image(phantom, out / "phantom")
    save_image(ImageVolume(mask.astype(float), phantom.spacing), out / "mask")
    save_image(reference, out / "reference")
    save_image(corrupted_img, out / "corrupted")

    sigma = noisy.meta.get("noise_sigma", 0.0)
    measured = math.inf
    if sigma:
        noise_only = reference_acq.with_segments(
            [r.replace(data=r.data - c.data) for r, c in zip(reference_acq.segments, clean.segments)])
        measured = measure_snr(signal.data, reconstruct_sos(noise_only, gridder=gr_clean).data, mask)
    manifest = {
        "package_version": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "config": cfg.to_dict(),
        "seeds": {"phantom": a.phantom_seed, "motion": mo.seed, "noise": no.seed,
                  "react": cfg.react.seed},
        "derived": {
            "matrix": list(clean.matrix),
            "spacing_mm": list(clean.spacing),
            "fov_mm": list(clean.fov),
            "n_segments": clean.n_segments,
            "n_coils": clean.n_coils,
            "samples_per_segment": [s.n_samples for s in clean.segments],
            "grid_shape": list(gr_clean.gshape),
            "noise_sigma": sigma,
            "measured_snr": measured if math.isfinite(measured) else "inf",
            "reference_entropy": gradient_entropy(reference, mask),
            "corrupted_entropy": gradient_entropy(corrupted_img, mask),
        },
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return manifest


def load_manifest(dataset):
    path = Path(dataset) / "manifest.json"
    try:
        return json.loads(path.read_text())
    except FileNotFoundError:
        raise ValidationError(f"{path}: dataset manifest not found") from None


def manifest_mismatch(cfg, manifest):
    """Dotted names of dataset fields where ``cfg`` and the manifest disagree."""
    mine = cfg.to_dict()
    theirs = manifest.get("config", {})
    diffs = []
    for section in DATASET_SECTIONS:
        a, b = mine.get(section, {}), theirs.get(section, {})
        for key in sorted(set(a) | set(b)):
            if a.get(key) != b.get(key):
                diffs.append(f"{section}.{key}")
    return diffs


def check_compatible(cfg, manifest):
    diffs = manifest_mismatch(cfg, manifest)
    if diffs:
        raise ValidationError("config does not match the dataset manifest: " + ", ".join(diffs))


def _load_dataset(dataset):
    d = Path(dataset)
    acq = load_acquisition(d)
    mask = load_image(d / "mask").data > 0.5
    truth = MotionTrajectory.load(d / "truth.json") if (d / "truth.json").exists() else None
    return acq, mask, truth


def run_estimate(cfg, dataset, out_dir=None):
    """Estimate motion for a simulated dataset; returns the summary dict."""
    manifest = load_manifest(dataset)
    check_compatible(cfg, manifest)
    acq, mask, truth = _load_dataset(dataset)
    out = Path(out_dir) if out_dir else Path(dataset) / "estimate"
    rcfg = cfg.react_config(threads_from_env())
    gr = Gridder(acq, rcfg.recon)
    X, report = estimate(acq, rcfg, mask=mask, gridder=gr)

    out.mkdir(parents=True, exist_ok=True)
    X.save(out / "final.json")
    report.dump_trajectories(out / "iterations")
    report.to_csv(out / "report.csv")
    report.save(out / "report.json")
    initial = reconstruct_sos(acq, report.trajectories[0], gridder=gr)
    final = reconstruct_sos(acq, X, gridder=gr)
    save_image(initial, out / "recon_initial")
    save_image(final, out / "recon_final")

    summary = {
        "n_iterations": report.n_iterations,
        "entropy": report.entropy,
        "normalized_index": report.normalized_index,
        "mean_evals_per_subproblem": report.mean_evals(),
        "mean_evals_per_beat": report.mean_evals_per_beat(),
        "wall_ms": report.wall_ms,
    }
    ref = manifest.get("derived", {}).get("reference_entropy")
    if ref is not None:
        summary["reference_entropy"] = ref
        summary["final_entropy_rel_diff"] = (report.entropy[-1] - ref) / ref
    if truth is not None:
        summary["rmse_mm"] = [translation_rmse(T, truth) for T in report.trajectories]
    (out / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary


def run_costmap(cfg, dataset, estimates, out_dir=None):
    """Sample per-beat and beat-averaged cost maps about the true motion."""
    manifest = load_manifest(dataset)
    check_compatible(cfg, manifest)
    acq, mask, truth = _load_dataset(dataset)
    if truth is None:
        raise ValidationError(f"{dataset}: no truth.json; cost maps are defined about the truth")
    X = MotionTrajectory.load(estimates)
    c = cfg.costmap
    threads = threads_from_env()
    gr = Gridder(acq, cfg.recon.to_recon_config())
    maps, avg = cost_maps(acq, X, truth, c.grid, c.half_range_mm, tuple(c.axes), mask, gr,
                          threads=threads)
    out = Path(out_dir) if out_dir else Path(dataset) / "costmap"
    summary = write_cost_maps(maps, avg, out)
    return summary


def config_from_manifest(manifest):
    return config_from_dict(manifest["config"])
