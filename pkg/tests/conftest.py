"""Shared fixtures: small synthetic datasets and the CI-scale EPI study run."""
from __future__ import annotations

import os
import time
import warnings
from pathlib import Path
from types import SimpleNamespace

import numpy as np
import pytest

from reactmc.acquisition import (
    add_noise_to_snr,
    corrupt_with_motion,
    make_coil_maps,
    make_epi_trajectory,
    make_phantom,
    sample_kspace,
)
from reactmc.recon import GriddingRangeWarning, reconstruct_sos
from reactmc.rigid import MotionTrajectory

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"

#: Lines collected by tests/test_acceptance.py, printed in the terminal summary.
ACCEPTANCE_LINES = []


def pytest_configure(config):
    warnings.simplefilter("ignore", GriddingRangeWarning)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)


def epi_dataset(n=64, shots=8, coils=8, phantom_seed=3, X=None, snr=None, noise_seed=0):
    """Noiseless (or noisy) EPI dataset on an ``n x n`` matrix.

    ``X`` is the true motion (per-beat 6-vectors); ``acq`` is the corrupted
    and, when ``snr`` is given, noisy acquisition.
    """
    phantom, mask = make_phantom(n, n, seed=phantom_seed)
    skel = make_epi_trajectory(shots, n // shots, n, n)
    clean = sample_kspace(phantom, make_coil_maps((n, n), coils), skel)
    truth = MotionTrajectory(np.zeros((shots, 6)) if X is None else np.asarray(X, dtype=float))
    acq = corrupt_with_motion(clean, truth)
    if snr is not None:
        signal = reconstruct_sos(clean)
        acq = add_noise_to_snr(acq, signal, mask, snr, seed=noise_seed)
    return SimpleNamespace(phantom=phantom, mask=mask, clean=clean, acq=acq, truth=truth)


@pytest.fixture(scope="session")
def small_epi():
    """64 x 64, 8 shots, 8 coils, +-2 mm random translations, noiseless."""
    rng = np.random.default_rng(11)
    X = np.zeros((8, 6))
    X[:, :2] = rng.uniform(-2, 2, size=(8, 2))
    return epi_dataset(64, 8, X=X)


def _study_config():
    name = "numerical_study_full.toml" if os.environ.get("REACT_FULL_SCALE") else "numerical_study_ci.toml"
    return CONFIGS / name


@pytest.fixture(scope="session")
def study_run(tmp_path_factory):
    """Simulate and estimate the EPI numerical study through the experiment pipeline.

    CI scale (192 x 160) by default; set ``REACT_FULL_SCALE=1`` for 384 x 320.
    """
    from reactmc import experiment
    from reactmc.config import load_config

    cfg_path = _study_config()
    cfg = load_config(cfg_path)
    root = tmp_path_factory.mktemp("study")
    dataset = root / "dataset"
    manifest = experiment.simulate(cfg, dataset)
    t0 = time.perf_counter()
    summary = experiment.run_estimate(cfg, dataset, root / "estimate")
    seconds = time.perf_counter() - t0
    return SimpleNamespace(cfg=cfg, cfg_path=cfg_path, dataset=dataset, manifest=manifest,
                           summary=summary, seconds=seconds, out=root / "estimate")


@pytest.fixture(scope="session")
def study_costmap(study_run):
    """Beat-averaged 64 x 64 cost map over +-5 mm about the truth on the converged run."""
    from reactmc import experiment
    from reactmc.costmap import CostMap

    out = study_run.out.parent / "costmap"
    t0 = time.perf_counter()
    experiment.run_costmap(study_run.cfg, study_run.dataset, study_run.out / "final.json", out)
    seconds = time.perf_counter() - t0
    table = np.loadtxt(out / "average.csv", delimiter=",", dtype=str)
    axis = table[0, 1:].astype(float)
    values = table[1:, 1:].astype(float)
    avg = CostMap(values, axis, tuple(study_run.cfg.costmap.axes), np.zeros(2), None)
    return SimpleNamespace(average=avg, dir=out, seconds=seconds)
