"""Coordinate-descent motion estimation drivers.

All three variants share one loop.  Each iteration extrapolates every beat
along its previous increment (a no-op for plain coordinate descent), then
visits groups of beats in random order.  For each group the static
background is rebuilt from the working trajectory, one shared deviation is
solved for, and the damped deviation is applied to every member at once so
that later subproblems see it immediately.  Ungrouped variants use singleton
groups, which makes a grouped run with all caps equal to one bit-identical
to the ungrouped run.
"""
from __future__ import annotations

import csv
import json
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from sklearn.cluster import KMeans

from .exceptions import ValidationError
from .metrics import gradient_entropy
from .recon import Gridder, ReconConfig, cache_build, cache_eval, reconstruct_sos
from .rigid import N_PARAMS, MotionTrajectory
from .solver import DEFAULT_ROT_SCALE, SolverConfig, minimize_bounded, sweep_1d

VARIANTS = ("plain_cd", "nesterov", "grouped")

#: Sweep axis names and the parameter they move (x = LR, y = AP, z = SI).
AXES = {"LR": 0, "AP": 1, "SI": 2, "x": 0, "y": 1, "z": 2}


def _momentum_l(n):
    l = 1.0
    for _ in range(n):
        l = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * l * l))
    return l


def momentum_beta(n):
    """FISTA extrapolation weight ``beta(n) = (l(n) - 1) / l(n + 1)`` with ``l(0) = 1``."""
    if n < 0:
        raise ValidationError("iteration index must be non-negative")
    l = _momentum_l(n)
    l_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * l * l))
    return (l - 1.0) / l_next


def ramp_alpha(n, n_ramp):
    """Sinusoidal step-size ramp, 1 from iteration ``n_ramp`` on."""
    if n < 0 or n_ramp < 0:
        raise ValidationError("iteration index and ramp length must be non-negative")
    if n < n_ramp:
        return math.sin(math.pi * (n + 1) / (2.0 * (n_ramp + 1)))
    return 1.0


def _kmeans_seed(seed):
    return int(np.random.SeedSequence([int(seed), 0x6B6D]).generate_state(1)[0])


def _bisect(idx, feats, cap, seed, out):
    if idx.size <= cap:
        out.append(idx)
        return
    labels = None
    sub = feats[idx]
    if np.ptp(sub, axis=0).max() > 0:
        km = KMeans(n_clusters=2, n_init=4, random_state=seed).fit(sub)
        labels = km.labels_
        if labels.min() == labels.max():
            labels = None
    if labels is None:
        # identical features: split in half by index
        labels = (np.arange(idx.size) >= idx.size // 2).astype(int)
    _bisect(idx[labels == 0], feats, cap, seed + 1, out)
    _bisect(idx[labels == 1], feats, cap, seed + 1, out)


def group_beats(features, cap, seed=0):
    """Partition beats by recursive 2-means until every group has at most ``cap`` beats.

    Parameters
    ----------
    features : array_like, shape (N,) or (N, F)
        One feature vector per beat.
    cap : int
        Maximum group size.
    seed : int
        Seeds both the clustering and the processing order.

    Returns
    -------
    list of ndarray
        Sorted 0-based beat indices per group, in randomized processing order.
    """
    feats = np.asarray(features, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, np.newaxis]
    if feats.ndim != 2 or feats.shape[0] == 0:
        raise ValidationError("need one feature vector per beat")
    if int(cap) != cap or cap < 1:
        raise ValidationError("group size cap must be a positive integer")
    n = feats.shape[0]
    if cap == 1:
        groups = [np.array([i]) for i in range(n)]
    else:
        groups = []
        _bisect(np.arange(n), feats, int(cap), _kmeans_seed(seed) % (2**31), groups)
        groups = sorted((np.sort(g) for g in groups), key=lambda g: g[0])
    order = np.random.default_rng(seed).permutation(len(groups))
    return [groups[j] for j in order]


@dataclass
class ReactConfig:
    """Settings of one estimation run.

    Parameters
    ----------
    variant : {"plain_cd", "nesterov", "grouped"}
    n_iters : int
    group_schedule : sequence of int
        Group-size cap per iteration (grouped variant); the last entry
        repeats when there are more iterations.
    n_ramp : int
        Length of the step-size ramp, 0 disables it.
    sweep_order : sequence of str
        Sweep axes among ``"LR"``, ``"AP"``, ``"SI"``; empty disables sweeps.
    sweep_step_mm : float
    sweep_range_mm : float or sequence of float, optional
        Sweep half-range per swept axis; defaults to ``range_mm``.
    sweep_every_subproblem : bool
        Sweep before every subproblem, or only in iteration 0.
    range_mm : float or sequence of 3 float
        Search box half-width for translations, optionally per axis
        ``(LR, AP, SI)``.
    rot_range_deg : float
        Search box half-width for each rotation component.
    tol_mm : float
        Solver tolerance (1 degree counts as ``rot_scale`` mm per radian).
    rot_scale : float
    max_evals : int
        Evaluation budget per subproblem solve.
    dofs : sequence of int
        Parameters that are optimized, indices into ``(tx, ty, tz, vx, vy, vz)``.
    seed : int
    recon : ReconConfig
    features : {"translations"} or array_like
        Grouping features; ``"translations"`` uses the current estimates.
    """

    variant: str = "nesterov"
    n_iters: int = 3
    group_schedule: tuple = ()
    n_ramp: int = 3
    sweep_order: tuple = ("LR", "AP")
    sweep_step_mm: float = 1.0
    sweep_range_mm: object = None
    sweep_every_subproblem: bool = True
    range_mm: object = 2.0
    rot_range_deg: float = 2.0
    tol_mm: float = 0.01
    rot_scale: float = DEFAULT_ROT_SCALE
    max_evals: int = 200
    dofs: tuple = (0, 1)
    seed: int = 0
    recon: ReconConfig = field(default_factory=ReconConfig)
    features: object = "translations"

    @classmethod
    def numerical_study(cls, **overrides):
        """Preset for the 2D simulation study: 3 accelerated iterations, ramp 3,
        tolerance 0.01 mm, LR then AP sweeps at 1 mm, search range +-2 mm."""
        base = dict(variant="nesterov", n_iters=3, n_ramp=3, tol_mm=0.01,
                    sweep_order=("LR", "AP"), sweep_step_mm=1.0, range_mm=2.0, dofs=(0, 1))
        base.update(overrides)
        return cls(**base)

    def validate(self):
        if self.variant not in VARIANTS:
            raise ValidationError(f"variant: expected one of {VARIANTS}, got {self.variant!r}")
        if int(self.n_iters) != self.n_iters or self.n_iters < 0:
            raise ValidationError("n_iters: must be a non-negative integer")
        if int(self.n_ramp) != self.n_ramp or self.n_ramp < 0:
            raise ValidationError("n_ramp: must be a non-negative integer")
        if self.variant == "grouped":
            if len(self.group_schedule) == 0:
                raise ValidationError("group_schedule: grouped variant needs a non-empty schedule")
            if any(int(c) != c or c < 1 for c in self.group_schedule):
                raise ValidationError("group_schedule: caps must be positive integers")
        dofs = tuple(self.dofs)
        if not dofs or len(set(dofs)) != len(dofs) or min(dofs) < 0 or max(dofs) >= N_PARAMS:
            raise ValidationError(f"dofs: must be distinct indices in 0..5, got {dofs}")
        for name in self.sweep_order:
            if name not in AXES:
                raise ValidationError(f"sweep_order: unknown axis {name!r}")
            if AXES[name] not in dofs:
                raise ValidationError(f"sweep_order: axis {name!r} is not an optimized dof")
        try:
            tr = self.translation_ranges()
        except ValueError:
            raise ValidationError("range_mm: expected a number or three numbers (LR, AP, SI)") from None
        if np.any(tr <= 0):
            raise ValidationError("range_mm: must be positive")
        if self.sweep_range_mm is not None:
            try:
                np.broadcast_to(np.asarray(self.sweep_range_mm, dtype=float), (len(self.sweep_order),))
            except ValueError:
                raise ValidationError("sweep_range_mm: one value or one per swept axis") from None
        if self.sweep_order and not self.sweep_step_mm > 0:
            raise ValidationError("sweep_step_mm: must be positive")
        self.solver_config().validate(len(dofs))
        return self

    def solver_config(self):
        dofs = tuple(self.dofs)
        rot = tuple(d >= 3 for d in dofs)
        tr = self.translation_ranges()
        bounds = [math.radians(self.rot_range_deg) if d >= 3 else tr[d] for d in dofs]
        return SolverConfig(bounds=bounds, tol=self.tol_mm, rot_scale=self.rot_scale,
                            max_evals=self.max_evals, rotational=rot)

    def translation_ranges(self):
        r = np.broadcast_to(np.asarray(self.range_mm, dtype=float), (3,))
        return r.copy()

    def cap(self, n):
        if self.variant != "grouped":
            return 1
        sched = tuple(self.group_schedule)
        return int(sched[min(n, len(sched) - 1)])

    def to_dict(self):
        d = {k: getattr(self, k) for k in self.__dataclass_fields__ if k not in ("recon", "features")}
        d["group_schedule"] = list(self.group_schedule)
        d["sweep_order"] = list(self.sweep_order)
        d["dofs"] = list(self.dofs)
        for key in ("sweep_range_mm", "range_mm"):
            v = getattr(self, key)
            d[key] = list(v) if isinstance(v, (list, tuple, np.ndarray)) else v
        r = self.recon
        d["recon"] = {k: getattr(r, k) for k in r.__dataclass_fields__}
        d["features"] = self.features if isinstance(self.features, str) else "array"
        return d


@dataclass
class RunReport:
    """Per-iteration bookkeeping of a run.

    ``entropy[0]`` and ``trajectories[0]`` describe the start point; entry
    ``n + 1`` is the state after iteration ``n``.
    """

    entropy: list = field(default_factory=list)
    evals: list = field(default_factory=list)  # per iteration, one count per subproblem
    trajectories: list = field(default_factory=list)
    wall_ms: list = field(default_factory=list)
    normalized_index: list = field(default_factory=list)
    groups: list = field(default_factory=list)

    @property
    def n_iterations(self):
        return len(self.evals)

    def mean_evals(self, it=None):
        """Mean evaluations per subproblem, over one or all iterations."""
        counts = self.evals[it] if it is not None else [c for e in self.evals for c in e]
        return float(np.mean(counts)) if len(counts) else 0.0

    def mean_evals_per_beat(self):
        """Evaluations divided by beat updates (a group solve updates every member)."""
        total = sum(sum(e) for e in self.evals)
        updates = sum(sum(len(g) for g in gs) for gs in self.groups)
        return total / updates if updates else 0.0

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["iteration", "normalized_index", "entropy", "mean_evals", "wall_ms"])
            for it in range(self.n_iterations):
                w.writerow([it + 1, repr(self.normalized_index[it]), repr(self.entropy[it + 1]),
                            repr(self.mean_evals(it)), repr(self.wall_ms[it])])

    def dump_trajectories(self, directory, prefix="iter"):
        """Write one trajectory JSON per iteration; returns the paths."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        paths = []
        for it, traj in enumerate(self.trajectories[1:], start=1):
            p = directory / f"{prefix}_{it:03d}.json"
            traj.save(p)
            paths.append(p)
        return paths

    def to_dict(self):
        return {
            "entropy": self.entropy,
            "evals": self.evals,
            "wall_ms": self.wall_ms,
            "normalized_index": self.normalized_index,
            "groups": [[g.tolist() for g in gs] for gs in self.groups],
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))


def subproblem_cost(cache, trial_x, mask=None):
    """Gradient entropy of the reconstruction with the active beats at ``trial_x``."""
    return gradient_entropy(cache_eval(cache, trial_x), mask)


def _check_x0(acq, X0):
    if X0 is None:
        return MotionTrajectory.zeros(acq.n_segments)
    if not isinstance(X0, MotionTrajectory):
        X0 = MotionTrajectory(X0)
    if len(X0) != acq.n_segments:
        raise ValidationError(f"X0 has {len(X0)} beats, acquisition has {acq.n_segments}")
    return X0


def _features(cfg, W):
    if isinstance(cfg.features, str):
        if cfg.features != "translations":
            raise ValidationError(f"features: unknown source {cfg.features!r}")
        return W[:, :3]
    return np.asarray(cfg.features, dtype=float)


def _solve_group(gridder, W, members, cfg, scfg, mask, do_sweep):
    """Solve for one deviation shared by ``members``; returns ``(d_hat, n_evals)``."""
    dofs = list(cfg.dofs)
    cache = cache_build(gridder.acq, W, members, gridder=gridder)
    base = cache.base

    def f(d):
        trial = base.copy()
        trial[:, dofs] += d
        return subproblem_cost(cache, trial, mask)

    dim = len(dofs)
    start = np.zeros(dim)
    f0 = f(start)
    n_evals = 1
    if do_sweep and cfg.sweep_order:
        axes = [dofs.index(AXES[a]) for a in cfg.sweep_order]
        sr = cfg.sweep_range_mm
        if sr is None:
            sr = cfg.translation_ranges()[[AXES[a] for a in cfg.sweep_order]]
        sr = np.broadcast_to(np.asarray(sr, dtype=float), (len(axes),))
        half = np.zeros(dim)
        half[axes] = sr
        start, f0, n = sweep_1d(f, axes, half, cfg.sweep_step_mm, start, f_start=f0)
        n_evals += n
        hw = scfg.half_widths(dim)
        clipped = np.clip(start, -hw, hw)
        if np.any(clipped != start):
            start, f0 = clipped, None
    res = minimize_bounded(f, start, scfg, f0=f0)
    return res.d_hat, n_evals + res.n_evals


def _run(acq, X0, cfg, mask=None, gridder=None, momentum=True):
    cfg.validate()
    X0 = _check_x0(acq, X0)
    n = acq.n_segments
    gridder = gridder.bind(acq) if gridder else Gridder(acq, cfg.recon)
    scfg = cfg.solver_config()
    dofs = list(cfg.dofs)
    rng = np.random.default_rng(cfg.seed)

    X = X0.params.copy()
    P = np.zeros_like(X)
    report = RunReport()
    report.entropy.append(gradient_entropy(reconstruct_sos(acq, X, gridder=gridder), mask))
    report.trajectories.append(MotionTrajectory(X))
    norm_index = 0.0
    for it in range(cfg.n_iters):
        t0 = time.perf_counter()
        beta = momentum_beta(it) if momentum else 0.0
        alpha = ramp_alpha(it, cfg.n_ramp)
        iter_seed = int(rng.integers(2**63))
        groups = group_beats(_features(cfg, X), cfg.cap(it), iter_seed)
        # look-ahead with the group-mean increments
        Pstar = np.empty_like(P)
        for g in groups:
            Pstar[g] = P[g].mean(axis=0)
        W = X + beta * Pstar
        do_sweep = cfg.sweep_every_subproblem or it == 0
        counts = []
        for g in groups:
            d_hat, n_ev = _solve_group(gridder, W, g, cfg, scfg, mask, do_sweep)
            step = np.zeros(N_PARAMS)
            step[dofs] = alpha * d_hat
            W[g] += step
            P[g] = step + beta * Pstar[g]
            counts.append(n_ev)
        X = W
        norm_index += len(groups) / n
        report.evals.append(counts)
        report.groups.append(groups)
        report.trajectories.append(MotionTrajectory(X.copy()))
        report.entropy.append(gradient_entropy(reconstruct_sos(acq, X, gridder=gridder), mask))
        report.normalized_index.append(norm_index)
        report.wall_ms.append(1e3 * (time.perf_counter() - t0))
    return MotionTrajectory(X), report


def run_cd(acq, X0, cfg, mask=None, gridder=None):
    """Plain randomized coordinate descent, one beat per subproblem."""
    return _run(acq, X0, _with(cfg, variant="plain_cd"), mask, gridder, momentum=False)


def run_react(acq, X0, cfg, mask=None, gridder=None):
    """Accelerated coordinate descent with per-beat look-ahead."""
    return _run(acq, X0, _with(cfg, variant="nesterov"), mask, gridder)


def run_react_grouped(acq, X0, cfg, mask=None, gridder=None):
    """Accelerated coordinate descent over groups of beats sharing one deviation."""
    return _run(acq, X0, _with(cfg, variant="grouped"), mask, gridder)


def _with(cfg, **changes):
    d = {k: getattr(cfg, k) for k in cfg.__dataclass_fields__}
    d.update(changes)
    return ReactConfig(**d)


def estimate(acq, cfg=None, X0=None, mask=None, gridder=None):
    """Run the configured variant and mean-center the estimated translations.

    Returns
    -------
    MotionTrajectory
    RunReport
    """
    cfg = (cfg or ReactConfig()).validate()
    if cfg.n_iters == 0:
        X0 = _check_x0(acq, X0)
        gr = gridder.bind(acq) if gridder else Gridder(acq, cfg.recon)
        h0 = gradient_entropy(reconstruct_sos(acq, X0, gridder=gr), mask)
        return X0.copy(), RunReport(entropy=[h0], trajectories=[X0.copy()])
    runner = {"plain_cd": run_cd, "nesterov": run_react, "grouped": run_react_grouped}[cfg.variant]
    X, report = runner(acq, X0, cfg, mask, gridder)
    return X.mean_centered(), report
