"""Subproblem cost sampled on a 2D translation grid about the true motion."""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .io import save_image
from .react import AXES, subproblem_cost
from .recon import Gridder, cache_build
from .validation import check_trajectory


@dataclass
class CostMap:
    """Objective values ``values[iy, ix]`` at deviations ``(axis_mm[ix], axis_mm[iy])``
    from the center along ``axes`` (first axis runs along columns).

    ``center`` is the mean-centered true translation of the sampled beat;
    ``beat`` is None for a beat average.
    """

    values: np.ndarray
    axis_mm: np.ndarray
    axes: tuple
    center: np.ndarray
    beat: int | None = None

    @property
    def cell_mm(self):
        return float(self.axis_mm[1] - self.axis_mm[0])

    def argmin_mm(self, window_mm=None):
        """Deviation ``(d0, d1)`` of the smallest value, optionally within ``|d| <= window_mm``."""
        a = self.axis_mm
        sel = np.ones(a.size, dtype=bool) if window_mm is None else np.abs(a) <= window_mm + 1e-12
        sub = self.values[np.ix_(sel, sel)]
        iy, ix = np.unravel_index(int(np.argmin(sub)), sub.shape)
        return np.array([a[sel][ix], a[sel][iy]])

    def slice_through_origin(self, axis):
        """Values along ``axis`` (0 or 1) at zero deviation of the other axis.

        The grid has no node at zero when its size is even; the two nearest
        lines are then linearly interpolated.
        """
        a = self.axis_mm
        j = int(np.searchsorted(a, 0.0))
        if j < a.size and abs(a[j]) < 1e-12:
            lines = self.values[j, :] if axis == 0 else self.values[:, j]
            return a.copy(), lines.copy()
        lo, hi = j - 1, j
        w = (0.0 - a[lo]) / (a[hi] - a[lo])
        if axis == 0:
            line = (1 - w) * self.values[lo, :] + w * self.values[hi, :]
        else:
            line = (1 - w) * self.values[:, lo] + w * self.values[:, hi]
        return a.copy(), line

    def to_dict(self):
        return {"beat": self.beat, "axes": list(self.axes), "axis_mm": self.axis_mm.tolist(),
                "center_mm": self.center.tolist(), "shape": list(self.values.shape)}

    def save(self, stem):
        """Write raw + JSON + PNG (via :func:`reactmc.io.save_image`) and a CSV."""
        stem = Path(stem)
        save_image(self.values[np.newaxis], stem, extra={"costmap": self.to_dict()})
        with open(stem.with_suffix(".csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["offset_mm"] + [repr(float(v)) for v in self.axis_mm])
            for y, row in zip(self.axis_mm, self.values):
                w.writerow([repr(float(y))] + [repr(float(v)) for v in row])


def is_unimodal(values):
    """True when ``values`` never increases and then decreases again."""
    d = np.sign(np.diff(np.asarray(values, dtype=float)))
    d = d[d != 0]
    return not np.any((d[:-1] > 0) & (d[1:] < 0))


def _axis_indices(axes):
    idx = tuple(AXES[a] if isinstance(a, str) else int(a) for a in axes)
    if len(idx) != 2 or len(set(idx)) != 2 or max(idx) > 2 or min(idx) < 0:
        raise ValidationError(f"cost maps need two distinct translation axes, got {axes}")
    return idx


def sample_cost_map(acq, X_est, X_true, beat, n=64, half_range_mm=5.0, axes=("LR", "AP"),
                    mask=None, gridder=None):
    """Cost of one beat over translations about its true position.

    Every other beat stays at the mean-centered estimate; the sampled beat
    keeps its estimated values in the components that are not sampled.
    """
    if X_true is None:
        raise ValidationError("cost maps are defined about the ground truth, which is missing")
    if n < 2 or not half_range_mm > 0:
        raise ValidationError("cost map needs at least 2 nodes and a positive half range")
    N = acq.n_segments
    est = check_trajectory(X_est, N).mean_centered()
    truth = check_trajectory(X_true, N).mean_centered()
    ax = _axis_indices(axes)
    gr = gridder.bind(acq) if gridder else Gridder(acq)
    cache = cache_build(acq, est, [beat], gridder=gr)
    center = truth.params[beat, list(ax)].copy()
    axis_mm = np.linspace(-half_range_mm, half_range_mm, n)
    values = np.empty((n, n))
    trial = est.params[beat].copy()
    for iy, dy in enumerate(axis_mm):
        for ix, dx in enumerate(axis_mm):
            trial[ax[0]] = center[0] + dx
            trial[ax[1]] = center[1] + dy
            values[iy, ix] = subproblem_cost(cache, trial, mask)
    return CostMap(values, axis_mm, tuple(axes), center, beat)


def cost_maps(acq, X_est, X_true, n=64, half_range_mm=5.0, axes=("LR", "AP"), mask=None,
              gridder=None, beats=None, threads=1):
    """Per-beat cost maps and their arithmetic mean.

    Beats are independent, so ``threads > 1`` samples them concurrently.
    """
    gr = gridder.bind(acq) if gridder else Gridder(acq)
    beats = list(range(acq.n_segments)) if beats is None else list(beats)
    if not beats:
        raise ValidationError("no beats selected")
    # build operators up front so worker threads only read shared state
    for b in beats:
        gr.compact_operator(b, check_trajectory(X_est, acq.n_segments).params[b, 3:])

    def one(b):
        return sample_cost_map(acq, X_est, X_true, b, n, half_range_mm, axes, mask, gr)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            maps = list(pool.map(one, beats))
    else:
        maps = [one(b) for b in beats]
    avg = np.mean(np.stack([m.values for m in maps]), axis=0)
    return maps, CostMap(avg, maps[0].axis_mm, tuple(axes), np.zeros(2), None)


def write_cost_maps(maps, average, directory):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for m in maps:
        m.save(d / f"beat_{m.beat:03d}")
    average.save(d / "average")
    summary = {
        "n_beats": len(maps),
        "shape": list(average.values.shape),
        "axis_mm": [float(average.axis_mm[0]), float(average.axis_mm[-1])],
        "average_argmin_mm": average.argmin_mm().tolist(),
        "cell_mm": average.cell_mm,
    }
    (d / "summary.json").write_text(json.dumps(summary, indent=1))
    return summary
