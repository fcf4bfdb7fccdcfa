"""Gridding reconstruction and the static/dynamic reconstruction cache.

Samples are density weighted, convolved onto an oversampled Cartesian grid
with a Kaiser-Bessel kernel, inverse Fourier transformed, deapodized and
cropped.  Coils are combined by root sum of squares.

While one beat (or group of beats) is being optimized, the gridded
contribution of all other beats does not change.  :func:`cache_build`
precomputes that static grid once and :func:`cache_eval` only grids the
active samples before each transform.
"""
from __future__ import annotations

import copy
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.fft
import scipy.sparse
from scipy.special import i0

from .data import ImageVolume
from .exceptions import ValidationError
from .rigid import N_PARAMS, MotionTrajectory, RigidVector, _apply_correction


class GriddingRangeWarning(RuntimeWarning):
    """A sample fell outside the gridded k-space extent and was clamped."""


@dataclass
class ReconConfig:
    oversamp: float = 1.15
    kernel_width: float = 4.0
    kernel: str = "kb"  # "kb" or "delta"
    beta: float | None = None
    density: str = "auto"  # "auto", "uniform" or "radial"
    out_of_range: str = "clamp"  # "clamp" or "error"
    deapod_floor: float = 1e-6
    workers: int | None = None

    def __post_init__(self):
        if self.oversamp < 1:
            raise ValidationError("oversampling factor must be >= 1")
        if self.kernel not in ("kb", "delta"):
            raise ValidationError(f"unknown kernel {self.kernel!r}")
        if self.kernel == "kb" and self.kernel_width < 2:
            raise ValidationError("kernel width must be >= 2")
        if self.density not in ("auto", "uniform", "radial"):
            raise ValidationError(f"unknown density scheme {self.density!r}")
        if self.out_of_range not in ("clamp", "error"):
            raise ValidationError(f"out_of_range must be 'clamp' or 'error'")

    @property
    def width(self):
        return 1 if self.kernel == "delta" else int(math.ceil(self.kernel_width))

    @property
    def kb_beta(self):
        if self.beta is not None:
            return float(self.beta)
        w, a = float(self.kernel_width), float(self.oversamp)
        # Beatty et al. choice for a given width / oversampling pair
        arg = (w / a) ** 2 * (a - 0.5) ** 2 - 0.8
        return math.pi * math.sqrt(max(arg, 1e-3))


def grid_shape(matrix, oversamp):
    """Oversampled grid size per axis (axes of length 1 are not gridded).

    Each size is the smallest even FFT-friendly length of at least
    ``oversamp * n``.
    """
    shape = []
    for n in matrix:
        if n == 1:
            shape.append(1)
            continue
        ng = max(int(math.ceil(oversamp * n - 1e-9)), n)
        if oversamp > 1:
            ng = scipy.fft.next_fast_len(ng)
            while ng % 2:
                ng = scipy.fft.next_fast_len(ng + 1)
        shape.append(ng)
    return tuple(shape)


def kb_kernel(d, width, beta):
    """Kaiser-Bessel kernel at distance ``d`` (grid units), pedestal removed.

    ``I0(beta sqrt(1 - (2d/W)^2)) - 1`` vanishes at the support edge, so
    gridding is continuous in k even for samples on a window boundary.
    """
    x = 1.0 - (2.0 * d / width) ** 2
    out = np.zeros_like(d, dtype=float)
    inside = x >= 0
    out[inside] = i0(beta * np.sqrt(x[inside])) - 1.0
    return out


def kb_transform(nu, width, beta):
    """Continuous Fourier transform of :func:`kb_kernel` at frequency ``nu``."""
    nu = np.asarray(nu, dtype=float)
    z = beta**2 - (math.pi * width * nu) ** 2
    out = np.empty_like(z)
    pos = z > 1e-12
    neg = z < -1e-12
    r = np.sqrt(np.abs(z))
    out[pos] = np.sinh(r[pos]) / r[pos]
    out[neg] = np.sin(r[neg]) / r[neg]
    out[~(pos | neg)] = 1.0
    # minus the transform of the unit box of the removed pedestal
    return width * (out - np.sinc(width * nu))


def _on_nyquist_grid(k, fov_xyz, tol=1e-6):
    u = k * fov_xyz
    return np.all(np.abs(u - np.round(u)) <= tol)


def density_weights(acq, scheme="auto"):
    """Per-sample density compensation weights, one array per segment.

    Samples on the Nyquist Cartesian grid get unit weight.  Otherwise the
    weight grows with ``|k|`` (``|k|^2`` in 3D) above a floor of half a grid
    cell, normalized so the weights sum to the number of Nyquist cells inside
    the sampled radius.
    """
    if acq.n_segments == 0 or sum(s.n_samples for s in acq.segments) == 0:
        raise ValidationError("acquisition has no samples")
    k = acq.all_k()
    fz, fy, fx = acq.fov
    fov_xyz = np.array([fx, fy, fz if not acq.is_2d else 1.0])
    if scheme == "auto":
        scheme = acq.meta.get("density", "auto")
    if scheme == "auto":
        scheme = "uniform" if _on_nyquist_grid(k, fov_xyz) else "radial"
    if k.shape[0] == 1:
        w = np.ones(1)
    elif scheme == "uniform":
        w = np.ones(k.shape[0])
    else:
        if np.all(np.ptp(k, axis=0) == 0):
            raise ValidationError("all samples coincide; density is undefined")
        ndim = 2 if acq.is_2d else 3
        kk = k * fov_xyz  # in Nyquist cells
        if ndim == 2:
            kk = kk[:, :2]
        r = np.linalg.norm(kk, axis=1)
        w = np.maximum(r, 0.5) ** (ndim - 1)
        rmax = max(float(r.max()), 0.5)
        cells = math.pi * rmax**2 if ndim == 2 else 4.0 / 3.0 * math.pi * rmax**3
        w *= max(cells, 1.0) / w.sum()
    bounds = acq.boundaries()
    return [w[bounds[i]:bounds[i + 1]] for i in range(acq.n_segments)]


class Gridder:
    """Gridding geometry for one acquisition.

    Holds the oversampled grid, the deapodization image and memoized sparse
    interpolation matrices keyed by beat and rotation.
    """

    def __init__(self, acq, cfg=None, weights=None):
        self.cfg = cfg or ReconConfig()
        self.acq = acq
        self.matrix = acq.matrix
        self.spacing = acq.spacing
        self.gshape = grid_shape(acq.matrix, self.cfg.oversamp)
        self.n_coils = acq.n_coils
        self.weights = weights if weights is not None else density_weights(acq, self.cfg.density)
        # grid axes ordered (z, y, x); k columns ordered (x, y, z)
        self.gridded_axes = [ax for ax in range(3) if self.gshape[ax] > 1]
        self._dk = np.array([1.0 / (g * d) for g, d in zip(self.gshape, self.spacing)])
        self._kmax = np.array([0.5 / d for d in self.spacing])
        self._weighted = [None if s.data is None else s.data * w
                          for s, w in zip(acq.segments, self.weights)]
        self._ops = {}
        self._rows = {}
        # image position p = i - n // 2 sits at FFT index p mod g
        self._crop = [np.mod(np.arange(n) - n // 2, g) for g, n in zip(self.gshape, self.matrix)]
        self.deapod = self._deapodization()
        self._norm = 1.0 / float(np.prod(self.matrix))

    def bind(self, acq):
        """Gridder for ``acq``'s data sharing this one's operators.

        ``acq`` must carry the same trajectory; returns ``self`` when it is
        the bound acquisition already.
        """
        if acq is self.acq:
            return self
        if acq.n_segments != self.acq.n_segments or any(
                a.k.shape != b.k.shape or not np.array_equal(a.k, b.k)
                for a, b in zip(acq.segments, self.acq.segments)):
            raise ValidationError("gridder was built for a different trajectory")
        other = copy.copy(self)
        other.acq = acq
        other.n_coils = acq.n_coils
        other._weighted = [None if s.data is None else s.data * w
                           for s, w in zip(acq.segments, self.weights)]
        return other

    @property
    def ncells(self):
        return int(np.prod(self.gshape))

    def _deapodization(self):
        if self.cfg.kernel == "delta":
            return np.ones(self.matrix)
        w, beta = self.cfg.kernel_width, self.cfg.kb_beta
        profiles = []
        for ax in range(3):
            g, n = self.gshape[ax], self.matrix[ax]
            if g == 1:
                profiles.append(np.ones(1))
                continue
            nu = (np.arange(n) - n // 2) / g
            profiles.append(kb_transform(nu, w, beta))
        c = profiles[0][:, None, None] * profiles[1][None, :, None] * profiles[2][None, None, :]
        return np.maximum(c, self.cfg.deapod_floor * c.max())

    def operator(self, beat, v=None):
        """Sparse ``(ncells, n_samples)`` interpolation matrix of one beat rotated by ``v``."""
        v = np.zeros(3) if v is None else np.asarray(v, dtype=float)
        key = (beat, v.tobytes())
        op = self._ops.get(key)
        if op is None:
            k = self.acq.segments[beat].k
            if np.any(v):
                k, _ = _apply_correction(k, None, np.concatenate([np.zeros(3), v]))
            op = self._build_operator(k)
            if len(self._ops) > 4 * max(self.acq.n_segments, 1):
                # keep the unrotated operators, drop stale rotated ones
                self._ops = {kk: vv for kk, vv in self._ops.items() if not np.any(np.frombuffer(kk[1]))}
                self._rows = {kk: vv for kk, vv in self._rows.items() if kk in self._ops}
            self._ops[key] = op
        return op

    def _build_operator(self, k):
        m = k.shape[0]
        W = self.cfg.width
        beta = self.cfg.kb_beta
        idx_total = np.zeros((m, 1), dtype=np.int64)
        val_total = np.ones((m, 1))
        strides = [self.gshape[1] * self.gshape[2], self.gshape[2], 1]
        for ax in range(3):  # ax over (z, y, x)
            g = self.gshape[ax]
            if g == 1:
                continue
            col = 2 - ax
            kc = k[:, col]
            kmax = self._kmax[ax]
            bad = np.abs(kc) > kmax * (1.0 + 1e-9)
            if np.any(bad):
                if self.cfg.out_of_range == "error":
                    raise ValidationError(f"{int(bad.sum())} samples lie outside the gridded k-space extent")
                warnings.warn(f"{int(bad.sum())} samples clamped to the gridded k-space extent",
                              GriddingRangeWarning, stacklevel=3)
                kc = np.clip(kc, -kmax, kmax)
            u = kc / self._dk[ax]  # k = 0 at index 0 (FFT order)
            if self.cfg.kernel == "delta":
                j = np.round(u).astype(np.int64)[:, None]
                val = np.ones((m, 1))
            else:
                start = np.floor(u - W / 2.0).astype(np.int64) + 1
                j = start[:, None] + np.arange(W)[None, :]
                val = kb_kernel(j - u[:, None], self.cfg.kernel_width, beta)
            j = np.mod(j, g)
            idx_total = (idx_total[:, :, None] + j[:, None, :] * strides[ax]).reshape(m, -1)
            val_total = (val_total[:, :, None] * val[:, None, :]).reshape(m, -1)
        rows = idx_total.ravel()
        cols = np.repeat(np.arange(m), idx_total.shape[1])
        op = scipy.sparse.csr_matrix((val_total.ravel(), (rows, cols)), shape=(self.ncells, m))
        op.sum_duplicates()
        return op

    def grid_segment(self, beat, x):
        """Gridded contribution ``(ncells, n_coils)`` of one beat under correction ``x``."""
        x = np.asarray(x, dtype=float)
        return self.operator(beat, x[3:]) @ self._corrected_data(beat, x).T

    def _corrected_data(self, beat, x):
        data = self._weighted[beat]
        if data is None:
            raise ValidationError(f"segment {beat} carries no data")
        t = x[:3]
        if np.any(t):
            data = data * np.exp(2j * np.pi * (self.acq.segments[beat].k @ t))
        return data

    def empty_grid(self):
        return np.zeros((self.ncells, self.n_coils), dtype=complex)

    def first_pass(self, rows):
        """Inverse FFT along x of grid rows ``(r, gx, n_coils)``, cropped to ``nx``."""
        if self.gshape[2] == 1:
            return rows
        g = scipy.fft.ifft(rows, axis=1, norm="forward", workers=self.cfg.workers)
        return np.take(g, self._crop[2], axis=1)

    def finish(self, part):
        """Remaining passes on first-pass output ``(gz * gy, nx, n_coils)``."""
        gz, gy, _ = self.gshape
        g = part.reshape((gz, gy) + part.shape[1:])
        for ax in (1, 0):
            if self.gshape[ax] > 1:
                g = scipy.fft.ifft(g, axis=ax, norm="forward", workers=self.cfg.workers)
                g = np.take(g, self._crop[ax], axis=ax)
        return g

    def rows(self, grid):
        return grid.reshape(-1, self.gshape[2], self.n_coils)

    def _transform(self, grid):
        # one axis at a time, cropping after each pass; coils stay last
        return self.finish(self.first_pass(self.rows(grid)))

    def compact_operator(self, beat, v=None):
        """Grid rows a beat reaches and the operator restricted to them.

        Returns ``(rows, op)`` with ``rows`` flattened ``(z, y)`` indices and
        ``op`` of shape ``(len(rows) * gx, n_samples)``.
        """
        v = np.zeros(3) if v is None else np.asarray(v, dtype=float)
        key = (beat, v.tobytes())
        hit = self._rows.get(key)
        if hit is None:
            op = self.operator(beat, v)
            gx = self.gshape[2]
            rows = np.unique(np.flatnonzero(np.diff(op.indptr)) // gx)
            cells = (rows[:, None] * gx + np.arange(gx)[None, :]).ravel()
            hit = (rows, op[cells])
            self._rows[key] = hit
        return hit

    def grid_rows(self, beat, x):
        """Like :meth:`grid_segment` but only on the reached rows: ``(rows, (r, gx, n_coils))``."""
        x = np.asarray(x, dtype=float)
        rows, op = self.compact_operator(beat, x[3:])
        data = self._corrected_data(beat, x)
        return rows, (op @ data.T).reshape(len(rows), self.gshape[2], self.n_coils)

    def sos_from_first_pass(self, part):
        return self._sos(self.finish(part))

    def coil_images(self, grid):
        """Deapodized, cropped coil images ``(n_coils, nz, ny, nx)`` from a k-grid."""
        img = np.moveaxis(self._transform(grid), -1, 0)
        return img * (self._norm / self.deapod)

    def centered(self, grid):
        """k-grid ``(ncells, n_coils)`` as ``(n_coils, gz, gy, gx)`` with k = 0 at the center."""
        g = grid.T.reshape((self.n_coils,) + self.gshape)
        return scipy.fft.fftshift(g, axes=tuple(1 + ax for ax in self.gridded_axes))

    def sos(self, grid):
        return self._sos(self._transform(grid))

    def _sos(self, g):
        ss = np.einsum("...c,...c->...", g.real, g.real) + np.einsum("...c,...c->...", g.imag, g.imag)
        return np.sqrt(ss) * (self._norm / self.deapod)


def _as_params(X, n):
    if isinstance(X, MotionTrajectory):
        params = X.params
    elif X is None:
        params = np.zeros((n, N_PARAMS))
    else:
        params = np.asarray(X, dtype=float).reshape(-1, N_PARAMS)
    if params.shape[0] != n:
        raise ValidationError(f"trajectory has {params.shape[0]} beats, acquisition has {n}")
    return params


def grid_acquisition(segments, weights, dims, oversamp=1.15, kernel_width=4.0, kernel="kb",
                     spacing=(1.0, 1.0, 1.0), out_of_range="clamp"):
    """Grid the (already corrected) segments onto the oversampled grid.

    Returns
    -------
    ndarray, shape (n_coils, gz, gy, gx)
    """
    from .data import Acquisition

    acq = Acquisition(list(segments), dims, spacing)
    cfg = ReconConfig(oversamp=oversamp, kernel_width=kernel_width, kernel=kernel,
                      out_of_range=out_of_range)
    gr = Gridder(acq, cfg, weights=list(weights))
    grid = gr.empty_grid()
    for i in range(acq.n_segments):
        grid += gr.grid_segment(i, np.zeros(N_PARAMS))
    return gr.centered(grid)


def reconstruct_sos(acq, X=None, cfg=None, gridder=None):
    """Motion-corrected root-sum-of-squares reconstruction.

    Each beat ``i`` is corrected with ``X[i]`` before gridding.
    """
    gr = gridder.bind(acq) if gridder else Gridder(acq, cfg)
    params = _as_params(X, acq.n_segments)
    grid = gr.empty_grid()
    for i in range(acq.n_segments):
        grid += gr.grid_segment(i, params[i])
    return ImageVolume(gr.sos(grid), acq.spacing)


def reconstruct_coils(acq, X=None, cfg=None, gridder=None):
    """Per-coil complex images ``(n_coils, nz, ny, nx)``."""
    gr = gridder.bind(acq) if gridder else Gridder(acq, cfg)
    params = _as_params(X, acq.n_segments)
    grid = gr.empty_grid()
    for i in range(acq.n_segments):
        grid += gr.grid_segment(i, params[i])
    return gr.coil_images(grid)


@dataclass(frozen=True)
class ReconCache:
    """Static background for a fixed set of active beats.

    ``static_grid`` holds the gridded data of every inactive beat under the
    trajectory given to :func:`cache_build`; it is a snapshot and does not
    follow later changes of the trajectory.  ``static_part`` is the same
    background after the first (x) FFT pass, so an evaluation only transforms
    the grid rows the active beats reach before the remaining passes.
    """

    gridder: Gridder
    active: tuple
    static_grid: np.ndarray
    base: np.ndarray = field(repr=False)  # (n_active, 6) parameters at build time
    static_part: np.ndarray = field(default=None, repr=False)

    @property
    def static_grids(self):
        """Static k-grids per coil, shape ``(n_coils, gz, gy, gx)``."""
        return self.gridder.centered(self.static_grid)


def cache_build(acq, X, active_beats, cfg=None, gridder=None):
    """Precompute the static background for ``active_beats`` (0-based)."""
    gr = gridder.bind(acq) if gridder else Gridder(acq, cfg)
    params = _as_params(X, acq.n_segments)
    active = tuple(int(i) for i in np.atleast_1d(active_beats))
    if len(active) == 0:
        raise ValidationError("active set must not be empty")
    if len(set(active)) != len(active) or min(active) < 0 or max(active) >= acq.n_segments:
        raise ValidationError(f"invalid active set {active} for {acq.n_segments} beats")
    static = gr.empty_grid()
    act = set(active)
    for i in range(acq.n_segments):
        if i not in act:
            static += gr.grid_segment(i, params[i])
    static.setflags(write=False)
    base = params[list(active)].copy()
    base.setflags(write=False)
    part = gr.first_pass(gr.rows(static))
    part.setflags(write=False)
    return ReconCache(gr, active, static, base, part)


def _trial_params(cache, trial_x):
    n = len(cache.active)
    if trial_x is None:
        return cache.base
    if isinstance(trial_x, RigidVector):
        return np.broadcast_to(trial_x.to_array(), (n, N_PARAMS))
    arr = np.asarray(trial_x, dtype=float)
    if arr.shape == (N_PARAMS,):
        return np.broadcast_to(arr, (n, N_PARAMS))
    if arr.shape != (n, N_PARAMS):
        raise ValidationError(f"trial parameters must be (6,) or ({n}, 6), got {arr.shape}")
    return arr


def cache_grid(cache, trial_x=None):
    grid = cache.static_grid.copy()
    params = _trial_params(cache, trial_x)
    for beat, x in zip(cache.active, params):
        grid += cache.gridder.grid_segment(beat, x)
    return grid


def cache_eval(cache, trial_x=None):
    """SoS image with the active beats corrected by ``trial_x``.

    ``trial_x`` is a rigid vector (applied to every active beat) or an
    ``(n_active, 6)`` array; ``None`` uses the parameters at build time.
    """
    gr = cache.gridder
    params = _trial_params(cache, trial_x)
    part = cache.static_part.copy()
    for beat, x in zip(cache.active, params):
        rows, contrib = gr.grid_rows(beat, x)
        part[rows] += gr.first_pass(contrib)
    return ImageVolume(gr.sos_from_first_pass(part), gr.spacing)
