"""Rigid vectors and the k-space rigid-motion correction.

A rigid vector stacks a translation ``t`` (mm) and a rotation vector ``v``
(radians) into six numbers ``[tx, ty, tz, vx, vy, vz]``.  Composition is
component-wise addition, which is exact for translations and first-order
accurate for the small rotations handled here.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .data import KSPACE_UNITS, KSpaceSegment
from .exceptions import ValidationError

N_PARAMS = 6


def _check_rotvec(v):
    angle = float(np.linalg.norm(v))
    if angle >= np.pi:
        raise ValidationError(f"rotation angle {angle:.4f} rad must be below pi")


@dataclass(frozen=True)
class RigidVector:
    """Six-DOF motion state of one beat."""

    t: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        t = np.array(self.t, dtype=float).reshape(3)
        v = np.array(self.v, dtype=float).reshape(3)
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(v))):
            raise ValidationError("rigid vector components must be finite")
        _check_rotvec(v)
        t.setflags(write=False)
        v.setflags(write=False)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "v", v)

    @classmethod
    def zero(cls):
        return cls(np.zeros(3), np.zeros(3))

    @classmethod
    def from_array(cls, x):
        x = np.asarray(x, dtype=float).reshape(N_PARAMS)
        return cls(x[:3], x[3:])

    def to_array(self):
        return np.concatenate([self.t, self.v])

    def __neg__(self):
        return RigidVector(-self.t, -self.v)

    def __eq__(self, other):
        if not isinstance(other, RigidVector):
            return NotImplemented
        return np.array_equal(self.t, other.t) and np.array_equal(self.v, other.v)

    def __hash__(self):
        return hash(self.to_array().tobytes())


def rotvec_to_matrix(v):
    """Rotation matrix of a rotation vector (Rodrigues' formula).

    Parameters
    ----------
    v : array_like, shape (3,)
        Axis times angle in radians, ``|v| < pi``.

    Returns
    -------
    ndarray, shape (3, 3)
    """
    v = np.asarray(v, dtype=float).reshape(3)
    if not np.all(np.isfinite(v)):
        raise ValidationError("rotation vector must be finite")
    _check_rotvec(v)
    theta = np.linalg.norm(v)
    if theta == 0.0:
        return np.eye(3)
    kx, ky, kz = v / theta
    K = np.array([[0.0, -kz, ky], [kz, 0.0, -kx], [-ky, kx, 0.0]])
    return np.eye(3) + np.sin(theta) * K + (1.0 - np.cos(theta)) * (K @ K)


def oplus(a, b):
    """Compose two rigid vectors (component-wise sum)."""
    return RigidVector(a.t + b.t, a.v + b.v)


def scale(x, s):
    """Multiply all six components of ``x`` by the scalar ``s``."""
    s = float(s)
    if not np.isfinite(s):
        raise ValidationError("scale factor must be finite")
    return RigidVector(s * x.t, s * x.v)


def _apply_correction(k, data, x):
    """Correct raw arrays with the 6-vector ``x``; returns ``(k_new, data_new)``."""
    t, v = x[:3], x[3:]
    if np.any(v):
        k_new = k @ rotvec_to_matrix(v).T
    else:
        k_new = k
    if data is None or not np.any(t):
        return k_new, data
    return k_new, data * np.exp(2j * np.pi * (k @ t))


def correct_segment(seg, x):
    """Apply the rigid correction ``x`` to one segment.

    The trajectory becomes ``R(v) k`` and every sample is multiplied by
    ``exp(j 2 pi t . k)``, both evaluated on the uncorrected trajectory.
    """
    if seg.units != KSPACE_UNITS:
        raise ValidationError(f"trajectory units must be {KSPACE_UNITS!r}, got {seg.units!r}")
    if not isinstance(x, RigidVector):
        x = RigidVector.from_array(x)
    k_new, data_new = _apply_correction(seg.k, seg.data, x.to_array())
    return KSpaceSegment(seg.beat_index, k_new, data_new, seg.units)


class MotionTrajectory:
    """Stacked rigid vectors of ``N`` beats, stored as an ``(N, 6)`` array.

    The same container holds the stacked increments used by the accelerated
    drivers.
    """

    def __init__(self, params):
        params = np.array(params, dtype=float)
        if params.ndim == 1 and params.size == N_PARAMS:
            params = params[np.newaxis]
        if params.ndim != 2 or params.shape[1] != N_PARAMS or params.shape[0] < 1:
            raise ValidationError(f"trajectory must have shape (N, 6), got {params.shape}")
        if not np.all(np.isfinite(params)):
            raise ValidationError("trajectory contains non-finite values")
        for v in params[:, 3:]:
            _check_rotvec(v)
        self.params = params

    @classmethod
    def zeros(cls, n):
        if n < 1:
            raise ValidationError("trajectory needs at least one beat")
        return cls(np.zeros((n, N_PARAMS)))

    @classmethod
    def from_vectors(cls, vectors):
        return cls(np.stack([x.to_array() for x in vectors]))

    def __len__(self):
        return self.params.shape[0]

    @property
    def n(self):
        return len(self)

    def __getitem__(self, i):
        return RigidVector.from_array(self.params[i])

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def __eq__(self, other):
        return isinstance(other, MotionTrajectory) and np.array_equal(self.params, other.params)

    def __repr__(self):
        return f"MotionTrajectory(N={len(self)})"

    def copy(self):
        return MotionTrajectory(self.params.copy())

    @property
    def translations(self):
        return self.params[:, :3]

    @property
    def rotvecs(self):
        return self.params[:, 3:]

    def mean_centered(self):
        """Copy with translations shifted to zero mean (rotations untouched)."""
        params = self.params.copy()
        params[:, :3] -= params[:, :3].mean(axis=0)
        return MotionTrajectory(params)

    def to_dict(self):
        return {"n_segments": len(self), "columns": ["tx_mm", "ty_mm", "tz_mm",
                                                     "vx_rad", "vy_rad", "vz_rad"],
                "params": self.params.tolist()}

    @classmethod
    def from_dict(cls, d):
        return cls(np.asarray(d["params"], dtype=float))

    def save(self, path):
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def translation_rmse(estimate, truth):
    """RMSE (mm) between mean-centered translations of two trajectories."""
    a = estimate.mean_centered().translations
    b = truth.mean_centered().translations
    return float(np.sqrt(np.mean(np.sum((a - b) ** 2, axis=1))))
