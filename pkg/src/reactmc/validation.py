"""Input checks shared by the estimator, the drivers and the CLI."""
from __future__ import annotations

import numpy as np

from .data import Acquisition
from .exceptions import ValidationError
from .rigid import MotionTrajectory


def check_acquisition(acq, require_data=True):
    """Ensure ``acq`` is an :class:`Acquisition` with k-space data."""
    if not isinstance(acq, Acquisition):
        raise ValidationError(f"expected an Acquisition, got {type(acq).__name__}")
    if acq.n_segments < 1:
        raise ValidationError("acquisition has no segments")
    if require_data and not acq.has_data:
        raise ValidationError("acquisition has no sampled data")
    return acq


def check_mask(mask, matrix):
    """Return a boolean ``(nz, ny, nx)`` mask, or None when ``mask`` is None."""
    if mask is None:
        return None
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[np.newaxis]
    if m.shape != tuple(matrix):
        raise ValidationError(f"mask shape {m.shape} does not match matrix {tuple(matrix)}")
    m = m.astype(bool)
    if not m.any():
        raise ValidationError("mask is empty")
    return m


def check_trajectory(X, n_segments):
    """Coerce ``X`` to a :class:`MotionTrajectory` with ``n_segments`` beats."""
    if X is None:
        return MotionTrajectory.zeros(n_segments)
    if not isinstance(X, MotionTrajectory):
        X = MotionTrajectory(X)
    if len(X) != n_segments:
        raise ValidationError(f"trajectory has {len(X)} beats, acquisition has {n_segments}")
    return X
