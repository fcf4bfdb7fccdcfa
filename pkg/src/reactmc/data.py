"""Containers shared by the simulator, the reconstruction and the drivers.

Array conventions
-----------------
* Images are ``(nz, ny, nx)`` arrays; 2D images have ``nz == 1``.
* Voxel spacing is ``(dz, dy, dx)`` in mm.  Spatial positions are measured
  from the voxel at index ``n // 2`` along each axis.
* k-space locations are ``(kx, ky, kz)`` rows in cycles/mm, so a position
  ``(x, y, z)`` and a location ``k`` pair up through ``k @ r``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .exceptions import ValidationError

KSPACE_UNITS = "cyc/mm"


@dataclass(frozen=True)
class ImageVolume:
    """An image on a regular grid.

    Parameters
    ----------
    data : ndarray, shape (nz, ny, nx)
        Real or complex voxel values.
    spacing : tuple of float
        Voxel size in mm along ``(z, y, x)``.
    """

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim == 2:
            data = data[np.newaxis]
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValidationError(f"image must be 2D or 3D, got shape {np.shape(self.data)}")
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) == 2:
            spacing = (1.0,) + spacing
        if len(spacing) != 3 or min(spacing) <= 0:
            raise ValidationError(f"spacing must hold three positive values, got {self.spacing}")
        object.__setattr__(self, "data", data)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self):
        return self.data.shape

    @property
    def is_2d(self):
        return self.data.shape[0] == 1

    def positions(self):
        """Per-axis voxel positions in mm, ordered ``(z, y, x)``."""
        return [(np.arange(n) - n // 2) * d for n, d in zip(self.shape, self.spacing)]


@dataclass(frozen=True)
class CoilSet:
    """Receive sensitivities, ``maps`` of shape ``(n_coils, nz, ny, nx)``."""

    maps: np.ndarray

    def __post_init__(self):
        maps = np.asarray(self.maps, dtype=complex)
        if maps.ndim == 3:
            maps = maps[:, np.newaxis]
        if maps.ndim != 4 or maps.shape[0] < 1:
            raise ValidationError(f"coil maps must be (n_coils, nz, ny, nx), got {maps.shape}")
        object.__setattr__(self, "maps", maps)

    @property
    def n_coils(self):
        return self.maps.shape[0]

    def __len__(self):
        return self.n_coils


@dataclass(frozen=True)
class KSpaceSegment:
    """Samples acquired during one beat.

    ``k`` has shape ``(n_samples, 3)`` in cycles/mm and ``data`` has shape
    ``(n_coils, n_samples)``.  A skeleton segment (trajectory only) carries
    ``data=None``.
    """

    beat_index: int
    k: np.ndarray
    data: np.ndarray | None = None
    units: str = KSPACE_UNITS

    def __post_init__(self):
        k = np.asarray(self.k, dtype=float)
        if k.ndim != 2 or k.shape[1] != 3:
            raise ValidationError(f"trajectory must have shape (n_samples, 3), got {k.shape}")
        if not np.all(np.isfinite(k)):
            raise ValidationError("trajectory contains non-finite values")
        object.__setattr__(self, "k", k)
        if self.data is not None:
            data = np.asarray(self.data, dtype=complex)
            if data.ndim == 1:
                data = data[np.newaxis]
            if data.ndim != 2 or data.shape[1] != k.shape[0]:
                raise ValidationError(
                    f"segment {self.beat_index}: data shape {data.shape} does not match "
                    f"{k.shape[0]} samples"
                )
            object.__setattr__(self, "data", data)

    @property
    def n_samples(self):
        return self.k.shape[0]

    @property
    def n_coils(self):
        return 0 if self.data is None else self.data.shape[0]

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class Acquisition:
    """A segmented acquisition.

    Parameters
    ----------
    segments : list of KSpaceSegment
        One entry per beat, in acquisition order.
    matrix : tuple of int
        Image matrix ``(nz, ny, nx)`` prescribed by the acquisition.
    spacing : tuple of float
        Nominal resolution in mm along ``(z, y, x)``.
    """

    segments: list
    matrix: tuple
    spacing: tuple = (1.0, 1.0, 1.0)
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        matrix = tuple(int(m) for m in self.matrix)
        if len(matrix) == 2:
            matrix = (1,) + matrix
        spacing = tuple(float(s) for s in self.spacing)
        if len(spacing) == 2:
            spacing = (1.0,) + spacing
        if len(matrix) != 3 or min(matrix) < 1 or len(spacing) != 3 or min(spacing) <= 0:
            raise ValidationError(f"bad matrix {self.matrix} / spacing {self.spacing}")
        object.__setattr__(self, "matrix", matrix)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "segments", list(self.segments))

    def __len__(self):
        return len(self.segments)

    @property
    def n_segments(self):
        return len(self.segments)

    @property
    def n_coils(self):
        return self.segments[0].n_coils if self.segments else 0

    @property
    def fov(self):
        """Field of view in mm along ``(z, y, x)``."""
        return tuple(m * s for m, s in zip(self.matrix, self.spacing))

    @property
    def is_2d(self):
        return self.matrix[0] == 1

    @property
    def k_max(self):
        """Largest representable frequency per axis, ordered ``(kx, ky, kz)``."""
        dz, dy, dx = self.spacing
        kz = 0.0 if self.is_2d else 0.5 / dz
        return np.array([0.5 / dx, 0.5 / dy, kz])

    @property
    def has_data(self):
        return all(s.data is not None for s in self.segments)

    def with_segments(self, segments):
        return replace(self, segments=list(segments))

    def all_k(self):
        return np.concatenate([s.k for s in self.segments], axis=0)

    def boundaries(self):
        """Start offsets of each segment in the concatenated sample list."""
        return np.cumsum([0] + [s.n_samples for s in self.segments])
