"""Image-quality metrics.

``gradient_entropy`` is the autofocus objective: the Shannon entropy (bits)
of the normalized, masked gradient magnitude.  Gradients use central
differences with periodic boundaries, which makes the metric exactly
invariant to circular shifts and to 90-degree rotations of image and mask.

``u_iepa`` scores vessel sharpness from cross-sectional intensity profiles.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import ImageVolume
from .exceptions import DegenerateInputError, ValidationError


def _as_array(img):
    data = img.data if isinstance(img, ImageVolume) else np.asarray(img)
    if data.ndim == 2:
        data = data[np.newaxis]
    return data


def _as_mask(mask, shape):
    if mask is None:
        return np.ones(shape, dtype=bool)
    m = np.asarray(mask)
    if m.ndim == 2:
        m = m[np.newaxis]
    if m.shape != shape:
        raise ValidationError(f"mask shape {m.shape} does not match image {shape}")
    return m.astype(bool)


def gradient_magnitude(img, mask=None):
    """Masked gradient magnitude ``H = W * sqrt(|dx I|^2 + |dy I|^2 + |dz I|^2)``.

    Axes of length one contribute no term.
    """
    data = _as_array(img)
    m = _as_mask(mask, data.shape)
    sq = np.zeros(data.shape)
    for ax in range(3):
        if data.shape[ax] < 3:
            continue
        d = 0.5 * (np.roll(data, -1, axis=ax) - np.roll(data, 1, axis=ax))
        sq += d.real**2 + d.imag**2 if np.iscomplexobj(d) else d * d
    return np.where(m, np.sqrt(sq), 0.0)


def entropy_of(H):
    """Entropy in bits of a non-negative field after normalizing it to unit sum."""
    H = np.asarray(H, dtype=float).ravel()
    total = H.sum()
    if not total > 0:
        raise DegenerateInputError("gradient magnitude is zero everywhere in the mask")
    p = H[H > 0] / total
    return float(-np.sum(p * np.log2(p)))


def gradient_entropy(img, mask=None):
    """Gradient entropy of ``img`` inside ``mask``."""
    return entropy_of(gradient_magnitude(img, mask))


@dataclass
class EdgeProfileSet:
    """Cross-sectional intensity profiles sampled every ``delta`` mm."""

    profiles: list
    delta: float = 1.0

    def __post_init__(self):
        self.profiles = [np.asarray(p, dtype=float).ravel() for p in self.profiles]
        if not self.profiles:
            raise ValidationError("no profiles given")
        if any(p.size < 2 for p in self.profiles):
            raise ValidationError("every profile needs at least two samples")
        if not self.delta > 0:
            raise ValidationError("profile sampling interval must be positive")

    @classmethod
    def from_csv(cls, path):
        """Read profiles from CSV: header ``delta=<mm>``, then one profile per row."""
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(fh) if r and any(c.strip() for c in r)]
        if not rows:
            raise ValidationError(f"{path}: empty profile file")
        head = rows[0][0].strip()
        if not head.startswith("delta="):
            raise ValidationError(f"{path}:1: expected header 'delta=<mm>', got {head!r}")
        try:
            delta = float(head.split("=", 1)[1])
            profiles = [[float(c) for c in r if c.strip()] for r in rows[1:]]
        except ValueError as exc:
            raise ValidationError(f"{path}: {exc}") from None
        return cls(profiles, delta)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([f"delta={self.delta!r}"])
            for p in self.profiles:
                w.writerow([repr(float(v)) for v in p])


def u_iepa(profiles, delta=None):
    """Unbounded image edge profile acutance.

    Mean over profiles of the RMS slope ``(r[i+1] - r[i]) / delta``, divided
    by the intensity range over all samples of all profiles.
    """
    if not isinstance(profiles, EdgeProfileSet):
        profiles = EdgeProfileSet(profiles, 1.0 if delta is None else delta)
    elif delta is not None:
        profiles = EdgeProfileSet(profiles.profiles, delta)
    allv = np.concatenate(profiles.profiles)
    span = allv.max() - allv.min()
    if not span > 0:
        raise DegenerateInputError("profiles are flat; acutance is undefined")
    g = [np.sqrt(np.mean((np.diff(p) / profiles.delta) ** 2)) for p in profiles.profiles]
    return float(np.mean(g) / span)
