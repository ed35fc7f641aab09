"""Synthetic 2-d class-conditional datasets."""

from __future__ import annotations

import numpy as np

from ..diffusion import LabeledDataset
from ..errors import ConfigError, DomainError

GEOMETRIES = ("ring", "grid")
RING_RADIUS = 4.0
GRID_SPACING = 4.0


def class_means(K: int, geometry: str) -> np.ndarray:
    """Class centers: equally spaced on a radius-4 circle, or a square lattice."""
    if geometry == "ring":
        angles = 2.0 * np.pi * np.arange(K) / K
        return RING_RADIUS * np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if geometry == "grid":
        side = int(np.ceil(np.sqrt(K)))
        offset = (side - 1) / 2.0
        means = [((k % side) - offset, (k // side) - offset) for k in range(K)]
        return GRID_SPACING * np.asarray(means, dtype=np.float64)
    raise ConfigError(f"unknown geometry {geometry!r}; expected one of {GEOMETRIES}")


def generate_toy_dataset(K: int, n_per_class: int, geometry: str,
                         noise_scale: float, seed: int) -> LabeledDataset:
    """Isotropic Gaussian blobs around the geometry's class means."""
    if K < 2:
        raise DomainError(f"K must be >= 2, got {K}")
    if n_per_class < 2:
        raise DomainError(f"n_per_class must be >= 2, got {n_per_class}")
    if noise_scale <= 0.0:
        raise DomainError(f"noise_scale must be > 0, got {noise_scale}")
    means = class_means(K, geometry)
    rng = np.random.default_rng(seed)
    points = np.concatenate([
        means[c] + noise_scale * rng.standard_normal((n_per_class, 2))
        for c in range(K)
    ])
    labels = np.repeat(np.arange(K, dtype=np.int64), n_per_class)
    return LabeledDataset(points=points, labels=labels, K=K)
