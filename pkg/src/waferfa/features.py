"""Spatial defect statistics and the 56-dim feature vector.

The feature vector doubles as the retrieval embedding and the classifier
input: [radial histogram (16), angular histogram (36), defect density,
largest-component fraction, linearity, edge-band density]. Every component
is a fraction in [0, 1], so the vector needs no task-specific scaling before
cosine similarity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .wafermap import WaferMap, die_angle, normalized_radius, wafer_mask

RADIAL_BINS = 16
ANGULAR_BINS = 36
FEATURE_DIM = RADIAL_BINS + ANGULAR_BINS + 4
EDGE_BAND_RADIUS = 0.88

_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


@dataclass(frozen=True)
class SpatialStats:
    defect_density: float
    radial_hist: tuple[float, ...]
    angular_hist: tuple[float, ...]
    largest_component_fraction: float
    linearity: float
    edge_band_density: float

    def to_dict(self) -> dict:
        return {
            "defect_density": self.defect_density,
            "radial_hist": list(self.radial_hist),
            "angular_hist": list(self.angular_hist),
            "largest_component_fraction": self.largest_component_fraction,
            "linearity": self.linearity,
            "edge_band_density": self.edge_band_density,
        }


def _binned_fractions(fails: np.ndarray, mask: np.ndarray, bin_index: np.ndarray, n_bins: int) -> np.ndarray:
    die_counts = np.bincount(bin_index[mask], minlength=n_bins).astype(float)
    fail_counts = np.bincount(bin_index[fails], minlength=n_bins).astype(float)
    with np.errstate(divide="ignore", invalid="ignore"):
        fractions = np.where(die_counts > 0, fail_counts / np.maximum(die_counts, 1), 0.0)
    return fractions[:n_bins]


def spatial_stats(wmap: WaferMap) -> SpatialStats:
    mask = wafer_mask()
    fails = wmap.fail_mask
    n_fail = int(fails.sum())
    density = n_fail / mask.sum()

    radial_idx = np.minimum((normalized_radius() * RADIAL_BINS).astype(int), RADIAL_BINS - 1)
    radial = _binned_fractions(fails, mask, radial_idx, RADIAL_BINS)

    angular_idx = np.minimum((die_angle() / (2 * np.pi) * ANGULAR_BINS).astype(int), ANGULAR_BINS - 1)
    angular = _binned_fractions(fails, mask, angular_idx, ANGULAR_BINS)

    if n_fail == 0:
        largest = 0.0
        linearity = 0.0
    else:
        labels, n_components = ndimage.label(fails, structure=_EIGHT_CONNECTED)
        sizes = np.bincount(labels.ravel())[1:]
        largest = float(sizes.max()) / n_fail
        linearity = _linearity(np.argwhere(fails))

    edge = normalized_radius() > EDGE_BAND_RADIUS
    edge_dies = np.logical_and(edge, mask)
    edge_density = float(np.logical_and(fails, edge_dies).sum()) / edge_dies.sum()

    return SpatialStats(
        defect_density=float(density),
        radial_hist=tuple(float(x) for x in radial),
        angular_hist=tuple(float(x) for x in angular),
        largest_component_fraction=float(largest),
        linearity=float(linearity),
        edge_band_density=edge_density,
    )


def _linearity(coords: np.ndarray) -> float:
    """1 - (perpendicular spread / along-axis spread) from a principal-axis fit."""
    if len(coords) < 2:
        return 0.0
    centered = coords.astype(float) - coords.mean(axis=0)
    cov = centered.T @ centered / len(coords)
    eigvals = np.linalg.eigvalsh(cov)  # ascending
    if eigvals[1] <= 0:
        return 0.0
    ratio = np.sqrt(max(eigvals[0], 0.0) / eigvals[1])
    return float(np.clip(1.0 - ratio, 0.0, 1.0))


def extract_features(wmap: WaferMap) -> np.ndarray:
    stats = spatial_stats(wmap)
    return features_from_stats(stats)


def features_from_stats(stats: SpatialStats) -> np.ndarray:
    vector = np.concatenate(
        [
            np.asarray(stats.radial_hist, dtype=np.float64),
            np.asarray(stats.angular_hist, dtype=np.float64),
            [
                stats.defect_density,
                stats.largest_component_fraction,
                stats.linearity,
                stats.edge_band_density,
            ],
        ]
    )
    assert vector.shape == (FEATURE_DIM,)
    return vector
