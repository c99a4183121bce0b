"""Wafer bin map substrate: a fixed 256x256 die grid with an inscribed wafer.

Grid cells hold OFF_WAFER (0) outside the inscribed circle and PASS (1) or
FAIL (2) inside it. Die (i, j) sits at center (i + 0.5, j + 0.5); the wafer
circle has center (128, 128) and radius 128, so a die is on-wafer when its
center lies within the circle.

Raster image form: 8-bit grayscale PNG, one pixel per die, levels
OFF_WAFER=0, PASS=128, FAIL=255.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

GRID_SIZE = 256
OFF_WAFER, PASS, FAIL = 0, 1, 2
_CENTER = GRID_SIZE / 2.0
_RADIUS = GRID_SIZE / 2.0
_GRAY_LEVELS = {OFF_WAFER: 0, PASS: 128, FAIL: 255}


class WaferMapError(Exception):
    pass


def _build_geometry():
    idx = np.arange(GRID_SIZE) + 0.5
    dy = idx[:, None] - _CENTER
    dx = idx[None, :] - _CENTER
    radius = np.sqrt(dy**2 + dx**2)
    angle = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    mask = radius <= _RADIUS
    return mask, radius / _RADIUS, angle


_MASK, _NORM_RADIUS, _ANGLE = _build_geometry()


def wafer_mask() -> np.ndarray:
    """Boolean (GRID_SIZE, GRID_SIZE) array, True for on-wafer dies."""
    return _MASK


def normalized_radius() -> np.ndarray:
    return _NORM_RADIUS


def die_angle() -> np.ndarray:
    return _ANGLE


class WaferMap:
    """Immutable-by-convention wrapper over the die grid array."""

    __slots__ = ("grid",)

    def __init__(self, grid: np.ndarray) -> None:
        grid = np.asarray(grid, dtype=np.uint8)
        if grid.shape != (GRID_SIZE, GRID_SIZE):
            raise WaferMapError(f"grid must be {GRID_SIZE}x{GRID_SIZE}, got {grid.shape}")
        if grid.max(initial=0) > FAIL:
            raise WaferMapError("grid values must be OFF_WAFER/PASS/FAIL")
        if (grid[~_MASK] != OFF_WAFER).any():
            raise WaferMapError("cells outside the inscribed circle must be OFF_WAFER")
        if (grid[_MASK] == OFF_WAFER).any():
            raise WaferMapError("cells inside the inscribed circle must be PASS or FAIL")
        self.grid = grid

    @classmethod
    def blank(cls) -> "WaferMap":
        grid = np.full((GRID_SIZE, GRID_SIZE), OFF_WAFER, dtype=np.uint8)
        grid[_MASK] = PASS
        return cls(grid)

    @classmethod
    def from_fail_mask(cls, fail: np.ndarray) -> "WaferMap":
        grid = np.full((GRID_SIZE, GRID_SIZE), OFF_WAFER, dtype=np.uint8)
        grid[_MASK] = PASS
        grid[np.logical_and(fail, _MASK)] = FAIL
        return cls(grid)

    @property
    def fail_mask(self) -> np.ndarray:
        return self.grid == FAIL

    @property
    def on_wafer_count(self) -> int:
        return int(_MASK.sum())

    @property
    def fail_count(self) -> int:
        return int(self.fail_mask.sum())

    @property
    def fail_fraction(self) -> float:
        return self.fail_count / self.on_wafer_count

    def fail_coords(self) -> np.ndarray:
        """(n, 2) array of (row, col) die centers offsets are NOT applied."""
        return np.argwhere(self.fail_mask)

    def __eq__(self, other) -> bool:
        return isinstance(other, WaferMap) and np.array_equal(self.grid, other.grid)

    def __hash__(self):  # identity over content is intentional here
        return hash(self.grid.tobytes())

    def save_png(self, path: str | Path) -> None:
        pixels = np.zeros_like(self.grid)
        for level, gray in _GRAY_LEVELS.items():
            pixels[self.grid == level] = gray
        Image.fromarray(pixels, mode="L").save(path, format="PNG")

    @classmethod
    def load_png_bytes(cls, data: bytes) -> "WaferMap":
        import io

        return cls.load_png(io.BytesIO(data))

    @classmethod
    def load_png(cls, path) -> "WaferMap":
        with Image.open(path) as img:
            pixels = np.asarray(img.convert("L"))
        if pixels.shape != (GRID_SIZE, GRID_SIZE):
            raise WaferMapError(f"image must be {GRID_SIZE}x{GRID_SIZE}, got {pixels.shape}")
        grid = np.full(pixels.shape, OFF_WAFER, dtype=np.uint8)
        # nearest of the three documented gray levels
        grid[pixels >= 64] = PASS
        grid[pixels >= 192] = FAIL
        return cls(grid)
