"""Feature-space foreground mask.

Keeps the 3x3 block of the 7x7 grid with the largest total response and
zeroes everything outside it.  Ties break toward the smallest (row, col)
in row-major order.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .features import GRID, FeatureGrid

WINDOW = 3
N_POSITIONS = GRID - WINDOW + 1  # 5 per axis, 25 candidate windows


@dataclass(frozen=True)
class MaskWindow:
    row: int
    col: int

    def __post_init__(self) -> None:
        if not (0 <= self.row < N_POSITIONS and 0 <= self.col < N_POSITIONS):
            raise ValueError(f"window ({self.row}, {self.col}) outside the grid")


def select_window(response: np.ndarray) -> MaskWindow:
    """Argmax over the 25 window sums, first (row-major) winner on ties."""
    r = np.asarray(response, dtype=np.float64)
    if r.shape != (GRID, GRID):
        raise ValueError(f"response must be {GRID}x{GRID}, got {r.shape}")
    if not np.isfinite(r).all() or (r < 0).any():
        raise ValueError("response entries must be finite and >= 0")
    windows = np.lib.stride_tricks.sliding_window_view(r, (WINDOW, WINDOW))
    sums = windows.sum(axis=(2, 3))
    flat = int(np.argmax(sums))  # first occurrence = row-major tie-break
    return MaskWindow(row=flat // N_POSITIONS, col=flat % N_POSITIONS)


def apply_mask(features: FeatureGrid, window: MaskWindow) -> FeatureGrid:
    """Zero every cell outside the 3x3 window; values inside are untouched."""
    keep = np.zeros((GRID, GRID), dtype=bool)
    keep[window.row : window.row + WINDOW, window.col : window.col + WINDOW] = True
    data = np.where(keep[None, :, :, None], features.data, 0.0)
    response = np.where(keep, features.response, 0.0)
    return FeatureGrid(data=data, response=response)


def mask_pipeline(features: FeatureGrid) -> tuple[FeatureGrid, MaskWindow]:
    """select_window on the response, then apply_mask; window returned for audit."""
    window = select_window(features.response)
    return apply_mask(features, window), window
