"""Blind defogging quality indicators.

``bave_indicators`` reports the rate of new visible edges ``e``, the
geometric-mean gradient ratio ``r_bar`` over visible edges of the restored
image, and the fraction ``delta`` of newly saturated pixels. Visibility is a
fixed gradient-magnitude threshold rather than an adaptive visibility level.
``fog_density_proxy`` is the mean dark channel and stands in for a full
fog-density model.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import fogmodel

EDGE_THRESHOLD = 0.05
GRADIENT_FLOOR = 1e-6


@dataclass(frozen=True)
class BaveReport:
    e: float
    r_bar: float
    delta: float


def to_gray(image: np.ndarray) -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    return image.mean(axis=2) if image.ndim == 3 else image


def gradient_magnitude(gray: np.ndarray) -> np.ndarray:
    """Central-difference gradient magnitude with edge-replicated borders."""
    p = np.pad(np.asarray(gray, dtype=np.float64), 1, mode="edge")
    gx = (p[1:-1, 2:] - p[1:-1, :-2]) / 2.0
    gy = (p[2:, 1:-1] - p[:-2, 1:-1]) / 2.0
    return np.hypot(gx, gy)


def visible_edges(gray: np.ndarray, threshold: float = EDGE_THRESHOLD) -> np.ndarray:
    return gradient_magnitude(gray) >= threshold


def saturated(image: np.ndarray) -> np.ndarray:
    """Pixels with any channel at or beyond black/white."""
    image = np.asarray(image, dtype=np.float64)
    sat = (image <= 0.0) | (image >= 1.0)
    return sat.any(axis=2) if image.ndim == 3 else sat


def bave_indicators(before: np.ndarray, after: np.ndarray, threshold: float = EDGE_THRESHOLD) -> BaveReport:
    """Compare a foggy image with its restoration (both unit range, unclamped ok)."""
    before = np.asarray(before, dtype=np.float64)
    after = np.asarray(after, dtype=np.float64)
    if before.shape != after.shape:
        raise ValueError(f"dimension mismatch: {before.shape} vs {after.shape}")
    g_before = gradient_magnitude(to_gray(before))
    g_after = gradient_magnitude(to_gray(after))
    vis_before = g_before >= threshold
    vis_after = g_after >= threshold
    n_before = int(vis_before.sum())
    n_after = int(vis_after.sum())
    e = (n_after - n_before) / max(n_before, 1)
    if n_after:
        ratios = np.maximum(g_after[vis_after], GRADIENT_FLOOR) / np.maximum(g_before[vis_after], GRADIENT_FLOOR)
        r_bar = float(np.exp(np.mean(np.log(ratios))))
    else:
        r_bar = 1.0
    newly = saturated(after) & ~saturated(before)
    delta = float(newly.sum()) / newly.size
    return BaveReport(float(e), r_bar, delta)


def fog_density_proxy(image: np.ndarray, patch: int = fogmodel.DARK_CHANNEL_PATCH) -> float:
    """Mean dark channel; larger means foggier."""
    return float(fogmodel.dark_channel(image, patch).mean())


def luminance_weight_map(image: np.ndarray) -> np.ndarray:
    """Per-pixel spread of RGB about the pixel's mean luminance, scaled to max 1.

    Grey pixels weigh zero; saturated colours weigh most.
    """
    r, g, b = np.moveaxis(np.asarray(image, dtype=np.float64), 2, 0)
    # pairwise form of the channel variance: exactly zero for grey pixels,
    # where subtracting a rounded mean would leave noise for the max-scaling
    w = np.sqrt(((r - g) ** 2 + (g - b) ** 2 + (b - r) ** 2) / 9.0)
    peak = w.max()
    return w / peak if peak > 0 else w
