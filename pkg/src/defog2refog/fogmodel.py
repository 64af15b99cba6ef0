"""Atmospheric scattering physics: fog synthesis, transmission, sky and airlight.

Images are ``H x W x 3`` float arrays in ``[0, 1]`` unless noted otherwise.
Every function here is pure.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction

import numpy as np
from scipy import ndimage

T_MIN = 0.01
SKY_ROW_FRACTION = 0.4
SKY_MIN_FRACTION = 0.02
DARK_CHANNEL_PATCH = 15
AIRLIGHT_TOP_FRACTION = 0.001
OTSU_BINS = 256


class InsufficientSkyError(ValueError):
    """Raised when a sky mask is too small to estimate the airlight from."""


@dataclass(frozen=True)
class SkyMask:
    mask: np.ndarray

    @property
    def sky_fraction(self) -> float:
        return float(np.count_nonzero(self.mask)) / self.mask.size


def _check_image(image: np.ndarray, name: str = "image") -> np.ndarray:
    image = np.asarray(image, dtype=np.float64)
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError(f"{name} must be H x W x 3, got shape {image.shape}")
    return image


def transmission_from_depth(depth: np.ndarray, beta: float, t_min: float = T_MIN) -> np.ndarray:
    """Beer-Lambert transmission ``exp(-beta * d)`` floored at ``t_min``."""
    if beta < 0:
        raise ValueError(f"scattering coefficient must be >= 0, got {beta}")
    depth = np.asarray(depth, dtype=np.float64)
    if np.any(depth < 0):
        raise ValueError("depth values must be >= 0")
    return np.maximum(np.exp(-beta * depth), t_min)


def synthesize_fog(clear, t, a, channel_axis: int = -1):
    """Apply ``I = J*T + A*(1 - T)`` and clamp to ``[0, 1]``.

    Works on numpy arrays and torch tensors alike. ``t`` is broadcast over
    the channel axis when it has one dimension fewer than ``clear``; ``a``
    must already broadcast against ``clear`` (a length-3 vector does for
    channels-last input).
    """
    if isinstance(clear, np.ndarray) or np.isscalar(clear):
        clear = np.asarray(clear, dtype=np.float64)
        t = np.asarray(t, dtype=np.float64)
        a = np.asarray(a, dtype=np.float64)
        if t.ndim == clear.ndim - 1:
            t = np.expand_dims(t, channel_axis)
        if np.broadcast_shapes(clear.shape, t.shape) != clear.shape:
            raise ValueError(f"transmission shape {t.shape} does not match image {clear.shape}")
        return np.clip(clear * t + a * (1.0 - t), 0.0, 1.0)
    if t.ndim == clear.ndim - 1:
        t = t.unsqueeze(channel_axis)
    return (clear * t + a * (1.0 - t)).clamp(0.0, 1.0)


def invert_fog(foggy: np.ndarray, t: np.ndarray, a) -> np.ndarray:
    """Recover ``J = (I - A*(1 - T)) / T``, clamped to ``[0, 1]``."""
    foggy = _check_image(foggy, "foggy")
    t = np.asarray(t, dtype=np.float64)
    if t.shape != foggy.shape[:2]:
        raise ValueError(f"transmission shape {t.shape} does not match image {foggy.shape}")
    a = np.asarray(a, dtype=np.float64)
    t3 = t[..., None]
    return np.clip((foggy - a * (1.0 - t3)) / t3, 0.0, 1.0)


def dark_channel(image: np.ndarray, patch: int) -> np.ndarray:
    """Per-pixel minimum over RGB and a ``patch x patch`` neighbourhood.

    Borders are edge-replicated.
    """
    if patch < 1 or patch % 2 == 0:
        raise ValueError(f"patch must be a positive odd integer, got {patch}")
    image = _check_image(image)
    return ndimage.minimum_filter(image.min(axis=2), size=patch, mode="nearest")


def _otsu_bins(gray: np.ndarray) -> np.ndarray:
    return np.minimum(np.floor(np.clip(gray, 0.0, 1.0) * OTSU_BINS), OTSU_BINS - 1).astype(np.int64)


def otsu_threshold(gray: np.ndarray) -> float:
    """Otsu threshold of a ``[0, 1]`` map over a 256-bin histogram.

    Pixel ``g`` falls in bin ``floor(256 g)``; candidate ``k`` puts bins
    ``>= k`` in the foreground and maps to the threshold ``k / 256``, so
    ``gray >= threshold`` reproduces the optimal split exactly. The
    between-class variance is compared in exact rational arithmetic and
    ties go to the smallest ``k``. A constant map returns its own value; a
    map confined to one bin returns that bin's lower edge.
    """
    gray = np.asarray(gray, dtype=np.float64)
    if gray.size == 0:
        raise ValueError("otsu_threshold needs a nonempty map")
    if np.all(gray == gray.flat[0]):
        return float(gray.flat[0])

    bins = _otsu_bins(gray)
    if np.all(bins == bins.flat[0]):
        # one occupied bin: no split exists, select everything as for a constant map
        return int(bins.flat[0]) / OTSU_BINS
    hist = np.bincount(bins.ravel(), minlength=OTSU_BINS)
    total_n = int(gray.size)
    total_s = int(np.dot(hist, np.arange(OTSU_BINS)))
    best_k, best = 0, Fraction(0)
    n0 = s0 = 0
    for k in range(OTSU_BINS):
        if k > 0:
            n0 += int(hist[k - 1])
            s0 += (k - 1) * int(hist[k - 1])
        n1, s1 = total_n - n0, total_s - s0
        if n0 == 0 or n1 == 0:
            continue
        # n0*n1*(mu0 - mu1)^2, up to the constant 1/N^2
        score = Fraction((n0 * s1 - n1 * s0) ** 2, n0 * n1)
        if score > best:
            best_k, best = k, score
    return best_k / OTSU_BINS


def segment_sky(image: np.ndarray, row_fraction: float = SKY_ROW_FRACTION) -> SkyMask:
    """Bright (Otsu) regions connected to the top ``row_fraction`` of rows.

    A bright connected component counts as sky when any of its pixels lies
    in the top band; bright blobs confined to the lower image are dropped.
    """
    image = _check_image(image)
    gray = image.mean(axis=2)
    bright = gray >= otsu_threshold(gray)
    band_rows = max(1, int(math.ceil(row_fraction * gray.shape[0])))
    labels, _ = ndimage.label(bright)
    keep = np.unique(labels[:band_rows])
    keep = keep[keep != 0]
    return SkyMask(np.isin(labels, keep))


def estimate_airlight_sky(
    image: np.ndarray,
    mask: SkyMask,
    f_min: float = SKY_MIN_FRACTION,
    scalar: bool = False,
) -> np.ndarray:
    """Mean colour of the sky region.

    With ``scalar=True`` the three channel means collapse to their average.
    """
    image = _check_image(image)
    if mask.mask.shape != image.shape[:2]:
        raise ValueError("sky mask does not match image shape")
    if mask.sky_fraction < f_min or not mask.mask.any():
        raise InsufficientSkyError(
            f"sky fraction {mask.sky_fraction:.4f} below minimum {f_min}"
        )
    a = image[mask.mask].mean(axis=0)
    if scalar:
        a = np.full(3, a.mean())
    return np.clip(a, 0.0, 1.0)


def estimate_airlight_dark_channel(
    image: np.ndarray,
    patch: int = DARK_CHANNEL_PATCH,
    top_fraction: float = AIRLIGHT_TOP_FRACTION,
) -> np.ndarray:
    """Brightest input pixel among the top dark-channel pixels.

    Candidates are the ``ceil(top_fraction * N)`` (at least one) pixels of
    largest dark channel, widened to every pixel tied with the last of
    them. The candidate with the largest RGB mean wins; ties go to the
    smaller flat index.
    """
    image = _check_image(image)
    dc = dark_channel(image, patch).ravel()
    n = max(1, int(math.ceil(top_fraction * dc.size)))
    cutoff = np.sort(dc)[::-1][n - 1]
    candidates = np.flatnonzero(dc >= cutoff)
    pixels = image.reshape(-1, 3)
    best = candidates[np.argmax(pixels[candidates].mean(axis=1))]
    return pixels[best].copy()


def estimate_airlight(
    image: np.ndarray,
    f_min: float = SKY_MIN_FRACTION,
    scalar: bool = False,
    row_fraction: float = SKY_ROW_FRACTION,
) -> tuple[np.ndarray, str]:
    """Sky-prior airlight with dark-channel fallback.

    Returns the airlight and the estimator used (``"sky"`` or ``"dark_channel"``).
    """
    mask = segment_sky(image, row_fraction)
    try:
        return estimate_airlight_sky(image, mask, f_min=f_min, scalar=scalar), "sky"
    except InsufficientSkyError:
        a = estimate_airlight_dark_channel(image)
        if scalar:
            a = np.full(3, a.mean())
        return a, "dark_channel"
