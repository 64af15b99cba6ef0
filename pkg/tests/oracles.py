"""Slow, obviously-correct reference implementations used as test oracles."""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np


def dark_channel_bruteforce(image: np.ndarray, patch: int) -> np.ndarray:
    """Minimum over each pixel's clipped window; with edge replication the
    padded values are copies of in-window pixels, so clipping is equivalent."""
    h, w, _ = image.shape
    r = patch // 2
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            out[i, j] = image[max(i - r, 0) : i + r + 1, max(j - r, 0) : j + r + 1, :].min()
    return out


def otsu_bruteforce(gray: np.ndarray, bins: int = 256) -> float:
    """Try every split point; score w0*w1*(mu0-mu1)^2 in exact rationals."""
    values = [float(v) for v in np.asarray(gray).ravel()]
    if all(v == values[0] for v in values):
        return values[0]
    labels = [min(int(math.floor(min(max(v, 0.0), 1.0) * bins)), bins - 1) for v in values]
    n = len(labels)
    best_k, best = None, None
    for k in range(1, bins):
        low = [b for b in labels if b < k]
        high = [b for b in labels if b >= k]
        if not low or not high:
            continue
        w0, w1 = Fraction(len(low), n), Fraction(len(high), n)
        mu0, mu1 = Fraction(sum(low), len(low)), Fraction(sum(high), len(high))
        score = w0 * w1 * (mu0 - mu1) ** 2
        if best is None or score > best:
            best_k, best = k, score
    if best_k is None:
        return labels[0] / bins
    return best_k / bins


def airlight_dark_channel_bruteforce(image: np.ndarray, patch: int = 15, top_fraction: float = 0.001) -> np.ndarray:
    h, w, _ = image.shape
    dc = dark_channel_bruteforce(image, patch)
    values = sorted((dc[idx // w, idx % w] for idx in range(h * w)), reverse=True)
    n = max(1, math.ceil(top_fraction * h * w))
    cutoff = values[n - 1]
    best_idx, best_val = None, None
    for idx in range(h * w):
        if dc[idx // w, idx % w] < cutoff:
            continue
        p = image[idx // w, idx % w]
        val = sum(float(c) for c in p) / 3
        if best_val is None or val > best_val:
            best_idx, best_val = idx, val
    return image[best_idx // w, best_idx % w].copy()


def gradient_bruteforce(gray: np.ndarray) -> np.ndarray:
    h, w = gray.shape
    out = np.empty((h, w))
    for i in range(h):
        for j in range(w):
            gx = (gray[i, min(j + 1, w - 1)] - gray[i, max(j - 1, 0)]) / 2.0
            gy = (gray[min(i + 1, h - 1), j] - gray[max(i - 1, 0), j]) / 2.0
            out[i, j] = math.hypot(gx, gy)
    return out


def mean_squared_bruteforce(a, b) -> float:
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    return sum((float(p) - float(q)) ** 2 for p, q in zip(a, b)) / a.size
