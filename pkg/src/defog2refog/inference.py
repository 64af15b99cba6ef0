"""Apply a trained Defog-Net to unit-range images of any size."""

from __future__ import annotations

import numpy as np
import torch
import torch.nn as nn

from .data import resize_bilinear
from .networks import signed_to_unit_hwc, unit_hwc_to_signed


def defog_image(G: nn.Module, image: np.ndarray, image_size: int) -> np.ndarray:
    """Resize to the model size, defog, and resize back to the input size."""
    h, w = image.shape[:2]
    x = unit_hwc_to_signed(resize_bilinear(image, image_size), dtype=next(G.parameters()).dtype)
    with torch.no_grad():
        out = signed_to_unit_hwc(G(x))[0]
    return np.clip(resize_bilinear(out, (h, w)), 0.0, 1.0)
