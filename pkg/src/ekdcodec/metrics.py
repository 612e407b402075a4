import math

import numpy as np

from .exceptions import ContractViolation
from .grid import PixelField

__all__ = ["mse", "psnr"]

PEAK = 255.0


def mse(u: PixelField, v: PixelField) -> float:
    """
    Mean squared difference over every pixel and channel.
    """
    if u.values.shape != v.values.shape:
        raise ContractViolation(
            f"Cannot compare a {u.values.shape} image with a {v.values.shape} image"
        )
    return float(np.mean((u.values - v.values) ** 2))


def psnr(u: PixelField, v: PixelField) -> float:
    error = mse(u, v)
    if error == 0:
        return math.inf
    return 10 * math.log10(PEAK**2 / error)
