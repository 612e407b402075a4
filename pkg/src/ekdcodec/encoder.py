"""
Mask selection and value coding.

Three ways to choose the stored pixels: zero crossings of a smoothed
Laplacian (edges), Floyd-Steinberg dithering of the Laplacian magnitude, or
simply its largest values. The stored grey/colour values are then taken in
row-major mask order, optionally thinned to every `d`-th one, and uniformly
quantized.
"""

import logging
import math
from dataclasses import dataclass

import numpy as np
import scipy.ndimage
import scipy.optimize

from .container import CompressedImage, Method, chain_indices
from .exceptions import ContractViolation, DegenerateSignal, EmptyMask
from .grid import InpaintMask, PixelField, neumann_laplacian

logger = logging.getLogger(__name__)

__all__ = [
    "EncodeResult",
    "EncoderParams",
    "corner_mask",
    "decode_values",
    "dequantize",
    "dither_mask",
    "encode_image",
    "laplacian_magnitude",
    "marr_hildreth_mask",
    "quantize",
    "stored_field",
    "subsample_chain",
    "threshold_mask",
    "upsample_chain",
]

WHITE = 255.0
DITHER_THRESHOLD = WHITE / 2

MASK_METHODS = (Method.EDGE, Method.DITHER, Method.THRESHOLD)


@dataclass(frozen=True)
class EncoderParams:
    method: Method = Method.DITHER
    density: float = 0.10
    sigma: float = 1.0
    grad_threshold: float = 8.0
    quant_bits: int = 8
    subsample_d: int = 1
    # Store the four corners instead of failing when no mask can be found.
    corner_fallback: bool = False

    def __post_init__(self):
        problems = []
        if self.method not in MASK_METHODS:
            problems.append(f"method must be one of edge, dither, threshold, got {self.method.name.lower()}")
        if not 0 < self.density <= 1:
            problems.append(f"density must be in (0, 1], got {self.density}")
        if not self.sigma >= 0:
            problems.append(f"sigma must be >= 0, got {self.sigma}")
        if not self.grad_threshold >= 0:
            problems.append(f"grad_threshold must be >= 0, got {self.grad_threshold}")
        if not 1 <= self.quant_bits <= 8:
            problems.append(f"quant_bits must be in 1..8, got {self.quant_bits}")
        if not 1 <= self.subsample_d <= 0xFFFF:
            problems.append(f"subsample_d must be in 1..65535, got {self.subsample_d}")
        if problems:
            raise ContractViolation("Invalid encoder params: " + "; ".join(problems))


def laplacian_magnitude(image: PixelField) -> PixelField:
    """
    `|sum_k Laplacian(f_k)|` with Neumann mirroring, one channel.
    """
    total = sum(neumann_laplacian(image.channel(k), image.spacing) for k in range(image.channels))
    return PixelField.from_array(np.abs(total), image.spacing)


def _check_density(p: float):
    if not 0 < p <= 1:
        raise ContractViolation(f"Density must be in (0, 1], got {p}")


def threshold_mask(magnitude: PixelField, p: float) -> InpaintMask:
    """
    Exactly `floor(p*N)` pixels with the largest magnitude. Ties go to the
    smaller row-major index.
    """
    _check_density(p)
    plane = magnitude.plane()
    k = math.floor(p * plane.size + 1e-9)
    order = np.argsort(-plane.ravel(), kind="stable")
    return InpaintMask.from_indices(plane.shape[1], plane.shape[0], order[:k])


def marr_hildreth_mask(image: PixelField, params: EncoderParams) -> InpaintMask:
    """
    Both pixels of every sign change of the smoothed Laplacian (against the
    right or the bottom neighbour) where the gradient is strong enough.
    """
    channels = [image.channel(k) for k in range(image.channels)]
    if params.sigma > 0:
        channels = [scipy.ndimage.gaussian_filter(c, params.sigma, mode="reflect") for c in channels]

    laplacian = sum(neumann_laplacian(c, image.spacing) for c in channels)
    squared = np.zeros(laplacian.shape)
    for c in channels:
        for derivative in np.gradient(c) if min(c.shape) > 1 else _gradient_1d(c):
            squared += derivative**2
    strong = np.sqrt(squared) >= params.grad_threshold

    bits = np.zeros(laplacian.shape, dtype=bool)
    horizontal = laplacian[:, :-1] * laplacian[:, 1:] < 0
    horizontal &= strong[:, :-1] | strong[:, 1:]
    bits[:, :-1] |= horizontal
    bits[:, 1:] |= horizontal
    vertical = laplacian[:-1, :] * laplacian[1:, :] < 0
    vertical &= strong[:-1, :] | strong[1:, :]
    bits[:-1, :] |= vertical
    bits[1:, :] |= vertical
    logger.debug("Edge mask keeps %s of %s pixels", np.count_nonzero(bits), bits.size)
    return InpaintMask(bits)


def _gradient_1d(c: np.ndarray) -> list[np.ndarray]:
    # np.gradient needs at least two samples along every axis.
    height, width = c.shape
    if height == 1 and width == 1:
        return [np.zeros_like(c)]
    if height == 1:
        return [np.gradient(c[0])[np.newaxis, :]]
    return [np.gradient(c[:, 0])[:, np.newaxis]]


def _dither_scale(plane: np.ndarray, p: float) -> float:
    """
    Scale `s` with `mean(clip(s * plane, 0, 255)) = p * 255`.
    """
    target = p * WHITE

    def excess(s: float) -> float:
        return float(np.minimum(s * plane, WHITE).mean()) - target

    low = target / plane.mean()
    high = WHITE / plane[plane > 0].min()
    if excess(high) <= 0:
        # Too few non-zero pixels to reach the target even fully saturated.
        return high
    if excess(low) >= 0:
        return low
    return scipy.optimize.brentq(excess, low, high, xtol=1e-12 * high)


def _floyd_steinberg(plane: np.ndarray) -> np.ndarray:
    height, width = plane.shape
    rows = plane.tolist()
    out = np.zeros((height, width), dtype=bool)
    for y in range(height):
        row = rows[y]
        below = rows[y + 1] if y + 1 < height else None
        for x in range(width):
            old = row[x]
            white = old >= DITHER_THRESHOLD
            out[y, x] = white
            error = old - (WHITE if white else 0.0)
            if x + 1 < width:
                row[x + 1] += error * 7 / 16
            if below is not None:
                if x > 0:
                    below[x - 1] += error * 3 / 16
                below[x] += error * 5 / 16
                if x + 1 < width:
                    below[x + 1] += error * 1 / 16
    return out


def dither_mask(magnitude: PixelField, p: float) -> InpaintMask:
    """
    Scale the magnitude so its clamped mean is `p * 255`, then dither it to
    black and white in raster order. White pixels are stored.
    """
    _check_density(p)
    plane = magnitude.plane()
    if not np.any(plane > 0):
        raise DegenerateSignal("The Laplacian magnitude is zero everywhere; there is nothing to dither")

    scale = _dither_scale(plane, p)
    scaled = np.clip(scale * plane, 0.0, WHITE)
    bits = _floyd_steinberg(scaled)
    logger.debug("Dither scale %.6g gives density %.4f (asked for %.4f)", scale, bits.mean(), p)
    return InpaintMask(bits)


def corner_mask(width: int, height: int) -> InpaintMask:
    return InpaintMask.from_indices(
        width,
        height,
        sorted({0, width - 1, (height - 1) * width, height * width - 1}),
    )


def _levels(bits: int) -> int:
    if not 1 <= bits <= 8:
        raise ContractViolation(f"quant_bits must be in 1..8, got {bits}")
    return 2**bits


def quantize(values, bits: int) -> np.ndarray:
    """
    Uniform quantizer with `2^bits` cells of width `255 / 2^bits` over
    [0, 255]. Values outside that range are clamped.
    """
    levels = _levels(bits)
    clamped = np.clip(np.asarray(values, dtype=np.float64), 0.0, WHITE)
    q = np.floor(clamped * levels / WHITE)
    return np.minimum(q, levels - 1).astype(np.uint8)


def dequantize(levels, bits: int) -> np.ndarray:
    """
    The midpoint of every cell.
    """
    width = WHITE / _levels(bits)
    return (np.asarray(levels, dtype=np.float64) + 0.5) * width


def subsample_chain(mask: InpaintMask, values: np.ndarray, d: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Walk the stored pixels in row-major order and keep every `d`-th value,
    always including the first and the last. `values` holds one value per
    stored pixel along its last axis.
    """
    values = np.asarray(values)
    if values.shape[-1] != mask.stored_count:
        raise ContractViolation(
            f"Got {values.shape[-1]} values for {mask.stored_count} stored pixels"
        )
    indices = chain_indices(mask.stored_count, d)
    return indices, values[..., indices]


def upsample_chain(mask: InpaintMask, kept: np.ndarray, d: int) -> np.ndarray:
    """
    Linear interpolation of the skipped values along the row-major walk.
    """
    kept = np.asarray(kept, dtype=np.float64)
    indices = chain_indices(mask.stored_count, d)
    if kept.shape[-1] != len(indices):
        raise ContractViolation(
            f"Got {kept.shape[-1]} kept values, d={d} over {mask.stored_count} stored pixels keeps {len(indices)}"
        )
    if d == 1:
        return kept
    positions = np.arange(mask.stored_count)
    if kept.ndim == 1:
        return np.interp(positions, indices, kept)
    return np.stack([np.interp(positions, indices, row) for row in kept])


@dataclass(frozen=True)
class EncodeResult:
    compressed: CompressedImage
    density: float
    stored_count: int
    clamped_count: int
    fallback_used: bool


def _select_mask(image: PixelField, params: EncoderParams) -> InpaintMask:
    if params.method is Method.EDGE:
        mask = marr_hildreth_mask(image, params)
    elif params.method is Method.DITHER:
        mask = dither_mask(laplacian_magnitude(image), params.density)
    else:
        mask = threshold_mask(laplacian_magnitude(image), params.density)
    if mask.stored_count == 0:
        raise EmptyMask(f"The {params.method.name.lower()} mask stores no pixels")
    return mask


def encode_image(image: PixelField, params: EncoderParams = EncoderParams()) -> EncodeResult:
    method = params.method
    fallback_used = False
    try:
        mask = _select_mask(image, params)
    except (DegenerateSignal, EmptyMask) as e:
        if not params.corner_fallback:
            raise
        logger.warning("%s; storing the four corners instead", e)
        mask = corner_mask(image.width, image.height)
        method = Method.CORNERS
        fallback_used = True

    values = image.values[:, mask.bits]
    clamped_count = int(np.count_nonzero((values < 0) | (values > WHITE)))
    if clamped_count:
        logger.info("Clamped %s stored values to [0, 255]", clamped_count)
    _, kept = subsample_chain(mask, values, params.subsample_d)

    compressed = CompressedImage(
        mask=mask,
        values=quantize(kept, params.quant_bits),
        quant_bits=params.quant_bits,
        subsample_d=params.subsample_d,
        method=method,
    )
    logger.info("Stored %s of %s pixels (%s)", mask.stored_count, mask.bits.size, method.name.lower())
    return EncodeResult(
        compressed=compressed,
        density=mask.density(),
        stored_count=mask.stored_count,
        clamped_count=clamped_count,
        fallback_used=fallback_used,
    )


def decode_values(image: CompressedImage) -> np.ndarray:
    """
    One dequantized value per stored pixel and channel, shape `(channels, stored)`.
    """
    return upsample_chain(image.mask, dequantize(image.values, image.quant_bits), image.subsample_d)


def stored_field(image: CompressedImage) -> PixelField:
    """
    The decoder's `b`: stored values in place, zeros elsewhere.
    """
    values = np.zeros((image.channels, image.height, image.width))
    values[:, image.mask.bits] = decode_values(image)
    return PixelField(values)
