"""
Binary PGM (P5) and PPM (P6) images with 8-bit samples.
"""

import logging
import re
from pathlib import Path

import numpy as np

from .exceptions import ImageFormatError
from .grid import PixelField

logger = logging.getLogger(__name__)

__all__ = ["format_image", "parse_image", "read_image", "write_image"]

CHANNELS = {b"P5": 1, b"P6": 3}
MAXVAL = 255

# Magic, width, height and maxval, each preceded by whitespace or comments,
# then the single whitespace byte which ends the header.
_HEADER = re.compile(
    rb"(P[56])"
    + rb"(?:(?:\s|#[^\r\n]*)+(\d+))" * 3
    + rb"\s"
)


def parse_image(data: bytes) -> PixelField:
    match = _HEADER.match(data)
    if match is None:
        raise ImageFormatError(f"Malformed PNM header: {bytes(data[:16])!r}")
    magic = match.group(1)
    width, height, maxval = (int(match.group(k)) for k in (2, 3, 4))
    if maxval != MAXVAL:
        raise ImageFormatError(f"Unsupported maxval {maxval}, only {MAXVAL} is supported")
    if width < 1 or height < 1:
        raise ImageFormatError(f"Empty image {width}x{height}")

    channels = CHANNELS[magic]
    expected = width * height * channels
    pixels = data[match.end() : match.end() + expected]
    if len(pixels) < expected:
        raise ImageFormatError(f"Expected {expected} bytes of pixel data, got {len(pixels)}")

    samples = np.frombuffer(pixels, dtype=np.uint8).reshape(height, width, channels)
    return PixelField(np.moveaxis(samples, -1, 0).astype(np.float64))


def read_image(path: Path) -> PixelField:
    image = parse_image(Path(path).read_bytes())
    logger.info("Read %sx%s image with %s channel(s) from %s", image.width, image.height, image.channels, path)
    return image


def format_image(image: PixelField) -> bytes:
    """
    Samples are clamped to [0, 255] and rounded half away from zero.
    """
    magic = b"P5" if image.channels == 1 else b"P6"
    samples = np.floor(np.clip(image.values, 0.0, float(MAXVAL)) + 0.5).astype(np.uint8)
    header = b"%s\n%d %d\n%d\n" % (magic, image.width, image.height, MAXVAL)
    return header + np.moveaxis(samples, 0, -1).tobytes()


def write_image(image: PixelField, path: Path):
    Path(path).write_bytes(format_image(image))
