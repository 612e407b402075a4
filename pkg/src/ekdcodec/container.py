"""
The EKD1 container.

Layout: the 4-byte magic `EKD1`, a little-endian header
`(width: u32, height: u32, channels: u8, quant_bits: u8, subsample_d: u16,
method: u8)`, then a single raw DEFLATE stream holding the row-major packed
mask bitmap followed by the quantized values, channel after channel.
"""

import enum
import logging
import struct
import zlib
from dataclasses import dataclass

import numpy as np

from .exceptions import (
    BadMagic,
    ContainerError,
    ContractViolation,
    EmptyMask,
    InflateError,
    TruncatedStream,
)
from .grid import InpaintMask

logger = logging.getLogger(__name__)

__all__ = [
    "MAGIC",
    "CompressedImage",
    "Method",
    "bits_per_pixel",
    "chain_indices",
    "decode_container",
    "encode_container",
]

MAGIC = b"EKD1"
HEADER = struct.Struct("<IIBBHB")
DEFLATE_LEVEL = 9
# Negative window bits: raw DEFLATE, no zlib wrapper.
WBITS = -15
MAX_DIMENSION = 2**32 - 1


class Method(enum.Enum):
    EDGE = 0
    DITHER = 1
    THRESHOLD = 2
    CORNERS = 3


def chain_indices(count: int, d: int) -> np.ndarray:
    """
    Positions kept when only every `d`-th stored value is kept: `0, d, 2d, ...`
    plus the last one.
    """
    if d < 1:
        raise ContractViolation(f"Subsampling step must be >= 1, got {d}")
    if count == 0:
        return np.zeros(0, dtype=np.intp)
    indices = np.arange(0, count, d)
    if indices[-1] != count - 1:
        indices = np.append(indices, count - 1)
    return indices


@dataclass(frozen=True, eq=False)
class CompressedImage:
    mask: InpaintMask
    # Shape (channels, kept): quantization levels in row-major mask order.
    values: np.ndarray
    quant_bits: int = 8
    subsample_d: int = 1
    method: Method = Method.DITHER

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 2 or values.shape[0] not in (1, 3):
            raise ContractViolation(
                f"Values must be (channels, kept) with 1 or 3 channels, got shape {values.shape}"
            )
        if not 1 <= self.quant_bits <= 8:
            raise ContractViolation(f"quant_bits must be in 1..8, got {self.quant_bits}")
        if not 1 <= self.subsample_d <= 0xFFFF:
            raise ContractViolation(f"subsample_d must be in 1..65535, got {self.subsample_d}")
        kept = len(chain_indices(self.mask.stored_count, self.subsample_d))
        if values.shape[1] != kept:
            raise ContractViolation(
                f"{self.mask.stored_count} stored pixels with d={self.subsample_d} keep {kept} values, got {values.shape[1]}"
            )
        if values.size and (values.min() < 0 or values.max() >= 2**self.quant_bits):
            raise ContractViolation(f"Values out of range for {self.quant_bits}-bit levels")
        object.__setattr__(self, "values", values.astype(np.uint8))

    @property
    def width(self) -> int:
        return self.mask.width

    @property
    def height(self) -> int:
        return self.mask.height

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    def __eq__(self, other) -> bool:
        if not isinstance(other, CompressedImage):
            return NotImplemented
        return (
            (self.quant_bits, self.subsample_d, self.method)
            == (other.quant_bits, other.subsample_d, other.method)
            and np.array_equal(self.mask.bits, other.mask.bits)
            and np.array_equal(self.values, other.values)
        )

    __hash__ = None


def encode_container(image: CompressedImage, level: int = DEFLATE_LEVEL) -> bytes:
    if image.mask.stored_count == 0:
        raise EmptyMask("Refusing to write a container without stored pixels")
    if image.width > MAX_DIMENSION or image.height > MAX_DIMENSION:
        raise ContractViolation(f"Image {image.width}x{image.height} is too large for the header")

    header = HEADER.pack(
        image.width,
        image.height,
        image.channels,
        image.quant_bits,
        image.subsample_d,
        image.method.value,
    )
    body = np.packbits(image.mask.bits.ravel()).tobytes() + image.values.tobytes()
    compressor = zlib.compressobj(level, zlib.DEFLATED, WBITS)
    payload = compressor.compress(body) + compressor.flush()
    logger.debug("Deflated %s bytes to %s", len(body), len(payload))
    return MAGIC + header + payload


def _read_header(data: bytes) -> tuple[int, ...]:
    if len(data) < len(MAGIC):
        raise TruncatedStream(f"Stream is {len(data)} bytes, too short for the magic")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic(bytes(data[: len(MAGIC)]))
    if len(data) < len(MAGIC) + HEADER.size:
        raise TruncatedStream(f"Stream is {len(data)} bytes, too short for the header")

    width, height, channels, quant_bits, subsample_d, tag = HEADER.unpack_from(data, len(MAGIC))
    problems = []
    if width < 1 or height < 1:
        problems.append(f"empty image {width}x{height}")
    if channels not in (1, 3):
        problems.append(f"{channels} channels")
    if not 1 <= quant_bits <= 8:
        problems.append(f"quant_bits {quant_bits}")
    if subsample_d < 1:
        problems.append(f"subsample_d {subsample_d}")
    if tag not in {method.value for method in Method}:
        problems.append(f"method tag {tag}")
    if problems:
        raise ContainerError("Invalid header: " + ", ".join(problems))
    return width, height, channels, quant_bits, subsample_d, tag


def decode_container(data: bytes) -> CompressedImage:
    width, height, channels, quant_bits, subsample_d, tag = _read_header(data)

    decompressor = zlib.decompressobj(WBITS)
    try:
        body = decompressor.decompress(data[len(MAGIC) + HEADER.size :])
        body += decompressor.flush()
    except zlib.error as e:
        raise InflateError(f"Corrupt DEFLATE stream: {e}") from e
    if not decompressor.eof:
        raise TruncatedStream("DEFLATE stream ends early")
    if decompressor.unused_data:
        raise ContainerError(f"{len(decompressor.unused_data)} bytes of trailing data")

    pixels = width * height
    mask_bytes = (pixels + 7) // 8
    if len(body) < mask_bytes:
        raise TruncatedStream(f"Mask needs {mask_bytes} bytes, stream holds {len(body)}")
    bits = np.unpackbits(np.frombuffer(body, dtype=np.uint8, count=mask_bytes), count=pixels)
    mask = InpaintMask(bits.astype(bool).reshape(height, width))
    if mask.stored_count == 0:
        raise ContainerError("Mask stores no pixels")

    kept = len(chain_indices(mask.stored_count, subsample_d))
    expected = mask_bytes + channels * kept
    if len(body) < expected:
        raise TruncatedStream(f"Payload needs {expected} bytes, stream holds {len(body)}")
    if len(body) > expected:
        raise ContainerError(f"Payload has {len(body) - expected} unexpected bytes")
    values = np.frombuffer(body, dtype=np.uint8, offset=mask_bytes).reshape(channels, kept)

    try:
        return CompressedImage(mask, values.copy(), quant_bits, subsample_d, Method(tag))
    except ContractViolation as e:
        raise ContainerError(str(e)) from e


def bits_per_pixel(data: bytes, width: int, height: int) -> float:
    return 8 * len(data) / (width * height)
