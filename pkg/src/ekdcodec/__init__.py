from .container import CompressedImage, decode_container, encode_container
from .encoder import EncoderParams, encode_image, stored_field
from .grid import InpaintMask, PixelField
from .krylov import DecodeParams, decode
from .multigrid import MultigridConfig, MultigridSolver

__all__ = [
    "CompressedImage",
    "DecodeParams",
    "EncoderParams",
    "InpaintMask",
    "MultigridConfig",
    "MultigridSolver",
    "PixelField",
    "decode",
    "decode_container",
    "encode_container",
    "encode_image",
    "stored_field",
]
