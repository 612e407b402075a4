"""
Matrix-free masked heat operator.

Every array here is a row-major `(height, width)` grid. The operator `A` is
the 5-point Laplacian applied at pixels which have not been stored, with
homogeneous Neumann conditions at the image border (a missing neighbour's
coefficient is dropped and the centre coefficient reduced accordingly).
Rows of `A` are zero at stored pixels.

`R` selects the non-stored ("interior") pixels in row-major order and `R^T`
embeds an interior vector back into a full grid with zeros at stored pixels.
"""

import functools
import math
from dataclasses import dataclass
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.sparse as sp

from .exceptions import ContractViolation

if TYPE_CHECKING:
    from typing import Self

__all__ = [
    "DENSE_CAP",
    "InpaintMask",
    "MaskedOperator",
    "PixelField",
    "apply_A",
    "apply_A_sym",
    "compute_b_sym",
    "embed_RT",
    "neighbour_sum",
    "neumann_laplacian",
    "phi1",
    "restrict_R",
    "stencil_degree",
]

Spacing = tuple[float, float]

# Largest grid (in pixels) we are willing to materialize as a dense matrix.
DENSE_CAP = 4096

PHI1_TAYLOR_THRESHOLD = 1e-5


@dataclass(frozen=True, eq=False)
class PixelField:
    """
    A planar image: `values` has shape `(channels, height, width)`.
    """

    values: np.ndarray
    spacing: Spacing = (1.0, 1.0)

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64)
        if values.ndim != 3:
            raise ContractViolation(
                f"PixelField values must be (channels, height, width), got shape {values.shape}"
            )
        channels, height, width = values.shape
        if channels not in (1, 3):
            raise ContractViolation(f"PixelField needs 1 or 3 channels, got {channels}")
        if height < 1 or width < 1:
            raise ContractViolation(f"PixelField must be non-empty, got {width}x{height}")
        hx, hy = self.spacing
        if not (hx > 0 and hy > 0):
            raise ContractViolation(f"Grid spacing must be positive, got {self.spacing}")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", (float(hx), float(hy)))

    @classmethod
    def from_array(cls, array: np.ndarray, spacing: Spacing = (1.0, 1.0)) -> "Self":
        array = np.asarray(array, dtype=np.float64)
        if array.ndim == 2:
            array = array[np.newaxis]
        return cls(values=array, spacing=spacing)

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]

    def channel(self, k: int) -> np.ndarray:
        return self.values[k]

    def plane(self) -> np.ndarray:
        if self.channels != 1:
            raise ContractViolation(
                f"Expected a single-channel field, got {self.channels} channels"
            )
        return self.values[0]


@dataclass(frozen=True, eq=False)
class InpaintMask:
    """
    Binary inpainting mask: `bits[y, x]` is true where the pixel is stored.
    """

    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        if bits.ndim != 2 or bits.size == 0:
            raise ContractViolation(f"Mask must be a non-empty 2-D grid, got shape {bits.shape}")
        object.__setattr__(self, "bits", bits)

    @classmethod
    def from_indices(cls, width: int, height: int, indices) -> "Self":
        bits = np.zeros(width * height, dtype=bool)
        bits[np.asarray(indices, dtype=np.intp)] = True
        return cls(bits.reshape(height, width))

    @classmethod
    def full(cls, width: int, height: int) -> "Self":
        return cls(np.ones((height, width), dtype=bool))

    @property
    def height(self) -> int:
        return self.bits.shape[0]

    @property
    def width(self) -> int:
        return self.bits.shape[1]

    @property
    def stored_count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def density(self) -> float:
        return self.stored_count / self.bits.size

    def stored_indices(self) -> np.ndarray:
        return np.flatnonzero(self.bits.ravel())

    def interior_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.bits.ravel())

    def check_shape(self, shape: tuple[int, ...]):
        if tuple(shape) != self.bits.shape:
            raise ContractViolation(
                f"Dimension mismatch: mask is {self.bits.shape}, field is {tuple(shape)}"
            )


def neighbour_sum(u: np.ndarray, spacing: Spacing = (1.0, 1.0)) -> np.ndarray:
    """
    Weighted sum of the in-domain 4-neighbours of every pixel.
    """
    hx, hy = spacing
    wx = 1.0 / (hx * hx)
    wy = 1.0 / (hy * hy)
    out = np.zeros_like(u, dtype=np.float64)
    out[:, 1:] += wx * u[:, :-1]
    out[:, :-1] += wx * u[:, 1:]
    out[1:, :] += wy * u[:-1, :]
    out[:-1, :] += wy * u[1:, :]
    return out


@functools.lru_cache(maxsize=64)
def stencil_degree(height: int, width: int, spacing: Spacing = (1.0, 1.0)) -> np.ndarray:
    """
    Negated centre coefficient of the Neumann stencil at every pixel.
    """
    degree = neighbour_sum(np.ones((height, width)), spacing)
    degree.setflags(write=False)
    return degree


def neumann_laplacian(u: np.ndarray, spacing: Spacing = (1.0, 1.0)) -> np.ndarray:
    height, width = u.shape
    return neighbour_sum(u, spacing) - stencil_degree(height, width, spacing) * u


def _second_difference(n: int) -> sp.csr_matrix:
    if n == 1:
        return sp.csr_matrix((1, 1))
    main = np.full(n, -2.0)
    main[0] += 1.0
    main[-1] += 1.0
    off = np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], shape=(n, n), format="csr")


@dataclass(frozen=True, eq=False)
class MaskedOperator:
    """
    `B = shift*I - A` and `B_sym = shift*I - A_sym` for one mask, matrix-free.
    """

    mask: InpaintMask
    spacing: Spacing = (1.0, 1.0)
    shift: float = 0.0

    def __post_init__(self):
        hx, hy = self.spacing
        if not (hx > 0 and hy > 0):
            raise ContractViolation(f"Grid spacing must be positive, got {self.spacing}")
        if self.shift < 0:
            raise ContractViolation(f"Shift must be non-negative, got {self.shift}")

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.bits.shape

    @cached_property
    def interior(self) -> np.ndarray:
        return self.mask.interior_indices()

    @property
    def n_interior(self) -> int:
        return len(self.interior)

    def restrict(self, u: np.ndarray) -> np.ndarray:
        self.mask.check_shape(u.shape)
        return u.ravel()[self.interior]

    def embed(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.n_interior,):
            raise ContractViolation(
                f"Interior vector has length {x.shape}, expected {self.n_interior}"
            )
        out = np.zeros(self.mask.bits.size)
        out[self.interior] = x
        return out.reshape(self.shape)

    def apply_A(self, u: np.ndarray) -> np.ndarray:
        self.mask.check_shape(u.shape)
        out = neumann_laplacian(u, self.spacing)
        out[self.mask.bits] = 0.0
        return out

    def apply_A_sym(self, x: np.ndarray) -> np.ndarray:
        return self.restrict(neumann_laplacian(self.embed(x), self.spacing))

    def apply_B(self, u: np.ndarray) -> np.ndarray:
        return self.shift * u - self.apply_A(u)

    def apply_B_sym(self, x: np.ndarray) -> np.ndarray:
        return self.shift * x - self.apply_A_sym(x)

    def b_sym(self, b: np.ndarray) -> np.ndarray:
        """
        `R A b`: at every non-stored pixel, the stored neighbours weighted by 1/h^2.
        """
        self.mask.check_shape(b.shape)
        stored_only = np.where(self.mask.bits, b, 0.0)
        return self.restrict(neighbour_sum(stored_only, self.spacing))

    def to_sparse(self) -> sp.csr_matrix:
        height, width = self.shape
        hx, hy = self.spacing
        laplacian = sp.kron(
            sp.identity(height), _second_difference(width) / (hx * hx)
        ) + sp.kron(_second_difference(height) / (hy * hy), sp.identity(width))
        keep = sp.diags((~self.mask.bits).ravel().astype(np.float64))
        return sp.csr_matrix(keep @ laplacian)

    def to_sparse_sym(self) -> sp.csr_matrix:
        full = self.to_sparse()
        return sp.csr_matrix(full[self.interior][:, self.interior])

    def to_dense(self) -> np.ndarray:
        if self.mask.bits.size > DENSE_CAP:
            raise ContractViolation(
                f"Refusing to materialize a {self.mask.bits.size}-pixel operator (cap {DENSE_CAP})"
            )
        return self.to_sparse().toarray()

    def to_dense_sym(self) -> np.ndarray:
        if self.n_interior > DENSE_CAP:
            raise ContractViolation(
                f"Refusing to materialize a {self.n_interior}-unknown operator (cap {DENSE_CAP})"
            )
        return self.to_sparse_sym().toarray()


def _single_plane(field: PixelField, mask: InpaintMask) -> np.ndarray:
    plane = field.plane()
    mask.check_shape(plane.shape)
    return plane


def apply_A(field: PixelField, mask: InpaintMask) -> PixelField:
    plane = _single_plane(field, mask)
    operator = MaskedOperator(mask, field.spacing)
    return PixelField.from_array(operator.apply_A(plane), field.spacing)


def apply_A_sym(
    interior: np.ndarray, mask: InpaintMask, spacing: Spacing = (1.0, 1.0)
) -> np.ndarray:
    return MaskedOperator(mask, spacing).apply_A_sym(interior)


def restrict_R(field: PixelField | np.ndarray, mask: InpaintMask) -> np.ndarray:
    plane = field.plane() if isinstance(field, PixelField) else np.asarray(field)
    return MaskedOperator(mask).restrict(plane)


def embed_RT(
    vector: np.ndarray, mask: InpaintMask, spacing: Spacing = (1.0, 1.0)
) -> PixelField:
    return PixelField.from_array(MaskedOperator(mask, spacing).embed(vector), spacing)


def compute_b_sym(compressed: PixelField, mask: InpaintMask) -> np.ndarray:
    plane = _single_plane(compressed, mask)
    return MaskedOperator(mask, compressed.spacing).b_sym(plane)


def phi1(z):
    """
    `(exp(z) - 1) / z`, with the removable singularity at 0 filled in.
    """
    if np.isscalar(z):
        z = float(z)
        if abs(z) <= PHI1_TAYLOR_THRESHOLD:
            return 1.0 + z / 2.0 + z * z / 6.0 + z**3 / 24.0 + z**4 / 120.0
        try:
            return math.expm1(z) / z
        except OverflowError:
            return math.inf

    z = np.asarray(z, dtype=np.float64)
    small = np.abs(z) <= PHI1_TAYLOR_THRESHOLD
    taylor = 1.0 + z / 2.0 + z * z / 6.0 + z**3 / 24.0 + z**4 / 120.0
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        direct = np.expm1(z) / z
    return np.where(small, taylor, direct)
