"""
Full multigrid for the masked system `(gamma*I - A_sym) x = rhs`.

The solver works on full-grid arrays in Dirichlet form: at stored pixels the
unknown is pinned to boundary data `g`, everywhere else
`(gamma - Laplacian_h) u = f`. The symmetric interior system is the `g = 0`
case; the steady state of the inpainting problem is the `f = 0, gamma = 0`
case with `g` set to the stored grey values.

Coarse grids have `ceil(N/2)` pixels per direction, spacing `h*N_h/N_H`, and
re-use the standard stencil. Fields move between grids by area-weighted
averaging (restriction) and its scaled adjoint (prolongation). After the
nested iteration the mu-cycles either run on their own or, by default, serve
as the preconditioner of a conjugate-gradient iteration.
"""

import functools
import logging
import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .exceptions import ContractViolation, EmptyMask, IterationBudgetExceeded
from .grid import InpaintMask, MaskedOperator, PixelField, Spacing, neighbour_sum, stencil_degree

logger = logging.getLogger(__name__)

__all__ = [
    "GridLevel",
    "MultigridConfig",
    "MultigridSolver",
    "coarse_dims",
    "coarse_spacing",
    "coarsen_mask",
    "prolong",
    "prolong_field",
    "restrict",
    "restrict_field",
    "restrict_residual",
    "restrict_rhs",
]


@dataclass(frozen=True)
class MultigridConfig:
    mu: int = 2
    nu0: int = 1
    nu1: int = 4
    nu2: int = 4
    levels: int = 7
    eps_mask: float = 1e-3
    cycles: int = 10
    coarsest_max_pixels: int = 1024
    # Early exit once the relative residual drops below `tol`.
    tol: float = 1e-9
    # Residual above which running out of cycles is an error rather than a warning.
    max_residual: float = 1e-6
    # Run the cycles as conjugate-gradient iterations preconditioned by one
    # mu-cycle each. Needs a symmetric cycle, so nu1 == nu2 >= 1.
    accelerate: bool = True

    def __post_init__(self):
        problems = []
        if self.mu < 1:
            problems.append(f"mu must be >= 1, got {self.mu}")
        for name in ("nu0", "nu1", "nu2", "cycles"):
            if getattr(self, name) < 0:
                problems.append(f"{name} must be >= 0, got {getattr(self, name)}")
        if self.levels < 1:
            problems.append(f"levels must be >= 1, got {self.levels}")
        if not 0 <= self.eps_mask < 1:
            problems.append(f"eps_mask must be in [0, 1), got {self.eps_mask}")
        if self.coarsest_max_pixels < 1:
            problems.append(
                f"coarsest_max_pixels must be >= 1, got {self.coarsest_max_pixels}"
            )
        if not 0 < self.tol <= self.max_residual:
            problems.append(
                f"need 0 < tol <= max_residual, got tol={self.tol}, max_residual={self.max_residual}"
            )
        if self.accelerate and not self.nu1 == self.nu2 >= 1:
            problems.append(
                f"accelerate needs nu1 == nu2 >= 1, got nu1={self.nu1}, nu2={self.nu2}"
            )
        if problems:
            raise ContractViolation("Invalid multigrid config: " + "; ".join(problems))


def coarse_dims(width: int, height: int) -> tuple[int, int]:
    return math.ceil(width / 2), math.ceil(height / 2)


def coarse_spacing(
    spacing: Spacing, fine: tuple[int, int], coarse: tuple[int, int]
) -> Spacing:
    hx, hy = spacing
    return hx * fine[0] / coarse[0], hy * fine[1] / coarse[1]


@functools.lru_cache(maxsize=128)
def _overlap(n_fine: int, n_coarse: int) -> np.ndarray:
    # In units of 1/(n_fine*n_coarse) of the domain: coarse cell j spans
    # [j*n_fine, (j+1)*n_fine), fine cell i spans [i*n_coarse, (i+1)*n_coarse).
    j = np.arange(n_coarse)[:, np.newaxis]
    i = np.arange(n_fine)[np.newaxis, :]
    lo = np.maximum(j * n_fine, i * n_coarse)
    hi = np.minimum((j + 1) * n_fine, (i + 1) * n_coarse)
    return np.maximum(hi - lo, 0)


@functools.lru_cache(maxsize=128)
def _restriction_1d(n_fine: int, n_coarse: int) -> sp.csr_matrix:
    return sp.csr_matrix(_overlap(n_fine, n_coarse) / n_fine)


@functools.lru_cache(maxsize=128)
def _prolongation_1d(n_fine: int, n_coarse: int) -> sp.csr_matrix:
    return sp.csr_matrix(_overlap(n_fine, n_coarse).T / n_coarse)


def _check_ladder(fine_shape: tuple[int, int], coarse_shape: tuple[int, int]):
    fine_h, fine_w = fine_shape
    expected_w, expected_h = coarse_dims(fine_w, fine_h)
    if tuple(coarse_shape) != (expected_h, expected_w):
        raise ContractViolation(
            f"A {fine_w}x{fine_h} grid coarsens to {expected_w}x{expected_h}, "
            f"not {coarse_shape[1]}x{coarse_shape[0]}"
        )


def restrict(u: np.ndarray, coarse_shape: tuple[int, int]) -> np.ndarray:
    _check_ladder(u.shape, coarse_shape)
    (fine_h, fine_w), (coarse_h, coarse_w) = u.shape, coarse_shape
    rows = _restriction_1d(fine_h, coarse_h) @ u
    return np.asarray((_restriction_1d(fine_w, coarse_w) @ rows.T).T)


def prolong(v: np.ndarray, fine_shape: tuple[int, int]) -> np.ndarray:
    _check_ladder(fine_shape, v.shape)
    (fine_h, fine_w), (coarse_h, coarse_w) = fine_shape, v.shape
    rows = _prolongation_1d(fine_h, coarse_h) @ v
    return np.asarray((_prolongation_1d(fine_w, coarse_w) @ rows.T).T)


def restrict_field(fine: PixelField, coarse_size: tuple[int, int]) -> PixelField:
    """
    Area-weighted restriction of every channel onto a `(width, height)` grid.
    """
    coarse_w, coarse_h = coarse_size
    values = np.stack([restrict(plane, (coarse_h, coarse_w)) for plane in fine.values])
    spacing = coarse_spacing(fine.spacing, (fine.width, fine.height), coarse_size)
    return PixelField(values, spacing)


def prolong_field(coarse: PixelField, fine_size: tuple[int, int]) -> PixelField:
    fine_w, fine_h = fine_size
    values = np.stack([prolong(plane, (fine_h, fine_w)) for plane in coarse.values])
    hx, hy = coarse.spacing
    spacing = (hx * coarse.width / fine_w, hy * coarse.height / fine_h)
    return PixelField(values, spacing)


def coarsen_mask(fine_mask: InpaintMask, eps: float) -> InpaintMask:
    coarse_w, coarse_h = coarse_dims(fine_mask.width, fine_mask.height)
    restricted = restrict(fine_mask.bits.astype(np.float64), (coarse_h, coarse_w))
    return InpaintMask(restricted > eps)


def restrict_residual(fine_res: np.ndarray, coarse_mask: InpaintMask) -> np.ndarray:
    """
    Restricted residual, zeroed at pixels the coarse mask marks as known.
    """
    coarse = restrict(fine_res, coarse_mask.bits.shape)
    coarse[coarse_mask.bits] = 0.0
    return coarse


def restrict_rhs(
    fine_rhs: np.ndarray, fine_mask: InpaintMask, tolerance: float = 0.0
) -> np.ndarray:
    """
    `I(c*b) / I(c)`: the restricted stored values, renormalized by how much of
    each coarse pixel is covered by stored fine pixels. Coarse pixels whose
    coverage is at most `tolerance` get 0.
    """
    fine_mask.check_shape(fine_rhs.shape)
    coarse_w, coarse_h = coarse_dims(fine_mask.width, fine_mask.height)
    bits = fine_mask.bits.astype(np.float64)
    weighted = restrict(bits * fine_rhs, (coarse_h, coarse_w))
    coverage = restrict(bits, (coarse_h, coarse_w))
    covered = coverage > tolerance
    out = np.zeros_like(weighted)
    out[covered] = weighted[covered] / coverage[covered]
    return out


@dataclass(frozen=True, eq=False)
class GridLevel:
    mask: InpaintMask
    spacing: Spacing

    @property
    def dims(self) -> tuple[int, int]:
        return self.mask.width, self.mask.height

    @property
    def shape(self) -> tuple[int, int]:
        return self.mask.bits.shape

    @cached_property
    def free(self) -> np.ndarray:
        return ~self.mask.bits

    @cached_property
    def unknowns(self) -> int:
        return int(np.count_nonzero(self.free))

    @cached_property
    def degree(self) -> np.ndarray:
        height, width = self.shape
        return stencil_degree(height, width, self.spacing)

    @cached_property
    def colours(self) -> tuple[np.ndarray, np.ndarray]:
        height, width = self.shape
        parity = np.add.outer(np.arange(height), np.arange(width)) % 2
        return self.free & (parity == 0), self.free & (parity == 1)

    def coarsen(self, eps: float) -> "GridLevel":
        coarse_mask = coarsen_mask(self.mask, eps)
        if self.mask.stored_count > 0 and coarse_mask.stored_count == 0:
            # Never let coarsening erase the boundary data entirely.
            coarse_w, coarse_h = coarse_mask.width, coarse_mask.height
            coverage = restrict(self.mask.bits.astype(np.float64), (coarse_h, coarse_w))
            bits = np.zeros_like(coarse_mask.bits)
            bits.flat[np.argmax(coverage)] = True
            coarse_mask = InpaintMask(bits)
            logger.warning(
                "eps_mask=%s erased every stored pixel on a %sx%s grid; keeping the best covered one",
                eps,
                coarse_w,
                coarse_h,
            )
        coarse_size = (coarse_mask.width, coarse_mask.height)
        return GridLevel(coarse_mask, coarse_spacing(self.spacing, self.dims, coarse_size))


def build_hierarchy(
    mask: InpaintMask, spacing: Spacing, config: MultigridConfig
) -> list[GridLevel]:
    levels = [GridLevel(mask, spacing)]
    while True:
        current = levels[-1]
        if current.unknowns == 0 or current.dims == (1, 1):
            break
        if len(levels) >= config.levels:
            if current.unknowns <= config.coarsest_max_pixels:
                break
            logger.info(
                "Coarsest grid %sx%s has %s unknowns (cap %s), adding a level",
                *current.dims,
                current.unknowns,
                config.coarsest_max_pixels,
            )
        coarse = current.coarsen(config.eps_mask)
        if coarse.unknowns == 0:
            break
        levels.append(coarse)

    logger.debug(
        "Grid ladder: %s",
        " -> ".join(f"{w}x{h}" for w, h in (level.dims for level in levels)),
    )
    return levels


class MultigridSolver:
    """
    Full multigrid for one mask and one shift. The grid ladder and the
    coarsest-grid factorization are built once and reused across solves.
    """

    def __init__(
        self,
        mask: InpaintMask,
        gamma: float,
        config: MultigridConfig = MultigridConfig(),
        spacing: Spacing = (1.0, 1.0),
    ):
        if gamma < 0:
            raise ContractViolation(f"Shift must be non-negative, got {gamma}")
        if gamma == 0 and mask.stored_count == 0:
            raise EmptyMask("The steady-state system is singular without stored pixels")

        self.gamma = float(gamma)
        self.config = config
        self.levels = build_hierarchy(mask, spacing, config)
        self.operator = MaskedOperator(mask, spacing, self.gamma)
        self.solve_count = 0
        self.history: list[float] = []
        self._coarsest_factor = None

    @property
    def finest(self) -> GridLevel:
        return self.levels[0]

    def _apply(self, level: GridLevel, u: np.ndarray) -> np.ndarray:
        return (self.gamma + level.degree) * u - neighbour_sum(u, level.spacing)

    def residual(self, level: GridLevel, u: np.ndarray, f: np.ndarray) -> np.ndarray:
        r = f - self._apply(level, u)
        r[level.mask.bits] = 0.0
        return r

    def relax(
        self, level: GridLevel, u: np.ndarray, f: np.ndarray, sweeps: int, reverse: bool = False
    ) -> np.ndarray:
        """
        Red-black Gauss-Seidel, black first with `reverse`. Stored pixels are
        never touched.

        Every sweep lowers the energy norm of the error, `r^T B^-1 r` in terms
        of the residual. The plain 2-norm of the residual can grow on the first
        sweep when both colours start out with a residual.
        """
        diagonal = self.gamma + level.degree
        colours = level.colours[::-1] if reverse else level.colours
        for _ in range(sweeps):
            for colour in colours:
                update = (f + neighbour_sum(u, level.spacing)) / np.where(colour, diagonal, 1.0)
                u = np.where(colour, update, u)
        return u

    def _factor_coarsest(self):
        if self._coarsest_factor is None:
            level = self.levels[-1]
            operator = MaskedOperator(level.mask, level.spacing, self.gamma)
            matrix = (
                self.gamma * sp.identity(level.unknowns) - operator.to_sparse_sym()
            ).toarray()
            self._coarsest_factor = scipy.linalg.cho_factor(matrix)
        return self._coarsest_factor

    def coarsest_direct_solve(self, f: np.ndarray, boundary: np.ndarray | None = None) -> np.ndarray:
        level = self.levels[-1]
        u = np.zeros(level.shape) if boundary is None else np.where(level.mask.bits, boundary, 0.0)
        if level.unknowns == 0:
            return u
        rhs = f + neighbour_sum(u, level.spacing)
        u[level.free] = scipy.linalg.cho_solve(self._factor_coarsest(), rhs[level.free])
        return u

    def mu_cycle(self, index: int, u: np.ndarray, f: np.ndarray) -> np.ndarray:
        level = self.levels[index]
        if index == len(self.levels) - 1:
            return self.coarsest_direct_solve(f, boundary=u)

        config = self.config
        u = self.relax(level, u, f, config.nu1)

        coarse = self.levels[index + 1]
        r_coarse = restrict_residual(self.residual(level, u, f), coarse.mask)
        v_coarse = np.zeros(coarse.shape)
        for _ in range(config.mu):
            v_coarse = self.mu_cycle(index + 1, v_coarse, r_coarse)

        u = u + np.where(level.free, prolong(v_coarse, level.shape), 0.0)
        return self.relax(level, u, f, config.nu2, reverse=True)

    def nested_iteration(self, index: int, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        level = self.levels[index]
        if index == len(self.levels) - 1:
            return self.coarsest_direct_solve(f, boundary=g)

        coarse = self.levels[index + 1]
        g_coarse = np.where(coarse.mask.bits, restrict_rhs(g, level.mask), 0.0)
        f_coarse = np.where(coarse.free, restrict(f, coarse.shape), 0.0)
        v_coarse = self.nested_iteration(index + 1, f_coarse, g_coarse)

        u = np.where(level.mask.bits, g, prolong(v_coarse, level.shape))
        for _ in range(self.config.nu0):
            u = self.mu_cycle(index, u, f)
        return u

    def _plain_cycles(self, u: np.ndarray, f: np.ndarray, initial_norm: float) -> tuple[np.ndarray, int]:
        level = self.finest
        cycles = 0
        while self.history[-1] > self.config.tol and cycles < self.config.cycles:
            u = self.mu_cycle(0, u, f)
            cycles += 1
            self.history.append(np.linalg.norm(self.residual(level, u, f)) / initial_norm)
            logger.debug("mu-cycle %s: relative residual %.3e", cycles, self.history[-1])
        return u, cycles

    def _conjugate_gradient(
        self, u: np.ndarray, f: np.ndarray, initial_norm: float
    ) -> tuple[np.ndarray, int]:
        """
        Conjugate gradients on the free pixels, starting from `u`. Each
        iteration preconditions the residual with one mu-cycle from zero.
        """
        level = self.finest
        r = self.residual(level, u, f)
        zero = np.zeros(level.shape)
        direction = zero
        rho = 1.0
        cycles = 0
        while self.history[-1] > self.config.tol and cycles < self.config.cycles:
            z = self.mu_cycle(0, zero, r)
            rho_next = float(np.vdot(r, z))
            if rho_next <= 0.0:
                logger.warning("The mu-cycle stopped being positive definite (r.z=%.3e)", rho_next)
                break
            direction = z + (rho_next / rho) * direction
            rho = rho_next
            q = self.residual(level, direction, zero)
            alpha = -rho / float(np.vdot(direction, q))
            u = u + alpha * direction
            r = r + alpha * q
            cycles += 1
            self.history.append(np.linalg.norm(self.residual(level, u, f)) / initial_norm)
            logger.debug("CG iteration %s: relative residual %.3e", cycles, self.history[-1])
        return u, cycles

    def full_multigrid(self, f: np.ndarray, g: np.ndarray) -> np.ndarray:
        """
        Nested iteration followed by up to `config.cycles` mu-cycles, or by as
        many preconditioned conjugate-gradient iterations with `accelerate`.
        """
        level = self.finest
        level.mask.check_shape(f.shape)
        level.mask.check_shape(g.shape)
        self.solve_count += 1
        self.history = []

        f = np.where(level.free, f, 0.0)
        g = np.where(level.mask.bits, g, 0.0)
        initial_norm = np.linalg.norm(self.residual(level, g, f))
        if initial_norm == 0.0:
            return g

        u = self.nested_iteration(0, f, g)
        self.history.append(np.linalg.norm(self.residual(level, u, f)) / initial_norm)
        if self.config.accelerate:
            u, cycles = self._conjugate_gradient(u, f, initial_norm)
        else:
            u, cycles = self._plain_cycles(u, f, initial_norm)

        relative = self.history[-1]
        if relative > self.config.max_residual:
            raise IterationBudgetExceeded(residual=relative, cycles=cycles)
        if relative > self.config.tol:
            logger.warning(
                "Multigrid stopped at relative residual %.3e after %s cycles (target %.1e)",
                relative,
                cycles,
                self.config.tol,
            )

        u[level.mask.bits] = g[level.mask.bits]
        return u

    def solve_dirichlet(self, forcing: np.ndarray, boundary: np.ndarray) -> np.ndarray:
        return self.full_multigrid(np.asarray(forcing, float), np.asarray(boundary, float))

    def solve_sym(self, rhs: np.ndarray) -> np.ndarray:
        """
        Solve `(gamma*I - A_sym) x = rhs` for an interior vector `rhs`.
        """
        f = self.operator.embed(rhs)
        u = self.full_multigrid(f, np.zeros(self.finest.shape))
        return self.operator.restrict(u)

    __call__ = solve_sym
