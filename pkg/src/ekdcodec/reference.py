"""
Baselines and exact oracles for the masked heat equation.

The time steppers share the multigrid backend with the Krylov decoder. Both
use `(gI - A)^-1 = (1/g) I + (1/g) R^T (gI - A_sym)^-1 R A`, so each step
costs exactly one interior solve and solve counts compare like for like.
"""

import csv
import dataclasses
import logging
import math
import time
from collections.abc import Callable, Iterable, Sequence
from dataclasses import dataclass
from functools import cached_property
from typing import TextIO

import numpy as np
import scipy.fft
import scipy.linalg

from .exceptions import ContractViolation, EmptyInterior, EmptyMask
from .grid import DENSE_CAP, InpaintMask, MaskedOperator, PixelField, Spacing, phi1
from .krylov import DecodeParams, decode, error_bound
from .multigrid import MultigridConfig, MultigridSolver

logger = logging.getLogger(__name__)

__all__ = [
    "BenchResult",
    "BoundRow",
    "DenseOracle",
    "FrameOracle",
    "crank_nicolson",
    "dense_oracle_expm",
    "frame_problem",
    "implicit_euler",
    "relative_error",
    "run_benchmark",
    "run_bound_check",
    "steady_state",
    "write_csv",
]


@dataclass(frozen=True)
class BenchResult:
    method: str
    t: float
    n_solves: int
    rel_error: float
    wall_time_s: float


@dataclass(frozen=True)
class BoundRow:
    m: int
    t: float
    measured: float
    bound: float

    @property
    def passed(self) -> bool:
        return self.measured <= self.bound


def relative_error(approximation: np.ndarray, exact: np.ndarray) -> float:
    return float(np.linalg.norm(approximation - exact) / np.linalg.norm(exact))


def _per_channel(b: PixelField, mask: InpaintMask, run: Callable[[np.ndarray], np.ndarray]) -> PixelField:
    mask.check_shape(b.values.shape[1:])
    planes = [run(np.where(mask.bits, b.channel(k), 0.0)) for k in range(b.channels)]
    return PixelField(np.stack(planes), b.spacing)


def _check_steps(t: float, n: int):
    if not t > 0:
        raise ContractViolation(f"Diffusion time must be positive, got {t}")
    if n < 1:
        raise ContractViolation(f"Step count must be >= 1, got {n}")


def _time_stepper(
    b: PixelField,
    mask: InpaintMask,
    gamma: float,
    n: int,
    step: Callable[[np.ndarray, Callable[[np.ndarray], np.ndarray], MaskedOperator], np.ndarray],
    mg_config: MultigridConfig,
) -> PixelField:
    operator = MaskedOperator(mask, b.spacing)
    if operator.n_interior == 0:
        return _per_channel(b, mask, lambda plane: plane)

    solver = MultigridSolver(mask, gamma, mg_config, b.spacing)

    def resolvent(y: np.ndarray) -> np.ndarray:
        # (gI - A)^-1 y
        inner = solver.solve_sym(operator.restrict(operator.apply_A(y)))
        return (y + operator.embed(inner)) / gamma

    def run(plane: np.ndarray) -> np.ndarray:
        y = plane
        for _ in range(n):
            y = step(y, resolvent, operator)
        return y

    return _per_channel(b, mask, run)


def implicit_euler(
    b: PixelField,
    mask: InpaintMask,
    t: float,
    n: int,
    mg_config: MultigridConfig = MultigridConfig(),
) -> PixelField:
    """
    `(g (gI - A)^-1)^n b` with `g = n/t`.
    """
    _check_steps(t, n)
    gamma = n / t
    return _time_stepper(
        b, mask, gamma, n, lambda y, resolvent, _: gamma * resolvent(y), mg_config
    )


def crank_nicolson(
    b: PixelField,
    mask: InpaintMask,
    t: float,
    n: int,
    mg_config: MultigridConfig = MultigridConfig(),
) -> PixelField:
    """
    `((gI + A)(gI - A)^-1)^n b` with `g = 2n/t`.
    """
    _check_steps(t, n)
    gamma = 2 * n / t

    def step(y, resolvent, operator):
        z = resolvent(y)
        return gamma * z + operator.apply_A(z)

    return _time_stepper(b, mask, gamma, n, step, mg_config)


def steady_state(
    b: PixelField, mask: InpaintMask, mg_config: MultigridConfig = MultigridConfig()
) -> PixelField:
    """
    The `t -> inf` limit: harmonic interpolation of the stored pixels.
    """
    if mask.stored_count == 0:
        raise EmptyMask("The steady state needs at least one stored pixel")
    solver = MultigridSolver(mask, 0.0, mg_config, b.spacing)
    forcing = np.zeros(mask.bits.shape)
    return _per_channel(b, mask, lambda plane: solver.solve_dirichlet(forcing, plane))


class DenseOracle:
    """
    Exact answers from one dense eigendecomposition of `A_sym`.
    """

    def __init__(self, mask: InpaintMask, spacing: Spacing = (1.0, 1.0)):
        self.operator = MaskedOperator(mask, spacing)
        if self.operator.n_interior > DENSE_CAP:
            raise ContractViolation(
                f"Dense oracle refuses {self.operator.n_interior} unknowns (cap {DENSE_CAP})"
            )

    @cached_property
    def spectrum(self) -> tuple[np.ndarray, np.ndarray]:
        return scipy.linalg.eigh(self.operator.to_dense_sym())

    def _interior_function(self, plane: np.ndarray, weights: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
        b = np.where(self.operator.mask.bits, plane, 0.0)
        if self.operator.n_interior == 0:
            return b
        eigenvalues, eigenvectors = self.spectrum
        coefficients = eigenvectors.T @ self.operator.b_sym(b)
        return b + self.operator.embed(eigenvectors @ (weights(eigenvalues) * coefficients))

    def expm(self, plane: np.ndarray, t: float) -> np.ndarray:
        if t == 0:
            return np.where(self.operator.mask.bits, plane, 0.0)
        return self._interior_function(plane, lambda lam: t * phi1(t * lam))

    def steady(self, plane: np.ndarray) -> np.ndarray:
        if self.operator.mask.stored_count == 0:
            raise EmptyMask("The steady state needs at least one stored pixel")
        return self._interior_function(plane, lambda lam: -1.0 / lam)

    def solver(self, gamma: float) -> Callable[[np.ndarray], np.ndarray]:
        """
        Exact solver for `(gamma*I - A_sym) x = w`.
        """
        eigenvalues, eigenvectors = self.spectrum

        def solve(w: np.ndarray) -> np.ndarray:
            return eigenvectors @ ((eigenvectors.T @ w) / (gamma - eigenvalues))

        return solve


def dense_oracle_expm(b: PixelField, mask: InpaintMask, t: float) -> PixelField:
    oracle = DenseOracle(mask, b.spacing)
    return _per_channel(b, mask, lambda plane: oracle.expm(plane, t))


class FrameOracle:
    """
    Exact solutions for the frame problem at any size.

    The unknowns of an `n x n` frame problem form an `(n-2) x (n-2)` block
    whose operator is the Dirichlet 5-point Laplacian, diagonalized by the
    type-I sine transform.
    """

    def __init__(self, n: int):
        self.b, self.mask = frame_problem(n)
        self.operator = MaskedOperator(self.mask)
        inner = n - 2
        k = np.arange(1, inner + 1)
        lam = -4.0 * np.sin(k * np.pi / (2 * (inner + 1))) ** 2
        self.eigenvalues = np.add.outer(lam, lam)
        self.b_sym = self.operator.b_sym(self.b.plane())
        self._shape = (inner, inner)

    def _interior_function(self, weights: np.ndarray) -> np.ndarray:
        coefficients = scipy.fft.dstn(self.b_sym.reshape(self._shape), type=1, norm="ortho")
        x = scipy.fft.idstn(weights * coefficients, type=1, norm="ortho")
        return self.b.plane() + self.operator.embed(x.ravel())

    def expm(self, t: float) -> np.ndarray:
        return self._interior_function(t * phi1(t * self.eigenvalues))

    def steady(self) -> np.ndarray:
        return self._interior_function(-1.0 / self.eigenvalues)


def frame_problem(n: int) -> tuple[PixelField, InpaintMask]:
    """
    An `n x n` white frame (255) around a black interior, with the frame stored.
    """
    if n < 3:
        raise EmptyInterior(f"A {n}x{n} frame has no interior pixels")
    bits = np.ones((n, n), dtype=bool)
    bits[1:-1, 1:-1] = False
    return PixelField.from_array(np.where(bits, 255.0, 0.0)), InpaintMask(bits)


def _timed(run: Callable[[], PixelField]) -> tuple[np.ndarray, float]:
    start = time.perf_counter()
    out = run()
    return out.plane(), time.perf_counter() - start


def run_benchmark(
    size: int,
    times: Sequence[float],
    counts: Sequence[int],
    ms: Sequence[int],
    mg_config: MultigridConfig = MultigridConfig(),
) -> list[BenchResult]:
    """
    Krylov decode against implicit Euler and Crank-Nicolson on the frame
    problem, each measured against the exact solution.
    """
    oracle = FrameOracle(size)
    b, mask = oracle.b, oracle.mask
    results = []
    for t in times:
        exact = oracle.expm(t)
        for m in ms:
            start = time.perf_counter()
            report = decode(b, mask, DecodeParams(t=t, m=m), mg_config)
            elapsed = time.perf_counter() - start
            results.append(
                BenchResult(
                    "krylov",
                    t,
                    sum(report.solves),
                    relative_error(report.reconstruction.plane(), exact),
                    elapsed,
                )
            )
        for n in counts:
            for method, integrator in (
                ("implicit_euler", implicit_euler),
                ("crank_nicolson", crank_nicolson),
            ):
                approximation, elapsed = _timed(
                    lambda: integrator(b, mask, t, n, mg_config)
                )
                results.append(
                    BenchResult(method, t, n, relative_error(approximation, exact), elapsed)
                )
        logger.info("Benchmarked t=%s", t)
    return results


def run_bound_check(
    size: int,
    times: Sequence[float],
    ms: Sequence[int],
    mg_config: MultigridConfig = MultigridConfig(),
) -> list[BoundRow]:
    """
    Measured Krylov error against the a-priori bound `2 t E_m ||b_sym||`.
    """
    oracle = FrameOracle(size)
    bsym_norm = float(np.linalg.norm(oracle.b_sym))
    rows = []
    for t in times:
        exact = oracle.expm(t)
        for m in ms:
            report = decode(oracle.b, oracle.mask, DecodeParams(t=t, m=m), mg_config)
            measured = float(np.linalg.norm(report.reconstruction.plane() - exact))
            row = BoundRow(m, t, measured, error_bound(m, t, bsym_norm))
            if not row.passed:
                logger.warning("Bound violated at m=%s t=%s: %.3e > %.3e", m, t, measured, row.bound)
            rows.append(row)
    return rows


def _format(value) -> str:
    if isinstance(value, float):
        return "inf" if math.isinf(value) else repr(value)
    return str(value)


def write_csv(row_type: type[BenchResult] | type[BoundRow], rows: Iterable, stream: TextIO):
    names = [f.name for f in dataclasses.fields(row_type)]
    extra = ["passed"] if row_type is BoundRow else []
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(names + extra)
    for row in rows:
        values = [getattr(row, name) for name in names + extra]
        writer.writerow([_format(v) for v in values])
