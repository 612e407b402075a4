import logging
import math

import numpy as np
import pytest

from .exceptions import ContractViolation, EmptyMask, IterationBudgetExceeded
from .grid import InpaintMask, MaskedOperator, PixelField
from .multigrid import (
    MultigridConfig,
    MultigridSolver,
    build_hierarchy,
    coarsen_mask,
    prolong,
    prolong_field,
    restrict,
    restrict_field,
    restrict_residual,
    restrict_rhs,
)


def frame_mask(size: int) -> InpaintMask:
    bits = np.ones((size, size), dtype=bool)
    bits[1:-1, 1:-1] = False
    return InpaintMask(bits)


def dense_solve(mask: InpaintMask, gamma: float, rhs: np.ndarray) -> np.ndarray:
    operator = MaskedOperator(mask)
    matrix = gamma * np.eye(operator.n_interior) - operator.to_dense_sym()
    return np.linalg.solve(matrix, rhs)


def test_restrict_worked_example():
    fine = PixelField.from_array(np.array([[7.0, 2.0, 2.0], [4.0, 6.0, 3.0]]))
    coarse = restrict_field(fine, (2, 1))
    assert np.allclose([[5.0, 3.0]], coarse.plane(), rtol=0, atol=1e-14)
    assert (1.5, 2.0) == coarse.spacing


def test_prolong_worked_example():
    coarse = PixelField.from_array(np.array([[5.0, 3.0]]), spacing=(1.5, 2.0))
    fine = prolong_field(coarse, (3, 2))
    assert [[5.0, 4.0, 3.0], [5.0, 4.0, 3.0]] == fine.plane().tolist()
    assert (1.0, 1.0) == fine.spacing


@pytest.mark.parametrize("shape", [(1, 1), (2, 3), (5, 3), (7, 8), (16, 16)])
def test_transfers_preserve_constants(shape: tuple[int, int]):
    height, width = shape
    coarse_shape = ((height + 1) // 2, (width + 1) // 2)
    assert np.allclose(4.25, restrict(np.full(shape, 4.25), coarse_shape), rtol=0, atol=1e-14)
    assert np.allclose(4.25, prolong(np.full(coarse_shape, 4.25), shape), rtol=0, atol=1e-14)


def test_restrict_matches_area_overlap():
    rng = np.random.default_rng(1)
    fine = rng.random((3, 5))
    # Coarse grid is 3x2: pixel (j, i) covers [i*5/3, (i+1)*5/3) x [j*3/2, (j+1)*3/2).
    expected = np.zeros((2, 3))
    samples = 60
    for j in range(2):
        for i in range(3):
            ys = (j * 1.5) + (np.arange(samples) + 0.5) * 1.5 / samples
            xs = (i * 5 / 3) + (np.arange(samples) + 0.5) * (5 / 3) / samples
            expected[j, i] = fine[np.floor(ys).astype(int)][:, np.floor(xs).astype(int)].mean()
    assert np.allclose(expected, restrict(fine, (2, 3)), atol=1e-12)


@pytest.mark.parametrize("shape", [(2, 2), (3, 2), (5, 7), (9, 4), (33, 32)])
def test_adjoint_identity(shape: tuple[int, int]):
    rng = np.random.default_rng(sum(shape))
    height, width = shape
    coarse_shape = ((height + 1) // 2, (width + 1) // 2)
    u = rng.standard_normal(shape)
    v = rng.standard_normal(coarse_shape)
    alpha = (coarse_shape[0] * coarse_shape[1]) / (height * width)
    lhs = np.sum(restrict(u, coarse_shape) * v)
    rhs = alpha * np.sum(u * prolong(v, shape))
    assert abs(lhs - rhs) <= 1e-12 * max(1.0, abs(lhs))


def test_transfer_shape_mismatch():
    with pytest.raises(ContractViolation) as exc_info:
        restrict(np.zeros((4, 4)), (3, 2))

    assert "A 4x4 grid coarsens to 2x2, not 2x3" == str(exc_info.value)


def test_coarsen_mask_worked_example():
    fine = InpaintMask(np.array([[True, False], [False, False]]))
    assert [[True]] == coarsen_mask(fine, 1e-3).bits.tolist()
    assert [[False]] == coarsen_mask(fine, 0.3).bits.tolist()
    empty = InpaintMask(np.zeros((4, 6), dtype=bool))
    assert not coarsen_mask(empty, 1e-3).bits.any()


def test_restrict_residual_worked_example():
    coarse_mask = InpaintMask(np.array([[True]]))
    residual = np.array([[0.0, 8.0], [4.0, 0.0]])
    assert [[3.0]] == restrict(residual, (1, 1)).tolist()
    assert [[0.0]] == restrict_residual(residual, coarse_mask).tolist()


def test_restrict_residual_plain_when_nothing_stored():
    rng = np.random.default_rng(2)
    residual = rng.standard_normal((6, 6))
    coarse_mask = InpaintMask(np.zeros((3, 3), dtype=bool))
    assert np.array_equal(restrict(residual, (3, 3)), restrict_residual(residual, coarse_mask))


def test_restrict_rhs_worked_example():
    mask = InpaintMask(np.array([[True, False], [False, True]]))
    rhs = np.array([[6.0, 0.0], [2.0, 4.0]])
    assert [[5.0]] == restrict_rhs(rhs, mask).tolist()


def test_restrict_rhs_edge_cases():
    rhs = np.full((4, 4), 9.0)
    empty = InpaintMask(np.zeros((4, 4), dtype=bool))
    assert not restrict_rhs(rhs, empty).any()
    full = InpaintMask.full(4, 4)
    assert np.allclose(9.0, restrict_rhs(rhs, full), rtol=0, atol=1e-14)


def test_grid_ladder():
    mask = frame_mask(37)
    levels = build_hierarchy(mask, (1.0, 1.0), MultigridConfig(levels=4))
    assert [(37, 37), (19, 19), (10, 10), (5, 5)] == [level.dims for level in levels]
    assert (37 / 19, 37 / 19) == levels[1].spacing
    assert (37 / 19 * 19 / 10, 37 / 19 * 19 / 10) == levels[2].spacing


def test_ladder_extends_to_respect_cap():
    levels = build_hierarchy(frame_mask(40), (1.0, 1.0), MultigridConfig(levels=1, coarsest_max_pixels=50))
    assert levels[-1].unknowns <= 50
    assert len(levels) > 1


def test_ladder_stops_without_unknowns():
    levels = build_hierarchy(InpaintMask.full(16, 16), (1.0, 1.0), MultigridConfig())
    assert 1 == len(levels)


def test_ladder_skips_grids_without_unknowns():
    levels = build_hierarchy(corner_only(8, 8), (1.0, 1.0), MultigridConfig())
    assert [(8, 8), (4, 4)] == [level.dims for level in levels]
    assert 12 == levels[-1].unknowns


def test_coarsening_never_erases_boundary_data(caplog):
    bits = np.zeros((8, 8), dtype=bool)
    bits[3, 5] = True
    with caplog.at_level(logging.WARNING):
        levels = build_hierarchy(InpaintMask(bits), (1.0, 1.0), MultigridConfig(eps_mask=0.5))
    assert all(level.mask.stored_count == 1 for level in levels)
    assert "erased every stored pixel" in caplog.text


def test_relax_fixed_point():
    mask = frame_mask(8)
    solver = MultigridSolver(mask, gamma=0.5)
    rng = np.random.default_rng(4)
    rhs = rng.standard_normal(36)
    exact = solver.operator.embed(dense_solve(mask, 0.5, rhs))
    f = solver.operator.embed(rhs)
    relaxed = solver.relax(solver.finest, exact, f, sweeps=3)
    assert np.allclose(exact, relaxed, rtol=0, atol=1e-12)


def test_relax_single_unknown_is_exact():
    mask = frame_mask(3)
    solver = MultigridSolver(mask, gamma=0.0)
    g = np.where(mask.bits, 255.0, 0.0)
    relaxed = solver.relax(solver.finest, g, np.zeros((3, 3)), sweeps=1)
    assert 255.0 == relaxed[1, 1]


def energy_norm(solver: MultigridSolver, r: np.ndarray) -> float:
    interior = solver.operator.restrict(r)
    return float(np.sqrt(interior @ dense_solve(solver.operator.mask, solver.gamma, interior)))


def test_relax_reduces_residual():
    mask = frame_mask(16)
    solver = MultigridSolver(mask, gamma=0.0)
    level = solver.finest
    f = np.where(level.free, 1.0, 0.0)
    u = np.zeros((16, 16))
    residuals = [solver.residual(level, u, f)]
    for _ in range(4):
        u = solver.relax(level, u, f, sweeps=1)
        residuals.append(solver.residual(level, u, f))

    energies = [energy_norm(solver, r) for r in residuals]
    assert all(b < a for a, b in zip(energies, energies[1:]))
    # The first sweep may grow the 2-norm; after it only one colour carries a residual.
    norms = [np.linalg.norm(r) for r in residuals]
    assert all(b <= a for a, b in zip(norms[1:], norms[2:]))


@pytest.mark.parametrize("reverse", [False, True])
def test_relax_colour_order(reverse: bool):
    mask = frame_mask(6)
    solver = MultigridSolver(mask, gamma=0.0)
    level = solver.finest
    f = np.where(level.free, 1.0, 0.0)
    u = solver.relax(level, np.zeros((6, 6)), f, sweeps=1, reverse=reverse)
    last = level.colours[0] if reverse else level.colours[1]
    r = solver.residual(level, u, f)
    assert not r[last].any()
    assert r[level.free & ~last].any()


def test_zero_rhs():
    solver = MultigridSolver(frame_mask(10), gamma=0.0)
    assert not solver.solve_sym(np.zeros(64)).any()
    assert 1 == solver.solve_count


@pytest.mark.parametrize("gamma", [0.0, 1.5e-7, 1.0])
@pytest.mark.parametrize("size", [32, 64])
def test_frame_problem_converges(size: int, gamma: float):
    mask = frame_mask(size)
    config = MultigridConfig(cycles=10, tol=1e-12, max_residual=1e-8)
    solver = MultigridSolver(mask, gamma=gamma, config=config)
    boundary = np.where(mask.bits, 255.0, 0.0)
    rhs = solver.operator.b_sym(boundary)

    x = solver.solve_sym(rhs)

    assert len(solver.history) <= 11
    assert min(solver.history) <= 1e-8
    expected = dense_solve(mask, gamma, rhs)
    assert np.linalg.norm(x - expected) <= 1e-8 * np.linalg.norm(expected)


@pytest.mark.parametrize("gamma", [0.0, 1.5e-7, 1.0])
@pytest.mark.parametrize("size", [32, 64])
def test_w_cycle_contraction(size: int, gamma: float):
    mask = frame_mask(size)
    config = MultigridConfig(cycles=8, tol=1e-14, max_residual=1.0, accelerate=False)
    solver = MultigridSolver(mask, gamma=gamma, config=config)
    rhs = np.random.default_rng(size).standard_normal((size - 2) ** 2)

    solver.solve_sym(rhs)

    history = solver.history
    assert len(history) > 2
    assert all(b <= 0.5 * a for a, b in zip(history, history[1:]) if a > 1e-11)


def test_mu_cycle_is_symmetric():
    rng = np.random.default_rng(30)
    bits = rng.random((24, 20)) < 0.1
    bits[3, 4] = True
    mask = InpaintMask(bits)
    solver = MultigridSolver(mask, gamma=1.5e-7)
    zero = np.zeros(bits.shape)
    first, second = (np.where(bits, 0.0, rng.standard_normal(bits.shape)) for _ in range(2))

    left = np.vdot(first, solver.mu_cycle(0, zero, second))
    right = np.vdot(solver.mu_cycle(0, zero, first), second)
    assert abs(left - right) <= 1e-10 * abs(left)
    assert np.vdot(first, solver.mu_cycle(0, zero, first)) > 0


def corner_only(width: int, height: int) -> InpaintMask:
    bits = np.zeros((height, width), dtype=bool)
    bits[0, 0] = bits[0, -1] = bits[-1, 0] = bits[-1, -1] = True
    return InpaintMask(bits)


def sparse_random(seed: int, density: float, width: int = 48, height: int = 40) -> InpaintMask:
    rng = np.random.default_rng(seed)
    bits = rng.random((height, width)) < density
    bits[rng.integers(height), rng.integers(width)] = True
    return InpaintMask(bits)


@pytest.mark.parametrize(
    "mask",
    [
        corner_only(8, 8),
        corner_only(32, 32),
        sparse_random(1, 0.02),
        sparse_random(2, 0.05),
        sparse_random(3, 0.1),
        sparse_random(4, 0.1, width=24, height=20),
    ],
)
def test_default_config_converges_on_sparse_masks(mask: InpaintMask):
    solver = MultigridSolver(mask, gamma=1.5e-7)
    rng = np.random.default_rng(mask.stored_count)
    rhs = rng.standard_normal(mask.bits.size - mask.stored_count)

    x = solver.solve_sym(rhs)

    assert solver.history[-1] <= 1e-9
    assert len(solver.history) <= 11
    expected = dense_solve(mask, 1.5e-7, rhs)
    assert np.linalg.norm(x - expected) <= 1e-6 * np.linalg.norm(expected)


def test_plain_cycles_match_accelerated():
    mask = sparse_random(5, 0.1)
    rhs = np.random.default_rng(5).standard_normal(mask.bits.size - mask.stored_count)
    plain = MultigridSolver(mask, gamma=0.5, config=MultigridConfig(cycles=30, accelerate=False))
    accelerated = MultigridSolver(mask, gamma=0.5)

    expected = dense_solve(mask, 0.5, rhs)
    for solver in [plain, accelerated]:
        x = solver.solve_sym(rhs)
        assert np.linalg.norm(x - expected) <= 1e-7 * np.linalg.norm(expected)
    assert len(accelerated.history) < len(plain.history)


def test_single_level_is_direct():
    rng = np.random.default_rng(8)
    bits = rng.random((4, 4)) < 0.3
    bits[0, 0] = True
    mask = InpaintMask(bits)
    solver = MultigridSolver(mask, gamma=0.0, config=MultigridConfig(levels=1))
    rhs = rng.standard_normal(int((~bits).sum()))
    expected = dense_solve(mask, 0.0, rhs)
    assert 1 == len(solver.levels)
    assert np.allclose(expected, solver.solve_sym(rhs), rtol=1e-12, atol=1e-12)


def test_coarsest_solve_one_pixel():
    solver = MultigridSolver(InpaintMask(np.zeros((1, 1), dtype=bool)), gamma=2.0)
    (x,) = solver.solve_sym(np.array([1.0]))
    assert math.isclose(0.5, x, rel_tol=1e-12)


def test_random_mask_matches_dense():
    rng = np.random.default_rng(21)
    bits = rng.random((24, 20)) < 0.1
    bits[5, 5] = True
    mask = InpaintMask(bits)
    config = MultigridConfig(cycles=20, tol=1e-12)
    solver = MultigridSolver(mask, gamma=0.0, config=config)
    rhs = solver.operator.b_sym(np.where(bits, rng.random((24, 20)) * 255, 0.0))
    expected = dense_solve(mask, 0.0, rhs)
    assert np.linalg.norm(solver.solve_sym(rhs) - expected) <= 1e-8 * np.linalg.norm(expected)


def test_steady_state_keeps_boundary():
    mask = frame_mask(12)
    solver = MultigridSolver(mask, gamma=0.0)
    boundary = np.where(mask.bits, 255.0, 0.0)
    u = solver.solve_dirichlet(np.zeros((12, 12)), boundary)
    assert np.array_equal(boundary[mask.bits], u[mask.bits])
    assert np.allclose(255.0, u, rtol=0, atol=1e-6)


def test_budget_exceeded():
    config = MultigridConfig(cycles=0, nu0=0, tol=1e-12, max_residual=1e-12)
    solver = MultigridSolver(frame_mask(64), gamma=0.0, config=config)
    with pytest.raises(IterationBudgetExceeded) as exc_info:
        solver.solve_sym(np.ones(62 * 62))

    assert 0 == exc_info.value.cycles
    assert exc_info.value.residual > 1e-12


def test_empty_mask_is_singular():
    with pytest.raises(EmptyMask):
        MultigridSolver(InpaintMask(np.zeros((4, 4), dtype=bool)), gamma=0.0)


def test_invalid_config():
    with pytest.raises(ContractViolation) as exc_info:
        MultigridConfig(mu=0, levels=0)

    assert (
        "Invalid multigrid config: mu must be >= 1, got 0; levels must be >= 1, got 0"
        == str(exc_info.value)
    )


def test_accelerate_needs_symmetric_cycle():
    with pytest.raises(ContractViolation) as exc_info:
        MultigridConfig(nu1=2, nu2=1)

    assert "Invalid multigrid config: accelerate needs nu1 == nu2 >= 1, got nu1=2, nu2=1" == str(exc_info.value)
    MultigridConfig(nu1=2, nu2=1, accelerate=False)
