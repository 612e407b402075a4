import io

import numpy as np
import pytest

from .exceptions import ContractViolation, EmptyInterior, EmptyMask
from .grid import InpaintMask, MaskedOperator, PixelField
from .krylov import DecodeParams, decode
from .multigrid import MultigridConfig
from .reference import (
    BenchResult,
    BoundRow,
    DenseOracle,
    FrameOracle,
    crank_nicolson,
    dense_oracle_expm,
    frame_problem,
    implicit_euler,
    relative_error,
    run_benchmark,
    run_bound_check,
    steady_state,
    write_csv,
)


TIGHT = MultigridConfig(cycles=12, tol=1e-12)


@pytest.fixture(scope="module")
def frame32() -> FrameOracle:
    return FrameOracle(32)


def test_frame_problem():
    b, mask = frame_problem(5)
    assert 16 == mask.stored_count
    assert [255.0, 255.0, 255.0, 255.0, 255.0] == b.plane()[0].tolist()
    assert [255.0, 0.0, 0.0, 0.0, 255.0] == b.plane()[2].tolist()


@pytest.mark.parametrize("n", [0, 1, 2])
def test_frame_problem_without_interior(n: int):
    with pytest.raises(EmptyInterior) as exc_info:
        frame_problem(n)

    assert f"A {n}x{n} frame has no interior pixels" == str(exc_info.value)


def test_single_unknown_steady_state():
    b, mask = frame_problem(3)
    assert 255.0 == DenseOracle(mask).steady(b.plane())[1, 1]
    assert np.allclose(255.0, steady_state(b, mask).plane(), rtol=0, atol=1e-9)


def test_harmonic_row():
    bits = np.array([[True, False, True]])
    b = PixelField.from_array(np.array([[0.0, 0.0, 255.0]]))
    out = steady_state(b, InpaintMask(bits))
    assert np.allclose([[0.0, 127.5, 255.0]], out.plane(), rtol=0, atol=1e-9)


def test_steady_state_matches_dense():
    rng = np.random.default_rng(3)
    bits = rng.random((30, 40)) < 0.08
    bits[0, 0] = True
    mask = InpaintMask(bits)
    b = PixelField(np.where(bits, rng.random((3, 30, 40)) * 255, 0.0))
    out = steady_state(b, mask, MultigridConfig(cycles=20, tol=1e-12))
    oracle = DenseOracle(mask)
    for k in range(3):
        expected = oracle.steady(b.channel(k))
        assert relative_error(out.channel(k), expected) <= 1e-8
        assert np.array_equal(b.channel(k)[bits], out.channel(k)[bits])


def test_steady_state_empty_mask():
    b = PixelField(np.zeros((1, 4, 4)))
    with pytest.raises(EmptyMask):
        steady_state(b, InpaintMask(np.zeros((4, 4), dtype=bool)))


def test_frame_oracle_matches_dense():
    oracle = FrameOracle(12)
    dense = DenseOracle(oracle.mask)
    for t in [0.5, 10.0, 1e4]:
        assert np.allclose(dense.expm(oracle.b.plane(), t), oracle.expm(t), rtol=1e-10, atol=1e-9)
    assert np.allclose(dense.steady(oracle.b.plane()), oracle.steady(), rtol=1e-10, atol=1e-9)
    assert np.allclose(255.0, oracle.steady(), rtol=0, atol=1e-9)


def test_dense_oracle_expm_limits():
    rng = np.random.default_rng(6)
    bits = rng.random((9, 7)) < 0.2
    bits[4, 3] = True
    mask = InpaintMask(bits)
    b = PixelField.from_array(np.where(bits, rng.random((9, 7)) * 255, 0.0))

    assert np.array_equal(b.plane(), dense_oracle_expm(b, mask, 0.0).plane())
    late = dense_oracle_expm(b, mask, 1e12).plane()
    assert np.allclose(DenseOracle(mask).steady(b.plane()), late, rtol=1e-8, atol=1e-8)


def test_dense_oracle_commutes_with_reflection():
    rng = np.random.default_rng(8)
    bits = rng.random((6, 9)) < 0.3
    bits[0, 0] = True
    b = np.where(bits, rng.random((6, 9)), 0.0)
    out = dense_oracle_expm(PixelField.from_array(b), InpaintMask(bits), 3.0).plane()
    flipped = dense_oracle_expm(
        PixelField.from_array(b[:, ::-1]), InpaintMask(bits[:, ::-1]), 3.0
    ).plane()
    assert np.allclose(out[:, ::-1], flipped, rtol=1e-12, atol=1e-12)


def test_dense_oracle_cap():
    with pytest.raises(ContractViolation):
        DenseOracle(InpaintMask.from_indices(70, 70, [0]))


def test_maximum_principle(frame32):
    for t in [1.0, 100.0]:
        out = frame32.expm(t)
        assert out.min() >= -1e-9
        assert out.max() <= 255.0 + 1e-9


def test_all_stored_is_identity():
    rng = np.random.default_rng(1)
    b = PixelField.from_array(rng.random((4, 4)))
    mask = InpaintMask.full(4, 4)
    assert np.array_equal(b.values, implicit_euler(b, mask, 10.0, 3).values)
    assert np.array_equal(b.values, crank_nicolson(b, mask, 10.0, 3).values)


def test_steppers_keep_stored_pixels(frame32):
    out = implicit_euler(frame32.b, frame32.mask, 10.0, 4).plane()
    assert np.allclose(255.0, out[frame32.mask.bits], rtol=0, atol=1e-9)


def test_implicit_euler_first_order(frame32):
    t = 100.0
    exact = frame32.expm(t)
    coarse = relative_error(implicit_euler(frame32.b, frame32.mask, t, 32, TIGHT).plane(), exact)
    fine = relative_error(implicit_euler(frame32.b, frame32.mask, t, 64, TIGHT).plane(), exact)
    assert 0.4 <= fine / coarse <= 0.6


def test_crank_nicolson_second_order(frame32):
    t = 10.0
    exact = frame32.expm(t)
    coarse = relative_error(crank_nicolson(frame32.b, frame32.mask, t, 32, TIGHT).plane(), exact)
    fine = relative_error(crank_nicolson(frame32.b, frame32.mask, t, 64, TIGHT).plane(), exact)
    assert 0.2 <= fine / coarse <= 0.3


def test_implicit_euler_monotone_in_steps(frame32):
    t = 50.0
    exact = frame32.expm(t)
    errors = [
        relative_error(implicit_euler(frame32.b, frame32.mask, t, n).plane(), exact)
        for n in [1, 2, 4, 8, 16]
    ]
    assert all(b <= a for a, b in zip(errors, errors[1:]))


def test_everything_reaches_the_same_steady_state(frame32):
    t = 1e9
    steady = steady_state(frame32.b, frame32.mask).plane()
    krylov = decode(frame32.b, frame32.mask, DecodeParams(t=t, m=3)).reconstruction.plane()
    euler = implicit_euler(frame32.b, frame32.mask, t, 2).plane()
    for candidate in [krylov, euler, frame32.steady()]:
        assert np.mean((candidate - steady) ** 2) <= 1e-6


def test_step_count_validation(frame32):
    with pytest.raises(ContractViolation):
        implicit_euler(frame32.b, frame32.mask, 1.0, 0)
    with pytest.raises(ContractViolation):
        crank_nicolson(frame32.b, frame32.mask, -1.0, 4)


def test_run_benchmark():
    results = run_benchmark(16, times=[10.0], counts=[4], ms=[3])
    assert [("krylov", 1), ("implicit_euler", 4), ("crank_nicolson", 4)] == [
        (r.method, r.n_solves) for r in results
    ]
    assert all(r.rel_error >= 0 and r.wall_time_s >= 0 for r in results)


def test_run_bound_check():
    rows = run_bound_check(16, times=[25.0, 1e3], ms=[3, 4])
    assert [(3, 25.0), (4, 25.0), (3, 1e3), (4, 1e3)] == [(r.m, r.t) for r in rows]
    assert all(row.passed for row in rows)


def test_run_bound_check_on_64_frame_with_defaults():
    rows = run_bound_check(64, times=[25.0, 1e3], ms=[3, 6, 10])
    assert 6 == len(rows)
    assert [] == [row for row in rows if not row.passed]


def test_write_csv():
    stream = io.StringIO()
    write_csv(BenchResult, [BenchResult("krylov", 10.0, 1, 0.5, 0.25)], stream)
    assert "method,t,n_solves,rel_error,wall_time_s\nkrylov,10.0,1,0.5,0.25\n" == stream.getvalue()

    stream = io.StringIO()
    write_csv(BoundRow, [BoundRow(3, 25.0, 1.0, 0.5)], stream)
    assert "m,t,measured,bound,passed\n3,25.0,1.0,0.5,False\n" == stream.getvalue()

    stream = io.StringIO()
    write_csv(BoundRow, [], stream)
    assert "m,t,measured,bound,passed\n" == stream.getvalue()


def test_b_sym_of_frame(frame32):
    assert np.array_equal(
        MaskedOperator(frame32.mask).b_sym(frame32.b.plane()), frame32.b_sym
    )
