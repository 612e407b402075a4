import contextlib
import enum
import logging
from pathlib import Path
from typing import TextIO

import click

from .cli_types import FLOAT_LIST, FRACTION, INT_LIST
from .container import Method, bits_per_pixel, decode_container, encode_container
from .encoder import EncoderParams, encode_image, stored_field
from .exceptions import (
    ContainerError,
    ContractViolation,
    DegenerateSignal,
    EkdError,
    EmptyInterior,
    EmptyMask,
    ImageFormatError,
    IterationBudgetExceeded,
)
from .krylov import DecodeParams, decode
from .metrics import mse, psnr
from .multigrid import MultigridConfig
from .pnm import read_image, write_image
from .reference import BenchResult, BoundRow, run_benchmark, run_bound_check, steady_state, write_csv


class ExitCode(enum.IntEnum):
    OK = 0
    IO = 1
    ENCODER = 2
    SOLVER = 3
    VALIDATION = 4


class CodecException(click.ClickException):
    def __init__(self, message: str, exit_code: ExitCode):
        super().__init__(message)
        self.exit_code = exit_code


EXIT_CODES: list[tuple[type[Exception], ExitCode]] = [
    (ImageFormatError, ExitCode.IO),
    (ContainerError, ExitCode.IO),
    (DegenerateSignal, ExitCode.ENCODER),
    (EmptyMask, ExitCode.ENCODER),
    (IterationBudgetExceeded, ExitCode.SOLVER),
    (ContractViolation, ExitCode.VALIDATION),
    (EmptyInterior, ExitCode.VALIDATION),
]


def exit_code_for(e: Exception) -> ExitCode:
    for kind, code in EXIT_CODES:
        if isinstance(e, kind):
            return code
    if isinstance(e, OSError):
        return ExitCode.IO
    assert False, f"No exit code for {type(e).__name__}"  # pragma: no cover


@contextlib.contextmanager
def reported_errors(hint: str | None = None):
    """
    Turn domain and I/O errors into one-line diagnostics with our exit codes.
    """
    try:
        yield
    except (EkdError, OSError) as e:
        message = str(e)
        if hint is not None and isinstance(e, (DegenerateSignal, EmptyMask)):
            message += f" ({hint})"
        raise CodecException(message, exit_code_for(e)) from e


class CodecGroup(click.Group):
    """
    Reports bad flags with the validation exit code instead of click's 2.
    """

    def make_context(self, info_name, args, parent=None, **extra):
        try:
            return super().make_context(info_name, args, parent=parent, **extra)
        except click.UsageError as e:
            e.exit_code = ExitCode.VALIDATION
            raise

    def invoke(self, ctx):
        try:
            return super().invoke(ctx)
        except click.UsageError as e:
            e.exit_code = ExitCode.VALIDATION
            raise


MULTIGRID_OPTIONS = [
    click.option("--mu", type=click.IntRange(min=1), default=2, show_default=True, help="Coarse-grid visits per cycle (2 is a W-cycle)."),
    click.option("--nu0", type=click.IntRange(min=0), default=1, show_default=True, help="Relaxation sweeps after interpolating a coarse solution."),
    click.option("--nu1", type=click.IntRange(min=0), default=4, show_default=True, help="Pre-relaxation sweeps."),
    click.option("--nu2", type=click.IntRange(min=0), default=4, show_default=True, help="Post-relaxation sweeps."),
    click.option("--levels", type=click.IntRange(min=1), default=7, show_default=True, help="Number of grids."),
    click.option("--eps-mask", type=click.FloatRange(min=0, max=1, max_open=True), default=1e-3, show_default=True, help="Coarse pixels whose averaged mask exceeds this stay stored."),
    click.option("--cycles", type=click.IntRange(min=0), default=10, show_default=True, help="Cycles after the nested iteration."),
    click.option("--tol", type=click.FloatRange(min=0, min_open=True), default=1e-9, show_default=True, help="Stop early below this relative residual."),
    click.option("--max-residual", type=click.FloatRange(min=0, min_open=True), default=1e-6, show_default=True, help="Fail if the relative residual is still above this."),
    click.option("--accelerate/--no-accelerate", default=True, show_default=True, help="Use the cycles as a conjugate-gradient preconditioner."),
]


def multigrid_options(command):
    for option in reversed(MULTIGRID_OPTIONS):
        command = option(command)
    return command


def multigrid_config(options: dict) -> MultigridConfig:
    with reported_errors():
        return MultigridConfig(**options)


def echo_stats(**stats):
    for key, value in stats.items():
        click.echo(f"{key}={value}")


@click.group(cls=CodecGroup)
@click.option("-v", "--verbose", count=True)
def main(verbose: int):
    """
    Inpainting-based image codec with a heat-diffusion decoder.
    """
    log_level = logging.WARNING
    log_level -= 10 * verbose
    logging.basicConfig(level=log_level)


@main.command("encode")
@click.argument("source", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("target", type=click.Path(dir_okay=False, path_type=Path))
@click.option(
    "--method",
    type=click.Choice(["edge", "dither", "threshold"]),
    default="dither",
    show_default=True,
    help="How to choose the stored pixels.",
)
@click.option("--density", type=FRACTION, default=0.1, show_default=True, help="Fraction of pixels to store (dither and threshold).")
@click.option("--sigma", type=click.FloatRange(min=0), default=1.0, show_default=True, help="Gaussian presmoothing for edge detection, in pixels.")
@click.option("--grad-threshold", type=click.FloatRange(min=0), default=8.0, show_default=True, help="Weakest gradient an edge may have.")
@click.option("--quant", "--quant-bits", "quant_bits", type=click.IntRange(1, 8), default=8, show_default=True, help="Bits per stored value.")
@click.option("-d", "--d", "subsample_d", type=click.IntRange(1, 0xFFFF), default=1, show_default=True, help="Keep only every d-th stored value.")
@click.option("--corner-fallback", is_flag=True, help="Store the four corners when no mask can be found.")
def encode_command(
    source: Path,
    target: Path,
    method: str,
    density: float,
    sigma: float,
    grad_threshold: float,
    quant_bits: int,
    subsample_d: int,
    corner_fallback: bool,
):
    """
    Compress the PPM/PGM image SOURCE into the EKD1 container TARGET.
    """
    with reported_errors(hint="use --corner-fallback to store the four corners instead"):
        params = EncoderParams(
            method=Method[method.upper()],
            density=density,
            sigma=sigma,
            grad_threshold=grad_threshold,
            quant_bits=quant_bits,
            subsample_d=subsample_d,
            corner_fallback=corner_fallback,
        )
        image = read_image(source)
        result = encode_image(image, params)
        data = encode_container(result.compressed)
        target.write_bytes(data)

    echo_stats(
        method=result.compressed.method.name.lower(),
        width=image.width,
        height=image.height,
        channels=image.channels,
        stored=result.stored_count,
        density=f"{result.density:.6f}",
        clamped=result.clamped_count,
        fallback=str(result.fallback_used).lower(),
        bytes=len(data),
        bpp=f"{bits_per_pixel(data, image.width, image.height):.6f}",
    )


@main.command("decode")
@click.argument("source", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("target", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--t", "t", type=click.FloatRange(min=0, min_open=True), default=1e7, show_default=True, help="Diffusion time.")
@click.option("--m", "m", type=click.IntRange(2, 22), default=3, show_default=True, help="Krylov subspace dimension (m-2 solves per channel).")
@click.option("--gamma", type=click.FloatRange(min=0, min_open=True), help="Use this shift instead of the optimal one for m and t.")
@click.option("--two-term", is_flag=True, help="Orthogonalize against the two latest basis vectors only.")
@click.option("--steady", is_flag=True, help="Compute the steady state instead (harmonic interpolation).")
@multigrid_options
def decode_command(
    source: Path,
    target: Path,
    t: float,
    m: int,
    gamma: float | None,
    two_term: bool,
    steady: bool,
    **multigrid,
):
    """
    Reconstruct the EKD1 container SOURCE into the PPM/PGM image TARGET.
    """
    mg_config = multigrid_config(multigrid)
    with reported_errors():
        compressed = decode_container(source.read_bytes())
        b = stored_field(compressed)
        if steady:
            reconstruction = steady_state(b, compressed.mask, mg_config)
        else:
            report = decode(b, compressed.mask, DecodeParams(t, m, gamma, two_term), mg_config)
            reconstruction = report.reconstruction
        write_image(reconstruction, target)

    if steady:
        echo_stats(mode="steady")
        return
    echo_stats(
        mode="krylov",
        m=m,
        t=t,
        gamma=f"{report.gamma_scaled:.6e}",
        solves=",".join(str(s) for s in report.solves),
        wall_time=f"{report.wall_time:.3f}",
    )


@main.command("bench")
@click.option("--size", type=click.IntRange(min=3), default=64, show_default=True, help="Side of the frame problem.")
@click.option("--t", "times", type=FLOAT_LIST, default="10,1e2,1e3,1e4", show_default=True, help="Diffusion times.")
@click.option("--n", "counts", type=INT_LIST, default="8,32,100", show_default=True, help="Time step counts for implicit Euler and Crank-Nicolson.")
@click.option("--m", "ms", type=INT_LIST, default="3,10", show_default=True, help="Krylov subspace dimensions.")
@click.option("-o", "--output", type=click.File("w"), default="-", help="CSV destination.")
@multigrid_options
def bench_command(
    size: int,
    times: list[float],
    counts: list[int],
    ms: list[int],
    output: TextIO,
    **multigrid,
):
    """
    Compare the Krylov decoder with implicit time stepping on the frame problem.
    """
    mg_config = multigrid_config(multigrid)
    with reported_errors():
        results = run_benchmark(size, times, counts, ms, mg_config)
    write_csv(BenchResult, results, output)


@main.command("bound-check")
@click.option("--size", type=click.IntRange(min=3), default=64, show_default=True, help="Side of the frame problem.")
@click.option("--t", "times", type=FLOAT_LIST, default="25,1e3,1e5", show_default=True, help="Diffusion times.")
@click.option("--m", "ms", type=INT_LIST, default="3,4,5,6,7,8,9,10", show_default=True, help="Krylov subspace dimensions.")
@click.option("-o", "--output", type=click.File("w"), default="-", help="CSV destination.")
@multigrid_options
def bound_check_command(size: int, times: list[float], ms: list[int], output: TextIO, **multigrid):
    """
    Check the measured Krylov error against its a-priori bound.
    """
    mg_config = multigrid_config(multigrid)
    with reported_errors():
        rows = run_bound_check(size, times, ms, mg_config)
    write_csv(BoundRow, rows, output)

    failed = [row for row in rows if not row.passed]
    if failed:
        raise CodecException(
            f"{len(failed)} of {len(rows)} rows exceed the error bound", ExitCode.SOLVER
        )


@main.command("metrics")
@click.argument("first", type=click.Path(dir_okay=False, path_type=Path))
@click.argument("second", type=click.Path(dir_okay=False, path_type=Path))
def metrics_command(first: Path, second: Path):
    """
    Mean squared error and PSNR between two images.
    """
    with reported_errors():
        u = read_image(first)
        v = read_image(second)
        error = mse(u, v)
        peak_ratio = psnr(u, v)

    echo_stats(mse=f"{error:.6f}", psnr=f"{peak_ratio:.6f}")
