__all__ = [
    "BadMagic",
    "ContainerError",
    "ContractViolation",
    "DegenerateSignal",
    "EkdError",
    "EmptyInterior",
    "EmptyMask",
    "ImageFormatError",
    "InflateError",
    "IterationBudgetExceeded",
    "TruncatedStream",
]


class EkdError(Exception):
    pass


class ContractViolation(EkdError, ValueError):
    pass


class EmptyMask(EkdError):
    pass


class EmptyInterior(EkdError):
    pass


class DegenerateSignal(EkdError):
    pass


class IterationBudgetExceeded(EkdError):
    def __init__(self, residual: float, cycles: int):
        self.residual = residual
        self.cycles = cycles

    def __str__(self) -> str:
        return f"Multigrid did not converge after {self.cycles} cycles (relative residual {self.residual:.3e})"


class ContainerError(EkdError):
    pass


class BadMagic(ContainerError):
    def __init__(self, magic: bytes):
        self.magic = magic

    def __str__(self) -> str:
        return f"Not an EKD1 container (magic {self.magic!r})"


class TruncatedStream(ContainerError):
    pass


class InflateError(ContainerError):
    pass


class ImageFormatError(EkdError):
    pass
