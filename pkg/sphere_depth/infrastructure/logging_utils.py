import logging
import sys
from pathlib import Path
from typing import Optional, Tuple


class SphereDepthError(Exception):
    """Base exception for all sphere_depth errors."""
    pass


class InputError(SphereDepthError):
    """Raised when inputs (files, flags, arrays) cannot be used as given. CLI exit code 2."""
    pass


class ConfigurationError(InputError):
    """Raised when there is an issue with the configuration or the requested run."""
    pass


class ShapeError(InputError):
    """Raised when rasters disagree in resolution, channel count or class count."""
    pass


class DomainError(InputError):
    """Raised when a value lies outside the mathematical domain of an operation."""
    pass


class GeometryRangeError(InputError):
    """Raised when pixel coordinates fall outside the raster."""
    pass


class DegenerateGeometryError(InputError):
    """Raised when a scene point coincides with the target camera center."""
    pass


class EmptyReconstructionError(InputError):
    """Raised when a sparse reconstruction holds no valid depth sample."""
    pass


class InsufficientOverlapError(InputError):
    """Raised when a warped frame covers too little of the target."""

    def __init__(self, coverage: float, min_coverage: float):
        self.coverage = coverage
        self.min_coverage = min_coverage
        super().__init__(f"insufficient-overlap: coverage {coverage:.4f} below minimum {min_coverage:.4f}")


class NonFiniteError(InputError):
    """Raised by the validation layer when a raster holds NaN or inf."""
    pass


class AlignmentError(InputError):
    """Raised when a frame pair cannot be turned into a left-right stereo pair."""
    pass


class VerticalMotionError(AlignmentError):
    pass


class StaticViewpointError(AlignmentError):
    pass


class FormatError(InputError):
    """Raised by file readers. `offset` is a byte offset for binary formats, a line number for text ones."""

    def __init__(self, path: str, offset: int, message: str, unit: str = "byte"):
        self.path = path
        self.offset = offset
        super().__init__(f"{path}: {message} (at {unit} {offset})")


class NumericalFailureError(SphereDepthError):
    """Raised when a loss or gradient goes non-finite. CLI exit code 3."""

    def __init__(self, message: str, pair: Optional[Tuple[int, int]] = None, pixel: Optional[Tuple[int, int]] = None):
        self.pair = pair
        self.pixel = pixel
        context = []
        if pair is not None:
            context.append(f"pair {pair[0]}->{pair[1]}")
        if pixel is not None:
            context.append(f"pixel (row {pixel[0]}, col {pixel[1]})")
        suffix = f" [{', '.join(context)}]" if context else ""
        super().__init__(f"numerical-failure: {message}{suffix}")


def setup_logger(name: str, log_file: Optional[str] = None, level: int = logging.WARNING):
    """Sets up a centralized logger with a stderr handler and an optional file handler."""
    logger = logging.getLogger(name)
    logger.setLevel(level)

    if logger.handlers:
        return logger

    formatter = logging.Formatter('%(asctime)s [%(levelname)s] %(name)s: %(message)s')

    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setFormatter(formatter)
    logger.addHandler(console_handler)

    if log_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file)
        file_handler.setFormatter(formatter)
        logger.addHandler(file_handler)

    return logger


def attach_log_file(logger: logging.Logger, log_file: str):
    """Adds a file handler to an already configured logger, once per path."""
    log_path = Path(log_file).resolve()
    for handler in logger.handlers:
        if isinstance(handler, logging.FileHandler) and Path(handler.baseFilename) == log_path:
            return logger
    log_path.parent.mkdir(parents=True, exist_ok=True)
    file_handler = logging.FileHandler(log_path)
    file_handler.setFormatter(logging.Formatter('%(asctime)s [%(levelname)s] %(name)s: %(message)s'))
    logger.addHandler(file_handler)
    return logger


# Singleton logger
logger = setup_logger("SphereDepth")
