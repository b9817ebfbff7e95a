"""
Centralized defaults for sphere_depth.
Exposes configuration values initialized from environment and config files.
"""

from .config_manager import config

# Test-time refinement
EPOCHS = int(config.get("optimize.epochs", 10))
STEP_SIZE = float(config.get("optimize.step_size", 0.05))
MAX_HALVINGS = int(config.get("optimize.max_halvings", 5))
DOWNSAMPLE = int(config.get("optimize.downsample", 4))
DEPTH_MIN = float(config.get("optimize.depth_min", 0.1))
DEPTH_MAX = float(config.get("optimize.depth_max", 1e4))

# Losses and alignment
MIN_COVERAGE = float(config.get("losses.min_coverage", 0.10))
WEIGHT_MODE = str(config.get("losses.weight_mode", "full"))
MAX_VERTICAL_RATIO = float(config.get("alignment.max_vertical_ratio", 0.2))

# Runtime
THREADS = int(config.get("runtime.threads", 1))
LOG_FILE = config.get("logging.file", None)


def reload_globals():
    """Reloads variables if config changes at runtime."""
    global EPOCHS, STEP_SIZE, MAX_HALVINGS, DOWNSAMPLE, DEPTH_MIN, DEPTH_MAX
    global MIN_COVERAGE, WEIGHT_MODE, MAX_VERTICAL_RATIO, THREADS, LOG_FILE
    EPOCHS = int(config.get("optimize.epochs", 10))
    STEP_SIZE = float(config.get("optimize.step_size", 0.05))
    MAX_HALVINGS = int(config.get("optimize.max_halvings", 5))
    DOWNSAMPLE = int(config.get("optimize.downsample", 4))
    DEPTH_MIN = float(config.get("optimize.depth_min", 0.1))
    DEPTH_MAX = float(config.get("optimize.depth_max", 1e4))
    MIN_COVERAGE = float(config.get("losses.min_coverage", 0.10))
    WEIGHT_MODE = str(config.get("losses.weight_mode", "full"))
    MAX_VERTICAL_RATIO = float(config.get("alignment.max_vertical_ratio", 0.2))
    THREADS = int(config.get("runtime.threads", 1))
    LOG_FILE = config.get("logging.file", None)
