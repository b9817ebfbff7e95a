import hashlib
from pathlib import Path

SPHERE_DEPTH_VERSION = "0.1.0"

PACKAGE_ROOT = Path(__file__).resolve().parent


def get_core_hash():
    """Hash of the numerical core, echoed by the CLI so result files can be traced to the code that made them."""
    core_files = [
        "geometry/sphere_geom.py",
        "losses/disparity.py",
        "losses/temporal.py",
        "optimization/optimizer.py",
    ]
    hasher = hashlib.sha256()
    for rel_path in core_files:
        full_path = PACKAGE_ROOT / rel_path
        if full_path.exists():
            hasher.update(full_path.read_bytes())
    return hasher.hexdigest()[:12]
