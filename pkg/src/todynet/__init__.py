"""Dynamic graph neural network for multivariate time series classification,
built on a small numpy autodiff engine."""

import hashlib
from functools import lru_cache
from pathlib import Path

__version__ = "0.1.0"


@lru_cache(maxsize=1)
def artifact_version():
    """``<version>+g<hash>`` where the hash covers the package's Python sources."""
    h = hashlib.sha256()
    root = Path(__file__).parent
    for path in sorted(root.rglob("*.py")):
        h.update(path.relative_to(root).as_posix().encode())
        h.update(path.read_bytes())
    return f"{__version__}+g{h.hexdigest()[:12]}"


from .model import ModelConfig, TodyNet  # noqa: E402
from .train import TrainReport, evaluate, load_checkpoint, save_checkpoint, train  # noqa: E402

__all__ = [
    "ModelConfig",
    "TodyNet",
    "TrainReport",
    "artifact_version",
    "evaluate",
    "load_checkpoint",
    "save_checkpoint",
    "train",
]
