"""Multi-scale topological dehazing network on a small numpy autodiff core."""

from .grid import Mstn, MstnConfig, build, forward
from .tensor import ConfigError, ShapeError, Tensor, backward

__all__ = ["Mstn", "MstnConfig", "build", "forward", "Tensor", "backward", "ConfigError", "ShapeError"]
__version__ = "0.1.0"
