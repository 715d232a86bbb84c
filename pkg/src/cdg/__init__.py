"""Channel-directed gradient preconditioning for 4-D parameter tensors."""

from cdg.errors import InvalidArgument
from cdg.precondition import PrecondConfig

__all__ = ["InvalidArgument", "PrecondConfig"]
__version__ = "0.1.0"
