"""gramtex: feed-forward texture synthesis and stylization by Gram-matrix matching."""

from .errors import ConfigError, FormatError, GramtexError, NumericError, ShapeError
from .tensor import (
    Tensor,
    concat,
    default_dtype,
    no_grad,
    set_default_dtype,
    set_finite_checks,
    zero_grad,
)

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "FormatError",
    "GramtexError",
    "NumericError",
    "ShapeError",
    "Tensor",
    "concat",
    "default_dtype",
    "no_grad",
    "set_default_dtype",
    "set_finite_checks",
    "zero_grad",
    "__version__",
]
