"""Spectral predictions for structured Gaussian random matrices via their free models."""

from .block import *  # noqa: F401,F403
from .errors import ConvergenceError, ValidationError
from .free import *  # noqa: F401,F403
from .iso import *  # noqa: F401,F403
from .model import *  # noqa: F401,F403

__version__ = "0.1.0"
