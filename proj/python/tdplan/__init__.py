"""Truncated diffusion trajectory planner: python face of the C++ core."""

from ._tdplan import *  # noqa: F401,F403
from ._tdplan import __doc__  # noqa: F401

__version__ = "0.1.0"
