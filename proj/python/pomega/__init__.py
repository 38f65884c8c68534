"""Regularized P-function tomography, homodyne postselection and TWA polariton simulation."""

from ._pomega import *  # noqa: F401,F403
from ._pomega import __doc__  # noqa: F401

__version__ = "0.1.0"
