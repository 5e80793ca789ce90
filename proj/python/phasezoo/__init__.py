"""Model-zoo generation, loss-landscape metrics and phase classification."""

from phasezoo._core import *  # noqa: F401,F403
from phasezoo._core import __version__  # noqa: F401
