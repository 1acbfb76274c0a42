"""Python bindings for the flowgen order-flow toolkit."""

from ._flowgen import *  # noqa: F401,F403
from ._flowgen import __version__  # noqa: F401
