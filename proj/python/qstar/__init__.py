"""Desk-scale QSTar audio-visual question answering."""

try:
    from qstar._core import *  # noqa: F401,F403
    from qstar._core import __doc__  # noqa: F401
except ImportError:  # running against an in-tree build directory
    from _core import *  # noqa: F401,F403
