"""Hybrid-attention EEG sleep staging."""

from ._hass import *  # noqa: F401,F403
from ._hass import __version__  # noqa: F401
