"""HTTP service and shared request handlers."""

from . import handlers

__all__ = ["handlers"]
