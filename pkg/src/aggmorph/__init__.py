"""Morphology of aggregate particles from multi-view reconstructions."""

from ._backend import BACKEND

__all__ = ["BACKEND"]
