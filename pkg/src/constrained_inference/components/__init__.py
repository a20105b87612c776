"""Constrained inference components"""
from .inference_tools import InferenceTools

__all__ = [
    "InferenceTools",
]
