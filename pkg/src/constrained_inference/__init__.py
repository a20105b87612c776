"""Constrained structured inference over language-model scores"""

__version__ = "2025.10.18.1"
