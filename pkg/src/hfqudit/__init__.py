"""Ensemble control of an 8-level hyperfine qudit (F=3 manifold plus |4,4>)."""

__version__ = "0.1.0"
