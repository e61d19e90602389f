"""Homography estimation benchmark toolkit."""

from homkit.correspondences import Correspondence, Correspondences

__version__ = "0.1.0"

__all__ = ["Correspondence", "Correspondences", "__version__"]
