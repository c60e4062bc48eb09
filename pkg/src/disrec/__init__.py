"""Disentangled contrastive learning engine for social top-K recommendation."""

from .config import Config
from .data import Dataset
from .recommender import DisentangledSocialRecommender

__version__ = "0.1.0"

__all__ = ["Config", "Dataset", "DisentangledSocialRecommender", "__version__"]
