"""
This file is for abstract type definitions that can be initialized without any
(expensive) dependencies.
"""

from abc import ABC, abstractmethod


class BasePredictor(ABC):
    """Base class to typecheck noise predictors without having to import torch."""

    kind: str = ""

    @abstractmethod
    def __call__(self, query):
        """Predict the forward-diffusion noise for a PredictorQuery."""
