"""Accent-intensity-controllable text-to-speech at desk scale.

Modules: ``dsp`` (signal front-end), ``features`` (accent descriptors),
``ranker`` (relative-attribute intensity model), ``nn`` (autodiff engine),
``model``/``train`` (acoustic model), ``corpus`` (data), ``metrics`` and
``evaluation`` (scoring), ``cli`` (command line).
"""
from .kernels import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
