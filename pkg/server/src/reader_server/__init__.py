"""Reference implementation of the ragfuse reader wire protocol."""

from .app import create_app
from .scorer import ScorerParams

__version__ = "0.1.0"

__all__ = ["create_app", "ScorerParams", "__version__"]
