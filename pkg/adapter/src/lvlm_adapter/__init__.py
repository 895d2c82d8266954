"""LLaVA-style Hugging Face backend for the edecode wire protocol."""

from .config import AdapterConfig

__version__ = "0.1.0"
__all__ = ["AdapterConfig", "__version__"]
