"""Embedding bridge: sentence vectors for trace lines and causal-LM
final-hidden-layer vectors for prompts, served over a stdio JSON protocol."""

__version__ = "0.1.0"

from .models import BridgeConfig, BridgeModels, ModelLoadFailure  # noqa: F401
from .server import serve  # noqa: F401
from .extract import batch_extract  # noqa: F401
