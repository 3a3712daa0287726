"""Model server for the span-augmentation wire protocol.

Serves mask filling and type scoring from a prompt-tuned sequence-to-sequence
model (frozen backbone, per-layer soft prompts) and NER training/annotation
from a token-classification model that applies mixup interpolation at a
configurable hidden layer.
"""

from .config import ServerConfig
from .app import create_app

__version__ = "0.1.0"

__all__ = ["ServerConfig", "create_app", "__version__"]
