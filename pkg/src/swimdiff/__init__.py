"""Scene-aware contrastive pretraining with a diffusion constraint, plus evaluation tools."""

__version__ = "0.1.0"
