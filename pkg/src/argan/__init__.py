"""Numpy-only attentive recurrent GAN for joint shadow detection and removal."""

from .config import ArganConfig, ConfigError, load_config, save_config
from .nets import DiscriminatorNet, Generator
from .tensor import Tensor, backward, no_grad

__version__ = "0.1.0"

__all__ = ["ArganConfig", "ConfigError", "DiscriminatorNet", "Generator", "Tensor",
           "backward", "load_config", "no_grad", "save_config"]
