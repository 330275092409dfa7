"""Agent crews that build tabular credit models and validate them."""

from .errors import FincrewError
from .gateway import Gateway
from .modeling_crew import make_recipe, run_recipe
from .mrm import MrmConfig, run_mrm
from .synthetic import generate_synthetic_dataset

__version__ = "0.1.0"

__all__ = ["FincrewError", "Gateway", "make_recipe", "run_recipe", "MrmConfig", "run_mrm",
           "generate_synthetic_dataset", "__version__"]
