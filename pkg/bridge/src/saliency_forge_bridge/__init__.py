"""Classifier service and attribution-stack generator for the
saliency-forge aggregation core."""

from .data import load_split
from .explainers import EXPLAINER_NAMES, GENERATORS
from .gen_stacks import generate_stacks
from .model import DigitCnn, load_model, predict_probabilities, save_model, train_model
from .service import BridgeServer

__version__ = "0.1.0"

__all__ = [
    "BridgeServer",
    "DigitCnn",
    "EXPLAINER_NAMES",
    "GENERATORS",
    "generate_stacks",
    "load_model",
    "load_split",
    "predict_probabilities",
    "save_model",
    "train_model",
]
