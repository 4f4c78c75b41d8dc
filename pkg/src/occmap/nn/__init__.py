"""Numpy encoder-decoder network, training loop and checkpoints."""

from .network import Network, build_network, decide, weighted_bce
from .train import TrainConfig, predict_logits, train

__all__ = ["Network", "TrainConfig", "build_network", "decide", "predict_logits", "train", "weighted_bce"]
