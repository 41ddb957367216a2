"""Residual CNN with hand-written forward and backward passes."""

from .model import (NetConfig, NetParams, ResNetClassifier, backward, forward, init_model,
                    load_model, loss_and_grads, save_model)
from .optim import AdamState, TrainConfig, adam_step, learning_rate
from .train import (CVResult, EpochRecord, TrainResult, ensemble_report, ensemble_train, kfold_cv,
                    train, write_history_csv)

__all__ = [
    "NetConfig", "NetParams", "ResNetClassifier", "backward", "forward", "init_model", "load_model",
    "loss_and_grads", "save_model", "AdamState", "TrainConfig", "adam_step", "learning_rate",
    "CVResult", "EpochRecord", "TrainResult", "ensemble_report", "ensemble_train", "kfold_cv", "train",
    "write_history_csv",
]
