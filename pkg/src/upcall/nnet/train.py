"""Mini-batch training, k-fold cross-validation and multi-seed ensembles."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from ..errors import DataError, NumericalError
from ..evaluation import classification_f1, percentile_summary
from .model import NetConfig, NetParams, ResNetClassifier, init_model, loss_and_grads
from .optim import AdamState, TrainConfig, adam_step

log = logging.getLogger(__name__)


@dataclass
class EpochRecord:
    epoch: int
    loss: float
    f1: float


@dataclass
class TrainResult:
    params: NetParams
    history: list = field(default_factory=list)


def _as_arrays(dataset):
    if isinstance(dataset, tuple):
        X, y = dataset
    else:
        X = np.stack([s.spectrogram for s in dataset])
        y = np.array([s.label for s in dataset])
    return np.asarray(X), np.asarray(y).astype(int)


def minibatches(n: int, batch_size: int, rng: np.random.Generator) -> list[np.ndarray]:
    """Shuffled index batches; a trailing batch of one sample joins its predecessor."""
    order = rng.permutation(n)
    batches = [order[i:i + batch_size] for i in range(0, n, batch_size)]
    if len(batches) > 1 and batches[-1].size < 2:
        batches[-2] = np.concatenate(batches[-2:])
        batches.pop()
    return batches


def train(dataset, cfg: TrainConfig, net_cfg: NetConfig | None = None, params: NetParams | None = None,
          verbose: bool = False) -> TrainResult:
    """Adam on mean cross-entropy for ``cfg.epochs`` epochs, logging loss and training F1.

    ``dataset`` is a sequence of labelled samples or an (X, y) pair. The network
    is initialised from ``net_cfg`` with ``cfg.seed`` unless ``params`` is given.
    """
    X, y = _as_arrays(dataset)
    if len(np.unique(y)) < 2:
        raise DataError("training data must contain both classes")
    if len(y) < 2:
        raise DataError("training needs at least two samples")
    if params is None:
        net_cfg = net_cfg or NetConfig.tiny(input_shape=X.shape[1:])
        params = init_model(replace(net_cfg, seed=cfg.seed))
    rng = np.random.default_rng(cfg.seed)
    state = AdamState()
    history = []
    for epoch in range(1, cfg.epochs + 1):
        total, preds, seen = 0.0, np.empty(len(y), dtype=bool), []
        for idx in minibatches(len(y), cfg.batch_size, rng):
            loss, grads, probs = loss_and_grads(params, X[idx], y[idx])
            if not np.isfinite(loss):
                raise NumericalError(f"non-finite training loss at epoch {epoch}")
            adam_step(params.weights, grads, state, cfg)
            total += loss * len(idx)
            preds[idx] = probs[:, 1] >= 0.5
            seen.append(idx)
        rec = EpochRecord(epoch, total / len(y), classification_f1(y, preds))
        history.append(rec)
        if verbose:
            log.info("epoch %d loss %.4f f1 %.4f", rec.epoch, rec.loss, rec.f1)
    return TrainResult(params, history)


def evaluate_f1(params: NetParams, X, y) -> float:
    scores = ResNetClassifier(params)(X)
    return classification_f1(y, scores >= 0.5)


@dataclass
class CVResult:
    fold_f1: list
    train_sizes: list
    val_sizes: list

    @property
    def mean(self) -> float:
        return float(np.mean(self.fold_f1))

    @property
    def std(self) -> float:
        return float(np.std(self.fold_f1))


def kfold_cv(dataset, cfg: TrainConfig, net_cfg: NetConfig | None = None, k: int | None = None) -> CVResult:
    """Repeated seeded 85:15 random splits, one per fold, scored by validation F1."""
    X, y = _as_arrays(dataset)
    k = cfg.folds if k is None else k
    if k < 2:
        raise DataError("cross-validation needs k >= 2")
    if len(y) < k:
        raise DataError(f"dataset of {len(y)} samples is smaller than k={k}")
    f1s, n_train, n_val = [], [], []
    for fold in range(k):
        rng = np.random.default_rng([cfg.seed, fold])
        order = rng.permutation(len(y))
        n_v = int(round(cfg.val_fraction * len(y)))
        va, tr = order[:n_v], order[n_v:]
        result = train((X[tr], y[tr]), replace(cfg, seed=cfg.seed + fold), net_cfg)
        f1s.append(evaluate_f1(result.params, X[va], y[va]))
        n_train.append(len(tr))
        n_val.append(len(va))
    return CVResult(f1s, n_train, n_val)


def ensemble_train(dataset, cfg: TrainConfig, n_runs: int = 9, net_cfg: NetConfig | None = None) -> list[TrainResult]:
    """Independent runs with seeds seed, seed+1, ..., seed+n_runs-1."""
    if n_runs < 1:
        raise DataError("n_runs must be at least 1")
    return [train(dataset, replace(cfg, seed=cfg.seed + r), net_cfg) for r in range(n_runs)]


def ensemble_report(values) -> dict:
    return percentile_summary(values)


def write_history_csv(path, history) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["epoch", "loss", "f1"])
        for r in history:
            w.writerow([r.epoch, f"{r.loss:.6f}", f"{r.f1:.6f}"])
