"""PCA + shrinkage LDA baseline classifier."""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import DataError, NumericalError
from .evaluation import LabeledSample, classification_f1
from .signal import SEGMENT_SHAPE

DEFAULT_PCA_GRID = (16, 32, 64, 128, 256)
_MAGIC = b"LDA1"


class DegenerateCovarianceError(NumericalError):
    pass


@dataclass(frozen=True)
class PcaModel:
    mean: np.ndarray
    components: np.ndarray  # (d, p), orthonormal rows
    explained_variance: np.ndarray
    total_variance: float

    @property
    def d(self) -> int:
        return self.components.shape[0]

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.atleast_2d(X) - self.mean) @ self.components.T

    def inverse_transform(self, Z: np.ndarray) -> np.ndarray:
        return Z @ self.components + self.mean


def fit_pca(X: np.ndarray, d: int) -> PcaModel:
    """Top-``d`` principal axes of ``X`` (rows are samples).

    Each component is sign-fixed so its largest-magnitude entry is positive.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n < 2:
        raise DataError("PCA needs at least two samples")
    if not 1 <= d <= min(n, p):
        raise DataError(f"PCA dimensionality {d} outside [1, {min(n, p)}]")
    mean = X.mean(axis=0)
    Xc = X - mean
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    if s[0] <= 1e-12 * max(1.0, np.abs(X).max()):
        raise DataError("PCA input has rank 0 (all rows identical)")
    comps = vt[:d].copy()
    pivot = np.argmax(np.abs(comps), axis=1)
    signs = np.sign(comps[np.arange(d), pivot])
    comps *= signs[:, None]
    var = s ** 2 / (n - 1)
    return PcaModel(mean, comps, var[:d], float(var.sum()))


def ledoit_wolf_cov(Xc: np.ndarray) -> tuple[np.ndarray, float]:
    """Ledoit-Wolf shrunk covariance of already-centred data and its intensity.

    The target is the scaled identity trace(S)/d * I, with S the maximum
    likelihood covariance (divided by n).
    """
    Xc = np.asarray(Xc, dtype=np.float64)
    n, d = Xc.shape
    if n < 2:
        raise DataError("covariance estimation needs at least two samples")
    S = Xc.T @ Xc / n
    mu = np.trace(S) / d
    if mu <= 0:
        raise DegenerateCovarianceError("sample covariance is zero; shrinkage target is singular")
    delta = np.sum((S - mu * np.eye(d)) ** 2) / d
    # average squared deviation of the rank-one sample terms x x^T from S
    sq = Xc ** 2
    beta = (np.sum(sq.T @ sq) / n - np.sum(S ** 2)) / (n * d)
    beta = min(beta, delta)
    lam = 0.0 if delta == 0 else float(np.clip(beta / delta, 0.0, 1.0))
    shrunk = (1 - lam) * S
    shrunk[np.diag_indices(d)] += lam * mu
    return shrunk, lam


@dataclass(frozen=True)
class LdaModel:
    weights: np.ndarray
    bias: float
    class_means: np.ndarray  # (2, d): rows for class 0 and class 1
    shrunk_cov: np.ndarray
    shrinkage: float

    def decision(self, Z: np.ndarray) -> np.ndarray:
        return np.atleast_2d(Z) @ self.weights + self.bias

    def score(self, Z: np.ndarray) -> np.ndarray:
        return _sigmoid(self.decision(Z))


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * np.asarray(x, dtype=np.float64)))


def fit_lda(Z: np.ndarray, y) -> LdaModel:
    """Two-class LDA with a Ledoit-Wolf shrunk pooled within-class covariance.

    The weights are the least-squares solution of cov @ w = mu1 - mu0; the bias
    puts the decision boundary at the midpoint of the class means, shifted by
    the log prior ratio.
    """
    Z = np.asarray(Z, dtype=np.float64)
    y = np.asarray(y).astype(int)
    if Z.ndim != 2 or Z.shape[0] != y.size:
        raise DataError(f"data shape {Z.shape} does not match {y.size} labels")
    n1 = np.count_nonzero(y == 1)
    n0 = np.count_nonzero(y == 0)
    if n0 == 0 or n1 == 0:
        raise DataError("LDA needs samples from both classes")
    mu0 = Z[y == 0].mean(axis=0)
    mu1 = Z[y == 1].mean(axis=0)
    within = np.where((y == 1)[:, None], Z - mu1, Z - mu0)
    cov, lam = ledoit_wolf_cov(within)
    if np.linalg.eigvalsh(cov)[0] <= 0:
        raise DegenerateCovarianceError("shrunk covariance is not positive definite")
    w, *_ = np.linalg.lstsq(cov, mu1 - mu0, rcond=None)
    bias = float(-w @ (mu0 + mu1) / 2 + np.log(n1 / n0))
    return LdaModel(w, bias, np.stack([mu0, mu1]), cov, lam)


@dataclass(frozen=True)
class LdaClassifier:
    """PCA projection followed by LDA; maps spectrograms to positive-class scores."""

    pca: PcaModel
    lda: LdaModel
    input_shape: tuple[int, int] = SEGMENT_SHAPE

    def _flatten(self, specs) -> np.ndarray:
        x = np.asarray(specs, dtype=np.float64)
        if x.shape[-2:] != tuple(self.input_shape):
            raise DataError(f"expected {self.input_shape} spectrograms, got {x.shape[-2:]}")
        return x.reshape(-1, self.input_shape[0] * self.input_shape[1])

    def decision(self, specs) -> np.ndarray:
        return self.lda.decision(self.pca.transform(self._flatten(specs)))

    def __call__(self, specs) -> np.ndarray:
        return _sigmoid(self.decision(specs))


def lda_score(model: LdaClassifier, spec) -> float:
    values = getattr(spec, "values", spec)
    return float(model(np.asarray(values)[None])[0])


def fit_classifier(X: np.ndarray, y, d: int, input_shape=SEGMENT_SHAPE) -> LdaClassifier:
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    pca = fit_pca(X, d)
    return LdaClassifier(pca, fit_lda(pca.transform(X), y), tuple(input_shape))


def _stack(samples: Sequence[LabeledSample]):
    X = np.stack([s.spectrogram for s in samples])
    y = np.array([s.label for s in samples])
    return X, y


def random_split(n: int, rng: np.random.Generator, val_fraction: float = 0.15):
    order = rng.permutation(n)
    n_val = int(round(val_fraction * n))
    return order[n_val:], order[:n_val]


def select_pca_dim(train: Sequence[LabeledSample] | tuple, candidates: Sequence[int],
                   seed: int = 0, val_fraction: float = 0.15) -> int:
    """PCA dimensionality with the best validation F1 on a seeded 85:15 split.

    ``train`` is a sequence of labelled samples or an (X, y) pair. Ties go to the
    smallest dimensionality; candidates the training split cannot support are
    skipped.
    """
    candidates = sorted(set(int(c) for c in candidates))
    if not candidates:
        raise DataError("no PCA dimensionality candidates given")
    if len(candidates) == 1:
        return candidates[0]
    X, y = train if isinstance(train, tuple) else _stack(train)
    X = np.asarray(X, dtype=np.float64).reshape(len(y), -1)
    y = np.asarray(y)
    tr, va = random_split(len(y), np.random.default_rng(seed), val_fraction)
    pca_full = fit_pca(X[tr], min(max(candidates), len(tr), X.shape[1]))
    best_d, best_f1 = None, -1.0
    for d in candidates:
        if d > pca_full.d:
            continue
        pca = PcaModel(pca_full.mean, pca_full.components[:d], pca_full.explained_variance[:d],
                       pca_full.total_variance)
        lda = fit_lda(pca.transform(X[tr]), y[tr])
        f1 = classification_f1(y[va], lda.decision(pca.transform(X[va])) >= 0)
        if f1 > best_f1:
            best_d, best_f1 = d, f1
    if best_d is None:
        raise DataError(f"no candidate dimensionality fits {len(tr)} training samples")
    return best_d


def train_lda(samples: Sequence[LabeledSample], candidates=DEFAULT_PCA_GRID, seed: int = 0) -> LdaClassifier:
    X, y = _stack(samples)
    d = select_pca_dim((X, y), candidates, seed)
    return fit_classifier(X, y, d, X.shape[1:])


def save_lda(path, model: LdaClassifier) -> None:
    p = model.pca.mean.size
    d = model.pca.d
    t, f = model.input_shape
    parts = [
        _MAGIC,
        struct.pack("<IIII", t, f, p, d),
        model.pca.mean.astype("<f8").tobytes(),
        model.pca.components.astype("<f8").tobytes(),
        model.lda.weights.astype("<f8").tobytes(),
        struct.pack("<dd", model.lda.bias, model.lda.shrinkage),
    ]
    Path(path).write_bytes(b"".join(parts))


def load_lda(path) -> LdaClassifier:
    data = Path(path).read_bytes()
    if data[:4] != _MAGIC:
        raise DataError(f"{path}: not an LDA model file")
    if len(data) < 20:
        raise DataError(f"{path}: truncated header")
    t, f, p, d = struct.unpack_from("<IIII", data, 4)
    off = 20
    expected = off + 8 * (p + d * p + d + 2)
    if len(data) != expected:
        raise DataError(f"{path}: size {len(data)} does not match header ({expected} bytes)")

    def take(count):
        nonlocal off
        arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).astype(np.float64)
        off += 8 * count
        return arr

    mean = take(p)
    comps = take(d * p).reshape(d, p)
    weights = take(d)
    bias, lam = struct.unpack_from("<dd", data, off)
    pca = PcaModel(mean, comps, np.full(d, np.nan), float("nan"))
    lda = LdaModel(weights, bias, np.full((2, d), np.nan), np.full((d, d), np.nan), lam)
    return LdaClassifier(pca, lda, (t, f))
