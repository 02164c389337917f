"""Linear classifiers: multinomial logistic regression and one-vs-all L1 SVM."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize
from scipy.special import softmax

from .core import MissingClassError


@dataclass(frozen=True)
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return (X - self.mean) / self.std


def fit_standardizer(X) -> Standardizer:
    """Per-column mean and population std; constant columns get std 1."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] < 2:
        raise ValueError("standardization needs at least 2 rows")
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std > 0, std, 1.0)
    return Standardizer(mean, std)


def _identity(dim: int) -> Standardizer:
    return Standardizer(np.zeros(dim), np.ones(dim))


def _check_training(X, y, n_classes):
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (N, D) with one label per row")
    if not np.all(np.isfinite(X)):
        raise ValueError("training data contains non-finite values")
    if n_classes is None:
        n_classes = int(y.max()) + 1
    if y.min() < 0 or y.max() >= n_classes:
        raise ValueError(f"labels must lie in 0..{n_classes - 1}")
    missing = sorted(set(range(n_classes)) - set(y.tolist()))
    if missing:
        raise MissingClassError(f"classes {missing} have no training samples")
    return X, y, n_classes


def _with_bias(X) -> np.ndarray:
    return np.hstack([np.ones((X.shape[0], 1)), X])


def _check_dim(x, dim: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dim:
        raise ValueError(f"expected {dim} features, got {x.shape[-1]}")
    return x


# --------------------------------------------------------------------------
# Logistic regression
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class LogisticConfig:
    ridge: float = 1e-4
    max_iter: int = 5000
    tol: float = 1e-6
    seed: int = 0
    standardize: bool = True


@dataclass(frozen=True)
class LogisticModel:
    weights: np.ndarray  # (C, D + 1), bias in column 0
    scaler: Standardizer
    config: LogisticConfig
    n_iter: int = 0
    loss_history: tuple = field(default=(), repr=False, compare=False)

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1] - 1

    def scores(self, X) -> np.ndarray:
        X = _check_dim(X, self.dim)
        Z = self.scaler.transform(np.atleast_2d(X))
        return _with_bias(Z) @ self.weights.T

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.scores(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)


def logistic_loss_grad(W, Xb, y, ridge: float):
    """Mean cross-entropy plus ``ridge/2 * ||W[:, 1:]||^2`` and its gradient.

    ``Xb`` already carries the bias column, ``W`` is ``(C, D + 1)``.
    """
    n = Xb.shape[0]
    rows = np.arange(n)
    S = Xb @ W.T
    S -= S.max(axis=1, keepdims=True)
    E = np.exp(S)
    Z = E.sum(axis=1)
    loss = np.mean(np.log(Z) - S[rows, y])
    P = E / Z[:, None]
    P[rows, y] -= 1.0
    grad = P.T @ Xb / n
    penalized = W[:, 1:]
    loss += 0.5 * ridge * np.sum(penalized * penalized)
    grad[:, 1:] += ridge * penalized
    return float(loss), grad


def train_logistic(X, y, n_classes=None, config: LogisticConfig | None = None) -> LogisticModel:
    """Full-batch gradient descent with Armijo backtracking, starting from zero weights."""
    config = config or LogisticConfig()
    X, y, n_classes = _check_training(X, y, n_classes)
    scaler = fit_standardizer(X) if config.standardize else _identity(X.shape[1])
    Xb = _with_bias(scaler.transform(X))

    W = np.zeros((n_classes, Xb.shape[1]))
    loss, grad = logistic_loss_grad(W, Xb, y, config.ridge)
    history = [loss]
    step = 1.0
    it = 0
    for it in range(1, config.max_iter + 1):
        gnorm2 = float(np.sum(grad**2))
        if np.sqrt(gnorm2) < config.tol:
            it -= 1
            break
        step *= 2.0
        while True:
            W_new = W - step * grad
            loss_new, grad_new = logistic_loss_grad(W_new, Xb, y, config.ridge)
            if loss_new <= loss - 1e-4 * step * gnorm2:
                break
            step *= 0.5
            if step < 1e-20:
                # no descent possible at machine precision
                return LogisticModel(W, scaler, config, it - 1, tuple(history))
        W, loss, grad = W_new, loss_new, grad_new
        history.append(loss)
    W.setflags(write=False)
    return LogisticModel(W, scaler, config, it, tuple(history))


def predict_logistic(model: LogisticModel, x) -> np.ndarray:
    """Class posterior for a single instance."""
    x = _check_dim(x, model.dim)
    if x.ndim != 1:
        raise ValueError("predict_logistic expects a single feature vector")
    return model.predict_proba(x)[0]


# --------------------------------------------------------------------------
# L1-regularized linear SVM, one-vs-all
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class L1SvmOvaModel:
    weights: np.ndarray  # (C, D + 1), bias in column 0
    scaler: Standardizer
    reg_strength: float

    @property
    def n_classes(self) -> int:
        return self.weights.shape[0]

    @property
    def dim(self) -> int:
        return self.weights.shape[1] - 1

    def scores(self, X) -> np.ndarray:
        X = _check_dim(X, self.dim)
        Z = self.scaler.transform(np.atleast_2d(X))
        return _with_bias(Z) @ self.weights.T

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.scores(X), axis=1)

    def predict_proba(self, X) -> np.ndarray:
        # softmax of the one-vs-all scores; only used by the mean/product combiners
        return softmax(self.scores(X), axis=1)


def train_l1svm_binary(X, t, reg_strength: float):
    """Solve ``min sum_i hinge(t_i (w.x_i + b)) + reg * ||w||_1`` as a linear program.

    ``t`` holds +-1 targets. Returns ``(b, w)``.
    """
    X = np.asarray(X, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    n, d = X.shape
    # variables: w+ (d), w- (d), b (1), slack (n)
    c = np.concatenate([np.full(2 * d, reg_strength), [0.0], np.ones(n)])
    tX = t[:, None] * X
    A = np.hstack([-tX, tX, -t[:, None], -np.eye(n)])
    bounds = [(0, None)] * (2 * d) + [(None, None)] + [(0, None)] * n
    res = optimize.linprog(c, A_ub=A, b_ub=-np.ones(n), bounds=bounds, method="highs")
    if res.status != 0:
        raise RuntimeError(f"L1-SVM linear program failed: {res.message}")
    w = res.x[:d] - res.x[d : 2 * d]
    return float(res.x[2 * d]), w


def train_l1svm_ova(X, y, reg_strength: float = 1.0, n_classes=None, standardize: bool = True) -> L1SvmOvaModel:
    if reg_strength < 0:
        raise ValueError("reg_strength must be non-negative")
    X, y, n_classes = _check_training(X, y, n_classes)
    scaler = fit_standardizer(X) if standardize else _identity(X.shape[1])
    Z = scaler.transform(X)
    W = np.empty((n_classes, X.shape[1] + 1))
    for c in range(n_classes):
        b, w = train_l1svm_binary(Z, np.where(y == c, 1.0, -1.0), reg_strength)
        W[c, 0] = b
        W[c, 1:] = w
    W.setflags(write=False)
    return L1SvmOvaModel(W, scaler, float(reg_strength))


def predict_ova_max(model: L1SvmOvaModel, x) -> int:
    """Class with the largest one-vs-all score; ties go to the lowest index."""
    x = _check_dim(x, model.dim)
    if x.ndim != 1:
        raise ValueError("predict_ova_max expects a single feature vector")
    return int(np.argmax(model.scores(x)[0]))
