"""Logistic-regression rule over query answers, and the likelihood-ratio rule.

Training is deterministic: features are standardized with the training
means/stds and the L2-regularized mean log loss is minimized by
full-batch gradient descent from zero for exactly ``iterations`` steps.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Mapping

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from qbs_audit_core.protocol import DEFAULT_ITERATIONS, DEFAULT_L2, DEFAULT_LEARNING_RATE


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = DEFAULT_LEARNING_RATE
    iterations: int = DEFAULT_ITERATIONS
    l2_lambda: float = DEFAULT_L2

    def __post_init__(self) -> None:
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be positive, got {self.learning_rate}.")
        if self.iterations < 0:
            raise ValueError(f"iterations must be >= 0, got {self.iterations}.")
        if self.l2_lambda < 0:
            raise ValueError(f"l2_lambda must be >= 0, got {self.l2_lambda}.")


@dataclass(frozen=True, eq=False)
class LogisticModel:
    weights: np.ndarray
    bias: float
    feature_means: np.ndarray
    feature_stds: np.ndarray

    def __post_init__(self) -> None:
        for name in ("weights", "feature_means", "feature_stds"):
            array = np.array(getattr(self, name), dtype=np.float64).reshape(-1)
            array.setflags(write=False)
            object.__setattr__(self, name, array)
        if not len(self.weights) == len(self.feature_means) == len(self.feature_stds):
            raise ValueError("Weights, means and stds must have the same length.")
        if np.any(self.feature_stds <= 0):
            raise ValueError("Feature stds must be positive.")

    @property
    def m(self) -> int:
        return len(self.weights)

    def standardize(self, features: np.ndarray) -> np.ndarray:
        return (np.asarray(features, dtype=np.float64) - self.feature_means) / self.feature_stds

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        """Probabilities of label 1 for an (n, m) answer matrix."""
        matrix = np.atleast_2d(np.asarray(features, dtype=np.float64))
        return expit(self.standardize(matrix) @ self.weights + self.bias)

    def predict_labels(self, features: np.ndarray) -> np.ndarray:
        return (self.predict_proba(features) >= 0.5).astype(np.int64)

    def accuracy(self, features: np.ndarray, labels: np.ndarray) -> float:
        labels = np.asarray(labels)
        if not len(labels):
            return 0.0
        return float(np.mean(self.predict_labels(features) == labels))

    def to_dict(self) -> dict[str, Any]:
        return {
            "weights": self.weights.tolist(),
            "bias": float(self.bias),
            "means": self.feature_means.tolist(),
            "stds": self.feature_stds.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> LogisticModel:
        return cls(
            np.asarray(data["weights"], dtype=np.float64),
            float(data["bias"]),
            np.asarray(data["means"], dtype=np.float64),
            np.asarray(data["stds"], dtype=np.float64),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2), encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> LogisticModel:
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def standardization(features: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Column means and stds; zero-variance columns get std 1."""
    means = features.mean(axis=0)
    stds = features.std(axis=0)
    stds = np.where(stds > 0, stds, 1.0)
    return means, stds


def logistic_loss(
    weights: np.ndarray,
    bias: float,
    standardized: np.ndarray,
    labels: np.ndarray,
    l2_lambda: float,
) -> float:
    scores = standardized @ weights + bias
    data_term = np.mean(np.logaddexp(0.0, scores) - labels * scores)
    return float(data_term + 0.5 * l2_lambda * weights @ weights)


def logistic_gradient(
    weights: np.ndarray,
    bias: float,
    standardized: np.ndarray,
    labels: np.ndarray,
    l2_lambda: float,
) -> tuple[np.ndarray, float]:
    """Gradient of :func:`logistic_loss`; the bias is not regularized."""
    residual = expit(standardized @ weights + bias) - labels
    grad_w = standardized.T @ residual / len(labels) + l2_lambda * weights
    return grad_w, float(residual.mean())


def train_logistic(
    features: np.ndarray,
    labels: np.ndarray,
    config: TrainConfig | None = None,
) -> LogisticModel:
    config = config or TrainConfig()
    matrix = np.asarray(features, dtype=np.float64)
    y = np.asarray(labels, dtype=np.float64).reshape(-1)
    if matrix.ndim != 2 or matrix.shape[0] == 0:
        raise ValueError("train_logistic needs at least one training row.")
    if matrix.shape[0] != len(y):
        raise ValueError(f"{matrix.shape[0]} feature rows but {len(y)} labels.")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("Labels must be 0 or 1.")

    means, stds = standardization(matrix)
    standardized = (matrix - means) / stds
    weights = np.zeros(matrix.shape[1])
    bias = 0.0
    for _ in range(config.iterations):
        grad_w, grad_b = logistic_gradient(weights, bias, standardized, y, config.l2_lambda)
        weights = weights - config.learning_rate * grad_w
        bias -= config.learning_rate * grad_b
    return LogisticModel(weights, bias, means, stds)


def predict(model: LogisticModel, answers: np.ndarray) -> tuple[float, int]:
    """Probability and label for one answer vector (label 1 iff p >= 0.5)."""
    if len(answers) != model.m:
        raise ValueError(f"Model expects {model.m} answers, got {len(answers)}.")
    probability = float(model.predict_proba(np.asarray(answers)[None, :])[0])
    return probability, int(probability >= 0.5)


def query_importance(model: LogisticModel) -> np.ndarray:
    return np.abs(model.weights)


def likelihood_ratio_predict(delta: float, l: int, v_n: int) -> int:
    """Guess the target's bit from ``delta = R(q2) - R(q1)``.

    H0 (target not counted): N(0, var 2).  H1 (counted): N(1, var 2l+2).
    Predicts *v_n* only if H1 is strictly more likely.
    """
    if l < 0:
        raise ValueError(f"l must be >= 0, got {l}.")
    h0 = norm.logpdf(delta, loc=0.0, scale=np.sqrt(2.0))
    h1 = norm.logpdf(delta, loc=1.0, scale=np.sqrt(2.0 * l + 2.0))
    return int(v_n) if h1 > h0 else 1 - int(v_n)
