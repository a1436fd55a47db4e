"""GLM losses in the margin t = <x, beta> and their derivatives.

All three models share the linear hypothesis f(x, beta) = <x, beta>, so every
derivative with respect to beta or x is a scalar derivative in t times x or
beta.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError

POISSON_MARGIN_CAP = 500.0


class ModelKind(str, enum.Enum):
    LOGISTIC = "logistic"
    POISSON = "poisson"
    LINEAR = "linear"


class LabelKind(str, enum.Enum):
    BINARY_PM1 = "binary_pm1"
    COUNT = "count"
    REAL = "real"


LABEL_KIND_FOR = {
    ModelKind.LOGISTIC: LabelKind.BINARY_PM1,
    ModelKind.POISSON: LabelKind.COUNT,
    ModelKind.LINEAR: LabelKind.REAL,
}


def check_labels(kind: LabelKind, y) -> np.ndarray:
    y = np.asarray(y, dtype=float)
    if not np.all(np.isfinite(y)):
        raise InvalidInputError("labels must be finite")
    if kind is LabelKind.BINARY_PM1 and not np.all((y == 1.0) | (y == -1.0)):
        raise InvalidInputError("logistic labels must be -1 or +1")
    if kind is LabelKind.COUNT and not np.all((y >= 0) & (y == np.floor(y))):
        raise InvalidInputError("Poisson labels must be nonnegative integers")
    return y


@dataclass(frozen=True)
class Dataset:
    features: np.ndarray
    labels: np.ndarray
    label_kind: LabelKind

    def __post_init__(self):
        X = np.array(self.features, dtype=float)
        if X.ndim == 1:
            X = X[:, None]
        if X.ndim != 2 or X.shape[0] < 1 or X.shape[1] < 1:
            raise InvalidInputError(f"features must be a non-empty n x d matrix, got shape {X.shape}")
        if not np.all(np.isfinite(X)):
            raise InvalidInputError("features must be finite")
        kind = LabelKind(self.label_kind)
        y = check_labels(kind, np.array(self.labels, dtype=float).reshape(-1))
        if y.shape[0] != X.shape[0]:
            raise InvalidInputError(f"{X.shape[0]} feature rows but {y.shape[0]} labels")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "label_kind", kind)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]


@dataclass(frozen=True)
class GlmModel:
    """One of the three GLMs. ``noise_sigma`` is Var(Y|X)^(1/2), linear only."""

    kind: ModelKind
    noise_sigma: Optional[float] = None

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if kind is ModelKind.LINEAR:
            if self.noise_sigma is not None and not self.noise_sigma > 0:
                raise InvalidInputError("noise_sigma must be positive")
        elif self.noise_sigma is not None:
            raise InvalidInputError(f"noise_sigma only applies to the linear model, not {kind.value}")

    @classmethod
    def logistic(cls):
        return cls(ModelKind.LOGISTIC)

    @classmethod
    def poisson(cls):
        return cls(ModelKind.POISSON)

    @classmethod
    def linear(cls, noise_sigma=None):
        return cls(ModelKind.LINEAR, noise_sigma)

    @property
    def label_kind(self) -> LabelKind:
        return LABEL_KIND_FOR[self.kind]

    @property
    def curvature_bound(self) -> float:
        """sup_t of the second derivative in t; inf for Poisson."""
        return {ModelKind.LOGISTIC: 0.25, ModelKind.LINEAR: 1.0, ModelKind.POISSON: np.inf}[self.kind]

    # Vectorised kernels below do no label validation; callers validate once.

    def loss(self, t, y):
        t = np.asarray(t, dtype=float)
        if self.kind is ModelKind.LOGISTIC:
            m = y * t
            return np.log1p(np.exp(-np.abs(m))) + np.maximum(0.0, -m)
        if self.kind is ModelKind.POISSON:
            return _capped_exp(t) - y * t
        return 0.5 * (t - y) ** 2

    def dloss_dt(self, t, y):
        t = np.asarray(t, dtype=float)
        if self.kind is ModelKind.LOGISTIC:
            return -y * expit(-y * t)
        if self.kind is ModelKind.POISSON:
            return _capped_exp(t) - y
        return t - y

    def first_two_derivs(self, t, y):
        """``(dloss_dt, d2loss_dt2)`` sharing one exponential evaluation."""
        t = np.asarray(t, dtype=float)
        if self.kind is ModelKind.LOGISTIC:
            p = expit(t)
            # -y * expit(-y t) == p - (1 + y) / 2 for y in {-1, +1}
            return p - 0.5 * (1.0 + y), p * (1.0 - p)
        if self.kind is ModelKind.POISSON:
            e = _capped_exp(t)
            return e - y, e
        return t - y, np.ones_like(t)

    def d2loss_dt2(self, t, y=None):
        t = np.asarray(t, dtype=float)
        if self.kind is ModelKind.LOGISTIC:
            p = expit(t)
            return p * (1.0 - p)
        if self.kind is ModelKind.POISSON:
            return _capped_exp(t)
        return np.ones_like(t)


def _capped_exp(t):
    if np.any(t > POISSON_MARGIN_CAP):
        raise OverflowError(f"Poisson margin exceeds {POISSON_MARGIN_CAP}")
    return np.exp(t)


def _check_pair(model: GlmModel, x, beta):
    x = np.asarray(x, dtype=float)
    beta = np.asarray(beta, dtype=float)
    if x.shape != beta.shape or x.ndim != 1:
        raise InvalidInputError(f"dimension mismatch: x {x.shape} vs beta {beta.shape}")
    return x, beta


def _label(model: GlmModel, y) -> float:
    return float(check_labels(model.label_kind, np.atleast_1d(y))[0])


def loss(model: GlmModel, t: float, y: float) -> float:
    return float(model.loss(t, _label(model, y)))


def dloss_dt(model: GlmModel, t: float, y: float) -> float:
    return float(model.dloss_dt(t, _label(model, y)))


def d2loss_dt2(model: GlmModel, t: float, y: float) -> float:
    return float(model.d2loss_dt2(t, _label(model, y)))


def grad_beta(model: GlmModel, x, beta, y) -> np.ndarray:
    x, beta = _check_pair(model, x, beta)
    return dloss_dt(model, x @ beta, y) * x


def hess_beta(model: GlmModel, x, beta, y) -> np.ndarray:
    x, beta = _check_pair(model, x, beta)
    return d2loss_dt2(model, x @ beta, y) * np.outer(x, x)


def grad_x(model: GlmModel, x, beta, y) -> np.ndarray:
    x, beta = _check_pair(model, x, beta)
    return dloss_dt(model, x @ beta, y) * beta


def empirical_loss(model: GlmModel, data: Dataset, beta) -> float:
    return float(np.mean(model.loss(data.features @ np.asarray(beta, dtype=float), data.labels)))


def check_compatible(model: GlmModel, data: Dataset) -> None:
    if data.label_kind is not model.label_kind:
        raise InvalidInputError(
            f"{model.kind.value} model needs {model.label_kind.value} labels, dataset has {data.label_kind.value}"
        )
