"""Synthetic GLM data: Gaussian features for logistic/linear, a box for Poisson."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.special import expit

from .errors import InvalidInputError
from .models import LABEL_KIND_FOR, Dataset, ModelKind

LOGISTIC_BETA_STAR = (1 / np.sqrt(17), 4 / np.sqrt(17))
LINEAR_BETA_STAR = (3 / np.sqrt(10), -1 / np.sqrt(10))
LINEAR_SIGMA = 0.1


@dataclass(frozen=True)
class DistributionSpec:
    """Joint law of (X, Y) for one GLM.

    Logistic and linear use standard normal features (so E[X X^T] = I);
    Poisson uses features uniform on ``[box_low, box_high]^d``.
    """

    kind: ModelKind
    beta_star: tuple
    sigma: Optional[float] = None
    box_low: float = -1.0
    box_high: float = 1.0

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        beta = tuple(float(b) for b in np.atleast_1d(self.beta_star))
        object.__setattr__(self, "beta_star", beta)
        if not beta or not np.all(np.isfinite(beta)):
            raise InvalidInputError("beta_star must be a finite non-empty vector")
        if kind is not ModelKind.POISSON and not np.any(beta):
            raise InvalidInputError("beta_star must be nonzero")
        if kind is ModelKind.LINEAR and not (self.sigma is not None and self.sigma > 0):
            raise InvalidInputError("linear model needs sigma > 0")
        if kind is ModelKind.POISSON and not np.all(np.less(self.box_low, self.box_high)):
            raise InvalidInputError("box_low must be below box_high")

    @property
    def beta(self) -> np.ndarray:
        return np.array(self.beta_star)

    @property
    def d(self) -> int:
        return len(self.beta_star)

    def sample_features(self, rng, n):
        if self.kind is ModelKind.POISSON:
            return rng.uniform(self.box_low, self.box_high, size=(n, self.d))
        return rng.standard_normal((n, self.d))

    def sample_labels(self, rng, X):
        eta = X @ self.beta
        if self.kind is ModelKind.LOGISTIC:
            return np.where(rng.random(len(eta)) < expit(eta), 1.0, -1.0)
        if self.kind is ModelKind.POISSON:
            return rng.poisson(np.exp(eta)).astype(float)
        return eta + self.sigma * rng.standard_normal(len(eta))

    def sample(self, n, seed) -> Dataset:
        if n < 1:
            raise InvalidInputError("n must be positive")
        rng = np.random.default_rng(seed)
        X = self.sample_features(rng, n)
        y = self.sample_labels(rng, X)
        return Dataset(X, y, LABEL_KIND_FOR[self.kind])


def generate_logistic(n, beta_star=LOGISTIC_BETA_STAR, seed=0) -> Dataset:
    return DistributionSpec(ModelKind.LOGISTIC, beta_star).sample(n, seed)


def generate_linear(n, beta_star=LINEAR_BETA_STAR, sigma=LINEAR_SIGMA, seed=0) -> Dataset:
    return DistributionSpec(ModelKind.LINEAR, beta_star, sigma=sigma).sample(n, seed)


def generate_poisson(n, beta_star, box_low=-1.0, box_high=1.0, seed=0) -> Dataset:
    return DistributionSpec(ModelKind.POISSON, beta_star, box_low=box_low, box_high=box_high).sample(n, seed)
