"""Bias adjustment of the WDRO estimator.

The WDRO estimator is asymptotically centred at

    K_n(beta) = beta - C(beta)^{-1} H(beta) / sqrt(n)

rather than at beta itself, so the adjusted estimator solves
K_n(beta_adro) = beta_dro. A *curvature function* is any callable
``z -> (C(z), H(z))``; it can be the empirical plug-in built from data, an
analytic population formula, or a Monte Carlo estimate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Tuple

import numpy as np
from scipy.special import expit

from .errors import (
    BracketFailureError,
    DegenerateParameterError,
    EvaluationError,
    IllConditionedCurvatureError,
    InvalidInputError,
    NewtonFailedError,
)
from .models import Dataset, GlmModel, ModelKind, check_compatible
from .scalar import bisect_root
from .synthetic import DistributionSpec

log = logging.getLogger(__name__)

CurvatureFn = Callable[[np.ndarray], Tuple[np.ndarray, np.ndarray]]

MAX_CONDITION = 1e12


@dataclass
class EmpiricalCurvature:
    C_hat: np.ndarray
    H_hat: np.ndarray
    at_beta: np.ndarray


@dataclass
class AdjustResult:
    beta_adro: np.ndarray
    newton_iterations: int
    residual_norm: float
    existence_margin: float
    adjustment_distance: float

    @property
    def existence_verified(self) -> bool:
        return self.existence_margin > 0


@dataclass(frozen=True)
class NewtonOptions:
    tol: float = 1e-10
    max_iter: int = 50
    max_halvings: int = 30
    fd_step: float = 1e-6


def _unit(beta) -> Tuple[np.ndarray, float]:
    beta = np.asarray(beta, dtype=float)
    norm = float(np.linalg.norm(beta))
    if norm == 0.0:
        raise DegenerateParameterError("beta must be nonzero")
    return beta / norm, norm


# ---------------------------------------------------------------------------
# plug-in curvature


def empirical_C(model: GlmModel, data: Dataset, beta) -> np.ndarray:
    """Average Hessian in beta: (1/N) sum_j L''(<X_j, beta>, Y_j) X_j X_j^T."""
    check_compatible(model, data)
    beta = np.asarray(beta, dtype=float)
    if beta.shape != (data.d,):
        raise InvalidInputError(f"beta has shape {beta.shape}, data has d={data.d}")
    X = data.features
    w = model.d2loss_dt2(X @ beta, data.labels)
    C = (X * w[:, None]).T @ X / data.n
    return 0.5 * (C + C.T)


def empirical_H(model: GlmModel, data: Dataset, beta, tau: float) -> np.ndarray:
    """tau * beta/||beta|| * sqrt(mean of L'(<X_j, beta>, Y_j)^2)."""
    check_compatible(model, data)
    u, _ = _unit(beta)
    if u.shape != (data.d,):
        raise InvalidInputError(f"beta has shape {u.shape}, data has d={data.d}")
    if tau == 0:
        return np.zeros_like(u)
    g = model.dloss_dt(data.features @ np.asarray(beta, dtype=float), data.labels)
    return tau * u * np.sqrt(np.mean(g ** 2))


def empirical_curvature(model, data, beta, tau) -> EmpiricalCurvature:
    beta = np.asarray(beta, dtype=float)
    return EmpiricalCurvature(empirical_C(model, data, beta), empirical_H(model, data, beta, tau), beta.copy())


def empirical_curvature_fn(model: GlmModel, data: Dataset, tau: float) -> CurvatureFn:
    check_compatible(model, data)

    def curvature(z):
        return empirical_C(model, data, z), empirical_H(model, data, z, tau)

    return curvature


def isotropic_linear_curvature_fn(tau: float, sigma: float, c: float) -> CurvatureFn:
    """Population curvature of linear regression with E[X X^T] = c I."""

    def curvature(z):
        u, _ = _unit(z)
        return c * np.eye(len(u)), tau * sigma * u

    return curvature


# ---------------------------------------------------------------------------
# the adjustment map and its inverse


def _solve_curvature(C, H):
    cond = np.linalg.cond(C)
    if not np.isfinite(cond) or cond > MAX_CONDITION:
        raise IllConditionedCurvatureError(f"curvature matrix condition number {cond:.3g} exceeds {MAX_CONDITION:g}")
    return np.linalg.solve(C, H)


def K_n(beta, curvature_fn: CurvatureFn, n: int) -> np.ndarray:
    beta = np.asarray(beta, dtype=float)
    C, H = curvature_fn(beta)
    return beta - _solve_curvature(C, H) / np.sqrt(n)


def _fd_jacobian(f, x, h):
    cols = []
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h
        cols.append((f(x + e) - f(x - e)) / (2 * h))
    return np.column_stack(cols)


def existence_check(curvature_fn: CurvatureFn, beta, n: int) -> float:
    """sqrt(n) minus the spectral radius of the Jacobian of z -> C(z)^{-1} H(z).

    Positive means the local invertibility condition holds at ``beta``.
    """
    beta = np.asarray(beta, dtype=float)

    def ratio(z):
        C, H = curvature_fn(z)
        return _solve_curvature(C, H)

    J = _fd_jacobian(ratio, beta, 1e-5 * (1.0 + np.linalg.norm(beta)))
    if not np.all(np.isfinite(J)):
        raise EvaluationError("non-finite curvature near beta")
    return float(np.sqrt(n) - np.max(np.abs(np.linalg.eigvals(J))))


def adjust_newton(beta_dro, curvature_fn: CurvatureFn, n: int, opts: NewtonOptions = None) -> AdjustResult:
    """Solve C(b) b - H(b)/sqrt(n) - C(b) beta_dro = 0 by damped Newton from beta_dro.

    The Jacobian is a central finite difference. Each Newton step is halved
    until the residual norm drops; running out of halvings, or a singular
    Jacobian, raises NewtonFailedError carrying the last iterate.
    """
    opts = opts or NewtonOptions()
    beta_dro = np.asarray(beta_dro, dtype=float)
    root_n = np.sqrt(n)

    def G(b):
        C, H = curvature_fn(b)
        cond = np.linalg.cond(C)
        if not np.isfinite(cond) or cond > MAX_CONDITION:
            raise IllConditionedCurvatureError(f"curvature matrix condition number {cond:.3g}")
        return C @ (b - beta_dro) - H / root_n

    beta = beta_dro.copy()
    g = G(beta)
    res = float(np.max(np.abs(g)))
    it = 0
    while res > opts.tol:
        if it >= opts.max_iter:
            raise NewtonFailedError(f"no convergence in {opts.max_iter} iterations", beta, res)
        J = _fd_jacobian(G, beta, opts.fd_step * (1.0 + np.linalg.norm(beta)))
        try:
            step = np.linalg.solve(J, -g)
        except np.linalg.LinAlgError as exc:
            raise NewtonFailedError("singular Jacobian", beta, res) from exc
        if not np.all(np.isfinite(step)):
            raise NewtonFailedError("singular Jacobian", beta, res)
        scale = 1.0
        gnorm = np.linalg.norm(g)
        for _ in range(opts.max_halvings + 1):
            cand = beta + scale * step
            try:
                g_cand = G(cand)
            except IllConditionedCurvatureError:
                g_cand = None  # overshoot into a flat region: treat as no decrease
            if g_cand is not None and np.linalg.norm(g_cand) < gnorm:
                break
            scale /= 2
        else:
            raise NewtonFailedError("no residual decrease after step halving", beta, res)
        beta, g = cand, g_cand
        res = float(np.max(np.abs(g)))
        it += 1

    margin = min(existence_check(curvature_fn, beta_dro, n), existence_check(curvature_fn, beta, n))
    if margin <= 0:
        log.warning("invertibility condition not verified: existence margin %.3g", margin)
    return AdjustResult(
        beta_adro=beta,
        newton_iterations=it,
        residual_norm=res,
        existence_margin=margin,
        adjustment_distance=float(np.linalg.norm(beta - beta_dro)),
    )


def adjust_closed_form_linear(beta_dro, tau: float, sigma: float, c: float, n: int) -> np.ndarray:
    """Rescale beta_dro, keeping its direction, so its norm grows by tau*sigma/(c sqrt(n))."""
    u, norm = _unit(beta_dro)
    if tau < 0 or not sigma > 0 or not c > 0:
        raise InvalidInputError("need tau >= 0 and sigma, c > 0")
    return u * (norm + tau * sigma / (c * np.sqrt(n)))


def estimate_linear_nuisance(data: Dataset, beta_dro) -> Tuple[float, float]:
    """(sigma_hat, c_hat): residual std at beta_dro and mean diagonal of X^T X / N."""
    X = data.features
    resid = data.labels - X @ np.asarray(beta_dro, dtype=float)
    sigma_hat = float(np.sqrt(np.mean(resid ** 2)))
    c_hat = float(np.mean(np.sum(X ** 2, axis=0) / data.n))
    return sigma_hat, c_hat


def invert_F_bisection(theta, n: int, h_fn, c_fn, target_norm: float, ftol: float = 1e-10) -> float:
    """Root x of F(x) = x - x c(x u) h(x u) / sqrt(n) = target_norm, u = theta/||theta||.

    Here C(z)^{-1} = c_fn(z) I and H(z) = h_fn(z) z. F lies below the
    identity, so the root is searched in [target, target + 10 * adjustment].
    """
    u, _ = _unit(theta)
    if not target_norm > 0:
        raise InvalidInputError("target_norm must be positive")
    root_n = np.sqrt(n)

    def excess(x):
        z = x * u
        return x - x * c_fn(z) * h_fn(z) / root_n - target_norm

    shift = -excess(target_norm)
    if shift == 0.0:
        return float(target_norm)
    lo, hi = target_norm, target_norm + 10.0 * abs(shift)
    g_lo, g_hi = excess(lo), excess(hi)
    if np.sign(g_lo) == np.sign(g_hi):
        raise BracketFailureError(f"F - target has no sign change on [{lo}, {hi}]")
    return float(bisect_root(excess, lo, hi, ftol=ftol))


def adjust_special_case(beta_dro, n: int, h_fn, c_fn) -> np.ndarray:
    """beta_dro/||beta_dro|| * F^{-1}(||beta_dro||) for isotropic curvature."""
    u, norm = _unit(beta_dro)
    return u * invert_F_bisection(u, n, h_fn, c_fn, norm)


# ---------------------------------------------------------------------------
# population curvature by Monte Carlo


@dataclass
class PopulationCurvature:
    C: np.ndarray
    H: np.ndarray
    C_se: np.ndarray
    H_se: np.ndarray

    def __iter__(self):
        return iter((self.C, self.H))


def population_curvature_mc(model: GlmModel, spec: DistributionSpec, beta, tau: float,
                            mc_samples: int = 1_000_000, seed: int = 0, chunk: int = 200_000):
    """Monte Carlo C(beta), H(beta) under ``spec``.

    Only X is sampled; the expectations over Y | X are taken in closed form,
    so this is a route independent of the empirical plug-ins.
    """
    if ModelKind(spec.kind) is not model.kind:
        raise InvalidInputError("model and distribution kinds differ")
    u, _ = _unit(beta)
    beta = np.asarray(beta, dtype=float)
    rng = np.random.default_rng(seed)
    d = len(beta)
    c_sum = np.zeros((d, d))
    c_sq = np.zeros((d, d))
    m_sum = m_sq = 0.0
    done = 0
    while done < mc_samples:
        k = min(chunk, mc_samples - done)
        X = spec.sample_features(rng, k)
        t = X @ beta
        eta = X @ spec.beta
        if model.kind is ModelKind.LOGISTIC:
            w = model.d2loss_dt2(t)
            p1 = expit(eta)
            # L'(t, +1)^2 = expit(-t)^2, L'(t, -1)^2 = expit(t)^2
            g2 = p1 * expit(-t) ** 2 + (1.0 - p1) * expit(t) ** 2
        elif model.kind is ModelKind.POISSON:
            w = np.exp(t)
            mu = np.exp(eta)
            g2 = (w - mu) ** 2 + mu
        else:
            w = np.ones(k)
            g2 = (t - eta) ** 2 + spec.sigma ** 2
        outer = X[:, :, None] * X[:, None, :] * w[:, None, None]
        c_sum += outer.sum(axis=0)
        c_sq += (outer ** 2).sum(axis=0)
        m_sum += g2.sum()
        m_sq += (g2 ** 2).sum()
        done += k
    C = c_sum / done
    C_se = np.sqrt(np.maximum(c_sq / done - C ** 2, 0.0) / done)
    m = m_sum / done
    m_se = np.sqrt(max(m_sq / done - m ** 2, 0.0) / done)
    root = np.sqrt(m)
    H = tau * u * root
    H_se = tau * np.abs(u) * (m_se / (2 * root) if root > 0 else 0.0)
    return PopulationCurvature(C, H, C_se, H_se)
