"""Worst-case loss over a 2-Wasserstein ball and the WDRO fitter.

Labels never move (infinite transport cost across labels), features move with
squared Euclidean cost. For a linear hypothesis the adversary only moves a
sample along beta, so the per-sample inner problem

    sup_x  L(<x, beta>, y) - lam * ||x - X_i||^2

reduces to a scalar problem in t = <x, beta>:

    sup_t  L(t, y) - (kappa / 2) * (t - s_i)^2,   kappa = 2 lam / ||beta||^2,

which is strictly concave once kappa exceeds sup_t L''(t, y).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np

from .errors import (
    ConfigurationError,
    DegenerateParameterError,
    InvalidInputError,
    SolverDivergedError,
    UnboundedInnerProblemError,
)
from .models import Dataset, GlmModel, ModelKind, check_compatible, check_labels, empirical_loss
from .scalar import golden_section_min

log = logging.getLogger(__name__)

_EPS = np.finfo(float).eps


@dataclass(frozen=True)
class WdroConfig:
    """Radius rho_n = tau / sqrt(n) plus solver settings.

    ``tau = 0`` is accepted and collapses the problem to empirical risk
    minimisation. ``lambda_bracket=None`` selects the default bracket.
    """

    tau: float
    n: int
    step_size: float = 0.3
    max_iters: int = 50000
    grad_tol: float = 1e-7
    lambda_bracket: Optional[Tuple[float, float]] = None
    inner_tol: float = 1e-10
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.tau) and self.tau >= 0):
            raise ConfigurationError(f"tau must be a finite nonnegative number, got {self.tau}")
        if int(self.n) != self.n or self.n < 1:
            raise ConfigurationError(f"n must be a positive integer, got {self.n}")
        for name in ("step_size", "grad_tol", "inner_tol"):
            if not getattr(self, name) > 0:
                raise ConfigurationError(f"{name} must be positive")
        if int(self.max_iters) != self.max_iters or self.max_iters < 1:
            raise ConfigurationError("max_iters must be a positive integer")
        if self.lambda_bracket is not None:
            lo, hi = self.lambda_bracket
            if not (0 < lo < hi):
                raise ConfigurationError(f"lambda_bracket must satisfy 0 < low < high, got {self.lambda_bracket}")

    @property
    def radius(self) -> float:
        return self.tau / np.sqrt(self.n)


@dataclass
class FitResult:
    beta_dro: np.ndarray
    robust_loss: float
    lambda_star: float
    iterations: int
    converged: bool
    grad_norm: float


def _require_fittable(model: GlmModel):
    if model.kind is ModelKind.POISSON:
        raise InvalidInputError("worst-case evaluation is implemented for logistic and linear models only")


def _norm2(beta) -> float:
    b2 = float(beta @ beta)
    if not b2 > 0:
        raise DegenerateParameterError("beta must be nonzero")
    return b2


def lambda_threshold(model: GlmModel, beta) -> float:
    """Smallest multiplier for which the reduced inner problem is strictly concave."""
    _require_fittable(model)
    return _norm2(np.asarray(beta, dtype=float)) * model.curvature_bound / 2.0


# ---------------------------------------------------------------------------
# inner problem


def _inner(model: GlmModel, kappa: float, s, y, d0=None, tol=1e-14, max_iter=100):
    """Vectorised maximiser of L(t, y) - kappa/2 (t - s)^2 over t.

    Returns ``(values, t)``. ``d0`` is a warm-start displacement t - s.
    """
    if model.kind is ModelKind.LINEAR:
        t = (kappa * s - y) / (kappa - 1.0)
    else:
        # |L'| < 1, so the root of L'(t) = kappa (t - s) lies on the side of s
        # given by -y, within 1/kappa.
        lo = s - (y > 0) / kappa
        hi = s + (y < 0) / kappa
        t = s + (np.clip(d0, lo - s, hi - s) if d0 is not None else 0.0)
        for _ in range(max_iter):
            dl, d2l = model.first_two_derivs(t, y)
            g1 = dl - kappa * (t - s)
            pos = g1 > 0
            lo = np.where(pos, t, lo)
            hi = np.where(pos, hi, t)
            g2 = d2l - kappa
            t_new = t - g1 / g2
            outside = (t_new < lo) | (t_new > hi)
            t_new = np.where(outside, 0.5 * (lo + hi), t_new)
            step = np.abs(t_new - t)
            t = t_new
            if np.all(step <= tol * (1.0 + np.abs(t))):
                break
    return model.loss(t, y) - 0.5 * kappa * (t - s) ** 2, t


def inner_sup(model: GlmModel, lam: float, beta, x_i, y_i):
    """sup_x L(<x, beta>, y_i) - lam ||x - x_i||^2 as ``(value, t_star)``."""
    _require_fittable(model)
    beta = np.asarray(beta, dtype=float)
    x_i = np.asarray(x_i, dtype=float)
    if beta.shape != x_i.shape:
        raise InvalidInputError("dimension mismatch between beta and x_i")
    b2 = _norm2(beta)
    y = float(check_labels(model.label_kind, [y_i])[0])
    if not lam > b2 * model.curvature_bound / 2.0:
        raise UnboundedInnerProblemError(
            f"lambda={lam} must exceed {b2 * model.curvature_bound / 2.0} for a concave inner problem"
        )
    value, t = _inner(model, 2.0 * lam / b2, np.array([x_i @ beta]), np.array([y]))
    return float(value[0]), float(t[0])


# ---------------------------------------------------------------------------
# dual objective in lambda


def _lambda_bracket(model, config, b2, emp, rho2):
    thr = b2 * model.curvature_bound / 2.0
    if config.lambda_bracket is None:
        return thr * (1.0 + 1e-6), thr + 10.0 * (1.0 + emp) / rho2
    lo, hi = config.lambda_bracket
    if hi <= thr:
        raise ConfigurationError(f"lambda bracket upper end {hi} is below the concavity threshold {thr}")
    return max(lo, thr * (1.0 + 1e-6)), hi


def robust_loss(model: GlmModel, data: Dataset, beta, config: WdroConfig):
    """Worst-case expected loss ``(psi, lambda_star)`` by golden section in lambda."""
    _require_fittable(model)
    check_compatible(model, data)
    beta = np.asarray(beta, dtype=float)
    b2 = _norm2(beta)
    emp = empirical_loss(model, data, beta)
    rho2 = config.radius ** 2
    if rho2 == 0.0:
        return emp, np.inf
    s = data.features @ beta
    y = data.labels
    lo, hi = _lambda_bracket(model, config, b2, emp, rho2)

    def phi(lam):
        values, _ = _inner(model, 2.0 * lam / b2, s, y)
        return lam * rho2 + float(np.mean(values))

    lam, psi = golden_section_min(phi, lo, hi, tol=config.inner_tol)
    return psi, lam


def robust_loss_linear_closed_form(data: Dataset, beta, rho: float) -> float:
    """Exact worst case for the loss (t - y)^2 / 2: (sqrt(mean r^2) + rho ||beta||)^2 / 2."""
    beta = np.asarray(beta, dtype=float)
    b = np.sqrt(_norm2(beta))
    if rho < 0:
        raise InvalidInputError("rho must be nonnegative")
    resid = data.features @ beta - data.labels
    return 0.5 * (np.sqrt(np.mean(resid ** 2)) + rho * b) ** 2


class _DualEvaluator:
    """Psi and its envelope gradient, with lambda found by safeguarded Newton.

    Warm starts (lambda and per-sample displacements) persist between calls,
    which is what makes thousands of gradient steps affordable.
    """

    def __init__(self, model: GlmModel, data: Dataset, config: WdroConfig):
        self.model = model
        self.X = data.features
        self.y = data.labels
        self.config = config
        self.rho2 = config.radius ** 2
        self.lam = None
        self.disp = None

    def __call__(self, beta):
        model, X, y = self.model, self.X, self.y
        s = X @ beta
        if self.rho2 == 0.0:
            psi = float(np.mean(model.loss(s, y)))
            grad = X.T @ model.dloss_dt(s, y) / len(y)
            return psi, np.inf, grad
        b2 = _norm2(beta)
        emp = float(np.mean(model.loss(s, y)))
        lo, hi = _lambda_bracket(model, self.config, b2, emp, self.rho2)
        lam, t = self._solve_lambda(b2, s, lo, hi)
        d = t - s
        values = model.loss(t, y) - (lam / b2) * d ** 2
        psi = lam * self.rho2 + float(np.mean(values))
        w = model.dloss_dt(t, y)
        grad = (X.T @ w + beta * float(w @ d) / b2) / len(y)
        self.lam, self.disp = lam, d
        return psi, lam, grad

    def _solve_lambda(self, b2, s, lo, hi):
        if self.lam is not None and lo < self.lam < hi:
            found = self._joint_newton(b2, s, lo, hi)
            if found is not None:
                return found
        return self._nested_newton(b2, s, lo, hi)

    def _joint_newton(self, b2, s, lo, hi, max_iter=30, rtol=1e-13):
        """Newton on (t_1..t_n, kappa) for the stationarity system

            L'(t_i) = kappa (t_i - s_i),   mean (t_i - s_i)^2 = rho^2 ||beta||^2.

        The kappa step comes from a scalar Schur complement. Returns None when
        it leaves the bracket or stalls, so the caller can fall back.
        """
        model, y = self.model, self.y
        target = self.rho2 * b2
        k_lo, k_hi = 2.0 * lo / b2, 2.0 * hi / b2
        kappa = 2.0 * self.lam / b2
        d = self.disp.copy()
        for _ in range(max_iter):
            t = s + d
            dl, d2l = model.first_two_derivs(t, y)
            a = kappa - d2l
            if np.any(a <= 0):
                return None
            F = dl - kappa * d
            F0 = float(np.mean(d * d)) - target
            dk = (F0 + 2.0 * float(np.mean(d * F / a))) / (2.0 * float(np.mean(d * d / a)))
            dd = (F - d * dk) / a
            kappa += dk
            d = d + dd
            if not (k_lo < kappa < k_hi) or not np.all(np.isfinite(d)):
                return None
            if abs(dk) <= rtol * kappa and np.all(np.abs(dd) <= rtol * (1.0 + np.abs(t))):
                return 0.5 * kappa * b2, s + d
        return None

    def _nested_newton(self, b2, s, lo, hi, max_iter=200):
        """Safeguarded Newton on d phi / d lambda, each step solving the inner problems."""
        model, y, rho2 = self.model, self.y, self.rho2
        rtol = 1e-13

        def derivs(lam):
            kappa = 2.0 * lam / b2
            _, t = _inner(model, kappa, s, y, self.disp)
            d2 = (t - s) ** 2
            g1 = rho2 - float(np.mean(d2)) / b2
            g2 = 4.0 / b2 ** 2 * float(np.mean(d2 / (kappa - model.d2loss_dt2(t))))
            return g1, g2, t

        lam = self.lam if self.lam is not None else np.sqrt(lo * hi)
        lam = min(max(lam, lo), hi)
        a, b = lo, hi
        t = None
        for _ in range(max_iter):
            g1, g2, t = derivs(lam)
            if g1 < 0:
                a = lam
            else:
                b = lam
            new = lam - g1 / g2 if g2 > 0 else 0.5 * (a + b)
            if not (a < new < b):
                new = 0.5 * (a + b)
            if abs(new - lam) <= rtol * lam or b - a <= rtol * b:
                if new != lam:
                    lam = new
                    _, _, t = derivs(lam)
                break
            lam = new
        return lam, t


def fit_erm(model: GlmModel, data: Dataset, max_iter=100, tol=1e-12) -> np.ndarray:
    """Empirical risk minimiser by damped Newton (least squares for linear)."""
    check_compatible(model, data)
    X, y = data.features, data.labels
    if model.kind is ModelKind.LINEAR:
        return np.linalg.lstsq(X, y, rcond=None)[0]
    beta = np.zeros(data.d)
    f = empirical_loss(model, data, beta)
    for _ in range(max_iter):
        s = X @ beta
        g = X.T @ model.dloss_dt(s, y) / data.n
        if np.max(np.abs(g)) <= tol:
            break
        H = (X * model.d2loss_dt2(s, y)[:, None]).T @ X / data.n
        step = np.linalg.solve(H + 1e-12 * np.eye(data.d), g)
        for _ in range(50):
            cand = beta - step
            fc = empirical_loss(model, data, cand)
            if fc <= f + 10 * _EPS * abs(f):
                break
            step = step / 2
        beta, f = cand, fc
    return beta


def fit_dro(model: GlmModel, data: Dataset, config: WdroConfig, beta0=None) -> FitResult:
    """Gradient descent on the worst-case loss, started from the ERM solution.

    Each step uses the envelope gradient at the exact optimal multiplier and
    halves the step until the worst-case loss does not increase.
    """
    _require_fittable(model)
    check_compatible(model, data)
    init = fit_erm(model, data) if beta0 is None else np.asarray(beta0, dtype=float)
    rng = np.random.default_rng(config.seed)
    evaluate = _DualEvaluator(model, data, config)

    def restart():
        return init + rng.normal(scale=1e-3 * (1.0 + np.linalg.norm(init)), size=init.shape)

    beta = init.copy()
    if not np.any(beta):
        beta = restart()
    psi, lam, grad = evaluate(beta)
    slack = 10 * _EPS
    it = 0
    restarts = 0
    while it < config.max_iters:
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= config.grad_tol:
            break
        step = config.step_size
        for _ in range(60):
            cand = beta - step * grad
            if np.linalg.norm(cand) <= 1e-10 * (1.0 + np.linalg.norm(init)):
                restarts += 1
                if restarts > 10:
                    raise SolverDivergedError("iterate repeatedly collapsed to beta = 0")
                cand = restart()
                evaluate.lam = evaluate.disp = None
            psi_c, lam_c, grad_c = evaluate(cand)
            if not np.isfinite(psi_c) or not np.all(np.isfinite(grad_c)):
                raise SolverDivergedError(f"non-finite worst-case loss at iteration {it}")
            if psi_c <= psi + slack * abs(psi):
                break
            step /= 2
        else:
            log.debug("step halving exhausted at iteration %d, grad norm %.3g", it, gnorm)
            break
        beta, psi, lam, grad = cand, psi_c, lam_c, grad_c
        it += 1
    gnorm = float(np.linalg.norm(grad))
    return FitResult(
        beta_dro=beta,
        robust_loss=float(psi),
        lambda_star=float(lam),
        iterations=it,
        converged=gnorm <= config.grad_tol,
        grad_norm=gnorm,
    )
