"""Replicated Monte Carlo experiments comparing the WDRO and adjusted estimators."""
from __future__ import annotations

import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import List, Optional, Sequence

import numpy as np
from scipy import stats

from .debias import (
    adjust_closed_form_linear,
    adjust_newton,
    empirical_curvature_fn,
    estimate_linear_nuisance,
    population_curvature_mc,
)
from .dual import WdroConfig, fit_dro
from .errors import AdroError, ConfigurationError, InsufficientDataError
from .models import GlmModel, ModelKind
from .synthetic import DistributionSpec

SCHEMA_VERSION = 1

# standard normal features: E[X X^T] = c I with c = 1
FEATURE_SCALE = 1.0


@dataclass(frozen=True)
class ExperimentConfig:
    model_kind: ModelKind
    beta_star: tuple
    n_grid: tuple
    tau_grid: tuple
    replicates: int
    base_seed: int = 0
    sigma: Optional[float] = None
    step_size: float = 0.3
    max_iters: int = 50000
    grad_tol: float = 1e-7
    estimate_nuisance: bool = False

    def __post_init__(self):
        kind = ModelKind(self.model_kind)
        object.__setattr__(self, "model_kind", kind)
        object.__setattr__(self, "beta_star", tuple(float(b) for b in self.beta_star))
        object.__setattr__(self, "n_grid", tuple(int(n) for n in self.n_grid))
        object.__setattr__(self, "tau_grid", tuple(float(t) for t in self.tau_grid))
        if kind is ModelKind.POISSON:
            raise ConfigurationError("experiments support logistic and linear models only")
        if not self.n_grid or not self.tau_grid:
            raise ConfigurationError("n_grid and tau_grid must be nonempty")
        if any(n < 1 for n in self.n_grid) or any(t < 0 for t in self.tau_grid):
            raise ConfigurationError("n must be positive and tau nonnegative")
        if self.replicates < 1:
            raise ConfigurationError("replicates must be at least 1")
        if self.base_seed < 0:
            raise ConfigurationError("base_seed must be nonnegative")
        if not any(self.beta_star):
            raise ConfigurationError("beta_star must be nonzero")
        if kind is ModelKind.LINEAR and not (self.sigma is not None and self.sigma > 0):
            raise ConfigurationError("linear experiments need sigma > 0")
        if kind is ModelKind.LOGISTIC and self.sigma is not None:
            raise ConfigurationError("sigma only applies to linear experiments")

    @property
    def distribution(self) -> DistributionSpec:
        return DistributionSpec(self.model_kind, self.beta_star, sigma=self.sigma)

    @property
    def model(self) -> GlmModel:
        return GlmModel(self.model_kind, self.sigma)

    def to_dict(self):
        out = asdict(self)
        out["model_kind"] = self.model_kind.value
        out["beta_star"] = list(self.beta_star)
        out["n_grid"] = list(self.n_grid)
        out["tau_grid"] = list(self.tau_grid)
        return out

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class Record:
    n: int
    tau: float
    replicate: int
    seed: int
    beta_dro: Optional[List[float]] = None
    beta_adro: Optional[List[float]] = None
    sq_err_dro: float = math.nan
    sq_err_adro: float = math.nan
    diff: float = math.nan
    norm_dro: float = math.nan
    norm_adro: float = math.nan
    adjustment_distance: float = math.nan
    existence_margin: float = math.nan
    converged: bool = False
    newton_iterations: int = 0
    error: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.error is None

    def to_dict(self):
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in asdict(self).items()}

    @classmethod
    def from_dict(cls, d):
        d = {k: (math.nan if v is None and k not in ("beta_dro", "beta_adro", "error") else v) for k, v in d.items()}
        return cls(**d)


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    records: List[Record]
    summaries: List[dict] = field(default_factory=list)

    def cells(self):
        """Records grouped per (n, tau), in canonical order."""
        out = {}
        for r in self.records:
            out.setdefault((r.n, r.tau), []).append(r)
        return [(key, out[key]) for key in sorted(out)]

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "config": self.config.to_dict(),
            "records": [r.to_dict() for r in self.records],
            "summaries": self.summaries,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema") != SCHEMA_VERSION:
            raise ConfigurationError(f"unsupported report schema {d.get('schema')!r}, expected {SCHEMA_VERSION}")
        return cls(
            config=ExperimentConfig.from_dict(d["config"]),
            records=[Record.from_dict(r) for r in d["records"]],
            summaries=d.get("summaries", []),
        )


def replicate_seed(base_seed: int, n: int, tau: float, replicate: int) -> int:
    """Seed for one replicate; independent of execution order."""
    ss = np.random.SeedSequence([base_seed, n, int(round(tau * 1_000_000)), replicate])
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def run_replicate(config: ExperimentConfig, n: int, tau: float, replicate: int) -> Record:
    seed = replicate_seed(config.base_seed, n, tau, replicate)
    rec = Record(n=n, tau=tau, replicate=replicate, seed=seed)
    model = config.model
    beta_star = np.array(config.beta_star)
    try:
        data = config.distribution.sample(n, seed)
        wdro = WdroConfig(tau=tau, n=n, step_size=config.step_size, max_iters=config.max_iters,
                          grad_tol=config.grad_tol, seed=seed)
        fit = fit_dro(model, data, wdro)
        beta_dro = fit.beta_dro
        rec.beta_dro = beta_dro.tolist()
        rec.converged = fit.converged
        if model.kind is ModelKind.LINEAR:
            if config.estimate_nuisance:
                sigma, c = estimate_linear_nuisance(data, beta_dro)
            else:
                sigma, c = config.sigma, FEATURE_SCALE
            beta_adro = adjust_closed_form_linear(beta_dro, tau, sigma, c, n)
        else:
            adj = adjust_newton(beta_dro, empirical_curvature_fn(model, data, tau), n)
            beta_adro = adj.beta_adro
            rec.existence_margin = adj.existence_margin
            rec.newton_iterations = adj.newton_iterations
        rec.beta_adro = beta_adro.tolist()
        rec.sq_err_dro = float(np.sum((beta_dro - beta_star) ** 2))
        rec.sq_err_adro = float(np.sum((beta_adro - beta_star) ** 2))
        rec.diff = rec.sq_err_dro - rec.sq_err_adro
        rec.norm_dro = float(np.linalg.norm(beta_dro))
        rec.norm_adro = float(np.linalg.norm(beta_adro))
        rec.adjustment_distance = float(np.linalg.norm(beta_adro - beta_dro))
    except (AdroError, np.linalg.LinAlgError, FloatingPointError, OverflowError) as exc:
        rec.error = f"{type(exc).__name__}: {exc}"
    return rec


def _run_task(args):
    return run_replicate(*args)


def default_workers() -> int:
    env = os.environ.get("ADRO_THREADS")
    if env is None:
        return 1
    try:
        workers = int(env)
    except ValueError:
        raise ConfigurationError(f"ADRO_THREADS must be a positive integer, got {env!r}") from None
    if workers < 1:
        raise ConfigurationError(f"ADRO_THREADS must be a positive integer, got {env!r}")
    return workers


def run_experiment(config: ExperimentConfig, workers: Optional[int] = None) -> ExperimentReport:
    """Every (n, tau, replicate) cell: simulate, fit, adjust, score.

    Failures are recorded per replicate. The result does not depend on
    ``workers``: seeds are derived per replicate and records are merged in
    (n, tau, replicate) order.
    """
    workers = default_workers() if workers is None else workers
    tasks = [(config, n, tau, r) for n in sorted(config.n_grid) for tau in sorted(config.tau_grid)
             for r in range(config.replicates)]
    if workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_run_task, tasks, chunksize=max(1, len(tasks) // (4 * workers))))
    else:
        records = [_run_task(t) for t in tasks]
    records.sort(key=lambda r: (r.n, r.tau, r.replicate))
    report = ExperimentReport(config, records)
    report.summaries = cell_summaries(report)
    return report


def cell_summaries(report: ExperimentReport) -> List[dict]:
    norm_star = float(np.linalg.norm(report.config.beta_star))
    out = []
    for (n, tau), recs in report.cells():
        ok = [r for r in recs if r.ok]
        diffs = np.array([r.diff for r in ok])
        out.append({
            "n": n,
            "tau": tau,
            "replicates": len(recs),
            "failures": len(recs) - len(ok),
            "mean_sq_err_dro": _mean([r.sq_err_dro for r in ok]),
            "mean_sq_err_adro": _mean([r.sq_err_adro for r in ok]),
            "positive_diff_fraction": float(np.mean(diffs > 0)) if len(ok) else None,
            "bias_of_norm": _mean([r.norm_dro - norm_star for r in ok]),
        })
    return out


def _mean(xs):
    return float(np.mean(xs)) if len(xs) else None


def _se(x):
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) / np.sqrt(len(x))) if len(x) > 1 else math.nan


def predicted_offset(config: ExperimentConfig, n: int, tau: float, mc_samples=400_000, seed=12345):
    """Asymptotic mean of beta_dro - beta_star: -C^{-1} H(beta_star) / sqrt(n)."""
    beta_star = np.array(config.beta_star)
    u = beta_star / np.linalg.norm(beta_star)
    if config.model_kind is ModelKind.LINEAR:
        return -tau * config.sigma / (FEATURE_SCALE * np.sqrt(n)) * u
    C, H = population_curvature_mc(config.model, config.distribution, beta_star, tau, mc_samples, seed)
    return -np.linalg.solve(C, H) / np.sqrt(n)


def bias_summary(report: ExperimentReport, with_prediction: bool = True) -> List[dict]:
    """Per-cell empirical bias of both estimators with standard errors."""
    beta_star = np.array(report.config.beta_star)
    norm_star = float(np.linalg.norm(beta_star))
    out = []
    for (n, tau), recs in report.cells():
        ok = [r for r in recs if r.ok]
        if len(ok) < 2:
            raise InsufficientDataError(f"cell n={n}, tau={tau} has {len(ok)} successful replicates; need 2")
        B_dro = np.array([r.beta_dro for r in ok]) - beta_star
        B_adro = np.array([r.beta_adro for r in ok]) - beta_star
        nd = np.array([r.norm_dro for r in ok]) - norm_star
        na = np.array([r.norm_adro for r in ok]) - norm_star
        row = {
            "n": n,
            "tau": tau,
            "count": len(ok),
            "mean_offset_dro": B_dro.mean(axis=0).tolist(),
            "se_offset_dro": (B_dro.std(axis=0, ddof=1) / np.sqrt(len(ok))).tolist(),
            "mean_offset_adro": B_adro.mean(axis=0).tolist(),
            "se_offset_adro": (B_adro.std(axis=0, ddof=1) / np.sqrt(len(ok))).tolist(),
            "norm_bias_dro": float(nd.mean()),
            "norm_bias_dro_se": _se(nd),
            "norm_bias_adro": float(na.mean()),
            "norm_bias_adro_se": _se(na),
        }
        if with_prediction:
            pred = predicted_offset(report.config, n, tau)
            row["predicted_offset"] = pred.tolist()
            # first order: the norm moves by the component of the offset along beta_star
            row["predicted_norm_bias"] = float(pred @ beta_star / norm_star)
        out.append(row)
    return out


def amse_summary(report: ExperimentReport, level: float = 0.99, with_prediction: bool = True) -> List[dict]:
    """Per-cell MSE of both estimators and the gap against ||C^{-1} H||^2 / n."""
    z = stats.norm.ppf(0.5 + level / 2)
    out = []
    for (n, tau), recs in report.cells():
        ok = [r for r in recs if r.ok]
        diffs = np.array([r.diff for r in ok])
        gap = float(diffs.mean()) if len(ok) else math.nan
        se = _se(diffs)
        row = {
            "n": n,
            "tau": tau,
            "count": len(ok),
            "mse_dro": _mean([r.sq_err_dro for r in ok]),
            "mse_adro": _mean([r.sq_err_adro for r in ok]),
            "gap": gap,
            "gap_se": se,
            "gap_ci": [gap - z * se, gap + z * se],
        }
        if with_prediction:
            pred = predicted_offset(report.config, n, tau)
            row["predicted_gap"] = float(pred @ pred)
            row["prediction_in_ci"] = bool(row["gap_ci"][0] <= row["predicted_gap"] <= row["gap_ci"][1])
        out.append(row)
    return out


def normality_diagnostics(estimates: Sequence, beta_center, n: int, bins: int = 20) -> List[dict]:
    """Skewness, excess kurtosis and a histogram of sqrt(n)(estimate - centre) per coordinate."""
    E = np.atleast_2d(np.asarray(estimates, dtype=float))
    if E.shape[0] < 30:
        raise InsufficientDataError(f"need at least 30 estimates, got {E.shape[0]}")
    Z = np.sqrt(n) * (E - np.asarray(beta_center, dtype=float))
    out = []
    for j in range(Z.shape[1]):
        z = Z[:, j]
        degenerate = bool(np.ptp(z) == 0)
        counts, edges = np.histogram(z, bins=bins)
        out.append({
            "coordinate": j,
            "mean": float(z.mean()),
            "std": float(z.std(ddof=1)),
            "skewness": math.nan if degenerate else float(stats.skew(z)),
            "excess_kurtosis": math.nan if degenerate else float(stats.kurtosis(z)),
            "insufficient_variation": degenerate,
            "hist_counts": counts.tolist(),
            "hist_edges": edges.tolist(),
        })
    return out
