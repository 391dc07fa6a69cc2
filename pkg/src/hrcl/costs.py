"""Discomfort, inefficiency, combined objective and the shared reward."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .domain import DimensionError, GlobalPlan, Plan, Target, Behavior

Vector = np.ndarray


@dataclass(frozen=True)
class RewardWeights:
    sigma1: float = 0.5
    sigma2: float = 0.5
    discomfort_scale: float = 1.0
    inefficiency_scale: float = 1.0

    def __post_init__(self):
        for name in ("sigma1", "sigma2"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        for name in ("discomfort_scale", "inefficiency_scale"):
            v = getattr(self, name)
            if not (v > 0 and math.isfinite(v)):
                raise ValueError(f"{name} must be a positive finite number, got {v}")


@dataclass(frozen=True)
class CostReport:
    period: int
    mean_discomfort: float
    inefficiency: float
    normalized_discomfort: float
    normalized_inefficiency: float
    combined: float

    @property
    def reward(self) -> float:
        return -self.combined


def _vec(x) -> Vector:
    if isinstance(x, (Target, GlobalPlan, Plan)):
        return x.values
    return np.asarray(x, dtype=np.float64)


def mean_discomfort(selections: Sequence[Plan] | Sequence[float], U: int | None = None) -> float:
    """Average discomfort of the selected plans for one period."""
    if len(selections) == 0:
        raise ValueError("mean_discomfort needs at least one selection")
    costs = [s.discomfort if isinstance(s, Plan) else float(s) for s in selections]
    U = len(costs) if U is None else U
    if U < 1:
        raise ValueError("U must be >= 1")
    return math.fsum(costs) / U


def inefficiency_rmse(target, global_plan) -> float:
    t, g = _vec(target), _vec(global_plan)
    if t.shape != g.shape:
        raise DimensionError(f"target has {t.shape[-1]} entries, global plan {g.shape[-1]}")
    diff = t - g
    return math.sqrt(float(np.dot(diff, diff)) / diff.shape[0])


def inefficiency_variance(global_plan) -> float:
    """Population variance (divide by D) of the global plan's entries."""
    g = _vec(global_plan)
    if g.ndim != 1 or g.shape[0] < 1:
        raise DimensionError("global plan must be a non-empty vector")
    return float(np.var(g))


def rmse_rows(target: Vector, candidates: Vector) -> Vector:
    """RMSE of each row of a (N, D) candidate matrix against ``target``."""
    diff = candidates - target
    return np.sqrt(np.einsum("ij,ij->i", diff, diff) / target.shape[0])


def variance_rows(target: Vector, candidates: Vector) -> Vector:
    return np.var(candidates, axis=1)


@dataclass(frozen=True)
class Inefficiency:
    """Scenario inefficiency: scalar form plus a row-vectorised form for candidate scoring."""

    name: str
    scalar: Callable[[Vector, Vector], float]
    rows: Callable[[Vector, Vector], Vector]

    def __call__(self, target, global_plan) -> float:
        return self.scalar(_vec(target), _vec(global_plan))


RMSE = Inefficiency("rmse", inefficiency_rmse, rmse_rows)
VARIANCE = Inefficiency("variance", lambda t, g: inefficiency_variance(g), variance_rows)
INEFFICIENCIES = {"rmse": RMSE, "variance": VARIANCE}


def inefficiency_scale(target, kind: Inefficiency = RMSE) -> float:
    """Cost of doing nothing, f_i(target, 0); 1 when that cost is zero."""
    t = _vec(target)
    scale = kind.scalar(t, np.zeros_like(t))
    return scale if scale > 0 else 1.0


def combined_objective(plan: Plan, candidate_global, target, beta: Behavior | float,
                       weights: RewardWeights, kind: Inefficiency = RMSE) -> float:
    b = beta.beta if isinstance(beta, Behavior) else float(beta)
    if not 0.0 <= b <= 1.0:
        raise ValueError("beta must lie in [0, 1]")
    ineff = kind(target, candidate_global)
    value = b * plan.discomfort / weights.discomfort_scale + (1.0 - b) * ineff / weights.inefficiency_scale
    if not math.isfinite(value):
        raise ValueError("combined objective is not finite")
    return value


def cost_report(period: int, discomforts: Sequence[float], discomfort_scales: Sequence[float],
                target, global_plan, sigma1: float, sigma2: float,
                kind: Inefficiency = RMSE, ineff_scale: float | None = None) -> CostReport:
    """Metrics of one period.

    Discomfort is normalised per agent by that agent's discomfort scale before
    averaging; inefficiency by ``ineff_scale`` (cost of doing nothing by default).
    """
    U = len(discomforts)
    raw = mean_discomfort(list(discomforts), U)
    norm_d = math.fsum(d / s for d, s in zip(discomforts, discomfort_scales)) / U
    ineff = kind(target, global_plan)
    scale = inefficiency_scale(target, kind) if ineff_scale is None else ineff_scale
    norm_i = ineff / scale
    combined = sigma1 * norm_d + sigma2 * norm_i
    return CostReport(period, raw, ineff, norm_d, norm_i, combined)


def compute_reward(report: CostReport, weights: RewardWeights | None = None) -> float:
    """Shared reward -sigma1 * norm. mean discomfort - sigma2 * norm. inefficiency.

    With ``weights`` given, the sigmas are taken from it; otherwise the report's
    own weighting is used, which makes the reward exactly ``-report.combined``.
    """
    if weights is None:
        return -report.combined
    return -weights.sigma1 * report.normalized_discomfort - weights.sigma2 * report.normalized_inefficiency
