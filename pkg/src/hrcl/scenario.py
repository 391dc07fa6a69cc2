"""Scenario instances: per-period plan sets, targets and normalisation scales.

Each agent owns ``draws`` independently generated plan sets. Every fifth
draw is held out for evaluation; training episodes pick a training draw per
period at random, evaluation episodes walk the held-out draws in order.
"""

from __future__ import annotations

from functools import cached_property

import numpy as np

from .costs import RMSE, VARIANCE, Inefficiency, inefficiency_scale
from .domain import ExperimentConfig, PlanSet, Target
from .plangen import (
    CosineTargetSpec,
    SyntheticSpec,
    cosine_target,
    default_amplitude,
    generate_energy_planset,
    generate_synthetic_planset,
    split_draws,
    update_target,
)

ENERGY_D = 144


class Scenario:
    def __init__(self, config: ExperimentConfig, plansets: list[PlanSet] | None = None):
        """``plansets`` (e.g. loaded from a dataset directory) pin one plan set per agent for every period."""
        self.config = config
        self.fixed = plansets
        self.train_draws, self.eval_draws = split_draws(config.draws)
        self._pool: dict[tuple[int, int], PlanSet] = {}

    @property
    def kind(self) -> Inefficiency:
        return VARIANCE if self.config.scenario == "energy" else RMSE

    @property
    def D(self) -> int:
        if self.fixed:
            return self.fixed[0].D
        return ENERGY_D if self.config.scenario == "energy" else self.config.D

    @property
    def K(self) -> int:
        return self.planset(0, 0).K

    @property
    def U(self) -> int:
        return len(self.fixed) if self.fixed else self.config.U

    def planset(self, agent: int, draw: int) -> PlanSet:
        if self.fixed:
            return self.fixed[agent]
        key = (agent, draw)
        if key not in self._pool:
            c = self.config
            if c.scenario == "energy":
                ps = generate_energy_planset(c.seed, agent, draw, ENERGY_D)
            else:
                ps = generate_synthetic_planset(SyntheticSpec(c.K, c.D, c.seed), agent, draw)
            self._pool[key] = ps
        return self._pool[key]

    def plansets(self, draw: int) -> list[PlanSet]:
        return [self.planset(u, draw) for u in range(self.U)]

    @cached_property
    def amplitude(self) -> float:
        if self.config.scenario == "energy":
            return 0.0
        return default_amplitude(self.plansets(self.train_draws[0] if not self.fixed else 0),
                                 self.config.amplitude_factor)

    def initial_target(self) -> np.ndarray:
        if self.config.scenario == "energy":
            return np.zeros(self.D)
        return cosine_target(CosineTargetSpec(self.amplitude, self.config.omega, self.D, self.config.T)).values

    def next_target(self, target: np.ndarray, global_plan: np.ndarray, period: int):
        if self.config.scenario == "energy":
            return target
        return update_target(Target(target, period), global_plan).values

    def ineff_scale(self, target: np.ndarray, plansets: list[PlanSet]) -> float:
        if self.kind is VARIANCE:
            # variance of doing nothing is 0; use the variance of the unshifted demand instead
            base = np.sum([ps.matrix[0] for ps in plansets], axis=0)
            v = float(np.var(base))
            return v if v > 0 else 1.0
        return inefficiency_scale(target, self.kind)

    def schedule(self, episode: int, evaluation: bool) -> list[int]:
        """Draw index used in each period of an episode."""
        T = self.config.T
        if evaluation:
            return [self.eval_draws[t % len(self.eval_draws)] for t in range(T)]
        rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([self.config.seed, 7, episode])))
        return [int(self.train_draws[i]) for i in rng.integers(0, len(self.train_draws), T)]
