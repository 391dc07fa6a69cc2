"""Method variants sharing one engine; they differ only in the decision layer."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .costs import CostReport
from .domain import ExperimentConfig, equal_groups
from .marl import Environment, Episode, ExecutionResult, StepInfo, TrainResult, execute, rollout, train
from .scenario import Scenario
from .strategy import behavior_from_range, decode_action


@dataclass(frozen=True)
class MethodSpec:
    """How a method turns actions into plan selections.

    ``direct`` methods (MAPPO, HRL) pick plans themselves and bypass EPOS;
    the others hand EPOS a plan-group range and a behavior per agent.
    """

    method: str
    learns: bool
    I: int = 1
    M: int = 1
    fixed_beta: float | None = None
    direct: bool = False
    hierarchical: bool = False

    def n_actions(self, K: int) -> int:
        if self.method == "mappo":
            return K
        if self.hierarchical:
            return self.I + math.ceil(K / self.I)
        return self.I * self.M

    def action_space_size(self, K: int) -> int:
        """Argument of the per-agent network cost: K (MAPPO), I + max G_i (HRL), I*M (HRCL family)."""
        if self.hierarchical:
            return self.I + max(e - s for s, e in equal_groups(K, self.I))
        return self.n_actions(K)

    def decode(self, actions: np.ndarray, plansets) -> tuple[list[tuple[int, int]], np.ndarray]:
        ranges, betas = [], []
        for a, ps in zip(actions[:, 0], plansets):
            i, m = decode_action(int(a), self.I, self.M)
            ranges.append(equal_groups(ps.K, self.I)[i])
            betas.append(self.fixed_beta if self.fixed_beta is not None else behavior_from_range(m, self.M).beta)
        return ranges, np.array(betas)

    def direct_selections(self, actions: np.ndarray, plansets) -> list[int]:
        if self.hierarchical:
            return [equal_groups(ps.K, self.I)[int(a[0])][0] + int(a[1]) for a, ps in zip(actions, plansets)]
        return [int(a[0]) for a in actions]


def method_spec(config: ExperimentConfig) -> MethodSpec:
    m, I, M = config.method, config.I, config.M
    if m == "epos":
        return MethodSpec(m, False, fixed_beta=config.beta)
    if m == "epos-selfish":
        return MethodSpec(m, False, fixed_beta=1.0)
    if m == "epos-altruistic":
        return MethodSpec(m, False, fixed_beta=0.0)
    if m == "epos-p":
        return MethodSpec(m, False, M=M)
    if m == "mappo":
        return MethodSpec(m, True, direct=True)
    if m == "hrl":
        return MethodSpec(m, True, I=I, direct=True, hierarchical=True)
    if m == "hrcl":
        return MethodSpec(m, True, I=I, M=M)
    if m == "hrcl-p":
        return MethodSpec(m, True, I=I, M=1, fixed_beta=config.beta)
    if m == "hrcl-b":
        return MethodSpec(m, True, I=1, M=M)
    raise ValueError(f"unknown method {m!r}")


def sweep_grid(M: int) -> list[float]:
    """{0, midpoints of the M behavior ranges, 1}."""
    return [0.0] + [behavior_from_range(m, M).beta for m in range(1, M + 1)] + [1.0]


@dataclass
class MethodRun:
    method: str
    reports: list[CostReport]
    infos: list[StepInfo]
    beta: float | None = None
    training: TrainResult | None = None
    execution: ExecutionResult | None = None
    sweep: dict[float, float] = field(default_factory=dict)

    @property
    def total_combined(self) -> float:
        return math.fsum(r.combined for r in self.reports)

    @property
    def mean_combined(self) -> float:
        return self.total_combined / len(self.reports)


def _fixed_beta_episode(config: ExperimentConfig, scenario: Scenario, beta: float, spec: MethodSpec) -> list[StepInfo]:
    env = Environment(scenario, spec)
    env.reset(0, True)
    infos = []
    while not env.done:
        infos.append(env.step(betas=np.full(scenario.U, beta)))
    return infos


def run_epos_variant(config: ExperimentConfig, beta: float | str | None = None,
                     scenario: Scenario | None = None) -> MethodRun:
    """Fixed-behavior EPOS over one evaluation episode, or the Pareto sweep for ``beta='sweep'``."""
    scenario = scenario or Scenario(config)
    spec = method_spec(config)
    if beta is None:
        beta = "sweep" if config.method == "epos-p" else spec.fixed_beta
    if beta == "sweep":
        best, sweep = None, {}
        for b in sweep_grid(config.M):
            infos = _fixed_beta_episode(config, scenario, b, spec)
            total = math.fsum(i.report.combined for i in infos)
            sweep[b] = total
            if best is None or total < best[0]:
                best = (total, b, infos)
        _, b, infos = best
        return MethodRun(config.method, [i.report for i in infos], infos, b, sweep=sweep)
    infos = _fixed_beta_episode(config, scenario, float(beta), spec)
    return MethodRun(config.method, [i.report for i in infos], infos, float(beta))


def run_learning_method(config: ExperimentConfig, scenario: Scenario | None = None, **train_kwargs) -> MethodRun:
    scenario = scenario or Scenario(config)
    spec = method_spec(config)
    trained = train(config, spec, scenario, **train_kwargs)
    env = Environment(scenario, spec)
    final = rollout(env, trained.policy, 0, True, None)
    return MethodRun(config.method, final.reports, final.infos, training=trained)


def run_mappo(config: ExperimentConfig, scenario: Scenario | None = None, **kw) -> MethodRun:
    return run_learning_method(config.replace(method="mappo"), scenario, **kw)


def run_hrl(config: ExperimentConfig, scenario: Scenario | None = None, **kw) -> MethodRun:
    return run_learning_method(config.replace(method="hrl"), scenario, **kw)


def run_method(config: ExperimentConfig, scenario: Scenario | None = None, **kw) -> MethodRun:
    if method_spec(config).learns:
        return run_learning_method(config, scenario, **kw)
    return run_epos_variant(config, scenario=scenario)


def random_policy_run(config: ExperimentConfig, scenario: Scenario | None = None, episodes: int = 50) -> float:
    """Mean combined cost of an untrained policy sampling uniformly at random (control run)."""
    scenario = scenario or Scenario(config)
    spec = method_spec(config)
    env = Environment(scenario, spec)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence([config.seed, 99])))

    class Uniform:
        def act(self, states, rng_):
            n = spec.n_actions(scenario.K)
            if spec.hierarchical:
                i = rng_.integers(0, spec.I, len(states))
                sizes = np.array([e - s for s, e in equal_groups(scenario.K, spec.I)])
                j = (rng_.random(len(states)) * sizes[i]).astype(int)
                return np.stack([i, j], 1), np.zeros((len(states), 2))
            return rng_.integers(0, n, (len(states), 1)), np.zeros((len(states), 1))

    costs = [np.mean([r.combined for r in rollout(env, Uniform(), e, True, rng).reports]) for e in range(episodes)]
    return float(np.mean(costs))
