"""Plan generation for the synthetic and energy scenarios, plus target handling.

Random streams use numpy's PCG64 bit generator seeded through a
``SeedSequence`` built from ``(seed, agent_id, draw)``; that name is written
into dataset headers as :data:`GENERATOR_NAME`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .domain import DimensionError, GlobalPlan, Plan, PlanSet, Target, equal_groups, write_planset

GENERATOR_NAME = "numpy-PCG64/SeedSequence(seed,agent,draw)"
SAMPLING_MINUTES = 5
DEFAULT_SHIFTS = (75, -75, 150, -150, 720, -720, 225, -225, 300)


def agent_rng(seed: int, agent_id: int, draw: int = 0, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, agent_id, draw, stream])))


@dataclass(frozen=True)
class SyntheticSpec:
    K: int = 16
    D: int = 100
    seed: int = 0
    I: int = 1

    def __post_init__(self):
        if self.K < 1 or self.D < 1:
            raise ValueError("K and D must be >= 1")


def linear_discomforts(K: int) -> np.ndarray:
    if K == 1:
        return np.zeros(1)
    return np.arange(K) / (K - 1)


def generate_synthetic_planset(spec: SyntheticSpec, agent_id: int, draw: int = 0) -> PlanSet:
    """K plans of D standard-normal values; discomfort rises linearly from 0 to 1 with plan index."""
    rng = agent_rng(spec.seed, agent_id, draw)
    values = rng.standard_normal((spec.K, spec.D))
    costs = linear_discomforts(spec.K)
    plans = tuple(Plan(values[k], costs[k]) for k in range(spec.K))
    return PlanSet(agent_id, plans, equal_groups(spec.K, spec.I))


@dataclass(frozen=True)
class LoadShiftSpec:
    base: np.ndarray
    shifts: tuple[int, ...] = DEFAULT_SHIFTS
    resolution: int = SAMPLING_MINUTES
    I: int = 1

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=np.float64))
        for off in self.shifts:
            if off % self.resolution:
                raise ValueError(f"shift {off} min is not a multiple of {self.resolution} min")


def generate_loadshift_planset(spec: LoadShiftSpec, agent_id: int) -> PlanSet:
    """Measured demand plus circular shifts of it; discomfort = minutes shifted."""
    plans = [Plan(spec.base, 0.0)]
    for off in spec.shifts:
        plans.append(Plan(np.roll(spec.base, off // spec.resolution), abs(off)))
    return PlanSet(agent_id, tuple(plans), equal_groups(len(plans), spec.I))


def household_profile(rng: np.random.Generator, D: int = 144) -> np.ndarray:
    """Stand-in 12h demand profile (kW, 5-min steps): base load plus a few appliance bursts."""
    profile = np.full(D, 0.3) + 0.05 * rng.random(D)
    for _ in range(rng.integers(2, 6)):
        start = int(rng.integers(0, D))
        length = int(rng.integers(3, 24))
        power = float(rng.uniform(0.5, 3.0))
        idx = (start + np.arange(length)) % D
        profile[idx] += power
    return profile


def generate_energy_planset(seed: int, agent_id: int, draw: int = 0, D: int = 144,
                            shifts: tuple[int, ...] = DEFAULT_SHIFTS, I: int = 1) -> PlanSet:
    base = household_profile(agent_rng(seed, agent_id, draw), D)
    return generate_loadshift_planset(LoadShiftSpec(base, shifts, I=I), agent_id)


@dataclass(frozen=True)
class CosineTargetSpec:
    amplitude: float
    omega: float = math.pi / 24
    D: int = 100
    T: int = 16

    def __post_init__(self):
        if self.omega <= 0:
            raise ValueError("omega must be > 0")


def cosine_target(spec: CosineTargetSpec) -> Target:
    d = np.arange(spec.D)
    return Target(spec.amplitude * np.cos(spec.omega * d), 0)


def default_amplitude(plansets: list[PlanSet], factor: float = 0.5) -> float:
    """U times the mean absolute plan value times ``factor``."""
    mean_abs = float(np.mean([np.abs(ps.matrix).mean() for ps in plansets]))
    return len(plansets) * mean_abs * factor


def update_target(previous: Target, global_plan: GlobalPlan | np.ndarray) -> Target:
    g = global_plan.values if isinstance(global_plan, GlobalPlan) else np.asarray(global_plan, dtype=np.float64)
    if g.shape != previous.values.shape:
        raise DimensionError(f"target has {previous.dim} entries, global plan {g.shape[0]}")
    return Target(previous.values - g, previous.period + 1)


def split_draws(n_draws: int, stride: int = 5) -> tuple[list[int], list[int]]:
    """Every ``stride``-th plan draw is held out for evaluation (80/20 at stride 5)."""
    evaluation = [j for j in range(n_draws) if j % stride == stride - 1]
    if not evaluation:
        evaluation = [n_draws - 1]
    training = [j for j in range(n_draws) if j not in evaluation] or list(evaluation)
    return training, evaluation


def write_dataset(directory: Path | str, plansets: list[PlanSet], meta: dict) -> Path:
    """Write ``agent_<id>.plans`` files plus a ``dataset.meta`` key=value header."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for ps in plansets:
        write_planset(ps, directory)
    lines = [f"{k}={v}" for k, v in meta.items()]
    (directory / "dataset.meta").write_text("\n".join(lines) + "\n")
    return directory


def read_meta(directory: Path | str) -> dict[str, str]:
    meta = {}
    for line in (Path(directory) / "dataset.meta").read_text().splitlines():
        if "=" in line:
            k, v = line.split("=", 1)
            meta[k.strip()] = v.strip()
    return meta
