"""Core value types: plans, plan sets, targets, global plans, behaviors."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np


class DimensionError(ValueError):
    """Raised when vectors that must share a length D do not."""


def _as_vector(values, name: str = "values") -> np.ndarray:
    arr = np.array(values, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class Plan:
    values: np.ndarray
    discomfort: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values))
        d = float(self.discomfort)
        if not math.isfinite(d) or d < 0:
            raise ValueError(f"discomfort must be finite and >= 0, got {d}")
        object.__setattr__(self, "discomfort", d)

    @property
    def dim(self) -> int:
        return self.values.shape[0]


def equal_groups(K: int, I: int) -> tuple[tuple[int, int], ...]:
    """Split K sorted items into I contiguous groups; earlier groups take the remainder.

    >>> equal_groups(5, 2)
    ((0, 3), (3, 5))
    """
    if not 1 <= I <= K:
        raise ValueError(f"need 1 <= I <= K, got I={I}, K={K}")
    base, rem = divmod(K, I)
    bounds, start = [], 0
    for i in range(I):
        size = base + (1 if i < rem else 0)
        bounds.append((start, start + size))
        start += size
    return tuple(bounds)


@dataclass(frozen=True)
class PlanSet:
    """K candidate plans of one agent, sorted ascending by discomfort.

    ``matrix`` (K x D) and ``costs`` (K,) are read-only views used by the
    vectorised selection code.
    """

    agent_id: int
    plans: tuple[Plan, ...]
    group_boundaries: tuple[tuple[int, int], ...] = ()
    matrix: np.ndarray = field(init=False, repr=False, compare=False)
    costs: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        plans = tuple(self.plans)
        if not plans:
            raise ValueError("a PlanSet needs at least one plan")
        dims = {p.dim for p in plans}
        if len(dims) != 1:
            raise DimensionError(f"plans of agent {self.agent_id} have mixed lengths {sorted(dims)}")
        # stable sort keeps generation order among equal costs
        order = sorted(range(len(plans)), key=lambda k: plans[k].discomfort)
        plans = tuple(plans[k] for k in order)
        object.__setattr__(self, "plans", plans)
        bounds = tuple(tuple(b) for b in self.group_boundaries) or ((0, len(plans)),)
        _check_partition(bounds, len(plans))
        object.__setattr__(self, "group_boundaries", bounds)
        mat = np.stack([p.values for p in plans])
        mat.setflags(write=False)
        costs = np.array([p.discomfort for p in plans])
        costs.setflags(write=False)
        object.__setattr__(self, "matrix", mat)
        object.__setattr__(self, "costs", costs)

    @property
    def K(self) -> int:
        return len(self.plans)

    @property
    def D(self) -> int:
        return self.matrix.shape[1]

    @property
    def I(self) -> int:
        return len(self.group_boundaries)

    def regroup(self, I: int) -> "PlanSet":
        return PlanSet(self.agent_id, self.plans, equal_groups(self.K, I))

    @property
    def discomfort_scale(self) -> float:
        top = float(self.costs.max())
        return top if top > 0 else 1.0


def _check_partition(bounds, K: int) -> None:
    expected = 0
    for start, end in bounds:
        if start != expected or end <= start:
            raise ValueError(f"group boundaries {bounds} do not tile [0, {K})")
        expected = end
    if expected != K:
        raise ValueError(f"group boundaries {bounds} do not tile [0, {K})")


@dataclass(frozen=True)
class Target:
    values: np.ndarray
    period: int = 0

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values, "target"))
        if self.period < 0:
            raise ValueError("period must be >= 0")

    @property
    def dim(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class GlobalPlan:
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", _as_vector(self.values, "global plan"))

    @property
    def dim(self) -> int:
        return self.values.shape[0]

    @classmethod
    def zeros(cls, D: int) -> "GlobalPlan":
        return cls(np.zeros(D))


@dataclass(frozen=True)
class Behavior:
    beta: float

    def __post_init__(self):
        b = float(self.beta)
        if not 0.0 <= b <= 1.0:
            raise ValueError(f"behavior beta must lie in [0, 1], got {b}")
        object.__setattr__(self, "beta", b)


@dataclass(frozen=True)
class Selection:
    agent_id: int
    plan_index: int
    period: int = 0


def aggregate_global_plan(plans: Sequence[Plan] | Sequence[np.ndarray]) -> GlobalPlan:
    """Element-wise sum of the selected plans, accumulated in agent-id order."""
    if len(plans) == 0:
        raise ValueError("need at least one plan")
    vectors = [p.values if isinstance(p, Plan) else np.asarray(p, dtype=np.float64) for p in plans]
    D = vectors[0].shape[0]
    total = np.zeros(D)
    for u, v in enumerate(vectors):
        if v.shape != (D,):
            raise DimensionError(f"plan of agent {u} has length {v.shape[0]}, expected {D}")
        total += v
    return GlobalPlan(total)


# --- plan dataset files -------------------------------------------------------

def format_plan_line(plan: Plan) -> str:
    return f"{plan.discomfort!r}:" + ",".join(repr(float(v)) for v in plan.values)


def parse_plan_line(line: str) -> Plan:
    cost, sep, rest = line.strip().partition(":")
    if not sep:
        raise ValueError(f"malformed plan line (missing ':'): {line!r}")
    return Plan([float(v) for v in rest.split(",")], float(cost))


def write_planset(planset: PlanSet, directory: Path | str) -> Path:
    path = Path(directory) / f"agent_{planset.agent_id}.plans"
    path.write_text("".join(format_plan_line(p) + "\n" for p in planset.plans))
    return path


def read_planset(path: Path | str, agent_id: int | None = None, I: int = 1) -> PlanSet:
    path = Path(path)
    if agent_id is None:
        agent_id = int(path.stem.split("_", 1)[1])
    lines = [ln for ln in path.read_text().splitlines() if ln.strip()]
    plans = [parse_plan_line(ln) for ln in lines]
    return PlanSet(agent_id, tuple(plans), equal_groups(len(plans), I))


def read_plansets(directory: Path | str, I: int = 1) -> list[PlanSet]:
    paths = sorted(Path(directory).glob("agent_*.plans"), key=lambda p: int(p.stem.split("_", 1)[1]))
    if not paths:
        raise FileNotFoundError(f"no agent_<id>.plans files in {directory}")
    return [read_planset(p, I=I) for p in paths]


# --- experiment configuration -------------------------------------------------

SCENARIOS = ("synthetic", "energy")
METHODS = (
    "epos", "epos-selfish", "epos-altruistic", "epos-p",
    "mappo", "hrl", "hrcl", "hrcl-p", "hrcl-b",
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Every knob of one run. Defaults are the desk-scale profile."""

    U: int = 8
    K: int = 8
    D: int = 16
    T: int = 8
    I: int = 4
    M: int = 4
    L: int = 20
    episodes: int = 500
    H: int = 64
    gamma: float = 0.95
    clip: float = 0.2
    sigma1: float = 0.5
    sigma2: float = 0.5
    seed: int = 0
    scenario: str = "synthetic"
    method: str = "hrcl"
    W: int = 64
    beta: float = 0.5
    omega: float = math.pi / 24
    amplitude_factor: float = 0.5
    draws: int = 20
    lr: float = 1e-3
    epochs: int = 4
    entropy_coef: float = 0.01
    normalize_advantages: bool = True
    minibatch: int = 0
    guard: bool = True

    def __post_init__(self):
        problems = []
        if self.U < 1:
            problems.append(("U", "U >= 1"))
        if not 1 <= self.I <= self.K:
            problems.append(("I", "1 <= I <= K"))
        for name in ("M", "L", "T", "D", "H", "W", "episodes", "epochs", "draws"):
            if getattr(self, name) < 1:
                problems.append((name, f"{name} >= 1"))
        for name in ("gamma", "sigma1", "sigma2", "beta"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                problems.append((name, f"{name} in [0, 1]"))
        if self.clip <= 0:
            problems.append(("clip", "clip > 0"))
        if self.omega <= 0:
            problems.append(("omega", "omega > 0"))
        for name in ("lr", "entropy_coef", "minibatch"):
            if getattr(self, name) < 0:
                problems.append((name, f"{name} >= 0"))
        if self.scenario not in SCENARIOS:
            problems.append(("scenario", f"one of {SCENARIOS}"))
        if self.method not in METHODS:
            problems.append(("method", f"one of {METHODS}"))
        if problems:
            key, rule = problems[0]
            raise ConfigError(key, f"{key}={getattr(self, key)!r} violates {rule}")

    def replace(self, **changes) -> "ExperimentConfig":
        return dataclasses.replace(self, **changes)


class ConfigError(ValueError):
    def __init__(self, key: str, message: str):
        super().__init__(message)
        self.key = key
