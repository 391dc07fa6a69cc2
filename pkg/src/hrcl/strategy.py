"""High-level actions: a plan group (constraint) and a behavior range, as one flat index."""

from __future__ import annotations

from dataclasses import dataclass

from .domain import Behavior, PlanSet


@dataclass(frozen=True)
class AgentAction:
    group_index: int
    behavior_range_index: int
    I: int
    M: int

    def __post_init__(self):
        if not 0 <= self.group_index < self.I:
            raise ValueError(f"group index {self.group_index} outside [0, {self.I})")
        if not 1 <= self.behavior_range_index <= self.M:
            raise ValueError(f"behavior range index {self.behavior_range_index} outside [1, {self.M}]")

    @property
    def flat_index(self) -> int:
        return encode_action(self.group_index, self.behavior_range_index, self.M)

    @classmethod
    def from_flat(cls, flat: int, I: int, M: int) -> "AgentAction":
        i, m = decode_action(flat, I, M)
        return cls(i, m, I, M)


def encode_action(i: int, m: int, M: int) -> int:
    return i * M + (m - 1)


def decode_action(flat: int, I: int, M: int) -> tuple[int, int]:
    if not 0 <= flat < I * M:
        raise ValueError(f"flat action {flat} outside [0, {I * M})")
    i, r = divmod(flat, M)
    return i, r + 1


def restrict_planset(planset: PlanSet, action: AgentAction | int) -> tuple[int, int]:
    """Index range [start, end) of the chosen plan group."""
    i = action.group_index if isinstance(action, AgentAction) else int(action)
    if not 0 <= i < planset.I:
        raise IndexError(f"group {i} outside [0, {planset.I})")
    return planset.group_boundaries[i]


def behavior_from_range(m: int, M: int) -> Behavior:
    """Midpoint of the m-th of M equal sub-ranges of [0, 1]."""
    if not 1 <= m <= M:
        raise ValueError(f"behavior range index {m} outside [1, {M}]")
    return Behavior(m / M - 1.0 / (2 * M))
