"""Iterative tree-based plan selection (bottom-up aggregation, top-down approval).

Agents sit in a heap-indexed balanced binary tree rooted at agent 0.  One
iteration is:

bottom-up
    Nodes are visited leaves-to-root.  A node scores its plans by
    ``beta * discomfort + (1 - beta) * inefficiency`` against the global plan as
    it sees it: the previous global plan with its subtree's tentative changes
    substituted in.  Together with its own choice it decides which of its
    children's subtree changes to approve, keeping the combination that yields
    the lowest inefficiency, and sends its subtree aggregate to its parent.

top-down
    Approval decisions travel down: a rejected child and its whole subtree keep
    their previous plans.  The global plan is recomputed from the final
    selections; with the guard on, an iteration that would raise inefficiency
    is reverted entirely.

The first iteration has no previous selections: every change is approved and
the guard is not applied.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .costs import RMSE, Inefficiency, inefficiency_scale
from .domain import DimensionError, PlanSet, Target

MAX_ORACLE_COMBINATIONS = 10 ** 6


@dataclass(frozen=True)
class TreeTopology:
    parent: tuple[int | None, ...]
    children: tuple[tuple[int, ...], ...]

    @property
    def U(self) -> int:
        return len(self.parent)

    @property
    def root(self) -> int:
        return 0

    def post_order(self) -> range:
        # heap layout: every child id exceeds its parent's id
        return range(self.U - 1, -1, -1)

    def pre_order(self) -> range:
        return range(self.U)

    def depth(self, u: int) -> int:
        d = 0
        while self.parent[u] is not None:
            u = self.parent[u]
            d += 1
        return d


def build_tree(U: int) -> TreeTopology:
    if U < 1:
        raise ValueError("a tree needs at least one agent")
    parent = tuple(None if v == 0 else (v - 1) // 2 for v in range(U))
    children = tuple(tuple(c for c in (2 * v + 1, 2 * v + 2) if c < U) for v in range(U))
    return TreeTopology(parent, children)


@dataclass
class EposProblem:
    """One period's coordination instance.

    ``ranges`` restrict each agent to a contiguous slice of its sorted plans;
    ``discomfort_scales`` and ``ineff_scale`` normalise the two objective terms.
    """

    plansets: Sequence[PlanSet]
    target: np.ndarray
    betas: np.ndarray
    ranges: Sequence[tuple[int, int]] | None = None
    kind: Inefficiency = RMSE
    discomfort_scales: np.ndarray | None = None
    ineff_scale: float | None = None
    sigma1: float = 0.5
    sigma2: float = 0.5

    def __post_init__(self):
        U = len(self.plansets)
        if U < 1:
            raise ValueError("need at least one agent")
        self.target = np.asarray(self.target.values if isinstance(self.target, Target) else self.target,
                                 dtype=np.float64)
        D = self.target.shape[0]
        for ps in self.plansets:
            if ps.D != D:
                raise DimensionError(f"agent {ps.agent_id} plans have {ps.D} entries, target {D}")
        self.betas = np.broadcast_to(np.asarray(self.betas, dtype=np.float64), (U,)).copy()
        if np.any((self.betas < 0) | (self.betas > 1)):
            raise ValueError("betas must lie in [0, 1]")
        if self.ranges is None:
            self.ranges = [(0, ps.K) for ps in self.plansets]
        self.ranges = [tuple(r) for r in self.ranges]
        for ps, (s, e) in zip(self.plansets, self.ranges):
            if not 0 <= s < e <= ps.K:
                raise ValueError(f"allowed range {(s, e)} invalid for agent {ps.agent_id} with K={ps.K}")
        if self.discomfort_scales is None:
            self.discomfort_scales = np.array([ps.discomfort_scale for ps in self.plansets])
        if self.ineff_scale is None:
            self.ineff_scale = inefficiency_scale(self.target, self.kind)

    @property
    def U(self) -> int:
        return len(self.plansets)

    @property
    def D(self) -> int:
        return self.target.shape[0]

    def inefficiency(self, global_plan: np.ndarray) -> float:
        return self.kind.scalar(self.target, global_plan)

    def global_plan(self, selections: Sequence[int]) -> np.ndarray:
        total = np.zeros(self.D)
        for ps, k in zip(self.plansets, selections):
            total += ps.matrix[k]
        return total

    def normalized_discomforts(self, selections: Sequence[int]) -> np.ndarray:
        return np.array([ps.costs[k] for ps, k in zip(self.plansets, selections)]) / self.discomfort_scales

    def combined_cost(self, selections: Sequence[int], global_plan: np.ndarray | None = None) -> float:
        """sigma-weighted normalised mean discomfort plus normalised inefficiency."""
        g = self.global_plan(selections) if global_plan is None else global_plan
        norm_d = math.fsum(self.normalized_discomforts(selections)) / self.U
        return self.sigma1 * norm_d + self.sigma2 * self.inefficiency(g) / self.ineff_scale

    def behavior_objective(self, selections: Sequence[int], global_plan: np.ndarray | None = None) -> float:
        """Sum over agents of each agent's own beta-weighted objective at the true global plan."""
        g = self.global_plan(selections) if global_plan is None else global_plan
        ineff = self.inefficiency(g) / self.ineff_scale
        disc = self.normalized_discomforts(selections)
        return math.fsum(self.betas * disc + (1.0 - self.betas) * ineff)


def local_select(candidates: np.ndarray, costs: np.ndarray, context: np.ndarray, target: np.ndarray,
                 beta: float, ineff_scale: float = 1.0, kind: Inefficiency = RMSE) -> int:
    """Position (within ``candidates``) minimising the behavior-weighted objective.

    ``context`` is the global plan without this agent's contribution; ``costs``
    are already normalised discomforts.  Ties go to the lowest position.
    """
    if beta >= 1.0:
        ineff = 0.0
    else:
        ineff = kind.rows(target, candidates + context) / ineff_scale
    scores = beta * costs + (1.0 - beta) * ineff
    return int(np.argmin(scores))


@dataclass
class BottomUpRecord:
    proposed: list[int]
    approved: list[bool]
    aggregates: np.ndarray
    previous_aggregates: np.ndarray
    candidate_selections: list[int]
    root_aggregate: np.ndarray


@dataclass
class IterationRecord:
    bottom_up: BottomUpRecord
    selections: list[int]
    global_plan: np.ndarray
    inefficiency: float
    reverted: bool


@dataclass
class EposResult:
    selections: list[int]
    global_plan: np.ndarray
    inefficiency_trace: list[float]
    combined_trace: list[float]
    records: list[IterationRecord] = field(default_factory=list)

    @property
    def inefficiency(self) -> float:
        return self.inefficiency_trace[-1]


class _Prepared:
    """Per-agent candidate slices with normalised costs, built once per run."""

    def __init__(self, problem: EposProblem):
        self.starts = [s for s, _ in problem.ranges]
        self.cands = [ps.matrix[s:e] for ps, (s, e) in zip(problem.plansets, problem.ranges)]
        self.costs = [ps.costs[s:e] / sc for ps, (s, e), sc in
                      zip(problem.plansets, problem.ranges, problem.discomfort_scales)]


def subtree_aggregates(topology: TreeTopology, problem: EposProblem, selections: Sequence[int]) -> np.ndarray:
    agg = np.zeros((topology.U, problem.D))
    for u in topology.post_order():
        agg[u] = problem.plansets[u].matrix[selections[u]]
        for c in topology.children[u]:
            agg[u] += agg[c]
    return agg


def bottom_up_phase(topology: TreeTopology, problem: EposProblem, previous: Sequence[int] | None,
                    prev_aggregates: np.ndarray | None, prev_global: np.ndarray,
                    prepared: _Prepared | None = None) -> BottomUpRecord:
    """Leaves-to-root pass; ``previous=None`` marks the first iteration.

    A parent weighs every subset of its children's subtree changes.  For each
    subset it picks its own best plan; the subset whose resulting global plan
    has the lowest inefficiency wins (ties favour approving more children).
    In the first iteration all changes are approved.
    """
    prep = prepared or _Prepared(problem)
    U, D = topology.U, problem.D
    first = previous is None
    if first:
        prev_aggregates = np.zeros((U, D))
    target, scale, kind = problem.target, problem.ineff_scale, problem.kind
    proposed = [0] * U
    approved = [True] * U
    aggregates = np.zeros((U, D))
    for u in topology.post_order():
        own_prev = np.zeros(D) if first else problem.plansets[u].matrix[previous[u]]
        kids = topology.children[u]
        changes = [aggregates[c] - prev_aggregates[c] for c in kids]
        masks = [(True,) * len(kids)] if first else list(itertools.product((True, False), repeat=len(kids)))
        best = None
        for mask in masks:
            # previous global == outside world + own previous plan + children's previous aggregates
            context = prev_global - own_prev
            for ok, change in zip(mask, changes):
                if ok:
                    context = context + change
            pos = local_select(prep.cands[u], prep.costs[u], context, target, problem.betas[u], scale, kind)
            ineff = problem.inefficiency(context + prep.cands[u][pos])
            if best is None or ineff < best[0]:
                best = (ineff, mask, pos)
        _, mask, pos = best
        children_sum = np.zeros(D)
        for ok, c in zip(mask, kids):
            approved[c] = ok
            children_sum += aggregates[c] if ok else prev_aggregates[c]
        proposed[u] = prep.starts[u] + pos
        aggregates[u] = prep.cands[u][pos] + children_sum
    candidate = _apply_approvals(topology, proposed, approved, previous)
    return BottomUpRecord(proposed, approved, aggregates, prev_aggregates, candidate, aggregates[topology.root].copy())


def _apply_approvals(topology: TreeTopology, proposed, approved, previous) -> list[int]:
    if previous is None:
        return list(proposed)
    keep = [True] * topology.U
    out = list(previous)
    for u in topology.pre_order():
        p = topology.parent[u]
        keep[u] = approved[u] and (p is None or keep[p])
        if keep[u]:
            out[u] = proposed[u]
    return out


def top_down_phase(topology: TreeTopology, problem: EposProblem, record: BottomUpRecord,
                   previous: Sequence[int] | None, prev_global: np.ndarray, prev_inefficiency: float | None,
                   guard: bool = True) -> IterationRecord:
    """Deliver approvals, recompute the global plan from final selections, apply the guard."""
    selections = list(record.candidate_selections)
    global_plan = problem.global_plan(selections)
    ineff = problem.inefficiency(global_plan)
    reverted = False
    if guard and previous is not None and prev_inefficiency is not None and ineff > prev_inefficiency:
        selections, global_plan, ineff, reverted = list(previous), prev_global.copy(), prev_inefficiency, True
    return IterationRecord(record, selections, global_plan, ineff, reverted)


def epos_run(problem: EposProblem, L: int = 20, guard: bool = True, topology: TreeTopology | None = None,
             keep_records: bool = False) -> EposResult:
    if L < 1:
        raise ValueError("L must be >= 1")
    topology = topology or build_tree(problem.U)
    if topology.U != problem.U:
        raise ValueError("topology and problem disagree on U")
    prep = _Prepared(problem)
    previous: list[int] | None = None
    prev_agg = None
    prev_global = np.zeros(problem.D)
    prev_ineff = None
    ineff_trace, combined_trace, records = [], [], []
    for it in range(L):
        bu = bottom_up_phase(topology, problem, previous, prev_agg, prev_global, prep)
        rec = top_down_phase(topology, problem, bu, previous, prev_global, prev_ineff, guard)
        if keep_records:
            records.append(rec)
        stalled = previous is not None and rec.selections == previous
        previous, prev_global, prev_ineff = rec.selections, rec.global_plan, rec.inefficiency
        prev_agg = subtree_aggregates(topology, problem, previous)
        ineff_trace.append(prev_ineff)
        combined_trace.append(problem.combined_cost(previous, prev_global))
        if stalled and not keep_records:
            # a repeated state is a fixed point of this deterministic map
            remaining = L - it - 1
            ineff_trace.extend([ineff_trace[-1]] * remaining)
            combined_trace.extend([combined_trace[-1]] * remaining)
            break
    return EposResult(list(previous), prev_global, ineff_trace, combined_trace, records)


def brute_force_oracle(problem: EposProblem, limit: int = MAX_ORACLE_COMBINATIONS) -> tuple[float, list[int]]:
    """Exhaustive minimum of the summed behavior objective; ties go to the lexicographically first selection."""
    sizes = [e - s for s, e in problem.ranges]
    total = math.prod(sizes)
    if total > limit:
        raise ValueError(f"oracle instance has {total} combinations, limit is {limit}")
    prep = _Prepared(problem)
    D = problem.D
    best_val, best_sel = math.inf, None
    combos = itertools.product(*[range(n) for n in sizes])
    chunk = 65536
    one_minus = float(np.sum(1.0 - problem.betas))
    while True:
        block = np.array(list(itertools.islice(combos, chunk)), dtype=np.int64)
        if block.size == 0:
            break
        block = block.reshape(-1, problem.U)
        g = np.zeros((block.shape[0], D))
        disc = np.zeros(block.shape[0])
        for u in range(problem.U):
            g += prep.cands[u][block[:, u]]
            disc += problem.betas[u] * prep.costs[u][block[:, u]]
        vals = disc + one_minus * problem.kind.rows(problem.target, g) / problem.ineff_scale
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_sel = [prep.starts[u] + int(block[i, u]) for u in range(problem.U)]
    return best_val, best_sel
