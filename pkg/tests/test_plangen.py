import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from hrcl.domain import GlobalPlan, Target
from hrcl.plangen import (
    CosineTargetSpec, LoadShiftSpec, SyntheticSpec, cosine_target, generate_energy_planset,
    generate_loadshift_planset, generate_synthetic_planset, read_meta, split_draws, update_target, write_dataset,
)


def test_synthetic_planset_shape_and_discomforts():
    ps = generate_synthetic_planset(SyntheticSpec(16, 100, seed=1), agent_id=4)
    assert ps.K == 16 and ps.D == 100
    np.testing.assert_allclose(ps.costs, np.arange(16) / 15, rtol=0, atol=0)
    assert ps.costs[-1] == 1.0


def test_synthetic_single_plan():
    ps = generate_synthetic_planset(SyntheticSpec(1, 5), 0)
    assert ps.K == 1 and ps.costs[0] == 0.0


def test_synthetic_is_bit_reproducible_and_agent_specific():
    a = generate_synthetic_planset(SyntheticSpec(8, 16, seed=7), 2)
    b = generate_synthetic_planset(SyntheticSpec(8, 16, seed=7), 2)
    c = generate_synthetic_planset(SyntheticSpec(8, 16, seed=7), 3)
    assert a.matrix.tobytes() == b.matrix.tobytes()
    assert a.matrix.tobytes() != c.matrix.tobytes()


def test_synthetic_values_are_standard_normal():
    ps = generate_synthetic_planset(SyntheticSpec(200, 100, seed=0), 0)
    assert abs(ps.matrix.mean()) < 0.02
    assert abs(ps.matrix.var() - 1.0) < 0.03


def test_loadshift_offsets():
    base = np.arange(144, dtype=float)
    same = generate_loadshift_planset(LoadShiftSpec(base, (0,)), 0)
    np.testing.assert_array_equal(same.matrix[0], base)
    np.testing.assert_array_equal(same.matrix[1], base)
    ps = generate_loadshift_planset(LoadShiftSpec(base, (75,)), 0)
    assert ps.costs.tolist() == [0.0, 75.0]
    np.testing.assert_array_equal(ps.matrix[1], np.roll(base, 15))


def test_loadshift_rejects_off_grid_offsets():
    with pytest.raises(ValueError):
        LoadShiftSpec(np.ones(144), (7,))


def test_energy_planset_has_ten_plans_preserving_energy():
    ps = generate_energy_planset(seed=0, agent_id=1)
    assert ps.K == 10 and ps.D == 144
    totals = ps.matrix.sum(axis=1)
    np.testing.assert_allclose(totals, totals[0], rtol=1e-12)
    assert ps.costs[0] == 0.0


@given(st.lists(st.integers(-300, 300).map(lambda m: 5 * m), min_size=1, max_size=9))
def test_loadshift_preserves_total(offsets):
    base = np.random.default_rng(0).random(144)
    ps = generate_loadshift_planset(LoadShiftSpec(base, tuple(offsets)), 0)
    np.testing.assert_allclose(ps.matrix.sum(axis=1), base.sum(), rtol=1e-12)


def test_cosine_target_examples():
    t = cosine_target(CosineTargetSpec(3.0, math.pi / 24, 100))
    assert t.values[0] == 3.0
    # period 48 indices -> 100/48 ~ 2.08 full periods
    assert 100 / (2 * math.pi / (math.pi / 24)) == pytest.approx(2.0833, abs=1e-4)
    crossings = np.sum(np.diff(np.sign(t.values)) != 0)
    assert crossings == 4
    assert np.all(cosine_target(CosineTargetSpec(0.0, 1.0, 10)).values == 0)


def test_update_target_examples():
    assert update_target(Target([5, 5]), GlobalPlan([2, 3])).values.tolist() == [3, 2]
    assert update_target(Target([5, 5]), GlobalPlan([5, 5])).values.tolist() == [0, 0]
    t = update_target(Target([5, 5], 2), GlobalPlan([0, 0]))
    assert t.values.tolist() == [5, 5] and t.period == 3


def test_update_target_telescopes():
    rng = np.random.default_rng(4)
    tau0 = Target(rng.standard_normal(6))
    gs = rng.standard_normal((5, 6))
    t = tau0
    for g in gs:
        t = update_target(t, GlobalPlan(g))
    np.testing.assert_allclose(t.values, tau0.values - gs.sum(axis=0), atol=1e-12)
    assert t.period == 5


def test_split_draws_is_80_20():
    train, evaluation = split_draws(20)
    assert evaluation == [4, 9, 14, 19]
    assert len(train) == 16 and not set(train) & set(evaluation)


def test_write_dataset(tmp_path):
    sets = [generate_synthetic_planset(SyntheticSpec(4, 3, seed=1), u) for u in range(2)]
    write_dataset(tmp_path, sets, {"seed": 1, "K": 4})
    assert sorted(p.name for p in tmp_path.iterdir()) == ["agent_0.plans", "agent_1.plans", "dataset.meta"]
    assert read_meta(tmp_path) == {"seed": "1", "K": "4"}
