import numpy as np
import pytest
from hypothesis import given, strategies as st

from hrcl.baselines import method_spec
from hrcl.domain import ExperimentConfig
from hrcl.marl import (
    Batch, Environment, FlatPolicy, HierarchicalPolicy, PpoConfig, advantage, clipped_surrogate, critic_values,
    encode_state, episodes_to_batch, execute, load_checkpoint, make_critic, make_policy, prob_ratio, rollout,
    save_checkpoint, state_size, train, update_policies,
)
from hrcl.neural import Adam, DenseNetwork
from hrcl.scenario import Scenario
from hrcl.strategy import behavior_from_range

SMALL = ExperimentConfig(U=4, K=4, D=4, T=3, I=2, M=2, episodes=12, H=6, W=16)


def _zero(net):
    for v in net.params.values():
        v[...] = 0.0
    return net


# --- state, advantage, ratio, surrogate -------------------------------------------

def test_encode_state_example():
    s = encode_state([1, 2], [3, 4], [1, 1], 0.5, 0, 16)
    assert s.tolist() == [1, 2, 3, 4, 1, 1, 0.5, 0]
    assert len(s) == state_size(2)


def test_encode_state_zero_and_purity():
    s = encode_state(np.zeros(3), np.zeros(3), np.zeros(3), 0.0, 4, 8)
    assert s[:-1].tolist() == [0.0] * 10 and s[-1] == 0.5
    a = encode_state([1.5, 2], [0, 1], [3, 3], 2.0, 1, 4, discomfort_scale=4.0)
    b = encode_state([1.5, 2], [0, 1], [3, 3], 2.0, 1, 4, discomfort_scale=4.0)
    assert a.tobytes() == b.tobytes() and a[6] == 0.5
    with pytest.raises(ValueError):
        encode_state([1, 2], [1], [1, 2], 0.0, 0, 1)


def test_advantage_examples():
    assert advantage(-0.3, 0.0, 5.0, 0.0) == -0.3
    assert advantage(-0.3, -1.2, -1.0, 0.95) == pytest.approx(-0.05, abs=1e-15)
    assert advantage(-0.3, -1.2, -1.0, 0.95, terminal=True) == pytest.approx(0.9, abs=1e-15)


def test_zero_critic_advantage_equals_reward():
    scenario = Scenario(SMALL)
    policy = make_policy(SMALL, method_spec(SMALL), scenario)
    critic = _zero(make_critic(SMALL, policy, scenario))
    states = np.random.default_rng(0).standard_normal((5, state_size(4)))
    q, _ = critic_values(critic, policy, states, np.zeros((5, 1), dtype=int))
    rewards = np.linspace(-1, 0, 5)
    assert np.all(rewards + 0.95 * q - q == rewards)


def test_prob_ratio():
    assert prob_ratio(-0.7, -0.7) == 1.0
    assert prob_ratio(np.log(0.4), np.log(0.2)) == pytest.approx(2.0, rel=1e-15)


@given(st.floats(-20, 20), st.floats(-20, 20))
def test_prob_ratio_positive(a, b):
    assert prob_ratio(a, b) > 0


def test_clipped_surrogate_examples():
    assert clipped_surrogate(1.0, 0.37, 0.2) == 0.37
    assert clipped_surrogate(2.0, 1.0, 0.2) == 1.2
    assert clipped_surrogate(0.5, -1.0, 0.2) == -0.8
    with pytest.raises(ValueError):
        clipped_surrogate(1.0, 1.0, 0.0)


@given(st.floats(0, 10), st.floats(-10, 10), st.floats(0.01, 0.9))
def test_clip_bound(ratio, adv, eps):
    v = clipped_surrogate(ratio, adv, eps)
    assert abs(v) <= max(abs(ratio * adv), (1 + eps) * abs(adv)) + 1e-12


# --- PPO update ------------------------------------------------------------------

def _batch(policy, n, rewards, rng, done=None):
    states = rng.standard_normal((n, state_size(4)))
    acts, logp = policy.act(states, rng)
    return Batch(states, acts, logp, np.asarray(rewards, float), states.copy(), acts.copy(),
                 np.ones(n, bool) if done is None else done)


def _setup(seed=0, lr=1e-3):
    policy = FlatPolicy(state_size(4), 4, 16, seed, lr)
    critic = DenseNetwork([state_size(4) + 4, 16, 16, 1], "identity", seed=seed + 1)
    return policy, critic


def test_zero_advantage_batch():
    policy, critic = _setup()
    _zero(critic)
    before = {k: v.copy() for k, v in policy.heads[0].net.params.items()}
    cfg = PpoConfig(entropy_coef=0.0, normalize_advantages=False, epochs=1)
    rep = update_policies(_batch(policy, 8, np.zeros(8), np.random.default_rng(0)), policy, critic, Adam(), cfg)
    assert rep.critic_loss == 0.0 and rep.surrogate == 0.0
    for k, v in policy.heads[0].net.params.items():
        np.testing.assert_array_equal(v, before[k])


def test_single_transition_loss_report():
    policy, critic = _setup()
    _zero(critic)
    cfg = PpoConfig(entropy_coef=0.0, epochs=1)
    rep = update_policies(_batch(policy, 1, [-0.3], np.random.default_rng(1)), policy, critic, Adam(), cfg)
    # ratio 1 at the first step, zero critic: the advantage is the reward
    assert rep.n == 1
    assert rep.actor_loss == pytest.approx(0.3, abs=1e-15)


def test_zero_learning_rate_updates_repeat_exactly():
    policy, critic = _setup(lr=0.0)
    batch = _batch(policy, 10, np.linspace(-1, 0, 10), np.random.default_rng(2))
    cfg = PpoConfig(lr=0.0)
    a = update_policies(batch, policy, critic, Adam(0.0), cfg)
    b = update_policies(batch, policy, critic, Adam(0.0), cfg)
    assert (a.actor_loss, a.critic_loss, a.entropy) == (b.actor_loss, b.critic_loss, b.entropy)


def test_ratio_is_one_after_refresh():
    policy, critic = _setup()
    rep = update_policies(_batch(policy, 16, np.linspace(-1, 0, 16), np.random.default_rng(3)), policy, critic,
                          Adam(1e-3), PpoConfig(epochs=3))
    assert rep.ratio_deviation_after_refresh < 1e-12


def test_empty_batch_rejected():
    policy, critic = _setup()
    empty = Batch(*(np.zeros((0, k)) for k in (state_size(4), 1, 1)), np.zeros(0), np.zeros((0, state_size(4))),
                  np.zeros((0, 1), int), np.zeros(0, bool))
    with pytest.raises(ValueError):
        update_policies(empty, policy, critic, Adam(), PpoConfig())


def test_minibatch_update_runs_and_refreshes():
    policy, critic = _setup()
    rep = update_policies(_batch(policy, 20, np.linspace(-1, 0, 20), np.random.default_rng(4)), policy, critic,
                          Adam(), PpoConfig(minibatch=6), np.random.default_rng(5))
    assert rep.ratio_deviation_after_refresh < 1e-12 and np.isfinite(rep.actor_loss)


# --- environment, rollouts and batches -----------------------------------------------

def test_rewards_shared_and_terminal_flagged():
    scenario = Scenario(SMALL)
    spec = method_spec(SMALL)
    env = Environment(scenario, spec)
    policy = make_policy(SMALL, spec, scenario)
    eps = [rollout(env, policy, e, False, np.random.default_rng(e)) for e in range(2)]
    batch = episodes_to_batch(eps)
    U, T = SMALL.U, SMALL.T
    assert len(batch) == 2 * T * U
    for k in range(0, len(batch), U):
        assert len(set(batch.rewards[k:k + U])) == 1
    assert batch.done.reshape(2, T, U)[:, -1].all() and not batch.done.reshape(2, T, U)[:, :-1].any()
    for ep in eps:
        for r, info in zip(ep.rewards, ep.infos):
            assert r == -info.report.combined


def test_hierarchical_low_actions_stay_in_group():
    policy = HierarchicalPolicy(state_size(4), [3, 2], 8, 0, 1e-3)
    acts, logp = policy.act(np.random.default_rng(0).standard_normal((200, state_size(4))), np.random.default_rng(1))
    sizes = np.array([3, 2])
    assert np.all(acts[:, 1] < sizes[acts[:, 0]]) and np.all(np.isfinite(logp))


# --- training and execution -----------------------------------------------------------

def test_degenerate_training_run():
    cfg = ExperimentConfig(U=1, K=4, D=3, T=1, I=1, M=1, episodes=1, H=1, W=8)
    result = train(cfg)
    assert len(result.curve) == 1 and result.updates == 1
    env = Environment(Scenario(cfg), method_spec(cfg))
    env.reset(0, True)
    info = env.step(betas=np.array([0.5]))
    assert result.curve[0]["mean_reward"] == -info.report.combined


def test_training_is_bit_reproducible():
    a, b = train(SMALL), train(SMALL)
    assert a.curve == b.curve
    assert all(a.critic.params[k].tobytes() == b.critic.params[k].tobytes() for k in a.critic.params)


def test_uniform_actor_executes_as_fixed_group_epos():
    scenario = Scenario(SMALL)
    spec = method_spec(SMALL)
    policy = make_policy(SMALL, spec, scenario)
    _zero(policy.heads[0].net)
    result = execute(policy, SMALL, spec, scenario)
    assert all(a == (0,) for row in result.actions for a in row)
    env = Environment(scenario, spec)
    env.reset(0, True)
    beta = behavior_from_range(1, SMALL.M).beta
    for rep in result.reports:
        ranges = [ps.group_boundaries[0] for ps in [p.regroup(SMALL.I) for p in env.current_plansets()]]
        info = env.step(betas=np.full(SMALL.U, beta), ranges=ranges)
        assert info.report.combined == rep.combined


def test_execution_matches_greedy_evaluation_and_checkpoint(tmp_path):
    spec = method_spec(SMALL)
    scenario = Scenario(SMALL)
    result = train(SMALL, spec, scenario)
    greedy = rollout(Environment(scenario, spec), result.policy, 0, True, None)
    ex = execute(result.policy, SMALL, spec, scenario)
    assert [r.combined for r in ex.reports] == [r.combined for r in greedy.reports]
    save_checkpoint(tmp_path, result.policy, result.critic, SMALL, result.updates)
    loaded = load_checkpoint(tmp_path, SMALL)
    again = execute(loaded, SMALL)
    assert again.selections == ex.selections
    with pytest.raises(ValueError):
        load_checkpoint(tmp_path, SMALL.replace(K=8))


def test_hrl_and_mappo_train():
    for method in ("hrl", "mappo"):
        cfg = SMALL.replace(method=method)
        result = train(cfg)
        assert result.updates >= 1 and len(result.curve) == cfg.episodes
