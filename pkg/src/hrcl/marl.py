"""MDP wrapper, PPO actor-critic machinery, training and decentralized execution.

One actor and one centralized critic are shared by all agents. The critic
scores ``(state, one-hot action)`` pairs; advantages follow the SARSA-style
temporal difference with the logged next action and a zero bootstrap at the
final period.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .costs import CostReport, cost_report
from .domain import ExperimentConfig
from .epos import EposProblem, EposResult, epos_run
from .neural import Adam, DenseNetwork, load_network, log_softmax, save_network, softmax
from .scenario import Scenario
from .strategy import behavior_from_range, decode_action


def _rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([seed, stream])))


# --- MDP pieces ---------------------------------------------------------------

def encode_state(target, global_plan, own_plan, own_discomfort: float, t: int, T: int,
                 discomfort_scale: float = 1.0) -> np.ndarray:
    """[target (D), global plan (D), own plan (D), own discomfort / scale, t / T]."""
    target, global_plan, own_plan = (np.asarray(v, dtype=np.float64) for v in (target, global_plan, own_plan))
    if not target.shape == global_plan.shape == own_plan.shape:
        raise ValueError("target, global plan and own plan must have the same length")
    return np.concatenate([target, global_plan, own_plan, [own_discomfort / discomfort_scale, t / T]])


def state_size(D: int) -> int:
    return 3 * D + 2


@dataclass(frozen=True)
class PpoConfig:
    gamma: float = 0.95
    clip: float = 0.2
    H: int = 64
    epochs: int = 4
    entropy_coef: float = 0.01
    lr: float = 1e-3
    normalize_advantages: bool = True
    minibatch: int = 0

    def __post_init__(self):
        if not 0 <= self.gamma <= 1 or self.clip <= 0 or self.H < 1:
            raise ValueError("need gamma in [0, 1], clip > 0, H >= 1")

    @classmethod
    def from_experiment(cls, c: ExperimentConfig) -> "PpoConfig":
        return cls(c.gamma, c.clip, c.H, c.epochs, c.entropy_coef, c.lr, c.normalize_advantages, c.minibatch)


def advantage(reward: float, q_sa: float, q_next: float, gamma: float, terminal: bool = False) -> float:
    return reward + (0.0 if terminal else gamma * q_next) - q_sa


def prob_ratio(new_logp, old_logp):
    return np.exp(np.asarray(new_logp) - np.asarray(old_logp))


def clipped_surrogate(ratio, adv, eps: float):
    if eps <= 0:
        raise ValueError("clip epsilon must be > 0")
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def action_log_prob(actor: DenseNetwork, state: np.ndarray, action: int) -> float:
    return float(log_softmax(actor.forward(state)[1].logits)[0, action])


# --- decision layers ------------------------------------------------------------

@dataclass
class ActorHead:
    net: DenseNetwork
    opt: Adam

    @property
    def n_actions(self) -> int:
        return self.net.sizes[-1]


def _logp_all(net: DenseNetwork, x: np.ndarray, mask: np.ndarray | None = None):
    _, cache = net.forward(x)
    z = cache.logits
    if mask is not None:
        z = np.where(mask, z, -np.inf)
    return log_softmax(z), cache


def _sample(logp: np.ndarray, rng: np.random.Generator | None) -> np.ndarray:
    if rng is None:
        return np.argmax(logp, axis=1)
    p = np.exp(logp)
    cdf = np.cumsum(p, axis=1)
    u = rng.random(p.shape[0])[:, None] * cdf[:, -1:]
    return np.minimum((cdf <= u).sum(axis=1), p.shape[1] - 1)


class FlatPolicy:
    """One categorical actor. Used by the HRCL family (I*M outcomes) and MAPPO (K plans)."""

    def __init__(self, n_state: int, n_actions: int, W: int, seed: int, lr: float):
        self.heads = [ActorHead(DenseNetwork([n_state, W, W, n_actions], "softmax", rng=_rng(seed, 13)), Adam(lr))]

    @property
    def critic_width(self) -> int:
        return self.heads[0].n_actions

    def act(self, states: np.ndarray, rng: np.random.Generator | None):
        logp, _ = _logp_all(self.heads[0].net, states)
        a = _sample(logp, rng)
        return a[:, None], logp[np.arange(len(a)), a][:, None]

    def one_hot(self, actions: np.ndarray) -> np.ndarray:
        out = np.zeros((actions.shape[0], self.critic_width))
        out[np.arange(actions.shape[0]), actions[:, 0]] = 1.0
        return out

    def head_inputs(self, states: np.ndarray, actions: np.ndarray, h: int):
        return states, None

    def networks(self) -> dict[str, DenseNetwork]:
        return {"actor": self.heads[0].net}


class HierarchicalPolicy:
    """Two actors: a plan group, then a plan inside that group (state + one-hot group as input)."""

    def __init__(self, n_state: int, group_sizes: Sequence[int], W: int, seed: int, lr: float):
        self.group_sizes = np.array(group_sizes)
        I, G = len(group_sizes), int(max(group_sizes))
        self.heads = [
            ActorHead(DenseNetwork([n_state, W, W, I], "softmax", rng=_rng(seed, 13)), Adam(lr)),
            ActorHead(DenseNetwork([n_state + I, W, W, G], "softmax", rng=_rng(seed, 14)), Adam(lr)),
        ]

    @property
    def I(self) -> int:
        return len(self.group_sizes)

    @property
    def critic_width(self) -> int:
        return self.I + self.heads[1].n_actions

    def _low_input(self, states, groups):
        oh = np.zeros((len(groups), self.I))
        oh[np.arange(len(groups)), groups] = 1.0
        mask = np.arange(self.heads[1].n_actions)[None, :] < self.group_sizes[groups][:, None]
        return np.hstack([states, oh]), mask

    def act(self, states, rng):
        logp_hi, _ = _logp_all(self.heads[0].net, states)
        i = _sample(logp_hi, rng)
        x_lo, mask = self._low_input(states, i)
        logp_lo, _ = _logp_all(self.heads[1].net, x_lo, mask)
        j = _sample(logp_lo, rng)
        n = np.arange(len(i))
        return np.stack([i, j], axis=1), np.stack([logp_hi[n, i], logp_lo[n, j]], axis=1)

    def one_hot(self, actions):
        out = np.zeros((actions.shape[0], self.critic_width))
        n = np.arange(actions.shape[0])
        out[n, actions[:, 0]] = 1.0
        out[n, self.I + actions[:, 1]] = 1.0
        return out

    def head_inputs(self, states, actions, h):
        if h == 0:
            return states, None
        return self._low_input(states, actions[:, 0])

    def networks(self):
        return {"actor_high": self.heads[0].net, "actor_low": self.heads[1].net}


# --- environment ------------------------------------------------------------------

@dataclass
class StepInfo:
    report: CostReport
    selections: list[int]
    global_plan: np.ndarray
    epos: EposResult | None


class Environment:
    """Steps one period: decisions -> plan selections -> global plan -> costs -> next target."""

    def __init__(self, scenario: Scenario, method):
        self.scenario = scenario
        self.method = method
        self.config = scenario.config

    def reset(self, episode: int, evaluation: bool) -> np.ndarray:
        self.draws = self.scenario.schedule(episode, evaluation)
        self.t = 0
        D = self.scenario.D
        self.target = self.scenario.initial_target()
        self.global_plan = np.zeros(D)
        self.own = np.zeros((self.scenario.U, D))
        self.disc = np.zeros(self.scenario.U)
        self.scales = np.ones(self.scenario.U)
        return self.states()

    def states(self) -> np.ndarray:
        T = self.config.T
        return np.stack([encode_state(self.target, self.global_plan, self.own[u], self.disc[u], self.t, T,
                                      self.scales[u]) for u in range(self.scenario.U)])

    def current_plansets(self):
        return self.scenario.plansets(self.draws[self.t])

    def step(self, actions: np.ndarray | None = None, betas=None, ranges=None) -> StepInfo:
        """Advance one period.

        ``actions`` are decoded by the method spec; EPOS baselines instead pass
        ``betas`` (and optionally ``ranges``) directly.
        """
        plansets = self.current_plansets()
        scale = self.scenario.ineff_scale(self.target, plansets)
        spec = self.method
        result = None
        if actions is not None and spec.direct:
            selections = spec.direct_selections(actions, plansets)
            g = np.zeros(self.scenario.D)
            for ps, k in zip(plansets, selections):
                g += ps.matrix[k]
        else:
            if actions is not None:
                ranges, betas = spec.decode(actions, plansets)
            problem = EposProblem(plansets, self.target, betas, ranges, self.scenario.kind,
                                  ineff_scale=scale, sigma1=self.config.sigma1, sigma2=self.config.sigma2)
            result = epos_run(problem, self.config.L, self.config.guard)
            selections, g = result.selections, result.global_plan
        disc = [float(ps.costs[k]) for ps, k in zip(plansets, selections)]
        dscale = [ps.discomfort_scale for ps in plansets]
        report = cost_report(self.t, disc, dscale, self.target, g, self.config.sigma1, self.config.sigma2,
                             self.scenario.kind, scale)
        self.own = np.stack([ps.matrix[k] for ps, k in zip(plansets, selections)])
        self.disc = np.array(disc)
        self.scales = np.array(dscale)
        self.global_plan = g
        self.target = self.scenario.next_target(self.target, g, self.t)
        self.t += 1
        return StepInfo(report, list(selections), g, result)

    @property
    def done(self) -> bool:
        return self.t >= self.config.T


# --- rollouts -------------------------------------------------------------------------

@dataclass
class Episode:
    states: np.ndarray        # (T+1, U, S)
    actions: np.ndarray       # (T, U, heads)
    logps: np.ndarray         # (T, U, heads)
    rewards: np.ndarray       # (T,)
    infos: list[StepInfo]

    @property
    def reports(self) -> list[CostReport]:
        return [i.report for i in self.infos]

    @property
    def mean_reward(self) -> float:
        return float(np.mean(self.rewards))


def rollout(env: Environment, policy, episode: int, evaluation: bool, rng: np.random.Generator | None) -> Episode:
    """Run one episode; ``rng=None`` means greedy (argmax) actions."""
    states = [env.reset(episode, evaluation)]
    actions, logps, rewards, infos = [], [], [], []
    while not env.done:
        a, lp = policy.act(states[-1], rng)
        info = env.step(a)
        actions.append(a)
        logps.append(lp)
        rewards.append(info.report.reward)
        infos.append(info)
        states.append(env.states())
    return Episode(np.stack(states), np.stack(actions), np.stack(logps), np.array(rewards), infos)


# --- PPO update ---------------------------------------------------------------------

@dataclass
class Batch:
    states: np.ndarray
    actions: np.ndarray
    old_logp: np.ndarray
    rewards: np.ndarray
    next_states: np.ndarray
    next_actions: np.ndarray
    done: np.ndarray

    def __len__(self):
        return self.states.shape[0]


def episodes_to_batch(episodes: Sequence[Episode]) -> Batch:
    parts = {k: [] for k in ("s", "a", "lp", "r", "s2", "a2", "d")}
    for ep in episodes:
        T, U = ep.actions.shape[:2]
        for t in range(T):
            last = t == T - 1
            parts["s"].append(ep.states[t])
            parts["a"].append(ep.actions[t])
            parts["lp"].append(ep.logps[t])
            parts["r"].append(np.full(U, ep.rewards[t]))
            parts["s2"].append(ep.states[t + 1])
            parts["a2"].append(ep.actions[t] if last else ep.actions[t + 1])
            parts["d"].append(np.full(U, last))
    cat = {k: np.concatenate(v) for k, v in parts.items()}
    return Batch(cat["s"], cat["a"], cat["lp"], cat["r"], cat["s2"], cat["a2"], cat["d"].astype(bool))


@dataclass
class LossReport:
    actor_loss: float
    surrogate: float
    critic_loss: float
    entropy: float
    ratio_deviation_after_refresh: float
    n: int


def critic_values(critic: DenseNetwork, policy, states, actions) -> tuple[np.ndarray, object]:
    q, cache = critic.forward(np.hstack([states, policy.one_hot(actions)]))
    return q[:, 0], cache



def _minibatch_step(batch: Batch, idx: np.ndarray, adv_all: np.ndarray, policy, critic: DenseNetwork,
                    critic_opt: Adam, cfg: PpoConfig) -> tuple[float, float, float, float]:
    """One critic step and one step per actor head on the transitions ``idx``."""
    N = len(idx)
    states, actions, adv = batch.states[idx], batch.actions[idx], adv_all[idx]
    # critic: semi-gradient on mean squared TD error
    q_next, _ = critic_values(critic, policy, batch.next_states[idx], batch.next_actions[idx])
    q_next = np.where(batch.done[idx], 0.0, q_next)
    q, cache = critic_values(critic, policy, states, actions)
    td = batch.rewards[idx] + cfg.gamma * q_next - q
    critic_loss = float(np.mean(td ** 2))
    critic_opt.step(critic, critic.backward(cache, (-2.0 / N) * td[:, None]))
    surr_total, ent_total, loss_total = 0.0, 0.0, 0.0
    n = np.arange(N)
    lo, hi = 1.0 - cfg.clip, 1.0 + cfg.clip
    for h, head in enumerate(policy.heads):
        x, mask = policy.head_inputs(states, actions, h)
        logp, cache = _logp_all(head.net, x, mask)
        a = actions[:, h]
        ratio = prob_ratio(logp[n, a], batch.old_logp[idx, h])
        surr = clipped_surrogate(ratio, adv, cfg.clip)
        p = np.exp(logp)
        plogp = np.where(p > 0, p * np.where(p > 0, logp, 0.0), 0.0)
        ent = -plogp.sum(axis=1)
        active = (ratio * adv) <= (np.clip(ratio, lo, hi) * adv)
        d_logp = np.where(active, ratio * adv, 0.0)
        onehot = np.zeros_like(p)
        onehot[n, a] = 1.0
        g_surr = d_logp[:, None] * (onehot - p)
        g_ent = -(plogp + p * ent[:, None])
        g_logits = -(g_surr + cfg.entropy_coef * g_ent) / N
        head.opt.step(head.net, head.net.backward(cache, g_logits, wrt_logits=True))
        surr_total += float(np.mean(surr))
        ent_total += float(np.mean(ent))
        loss_total += -float(np.mean(surr)) - cfg.entropy_coef * float(np.mean(ent))
    return critic_loss, loss_total, surr_total, ent_total


def update_policies(batch: Batch, policy, critic: DenseNetwork, critic_opt: Adam, cfg: PpoConfig,
                    rng: np.random.Generator | None = None) -> LossReport:
    """PPO epochs over one batch, in shuffled minibatches when ``cfg.minibatch`` is set.

    Advantages are computed once from the pre-update critic. The reported
    losses are those of the first minibatch step.
    """
    N = len(batch)
    if N == 0:
        raise ValueError("empty batch")
    q_next, _ = critic_values(critic, policy, batch.next_states, batch.next_actions)
    q_next = np.where(batch.done, 0.0, q_next)
    q, _ = critic_values(critic, policy, batch.states, batch.actions)
    adv = batch.rewards + cfg.gamma * q_next - q
    if cfg.normalize_advantages and N > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    size = cfg.minibatch if 0 < cfg.minibatch < N else N
    first = None
    for _ in range(cfg.epochs):
        order = rng.permutation(N) if (rng is not None and size < N) else np.arange(N)
        for start in range(0, N, size):
            stats = _minibatch_step(batch, order[start:start + size], adv, policy, critic, critic_opt, cfg)
            if first is None:
                first = stats
    # refresh pi_old: a snapshot of the updated actor must reproduce its own log-probs
    dev = 0.0
    for h, head in enumerate(policy.heads):
        x, mask = policy.head_inputs(batch.states, batch.actions, h)
        old = head.net.copy()
        new_lp = _logp_all(head.net, x, mask)[0][np.arange(N), batch.actions[:, h]]
        old_lp = _logp_all(old, x, mask)[0][np.arange(N), batch.actions[:, h]]
        dev = max(dev, float(np.max(np.abs(prob_ratio(new_lp, old_lp) - 1.0))))
    critic_loss, loss_total, surr_total, ent_total = first
    return LossReport(loss_total, surr_total, critic_loss, ent_total, dev, N)


# --- training -------------------------------------------------------------------------

CURVE_COLUMNS = ("episode", "mean_reward", "mean_discomfort", "inefficiency", "combined")


@dataclass
class TrainResult:
    policy: object
    critic: DenseNetwork
    curve: list[dict]
    losses: list[LossReport] = field(default_factory=list)
    eval_episodes: list[Episode] = field(default_factory=list)
    train_rewards: list[float] = field(default_factory=list)
    updates: int = 0


def episode_row(episode: int, ep: Episode) -> dict:
    reps = ep.reports
    return {
        "episode": episode,
        "mean_reward": ep.mean_reward,
        "mean_discomfort": float(np.mean([r.mean_discomfort for r in reps])),
        "inefficiency": float(np.mean([r.inefficiency for r in reps])),
        "combined": float(np.mean([r.combined for r in reps])),
    }


def make_policy(config: ExperimentConfig, spec, scenario: Scenario):
    n_state = state_size(scenario.D)
    if spec.hierarchical:
        sizes = [e - s for s, e in scenario.planset(0, 0).regroup(spec.I).group_boundaries]
        return HierarchicalPolicy(n_state, sizes, config.W, config.seed, config.lr)
    return FlatPolicy(n_state, spec.n_actions(scenario.K), config.W, config.seed, config.lr)


def make_critic(config: ExperimentConfig, policy, scenario: Scenario) -> DenseNetwork:
    return DenseNetwork([state_size(scenario.D) + policy.critic_width, config.W, config.W, 1], "identity",
                        rng=_rng(config.seed, 15))


def train(config: ExperimentConfig, spec=None, scenario: Scenario | None = None, keep_episodes: bool = False,
          progress=None) -> TrainResult:
    """Centralized training with a shared buffer; one greedy evaluation episode per training episode.

    The buffer is on-policy: once every agent has at least H fresh
    transitions, H of them per agent are sampled, the networks are updated
    and the buffer is cleared.
    """
    if spec is None:
        from .baselines import method_spec
        spec = method_spec(config)
    if not spec.learns:
        raise ValueError(f"method {spec.method!r} does not learn")
    scenario = scenario or Scenario(config)
    cfg = PpoConfig.from_experiment(config)
    policy = make_policy(config, spec, scenario)
    critic = make_critic(config, policy, scenario)
    critic_opt = Adam(config.lr)
    env = Environment(scenario, spec)
    act_rng, batch_rng = _rng(config.seed, 11), _rng(config.seed, 17)
    result = TrainResult(policy, critic, [])
    buffer: list[Episode] = []
    eval_ep, dirty = None, True
    for e in range(config.episodes):
        ep = rollout(env, policy, e, False, act_rng)
        result.train_rewards.append(ep.mean_reward)
        buffer.append(ep)
        if sum(b.actions.shape[0] for b in buffer) >= cfg.H:
            batch = episodes_to_batch(buffer)
            batch = _sample_per_agent(batch, len(buffer), scenario.U, cfg.H, batch_rng)
            result.losses.append(update_policies(batch, policy, critic, critic_opt, cfg, batch_rng))
            result.updates += 1
            buffer.clear()
            dirty = True
        if dirty:
            # greedy evaluation is a pure function of the parameters; rerun only after updates
            eval_ep, dirty = rollout(env, policy, 0, True, None), False
        result.curve.append(episode_row(e, eval_ep))
        if keep_episodes:
            result.eval_episodes.append(eval_ep)
        if progress:
            progress(e, result)
    return result


def _sample_per_agent(batch: Batch, n_episodes: int, U: int, H: int, rng: np.random.Generator) -> Batch:
    """Keep H transitions per agent, sampled without replacement from the on-policy window."""
    N = len(batch)
    agent = np.arange(N) % U
    keep = []
    for u in range(U):
        idx = np.flatnonzero(agent == u)
        if len(idx) > H:
            idx = np.sort(rng.choice(idx, H, replace=False))
        keep.append(idx)
    sel = np.sort(np.concatenate(keep))
    return Batch(*(getattr(batch, f)[sel] for f in
                   ("states", "actions", "old_logp", "rewards", "next_states", "next_actions", "done")))


# --- execution & checkpoints ----------------------------------------------------------

@dataclass
class ExecutionResult:
    selections: list[list[int]]      # per period, per agent
    reports: list[CostReport]
    actions: list[list[tuple]]

    @property
    def mean_combined(self) -> float:
        return float(np.mean([r.combined for r in self.reports]))


def execute(policy, config: ExperimentConfig, spec=None, scenario: Scenario | None = None,
            episode: int = 0) -> ExecutionResult:
    """Decentralized deployment: every agent runs the actor on its own state only, greedily."""
    if spec is None:
        from .baselines import method_spec
        spec = method_spec(config)
    scenario = scenario or Scenario(config)
    env = Environment(scenario, spec)
    states = env.reset(episode, True)
    selections, reports, actions = [], [], []
    while not env.done:
        per_agent = [policy.act(states[u:u + 1], None) for u in range(scenario.U)]
        a = np.concatenate([p[0] for p in per_agent])
        info = env.step(a)
        selections.append(info.selections)
        reports.append(info.report)
        actions.append([tuple(int(x) for x in row) for row in a])
        states = env.states()
    return ExecutionResult(selections, reports, actions)


def save_checkpoint(directory: Path | str, policy, critic: DenseNetwork, config: ExperimentConfig, step: int) -> Path:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, net in policy.networks().items():
        save_network(net, directory / f"{name}.ckpt", step)
    save_network(critic, directory / "critic.ckpt", step)
    manifest = [f"method={config.method}", f"scenario={config.scenario}", f"U={config.U}", f"K={config.K}",
                f"D={config.D}", f"I={config.I}", f"M={config.M}", f"seed={config.seed}", f"step={step}"]
    (directory / "policy.manifest").write_text("\n".join(manifest) + "\n")
    return directory


def load_checkpoint(directory: Path | str, config: ExperimentConfig, spec=None, scenario: Scenario | None = None):
    """Rebuild the policy for ``config`` and overwrite its actor weights from ``directory``."""
    if spec is None:
        from .baselines import method_spec
        spec = method_spec(config)
    directory = Path(directory)
    manifest = dict(ln.split("=", 1) for ln in (directory / "policy.manifest").read_text().split())
    for key in ("method", "scenario", "U", "K", "D", "I", "M"):
        if manifest[key] != str(getattr(config, key)):
            raise ValueError(f"checkpoint/scenario mismatch on {key}: {manifest[key]} != {getattr(config, key)}")
    scenario = scenario or Scenario(config)
    policy = make_policy(config, spec, scenario)
    for head, name in zip(policy.heads, policy.networks()):
        net, _ = load_network(directory / f"{name}.ckpt")
        if net.sizes != head.net.sizes:
            raise ValueError(f"checkpoint network {name} has sizes {net.sizes}, expected {head.net.sizes}")
        head.net = net
    return policy
