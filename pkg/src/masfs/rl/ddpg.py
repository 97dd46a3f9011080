"""DDPG over variable-length ready queues."""
from __future__ import annotations

import copy
import csv
import io
import logging
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from ..simcore import Assignment, SimConfig, Simulation
from ..sla import DEFAULT_LAMBDA, RewardMode, SlaBook, epoch_reward
from ..workload import MasConfig, ModelProfile, RequestTrace, TenantSpec, generate_trace, table_max_latency
from .encode import FeatureSpec, PolicyMode, encode_state
from .nets import Actor, Adam, Critic, decode_actions, exploration_noise, pad_sequences, soft_update

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    gamma: float = 0.99
    tau: float = 0.005
    actor_lr: float = 1e-4
    critic_lr: float = 1e-3
    sigma: float = 0.2
    sigma_decay: float = 0.995
    batch_size: int = 32
    episodes: int = 100
    bptt: int = 32
    buffer_capacity: int = 10_000
    hidden: int = 192
    updates_per_step: int = 1
    grad_clip: float | None = 5.0
    action_l2: float = 1e-3
    lam: float = DEFAULT_LAMBDA
    seed: int = 0
    checkpoint_every: int = 0
    checkpoint_path: str | None = None
    select_every: int = 0

    def __post_init__(self):
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")
        if not 0.0 < self.tau <= 1.0:
            raise ValueError("tau must be in (0, 1]")


@dataclass
class Transition:
    sys: np.ndarray
    seq: np.ndarray
    action: np.ndarray
    reward: float
    next_sys: np.ndarray
    next_seq: np.ndarray
    terminal: bool

    def __post_init__(self):
        if len(self.seq) != len(self.action):
            raise ValueError("state and action sequences must align")


class ReplayBuffer:
    """Fixed-capacity ring buffer with uniform sampling (with replacement)."""

    def __init__(self, capacity: int):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: list = []
        self.pos = 0

    def __len__(self):
        return len(self.items)

    def add(self, tr: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(tr)
        else:
            self.items[self.pos] = tr
        self.pos = (self.pos + 1) % self.capacity

    def sample_indices(self, rng: np.random.Generator, n: int) -> np.ndarray:
        return rng.integers(0, len(self.items), size=n)

    def sample(self, rng: np.random.Generator, n: int) -> list:
        return [self.items[i] for i in self.sample_indices(rng, n)]


class Agent:
    """Actor, critic, their target copies and optimisers."""

    def __init__(self, spec: FeatureSpec, cfg: TrainConfig, rng=None, actor: Actor | None = None,
                 critic: Critic | None = None):
        rng = np.random.default_rng(cfg.seed if rng is None else rng)
        self.spec = spec
        self.cfg = cfg
        self.actor = actor or Actor(spec.n_in, spec.n_sys, spec.n_sas, cfg.hidden, rng, bptt=cfg.bptt)
        self.critic = critic or Critic(spec.n_in, spec.n_sys, spec.n_sas, cfg.hidden, rng, bptt=cfg.bptt)
        self.actor_t = self.actor.copy()
        self.critic_t = self.critic.copy()
        self.actor_opt = Adam(self.actor.params, cfg.actor_lr, clip=cfg.grad_clip)
        self.critic_opt = Adam(self.critic.params, cfg.critic_lr, clip=cfg.grad_clip)


def td_targets(agent: Agent, rewards, next_sys, next_X, next_mask, terminal, gamma: float) -> np.ndarray:
    """y = r + gamma * Q'(s', mu'(s')), or y = r at terminal transitions."""
    A_next, _ = agent.actor_t.forward(next_sys, next_X, next_mask)
    q_next, _ = agent.critic_t.forward(next_sys, next_X, A_next * next_mask[..., None], next_mask)
    return rewards + gamma * (1.0 - terminal) * q_next


def _batch_arrays(batch: Sequence[Transition], spec: FeatureSpec):
    sys = np.stack([t.sys for t in batch])
    X, mask = pad_sequences([t.seq for t in batch], spec.n_in)
    A, _ = pad_sequences([t.action for t in batch], spec.n_out)
    nsys = np.stack([t.next_sys for t in batch])
    nX, nmask = pad_sequences([t.next_seq for t in batch], spec.n_in)
    r = np.array([t.reward for t in batch])
    term = np.array([float(t.terminal) for t in batch])
    return sys, X, mask, A, r, nsys, nX, nmask, term


def ddpg_update(agent: Agent, batch: Sequence[Transition], cfg: TrainConfig | None = None,
                update_actor: bool = True, update_targets: bool = True) -> tuple[float, float]:
    """One critic step on the squared TD error, one actor step up the critic's
    action gradient, then a soft target update. Returns (critic_loss, mean Q)."""
    cfg = cfg or agent.cfg
    if not batch:
        raise ValueError("empty batch")
    sys, X, mask, A, r, nsys, nX, nmask, term = _batch_arrays(batch, agent.spec)
    B = len(batch)
    y = td_targets(agent, r, nsys, nX, nmask, term, cfg.gamma)
    q, cache = agent.critic.forward(sys, X, A, mask)
    err = q - y
    loss = float(np.mean(err * err))
    g, _ = agent.critic.backward(cache, 2.0 * err / B)
    agent.critic_opt.step(agent.critic.params, g)

    q_pi = np.nan
    if update_actor and X.shape[0] > 0:
        Y, acache = agent.actor.forward(sys, X, mask)
        q_pi_vals, ccache = agent.critic.forward(sys, X, Y * mask[..., None], mask)
        _, dA = agent.critic.backward(ccache, -np.ones(B) / B)
        if cfg.action_l2:
            # keeps raw outputs near the scale of the exploration noise
            dA = dA + (2.0 * cfg.action_l2 / max(mask.sum(), 1.0)) * Y
        ga = agent.actor.backward(acache, dA)
        agent.actor_opt.step(agent.actor.params, ga)
        q_pi = float(q_pi_vals.mean())
    if update_targets:
        soft_update(agent.critic_t.params, agent.critic.params, cfg.tau)
        soft_update(agent.actor_t.params, agent.actor.params, cfg.tau)
    return loss, q_pi


# ---------------------------------------------------------------------------
# environment

@dataclass
class EnvSpec:
    """Everything needed to build a fresh simulated episode from a seed."""
    profiles: Sequence[ModelProfile]
    tenants: Sequence[TenantSpec]
    mas: MasConfig
    epoch_ts: float
    horizon: int
    pareto: tuple[float, float]
    medium_factor: float = 2.0
    window: int = 100
    sim_horizon: float | None = None
    trace_fn: Callable[[int], RequestTrace] | None = None

    def feature_spec(self, mode) -> FeatureSpec:
        return FeatureSpec(max(p.model_id for p in self.profiles) + 1, self.mas.n_sas,
                           table_max_latency(self.profiles), self.mas.total_bandwidth, PolicyMode.parse(mode))

    def trace(self, seed: int) -> RequestTrace:
        if self.trace_fn is not None:
            return self.trace_fn(seed)
        return generate_trace(seed, self.tenants, self.profiles, self.horizon, self.pareto, self.medium_factor,
                              kinds=[sa.kind for sa in self.mas.sas])

    def simulation(self, seed: int, log_actions: bool = False) -> Simulation:
        book = SlaBook(self.tenants, window_size=self.window)
        cfg = SimConfig(self.epoch_ts, self.mas, seed, self.sim_horizon)
        return Simulation(cfg, self.trace(seed), self.profiles, book, log_actions=log_actions)


class TrainEnv:
    """Episode wrapper: one RL step per decision epoch, reward = completions until the next one."""

    def __init__(self, env: EnvSpec, reward_mode: RewardMode, lam: float = DEFAULT_LAMBDA):
        self.env = env
        self.reward_mode = reward_mode
        self.lam = lam
        self.sim: Simulation | None = None

    def reset(self, seed: int):
        self.sim = self.env.simulation(seed)
        return self.sim.next_decision()

    def step(self, assignment: Assignment):
        self.sim.apply(assignment)
        nxt = self.sim.next_decision()
        reward = epoch_reward(self.sim.pop_completions(), self.reward_mode, self.lam)
        return reward, nxt, nxt is None


@dataclass
class TrainResult:
    agent: Agent
    curve: list = field(default_factory=list)
    best_actor: Actor | None = None
    best_score: float = float("-inf")
    best_episode: int = -1

    @property
    def policy(self) -> Actor:
        """Best validated actor when selection ran, else the final one."""
        return self.best_actor if self.best_actor is not None else self.agent.actor

    def curve_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["episode", "return", "hit_rate", "sigma", "critic_loss"])
        for row in self.curve:
            w.writerow([row["episode"], repr(row["return"]), repr(row["hit_rate"]), repr(row["sigma"]),
                        repr(row["critic_loss"])])
        return buf.getvalue()


def train_policy(env: EnvSpec, cfg: TrainConfig, mode, agent: Agent | None = None,
                 episode_seed: Callable[[int], int] | None = None, quiet: bool = True,
                 callback: Callable[[int, Agent], None] | None = None,
                 validate: Callable[[Actor], float] | None = None) -> TrainResult:
    """Episodic DDPG training; each episode replays a freshly seeded trace.

    ``callback(episode, agent)`` runs after every episode (progress probes).
    With ``validate`` and ``cfg.select_every > 0`` the actor is scored every
    ``select_every`` episodes (higher is better) and the best copy is kept.
    """
    mode = PolicyMode.parse(mode)
    spec = env.feature_spec(mode)
    reward_mode = RewardMode.SLA_AWARE if mode is PolicyMode.SLA_AWARE else RewardMode.BASELINE
    rng = np.random.default_rng(cfg.seed)
    agent = agent or Agent(spec, cfg, rng)
    buf = ReplayBuffer(cfg.buffer_capacity)
    tenv = TrainEnv(env, reward_mode, cfg.lam)
    sigma = cfg.sigma
    result = TrainResult(agent)
    seed_of = episode_seed or (lambda ep: cfg.seed * 100_003 + ep + 1)
    for ep in range(cfg.episodes):
        t0 = time.perf_counter()
        inp = tenv.reset(seed_of(ep))
        ret, losses = 0.0, []
        state = encode_state(inp, spec) if inp is not None else None
        while inp is not None:
            sys, seq = state
            raw = agent.actor(sys, seq)
            act = raw + exploration_noise(rng, sigma, raw.shape)
            prio, sa = decode_actions(act)
            reward, nxt, done = tenv.step(Assignment(prio, sa))
            ret += reward
            nstate = encode_state(nxt, spec) if nxt is not None else (np.zeros(spec.n_sys), np.zeros((0, spec.n_in)))
            buf.add(Transition(sys, seq, act, reward, nstate[0], nstate[1], done))
            if len(buf) >= cfg.batch_size:
                for _ in range(cfg.updates_per_step):
                    loss, _ = ddpg_update(agent, buf.sample(rng, cfg.batch_size), cfg)
                    losses.append(loss)
            inp, state = nxt, nstate
        res = tenv.sim.result() if tenv.sim is not None else None
        done_n = res.totals["completed"] if res else 0
        hit_rate = res.totals["hits"] / done_n if done_n else float("nan")
        row = {"episode": ep, "return": ret, "hit_rate": hit_rate, "sigma": sigma,
               "critic_loss": float(np.mean(losses)) if losses else float("nan")}
        result.curve.append(row)
        if not quiet:
            log.info("episode %d return %.3f hit %.3f sigma %.3f loss %.4f (%.1fs)", ep, ret, hit_rate,
                     sigma, row["critic_loss"], time.perf_counter() - t0)
        sigma *= cfg.sigma_decay
        if callback is not None:
            callback(ep, agent)
        if validate is not None and cfg.select_every and (ep + 1) % cfg.select_every == 0:
            score = float(validate(agent.actor))
            if score > result.best_score:
                result.best_score, result.best_episode = score, ep
                result.best_actor = copy.deepcopy(agent.actor)
        if cfg.checkpoint_every and cfg.checkpoint_path and (ep + 1) % cfg.checkpoint_every == 0:
            from .policy import save_checkpoint
            save_checkpoint(cfg.checkpoint_path, agent.actor, agent.critic, spec)
    return result
