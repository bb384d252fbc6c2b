"""Minimal deep Q-learning on models written in the modeling language.

Squared temporal-difference loss, uniform experience replay, a periodically
synchronized target network and plain stochastic gradient descent.  All
randomness comes from one ``numpy.random.Generator`` seeded from the config,
so a (model, config) pair always produces the same weights.
"""
from __future__ import annotations

import configparser
import json
import logging
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, DeadEndError
from .model_lang import FactoredMdp, enabled_actions, reward, state_labels, successor_distribution
from .policy import (
    Layer,
    MlpPolicy,
    _frozen,
    bounds_normalization,
    choose_action,
    init_policy,
    normalize_inputs,
)

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    hidden: tuple = (64, 64)
    batch_size: int = 64
    replay_capacity: int = 20_000
    eps_start: float = 1.0
    eps_min: float = 0.1
    eps_decay: float = 0.99999
    gamma: float = 0.99
    target_update: int = 1024
    learning_rate: float = 1e-3
    max_epochs: int = 1000
    eval_episodes: int = 100
    seed: int = 0
    max_steps: int = 200
    # multiplies model rewards; negative values turn a penalty structure into a reward
    reward_scale: float = 1.0
    terminal_label: str = "done"
    grad_clip: float | None = None
    check_interval: int = 0

    def __post_init__(self):
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0.0 <= self.gamma <= 1.0:
            raise ConfigError(f"gamma must lie in [0, 1], got {self.gamma}")
        if not 0.0 < self.eps_decay <= 1.0:
            raise ConfigError(f"eps_decay must lie in (0, 1], got {self.eps_decay}")
        if not 0.0 <= self.eps_min <= self.eps_start <= 1.0:
            raise ConfigError("epsilon bounds must satisfy 0 <= eps_min <= eps_start <= 1")
        positive = ("batch_size", "replay_capacity", "target_update", "max_epochs", "eval_episodes", "max_steps")
        for name in positive:
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigError("hidden layer widths must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.batch_size > self.replay_capacity:
            raise ConfigError("batch_size cannot exceed replay_capacity")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in known:
                raise ConfigError(f"unknown training option {key!r}")
            default = known[key].default
            kwargs[key] = _coerce(key, raw, default)
        return cls(**kwargs)

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out


def _coerce(key, raw, default):
    if not isinstance(raw, str):
        return tuple(raw) if key == "hidden" else raw
    text = raw.strip()
    if key == "hidden":
        return tuple(int(t) for t in text.replace(",", " ").split())
    if key == "grad_clip":
        return None if text.lower() in ("", "none") else float(text)
    if key == "terminal_label":
        return text
    try:
        return type(default)(float(text)) if isinstance(default, int) else float(text)
    except ValueError:
        raise ConfigError(f"option {key!r} expects a number, got {raw!r}") from None


def load_train_config(path) -> TrainConfig:
    """Read the ``[train]`` section of an INI-style config file."""
    parser = configparser.ConfigParser()
    if not parser.read(path, encoding="utf-8"):
        raise ConfigError(f"cannot read config file {path}")
    if not parser.has_section("train"):
        raise ConfigError(f"{path} has no [train] section")
    return TrainConfig.from_mapping(dict(parser["train"]))


@dataclass
class EpisodeStats:
    episode_return: float
    length: int
    terminal_reason: str  # "terminal" or "step_cap"


# --------------------------------------------------------------------------- environment

class ModelEnv:
    """Sampling view of a model with per-state caching of its semantics."""

    def __init__(self, m: FactoredMdp, terminal_label: str = "done", action_names: Sequence[str] | None = None):
        self.model = m
        self.terminal_label = terminal_label
        self.action_names = tuple(action_names or m.actions)
        self._cache: dict = {}

    def info(self, s: tuple):
        hit = self._cache.get(s)
        if hit is None:
            m = self.model
            terminal = self.terminal_label in state_labels(m, s)
            acts = () if terminal else enabled_actions(m, s)
            mask = np.zeros(len(self.action_names), dtype=bool)
            outcomes = {}
            for a in acts:
                mask[self.action_names.index(a)] = True
                dist = successor_distribution(m, s, a)
                succ = [t for t, _ in dist]
                cum = np.cumsum([float(p) for _, p in dist])
                outcomes[a] = (succ, cum, float(reward(m, s, a)))
            hit = (terminal, acts, mask, outcomes)
            self._cache[s] = hit
        return hit

    def step(self, s: tuple, action: str, rng: np.random.Generator):
        succ, cum, r = self.info(s)[3][action]
        k = int(np.searchsorted(cum, rng.random() * cum[-1], side="right"))
        return succ[min(k, len(succ) - 1)], r

    def check_live(self, s: tuple):
        terminal, acts, _, _ = self.info(s)
        if not terminal and not acts:
            raise DeadEndError(s)
        return terminal


# --------------------------------------------------------------------------- network math

def _params(p: MlpPolicy) -> list:
    return [[np.array(layer.weights), np.array(layer.bias)] for layer in p.layers]


def _with_params(p: MlpPolicy, params) -> MlpPolicy:
    layers = tuple(Layer(_frozen(w), _frozen(b), layer.activation) for (w, b), layer in zip(params, p.layers))
    return MlpPolicy(layers, p.input_dim, p.action_names, p.normalization)


def _forward(params, activations, x):
    hs, zs = [x], []
    for (w, b), act in zip(params, activations):
        z = hs[-1] @ w.T + b
        zs.append(z)
        hs.append(np.maximum(z, 0.0) if act == "relu" else z)
    return hs, zs


def td_loss_and_grads(params, activations, x, actions, targets):
    """Loss ``0.5 * mean((Q(x)[a] - y)**2)`` and its gradient for every parameter.

    The rectifier derivative at exactly 0 is taken to be 0.
    """
    hs, zs = _forward(params, activations, x)
    q = hs[-1]
    n = x.shape[0]
    rows = np.arange(n)
    err = q[rows, actions] - targets
    loss = 0.5 * float(np.mean(err ** 2))
    delta = np.zeros_like(q)
    delta[rows, actions] = err / n
    grads = [None] * len(params)
    for k in range(len(params) - 1, -1, -1):
        w = params[k][0]
        grads[k] = [delta.T @ hs[k], delta.sum(axis=0)]
        if k > 0:
            delta = (delta @ w) * (zs[k - 1] > 0)
    return loss, grads


def td_targets(q_next: np.ndarray, next_mask: np.ndarray, rewards: np.ndarray, terminal: np.ndarray,
               gamma: float) -> np.ndarray:
    """``r + gamma * max_{a' enabled} Q_target(s', a')``, or ``r`` at terminal states."""
    masked = np.where(next_mask, q_next, -np.inf)
    best = masked.max(axis=1)
    best = np.where(terminal | ~next_mask.any(axis=1), 0.0, best)
    return rewards + gamma * best


@dataclass
class GradientCheck:
    max_rel_error: float
    n_params: int
    kinks: int  # pre-activations closer to 0 than the finite-difference step
    analytic: list = field(repr=False, default_factory=list)
    numeric: list = field(repr=False, default_factory=list)


def gradient_check(p: MlpPolicy, batch, step: float = 1e-5, floor: float = 1e-6) -> GradientCheck:
    """Compare backpropagated TD-loss gradients with central finite differences.

    ``batch`` is ``(states, actions, targets)``; actions may be names or
    output indices.  The relative error of a coordinate is
    ``|analytic - numeric| / max(|analytic|, |numeric|, floor)``.
    """
    states, actions, targets = batch
    x = normalize_inputs(p, np.atleast_2d(np.asarray(states, dtype=np.float64)))
    actions = np.array([p.action_index(a) if isinstance(a, str) else int(a) for a in actions])
    targets = np.asarray(targets, dtype=np.float64)
    params = _params(p)
    acts = [layer.activation for layer in p.layers]
    _, grads = td_loss_and_grads(params, acts, x, actions, targets)
    _, zs = _forward(params, acts, x)
    kinks = int(sum(np.count_nonzero(np.abs(z) < step) for z in zs[:-1]))
    worst = 0.0
    analytic, numeric = [], []
    for k, pair in enumerate(params):
        for j, arr in enumerate(pair):
            num = np.zeros_like(arr)
            for idx in np.ndindex(arr.shape):
                old = arr[idx]
                arr[idx] = old + step
                up, _ = td_loss_and_grads(params, acts, x, actions, targets)
                arr[idx] = old - step
                down, _ = td_loss_and_grads(params, acts, x, actions, targets)
                arr[idx] = old
                num[idx] = (up - down) / (2 * step)
            ana = grads[k][j]
            denom = np.maximum(np.maximum(np.abs(ana), np.abs(num)), floor)
            worst = max(worst, float(np.max(np.abs(ana - num) / denom)))
            analytic.append(ana)
            numeric.append(num)
    n_params = sum(a.size for pair in params for a in pair)
    return GradientCheck(worst, n_params, kinks, analytic, numeric)


# --------------------------------------------------------------------------- replay

class ReplayBuffer:
    def __init__(self, capacity: int, dim: int, n_actions: int):
        self.capacity = capacity
        self.states = np.zeros((capacity, dim))
        self.actions = np.zeros(capacity, dtype=np.int64)
        self.rewards = np.zeros(capacity)
        self.next_states = np.zeros((capacity, dim))
        self.next_masks = np.zeros((capacity, n_actions), dtype=bool)
        self.terminal = np.zeros(capacity, dtype=bool)
        self.size = 0
        self._cursor = 0

    def push(self, s, a, r, s2, mask2, terminal):
        i = self._cursor
        self.states[i], self.actions[i], self.rewards[i] = s, a, r
        self.next_states[i], self.next_masks[i], self.terminal[i] = s2, mask2, terminal
        self._cursor = (i + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, batch_size: int, rng: np.random.Generator):
        idx = rng.choice(self.size, size=batch_size, replace=False)
        return (self.states[idx], self.actions[idx], self.rewards[idx],
                self.next_states[idx], self.next_masks[idx], self.terminal[idx])


# --------------------------------------------------------------------------- training

@dataclass
class TrainingRun:
    policy: MlpPolicy
    log: list
    steps: int
    stopped_early: bool = False

    def log_lines(self) -> str:
        return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in self.log)


def train(m: FactoredMdp, cfg: TrainConfig,
          stop: Callable[[MlpPolicy, int], bool] | None = None) -> TrainingRun:
    """Train a Q-network policy on ``m``.

    ``stop(policy, episode)``, when given, is consulted every
    ``cfg.check_interval`` episodes and ends training early by returning True.
    """
    rng = np.random.default_rng(cfg.seed)
    env = ModelEnv(m, cfg.terminal_label)
    names = env.action_names
    policy = init_policy(m.dimension, cfg.hidden, names, rng, bounds_normalization(m.bounds))
    acts = [layer.activation for layer in policy.layers]
    online = _params(policy)
    target = [[w.copy(), b.copy()] for w, b in online]
    buffer = ReplayBuffer(cfg.replay_capacity, m.dimension, len(names))
    offsets, scales = policy.normalization
    eps = cfg.eps_start
    steps = 0
    records = []

    def norm(s):
        return (np.asarray(s, dtype=np.float64) - offsets) / scales

    for episode in range(cfg.max_epochs):
        s = m.initial_state
        env.check_live(s)
        ep_return, losses, length, terminal = 0.0, [], 0, env.info(s)[0]
        while not terminal and length < cfg.max_steps:
            _, allowed, mask, _ = env.info(s)
            xs = norm(s)
            if rng.random() < eps:
                action = allowed[int(rng.integers(len(allowed)))]
            else:
                q = _forward(online, acts, xs[None, :])[0][-1][0]
                action = names[int(np.flatnonzero(mask)[np.argmax(q[mask])])]
            s2, r = env.step(s, action, rng)
            terminal = env.check_live(s2)
            mask2 = env.info(s2)[2]
            buffer.push(xs, names.index(action), r * cfg.reward_scale, norm(s2), mask2, terminal)
            ep_return += r
            length += 1
            steps += 1
            eps = max(cfg.eps_min, eps * cfg.eps_decay)
            s = s2
            if buffer.size >= cfg.batch_size:
                bs, ba, br, bs2, bm2, bt = buffer.sample(cfg.batch_size, rng)
                q_next = _forward(target, acts, bs2)[0][-1]
                y = td_targets(q_next, bm2, br, bt, cfg.gamma)
                loss, grads = td_loss_and_grads(online, acts, bs, ba, y)
                scale = cfg.learning_rate
                if cfg.grad_clip is not None:
                    norm_g = np.sqrt(sum(float(np.sum(g * g)) for pair in grads for g in pair))
                    if norm_g > cfg.grad_clip:
                        scale *= cfg.grad_clip / norm_g
                for (w, b), (gw, gb) in zip(online, grads):
                    w -= scale * gw
                    b -= scale * gb
                losses.append(loss)
            if steps % cfg.target_update == 0:
                target = [[w.copy(), b.copy()] for w, b in online]
        records.append({
            "episode": episode,
            "return": ep_return,
            "epsilon": eps,
            "loss": float(np.mean(losses)) if losses else None,
            "length": length,
        })
        if stop is not None and cfg.check_interval and (episode + 1) % cfg.check_interval == 0:
            if stop(_with_params(policy, online), episode):
                log.info("training stopped by criterion after %d episodes", episode + 1)
                return TrainingRun(_with_params(policy, online), records, steps, stopped_early=True)
    return TrainingRun(_with_params(policy, online), records, steps)


def evaluate(p: MlpPolicy, m: FactoredMdp, episodes: int, seed: int = 0,
             terminal_label: str = "done", max_steps: int = 200) -> tuple:
    """Greedy rollouts; returns ``(mean return, [EpisodeStats, ...])``."""
    if episodes < 1:
        raise ConfigError("episodes must be at least 1")
    rng = np.random.default_rng(seed)
    env = ModelEnv(m, terminal_label, p.action_names)
    stats = []
    for _ in range(episodes):
        s = m.initial_state
        terminal = env.check_live(s)
        total, length = 0.0, 0
        while not terminal and length < max_steps:
            action, _ = choose_action(p, s, env.info(s)[1])
            s, r = env.step(s, action, rng)
            terminal = env.check_live(s)
            total += r
            length += 1
        stats.append(EpisodeStats(total, length, "terminal" if terminal else "step_cap"))
    return float(np.mean([st.episode_return for st in stats])), stats
