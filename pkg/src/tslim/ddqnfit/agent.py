"""Double Q-learning agent over load compositions.

The agent's state is a composition vector (one or more simplex blocks).  An
action moves ``delta_f`` of load from one component to another inside the
same block.  Two networks of identical shape are kept: ``net_a`` is trained,
``net_b`` is a delayed copy that supplies the bootstrap targets.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ValidationError
from .qnet import QNetwork


@dataclass(frozen=True)
class FractionAction:
    from_idx: int
    to_idx: int
    delta_f: float

    def vector(self, n: int) -> np.ndarray:
        v = np.zeros(n)
        v[self.from_idx] = -self.delta_f
        v[self.to_idx] = self.delta_f
        return v


def action_space(n: int | tuple[int, ...], delta_f: float = 0.05) -> list[FractionAction]:
    """All ordered component pairs, lexicographic, block by block.

    ``n`` is the component count of a single simplex or a tuple of block
    sizes; indices are absolute positions in the concatenated state.
    """
    blocks = (n,) if isinstance(n, int) else tuple(n)
    if any(b < 2 for b in blocks):
        raise ValidationError("each simplex block needs at least two components")
    actions = []
    offset = 0
    for size in blocks:
        for i in range(size):
            for j in range(size):
                if i != j:
                    actions.append(FractionAction(offset + i, offset + j, delta_f))
        offset += size
    return actions


def block_slices(blocks) -> list[slice]:
    out, pos = [], 0
    for size in blocks:
        out.append(slice(pos, pos + size))
        pos += size
    return out


def apply_action(f, a: FractionAction, blocks=None):
    """Move ``a.delta_f`` from ``a.from_idx`` to ``a.to_idx``.

    Returns ``(new_f, partial)``; ``partial`` is True when the source held
    less than ``delta_f`` and only what it had was moved.  The block sum is
    restored with a compensated sum so thousands of moves do not drift.
    """
    f = np.array(f, dtype=float)
    blocks = (len(f),) if blocks is None else tuple(blocks)
    amount = min(a.delta_f, f[a.from_idx])
    partial = amount < a.delta_f
    f[a.from_idx] -= amount
    f[a.to_idx] += amount
    for sl in block_slices(blocks):
        if sl.start <= a.to_idx < sl.stop:
            others = [f[k] for k in range(sl.start, sl.stop) if k != a.to_idx]
            f[a.to_idx] = 1.0 - math.fsum(others)
    return f, partial


def uniform_state(blocks, delta_f: float | None = None) -> np.ndarray:
    """Equal split per block, snapped onto the ``delta_f`` lattice when given.

    Snapping uses largest-remainder rounding, so the earliest components get
    the extra lattice steps (1/3 -> 0.35, 0.35, 0.30 at a 0.05 step).
    """
    parts = []
    for size in blocks:
        if delta_f is None:
            parts.append(np.full(size, 1.0 / size))
            continue
        steps = int(round(1.0 / delta_f))
        if abs(steps * delta_f - 1.0) > 1e-9:
            parts.append(np.full(size, 1.0 / size))
            continue
        base = np.full(size, steps // size)
        base[: steps - base.sum()] += 1
        parts.append(base / steps)
    return np.concatenate(parts)


def reward(mean_loss: float, loss_threshold: float) -> tuple[float, bool]:
    """``-mean_loss``, plus one and episode end once below the threshold."""
    if mean_loss < 0:
        raise ValueError("loss must be non-negative")
    if mean_loss < loss_threshold:
        return 1.0 - mean_loss, True
    return -mean_loss, False


@dataclass(frozen=True)
class HyperParams:
    lr_alpha: float = 0.01
    gamma: float = 0.9
    delta_f: float = 0.05
    epsilon_start: float = 1.0
    epsilon_end: float = 0.05
    epsilon_decay_episodes: int = 150
    replay_capacity: int = 10000
    batch_size: int = 32
    target_update_interval: int = 100
    episodes: int = 200
    max_steps_per_episode: int = 100
    m_samples: int = 8
    loss_threshold: float = 1e-6
    hidden: tuple[int, ...] = (64, 64)
    top_k: int = 5
    double_dqn_canonical: bool = False
    reward_scale: float | str = "auto"
    lattice_start: bool = True
    reward_transform: str = "log"
    grad_clip: float = 10.0

    def __post_init__(self):
        if not 0 <= self.gamma < 1:
            raise ValidationError("gamma must lie in [0, 1)")
        if self.lr_alpha <= 0:
            raise ValidationError("lr_alpha must be positive")
        if not 0 < self.delta_f <= 0.5:
            raise ValidationError("delta_f must lie in (0, 0.5]")
        if self.reward_transform not in ("linear", "log"):
            raise ValidationError("reward_transform must be 'linear' or 'log'")
        if self.batch_size < 1 or self.m_samples < 1:
            raise ValidationError("batch_size and m_samples must be at least one")

    def epsilon(self, episode: int) -> float:
        if self.epsilon_decay_episodes <= 0:
            return self.epsilon_end
        frac = min(1.0, episode / self.epsilon_decay_episodes)
        return self.epsilon_start + (self.epsilon_end - self.epsilon_start) * frac

    @classmethod
    def from_json(cls, doc):
        doc = dict(doc)
        if "reward_scale" in doc and doc["reward_scale"] != "auto":
            doc["reward_scale"] = float(doc["reward_scale"])
        if "hidden" in doc:
            doc["hidden"] = tuple(int(h) for h in doc["hidden"])
        return cls(**doc)


class ReplayBuffer:
    def __init__(self, capacity: int, n_state: int):
        self.capacity = capacity
        self.s = np.zeros((capacity, n_state))
        self.a = np.zeros(capacity, dtype=int)
        self.r = np.zeros(capacity)
        self.s2 = np.zeros((capacity, n_state))
        self.done = np.zeros(capacity, dtype=bool)
        self.size = 0
        self.pos = 0

    def push(self, s, a, r, s2, done):
        k = self.pos
        self.s[k], self.a[k], self.r[k], self.s2[k], self.done[k] = s, a, r, s2, done
        self.pos = (self.pos + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def sample(self, rng: np.random.Generator, batch_size: int):
        idx = rng.integers(0, self.size, size=batch_size)
        return self.s[idx], self.a[idx], self.r[idx], self.s2[idx], self.done[idx]

    def __len__(self):
        return self.size


@dataclass
class QPair:
    net_a: QNetwork
    net_b: QNetwork
    updates: int = 0

    @classmethod
    def create(cls, n_state: int, n_actions: int, hidden, rng) -> "QPair":
        a = QNetwork(n_state, n_actions, hidden, rng)
        return cls(a, a.clone())


def td_targets(qpair: QPair, r, s2, done, gamma: float, canonical: bool = False):
    q_b = qpair.net_b.forward(s2)
    if canonical:
        best = np.argmax(qpair.net_a.forward(s2), axis=1)
        boot = q_b[np.arange(len(best)), best]
    else:
        boot = q_b.max(axis=1)
    return r + gamma * np.where(done, 0.0, boot)


def ddqn_update(qpair: QPair, batch, hp: HyperParams) -> float:
    """One gradient step of ``net_a`` towards targets built from ``net_b``.

    ``net_b`` is overwritten with ``net_a`` every ``target_update_interval``
    updates.  Returns the half mean squared TD error before the step.
    """
    s, a, r, s2, done = batch
    y = td_targets(qpair, r, s2, done, hp.gamma, hp.double_dqn_canonical)
    loss, grads = qpair.net_a.td_loss_and_grads(s, a, y)
    qpair.net_a.sgd_step(grads, hp.lr_alpha, hp.grad_clip)
    qpair.updates += 1
    if qpair.updates % hp.target_update_interval == 0:
        qpair.net_b.copy_from(qpair.net_a)
    return loss


@dataclass
class TrainingLog:
    episode_return: list[float] = field(default_factory=list)
    episode_best_loss: list[float] = field(default_factory=list)
    td_loss: list[float] = field(default_factory=list)

    def running_best(self) -> list[float]:
        out, best = [], -math.inf
        for r in self.episode_return:
            best = max(best, r)
            out.append(best)
        return out


def train(env, hp: HyperParams, rng: np.random.Generator, qpair: QPair | None = None, log: TrainingLog | None = None):
    """Generic epsilon-greedy double-Q training loop.

    ``env`` supplies ``n_state``, ``n_actions``, ``reset(rng)`` and
    ``step(state, action) -> (next_state, reward, done)``.
    """
    if qpair is None:
        qpair = QPair.create(env.n_state, env.n_actions, hp.hidden, rng)
    log = TrainingLog() if log is None else log
    buf = ReplayBuffer(hp.replay_capacity, env.n_state)
    for ep in range(hp.episodes):
        eps = hp.epsilon(ep)
        s = env.reset(rng)
        total = 0.0
        for _ in range(hp.max_steps_per_episode):
            if rng.random() < eps:
                a = int(rng.integers(env.n_actions))
            else:
                a = int(np.argmax(qpair.net_a.forward(s)[0]))
            s2, r, done = env.step(s, a)
            buf.push(s, a, r, s2, done)
            total += r
            if len(buf) >= hp.batch_size:
                log.td_loss.append(ddqn_update(qpair, buf.sample(rng, hp.batch_size), hp))
            s = s2
            if done:
                break
        log.episode_return.append(total)
        best = getattr(env, "best_loss", None)
        if best is not None:
            log.episode_best_loss.append(best)
    return qpair, log
