"""Regional Q-learning over GA2 observations.

Every region is one agent. An agent's Q-network is a shared MLP trunk followed by
one 4-way head per intersection slot; TD targets are taken per head. GA2 is
shared by all agents and receives the sum of their losses.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .ga2 import GA2
from .nn import Adam, Linear, concat, Module, Tensor, leaky_relu, load_archive, save_archive
from .partition import Region

N_PHASES = 4


@dataclass
class EpsSchedule:
    eps_max: float = 1.0
    eps_min: float = 0.001
    decay_steps: int = 20000
    step: int = 0

    def value(self, step: Optional[int] = None) -> float:
        t = self.step if step is None else step
        if t >= self.decay_steps:
            return self.eps_min
        return self.eps_max - (self.eps_max - self.eps_min) * t / self.decay_steps

    def advance(self) -> float:
        eps = self.value()
        self.step += 1
        return eps


@dataclass
class Transition:
    step: int
    s_lane: np.ndarray
    s_itsx: np.ndarray
    actions: np.ndarray  # (R, slots) phase ids, dummies 0
    rewards: np.ndarray  # (R,)
    next_s_lane: np.ndarray
    next_s_itsx: np.ndarray
    terminal: bool = False


class ReplayBuffer:
    """Centralised ring buffer holding joint transitions of all regions."""

    def __init__(self, capacity: int = 200_000, seed: int = 0):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.items: List[Transition] = []
        self.head = 0
        self.rng = np.random.default_rng(seed)

    def __len__(self) -> int:
        return len(self.items)

    def add(self, tr: Transition) -> None:
        if len(self.items) < self.capacity:
            self.items.append(tr)
        else:
            self.items[self.head] = tr
        self.head = (self.head + 1) % self.capacity

    def sample_indices(self, batch: int) -> np.ndarray:
        if not self.items:
            raise ValueError("cannot sample from an empty buffer")
        if batch > len(self.items):
            raise ValueError(f"buffer holds {len(self.items)} transitions, batch is {batch}")
        return self.rng.choice(len(self.items), size=batch, replace=False)

    def batch(self, idx: Sequence[int]) -> Dict[str, np.ndarray]:
        items = [self.items[i] for i in idx]
        return {
            "s_lane": np.stack([t.s_lane for t in items]).astype(float),
            "s_itsx": np.stack([t.s_itsx for t in items]).astype(float),
            "actions": np.stack([t.actions for t in items]),
            "rewards": np.stack([t.rewards for t in items]).astype(float),
            "next_s_lane": np.stack([t.next_s_lane for t in items]).astype(float),
            "next_s_itsx": np.stack([t.next_s_itsx for t in items]).astype(float),
            "terminal": np.array([t.terminal for t in items], dtype=float),
        }


class BranchingQNet(Module):
    """Trunk MLP then an independent linear 4-way head per intersection slot."""

    def __init__(self, obs_width: int, slots: int, rng: np.random.Generator,
                 hidden: Tuple[int, ...] = (256, 128), zero_head: bool = False):
        self.obs_width, self.slots = obs_width, slots
        self.trunk = []
        f = obs_width
        for h in hidden:
            self.trunk.append(Linear(f, h, rng))
            f = h
        self.head = Linear(f, slots * N_PHASES, rng, zero=zero_head)

    def __call__(self, obs: Tensor) -> Tensor:
        if obs.shape[-1] != self.obs_width:
            raise ValueError(f"observation width {obs.shape[-1]} != {self.obs_width}")
        h = obs
        for layer in self.trunk:
            h = leaky_relu(layer(h))
        q = self.head(h)
        return q.reshape(*q.shape[:-1], self.slots, N_PHASES)


def greedy(q: np.ndarray) -> np.ndarray:
    """Per-branch argmax; ties go to the lowest phase id."""
    return np.argmax(q, axis=-1)


def select_action(q: np.ndarray, eps: float, rng: np.random.Generator, valid: Optional[np.ndarray] = None) -> np.ndarray:
    """Epsilon-greedy over one region's branches ``q`` (slots, 4)."""
    if rng.random() < eps:
        act = rng.integers(0, N_PHASES, size=q.shape[0])
    else:
        act = greedy(q)
    if valid is not None:
        act = np.where(valid, act, 0)
    return act


@dataclass
class LearnerConfig:
    gamma: float = 0.9
    lr: float = 1e-3
    weight_decay: float = 5e-4
    batch_size: int = 32
    buffer_size: int = 200_000
    target_update: int = 200
    learn_every: int = 5
    reward_scale: float = 0.01
    hidden: Tuple[int, ...] = (256, 128)
    shared: bool = True
    grad_clip: Optional[float] = 10.0


class RegionalAgent:
    """One region's binding to a Q-network (shared or private)."""

    def __init__(self, region: Region, index: int, online: BranchingQNet, target: BranchingQNet, valid: np.ndarray):
        self.region, self.index, self.online, self.target, self.valid = region, index, online, target, valid

    def q_forward(self, obs) -> np.ndarray:
        obs = obs if isinstance(obs, Tensor) else Tensor(obs)
        return self.online(obs).data


class Learner:
    """GA2 + regional agents + centralised replay + target networks."""

    def __init__(self, ga2: GA2, config: Optional[LearnerConfig] = None, seed: int = 0):
        self.cfg = config or LearnerConfig()
        self.rng = np.random.default_rng(seed)
        self.ga2 = ga2
        n_reg, slots = ga2.valid.shape
        if self.cfg.shared:
            nets = [BranchingQNet(ga2.obs_width, slots, self.rng, self.cfg.hidden)]
        else:
            nets = [BranchingQNet(ga2.obs_width, slots, self.rng, self.cfg.hidden) for _ in range(n_reg)]
        self.nets = nets
        self.target_ga2 = copy.deepcopy(ga2)
        self.target_nets = copy.deepcopy(nets)
        for p in self.target_ga2.parameters() + [p for n in self.target_nets for p in n.parameters()]:
            p.requires_grad = False
        self.agents = [
            RegionalAgent(reg, r, nets[0 if self.cfg.shared else r], self.target_nets[0 if self.cfg.shared else r], ga2.valid[r])
            for r, reg in enumerate(ga2.regions)
        ]
        self.buffer = ReplayBuffer(self.cfg.buffer_size, seed=seed + 1)
        self.opt = Adam(self.parameters(), lr=self.cfg.lr, weight_decay=self.cfg.weight_decay)
        self.train_steps = 0
        self.syncs = 0

    def parameters(self) -> List[Tensor]:
        return self.ga2.parameters() + [p for n in self.nets for p in n.parameters()]

    def named_state(self) -> Dict[str, np.ndarray]:
        out = {f"ga2.{k}": v for k, v in self.ga2.state_dict().items()}
        for i, n in enumerate(self.nets):
            out.update({f"q{i}.{k}": v for k, v in n.state_dict().items()})
        return out

    # ------------------------------------------------------------ forward

    def _q(self, ga2: GA2, nets: Sequence[BranchingQNet], s_lane, s_itsx) -> Tensor:
        obs = ga2(s_lane, s_itsx)  # (..., R, W)
        if len(nets) == 1:
            return nets[0](obs)
        per = [nets[r](obs[..., r : r + 1, :]) for r in range(len(nets))]
        return concat(per, axis=-3)

    def q_values(self, s_lane, s_itsx, target: bool = False) -> np.ndarray:
        if target:
            return self._q(self.target_ga2, self.target_nets, s_lane, s_itsx).data
        return self._q(self.ga2, self.nets, s_lane, s_itsx).data

    def act(self, s_lane, s_itsx, eps: float, rng: np.random.Generator) -> np.ndarray:
        q = self.q_values(s_lane, s_itsx)
        return np.stack([select_action(q[r], eps, rng, self.ga2.valid[r]) for r in range(q.shape[0])])

    # ------------------------------------------------------------ learning

    def td_targets(self, batch: Dict[str, np.ndarray]) -> np.ndarray:
        q_next = self.q_values(batch["next_s_lane"], batch["next_s_itsx"], target=True)  # (B, R, S, 4)
        best = q_next.max(axis=-1)
        r = batch["rewards"][:, :, None] * self.cfg.reward_scale
        alive = (1.0 - batch["terminal"])[:, None, None]
        return r + self.cfg.gamma * alive * best

    def loss(self, batch: Dict[str, np.ndarray], y: Optional[np.ndarray] = None) -> Tuple[Tensor, np.ndarray]:
        """Sum over agents of the mean squared TD error on valid branches."""
        if y is None:
            y = self.td_targets(batch)
        q = self._q(self.ga2, self.nets, batch["s_lane"], batch["s_itsx"])  # (B, R, S, 4)
        onehot = np.eye(N_PHASES)[batch["actions"]]  # (B, R, S, 4)
        q_sa = (q * onehot).sum(axis=-1)  # (B, R, S)
        valid = self.ga2.valid.astype(float)
        weight = valid / valid.sum(axis=-1, keepdims=True) / y.shape[0]  # mean over batch and valid slots
        sq = (q_sa - y).square() * weight[None]
        per_agent = sq.data.sum(axis=(0, 2))
        return sq.sum(), per_agent

    def train_step(self) -> np.ndarray:
        idx = self.buffer.sample_indices(self.cfg.batch_size)
        batch = self.buffer.batch(idx)
        total, per_agent = self.loss(batch)
        self.opt.zero_grad()
        total.backward()
        if self.cfg.grad_clip:
            params = self.parameters()
            norm = np.sqrt(sum(float((p.grad ** 2).sum()) for p in params if p.grad is not None))
            if norm > self.cfg.grad_clip:
                for p in params:
                    if p.grad is not None:
                        p.grad *= self.cfg.grad_clip / norm
        self.opt.step()
        self.train_steps += 1
        if self.train_steps % self.cfg.target_update == 0:
            self.sync_target()
        return per_agent

    def sync_target(self) -> None:
        self.target_ga2.load_state_dict(self.ga2.state_dict())
        for t, n in zip(self.target_nets, self.nets):
            t.load_state_dict(n.state_dict())
        for p in self.target_ga2.parameters() + [p for n in self.target_nets for p in n.parameters()]:
            p.requires_grad = False
        self.syncs += 1

    # ------------------------------------------------------------ checkpoints

    def save(self, path) -> None:
        save_archive(path, self.named_state())

    def load(self, path) -> None:
        state = load_archive(path)
        self.ga2.load_state_dict({k[len("ga2."):]: v for k, v in state.items() if k.startswith("ga2.")})
        for i, n in enumerate(self.nets):
            n.load_state_dict({k[len(f"q{i}."):]: v for k, v in state.items() if k.startswith(f"q{i}.")})
        self.sync_target()
