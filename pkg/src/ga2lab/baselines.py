"""Rule-based signal controllers: fixed-time rotation, SOTL, and uniform random.

Every controller answers ``act(sim) -> list of phase ids`` (one per internal
intersection, in ``net.internal_ids`` order) at each decision boundary.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import PHASE_NAMES, RIGHT, Network
from .sim import Simulator


def phase_index(name) -> int:
    if isinstance(name, (int, np.integer)):
        return int(name)
    try:
        return PHASE_NAMES.index(str(name))
    except ValueError:
        raise ValueError(f"unknown phase {name!r}; expected one of {PHASE_NAMES}") from None


@dataclass
class FixedTimeController:
    """Traffic-blind rotation through ``plan`` = [(phase, seconds), ...]."""

    plan: Sequence[Tuple[object, int]] = (("NS", 20), ("NSL", 20), ("EW", 20), ("EWL", 20))
    offset: int = 0

    def __post_init__(self):
        if not self.plan:
            raise ValueError("cycle plan is empty")
        self._phases = [phase_index(p) for p, _ in self.plan]
        self._ends = np.cumsum([int(d) for _, d in self.plan])
        if np.any(np.diff(np.concatenate([[0], self._ends])) <= 0):
            raise ValueError("phase durations must be positive")

    @property
    def cycle(self) -> int:
        return int(self._ends[-1])

    def phase_at(self, t: int) -> int:
        k = int(np.searchsorted(self._ends, (t + self.offset) % self.cycle, side="right"))
        return self._phases[k]

    def reset(self, net: Network) -> None:
        self.n = len(net.internal_ids)

    def act(self, sim: Simulator) -> List[int]:
        return [self.phase_at(sim.clock)] * len(sim.net.internal_ids)


@dataclass
class SOTLController:
    """Self-organising lights with a vehicle-count threshold.

    At a decision, each intersection keeps its phase unless the minimum green has
    elapsed and some other phase has at least ``threshold`` vehicles on lanes that
    are red now but green under it; the busiest such phase wins (lowest id on ties).
    """

    threshold: int = 5
    min_green: int = 20
    _current: List[int] = field(default_factory=list, repr=False)
    _since: List[int] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("SOTL threshold must be >= 1")

    def reset(self, net: Network) -> None:
        self.net = net
        n = len(net.internal_ids)
        self._current = [0] * n
        self._since = [0] * n
        self._last_clock = 0
        # lanes whose only movements are right turns run in every phase and never compete
        self._lanes = []
        for v in net.internal_ids:
            per_phase = []
            for ph in net.phase_table[v]:
                lanes = [l for l in ph.permitted_lanes
                         if any(net.movements[m].turn != RIGHT for m in net.lane_movements[l])]
                per_phase.append(np.array(sorted(lanes), dtype=np.int64))
            self._lanes.append(per_phase)

    def act(self, sim: Simulator) -> List[int]:
        if not self._current:
            self.reset(sim.net)
        elapsed = sim.clock - self._last_clock
        self._last_clock = sim.clock
        wave = sim.count
        out = []
        for i in range(len(self._current)):
            self._since[i] += elapsed
            cur = self._current[i]
            if self._since[i] >= self.min_green:
                green_now = set(self._lanes[i][cur].tolist())
                best, best_n = cur, -1
                for p, lanes in enumerate(self._lanes[i]):
                    if p == cur:
                        continue
                    red = [l for l in lanes if l not in green_now]
                    n = int(wave[red].sum()) if red else 0
                    if n > best_n:
                        best, best_n = p, n
                if best_n >= self.threshold:
                    self._current[i] = best
                    self._since[i] = 0
            out.append(self._current[i])
        return out


@dataclass
class RandomController:
    seed: int = 0

    def reset(self, net: Network) -> None:
        self.rng = np.random.default_rng(self.seed)

    def act(self, sim: Simulator) -> List[int]:
        if not hasattr(self, "rng"):
            self.reset(sim.net)
        return [int(len(sim.net.phase_table[v]) * self.rng.random()) for v in sim.net.internal_ids]


def make_controller(kind: str, seed: int = 0, threshold: int = 5, min_green: int = 20,
                    plan: Optional[Sequence[Tuple[object, int]]] = None):
    if kind == "fixed":
        return FixedTimeController(plan) if plan else FixedTimeController()
    if kind == "sotl":
        return SOTLController(threshold=threshold, min_green=min_green)
    if kind == "random":
        return RandomController(seed=seed)
    raise ValueError(f"unknown baseline {kind!r}")
