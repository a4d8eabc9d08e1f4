"""Decision-interval wrapper around the simulator: observe, act, run, reward."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .demand import DemandSpec
from .network import Network, RoutingConfig
from .partition import Region
from .sim import Simulator


@dataclass
class EpisodeLog:
    decisions: int = 0
    entered: int = 0
    exited: int = 0
    blocked: int = 0
    region_rewards: Optional[np.ndarray] = None

    def as_dict(self) -> Dict[str, object]:
        return {
            "decisions": self.decisions,
            "entered": self.entered,
            "exited": self.exited,
            "blocked": self.blocked,
            "region_reward_sums": [] if self.region_rewards is None else [float(r) for r in self.region_rewards],
        }


class SignalEnv:
    """One episode of ``decisions`` control steps, ``action_interval`` seconds each."""

    def __init__(self, net: Network, demand: DemandSpec, regions: Sequence[Region], cells: int = 5,
                 action_interval: int = 20, decisions: int = 200, routing: Optional[RoutingConfig] = None):
        if action_interval < 1 or decisions < 1 or cells < 1:
            raise ValueError("action_interval, decisions and cells must all be >= 1")
        self.net, self.demand, self.routing = net, demand, routing
        self.regions = list(regions)
        self.members = [list(r.members) for r in self.regions]
        self.cells, self.action_interval, self.decisions = cells, action_interval, decisions
        self.sim: Optional[Simulator] = None

    def reset(self, seed: int) -> Tuple[np.ndarray, np.ndarray]:
        self.sim = Simulator(self.net, self.demand, self.routing, seed=seed)
        self.t = 0
        self.log = EpisodeLog(region_rewards=np.zeros(len(self.regions)))
        return self.observe()

    def observe(self) -> Tuple[np.ndarray, np.ndarray]:
        """Raw (S_lane, S_itsx) for the centralised embedding."""
        return self.sim.lane_cell_counts(self.cells), self.sim.macro_state()

    def rewards(self) -> np.ndarray:
        return -self.sim.region_wait(self.members)

    def slot_actions_to_phases(self, actions: np.ndarray) -> List[int]:
        """(R, slots) branch choices to one phase per internal intersection."""
        phases = {}
        for r, reg in enumerate(self.regions):
            for s, v in enumerate(reg.slots):
                if v is not None:
                    phases[v] = int(actions[r, s])
        return [phases[v] for v in self.net.internal_ids]

    def step(self, phases: Sequence[int]) -> Tuple[Tuple[np.ndarray, np.ndarray], np.ndarray, bool]:
        sim = self.sim
        sim.apply_action(list(phases))
        for _ in range(self.action_interval):
            ev = sim.step()
            self.log.entered += ev.entered
            self.log.exited += ev.exited
            self.log.blocked += len(ev.blocked)
        self.t += 1
        self.log.decisions = self.t
        r = self.rewards()
        self.log.region_rewards += r
        return self.observe(), r, self.t >= self.decisions

    def metrics(self) -> Dict[str, float]:
        out = dict(self.sim.metrics())
        out.update(self.log.as_dict())
        return out


def run_controller(env: SignalEnv, controller, seed: int) -> Dict[str, float]:
    """Play one episode with a rule-based controller and return its metrics."""
    env.reset(seed)
    controller.reset(env.net)
    done = False
    while not done:
        _, _, done = env.step(controller.act(env.sim))
    return env.metrics()
