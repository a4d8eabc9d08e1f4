"""Online regional Q-learning episodes and greedy evaluation."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np

from .agents import EpsSchedule, Learner, Transition
from .env import SignalEnv

log = logging.getLogger(__name__)


@dataclass
class TrainStats:
    episode: int
    average_travel_time: float
    throughput: int
    mean_loss: float
    epsilon: float
    region_reward_sums: List[float] = field(default_factory=list)
    wall_s: float = 0.0

    def as_dict(self) -> Dict[str, object]:
        return dict(vars(self))


def episode_seed(seed: int, episode: int, eval_: bool = False) -> int:
    """Arrival/routing stream for one episode; evaluation streams never overlap training ones."""
    return int(np.random.SeedSequence([seed, episode, int(eval_)]).generate_state(1)[0])


def run_learning_episode(env: SignalEnv, learner: Learner, schedule: EpsSchedule, rng: np.random.Generator,
                         sim_seed: int, learn_every: Optional[int] = None) -> Dict[str, float]:
    learn_every = learner.cfg.learn_every if learn_every is None else learn_every
    s_lane, s_itsx = env.reset(sim_seed)
    losses = []
    done = False
    while not done:
        eps = schedule.advance()
        actions = learner.act(s_lane, s_itsx, eps, rng)
        (n_lane, n_itsx), rewards, done = env.step(env.slot_actions_to_phases(actions))
        # the episode ends on a time limit, not an absorbing state, so the last step still bootstraps
        learner.buffer.add(Transition(schedule.step, s_lane.astype(np.int16), s_itsx.astype(np.int16), actions,
                                      rewards, n_lane.astype(np.int16), n_itsx.astype(np.int16), False))
        if schedule.step % learn_every == 0 and len(learner.buffer) >= learner.cfg.batch_size:
            losses.append(learner.train_step().sum())
        s_lane, s_itsx = n_lane, n_itsx
    out = env.metrics()
    out["mean_loss"] = float(np.mean(losses)) if losses else None
    out["epsilon"] = schedule.value()
    return out


def train(env: SignalEnv, learner: Learner, episodes: int, seed: int, schedule: Optional[EpsSchedule] = None,
          callback: Optional[Callable[[TrainStats], None]] = None) -> List[TrainStats]:
    schedule = schedule or EpsSchedule()
    rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
    history = []
    for ep in range(episodes):
        t0 = time.perf_counter()
        m = run_learning_episode(env, learner, schedule, rng, episode_seed(seed, ep))
        st = TrainStats(ep, m["average_travel_time"], m["throughput"],
                        float("nan") if m["mean_loss"] is None else m["mean_loss"], m["epsilon"],
                        m["region_reward_sums"], time.perf_counter() - t0)
        history.append(st)
        log.debug("episode %d att=%.1f loss=%.4f eps=%.3f", ep, st.average_travel_time, st.mean_loss, st.epsilon)
        if callback is not None:
            callback(st)
    return history


def evaluate_policy(env: SignalEnv, learner: Learner, sim_seed: int) -> Dict[str, float]:
    """One greedy episode with frozen parameters."""
    rng = np.random.default_rng(0)
    s_lane, s_itsx = env.reset(sim_seed)
    done = False
    while not done:
        actions = learner.act(s_lane, s_itsx, 0.0, rng)
        (s_lane, s_itsx), _, done = env.step(env.slot_actions_to_phases(actions))
    return env.metrics()
