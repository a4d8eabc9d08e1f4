"""Experiment configuration, seeded runs, sweeps and result files.

A run writes ``results.jsonl`` (one record per training episode and per
evaluation episode, each carrying the config hash), ``summary.json`` and a
separate ``timing.jsonl`` holding wall-clock numbers, so that re-running a
config reproduces the first two files byte for byte.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import itertools
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from .agents import EpsSchedule, Learner, LearnerConfig
from .baselines import make_controller, phase_index
from .demand import DemandSpec, generate_synthetic_demand
from .env import SignalEnv, run_controller
from .ga2 import GA2
from .network import Network, NetworkSpec, SpecError, build_network
from .partition import PartitionConfig, pad_regions, partition
from .train import episode_seed, evaluate_policy, run_learning_episode

log = logging.getLogger(__name__)

AGENT_KINDS = ("ga2-naive", "ga2-aug", "fixed", "sotl", "random")
SWEEP_AXES = {"cells": "cells", "heads": "heads", "mask": "agent"}


@dataclass
class DemandConfig:
    mean_vph: float = 500.0
    std_vph: Optional[float] = None
    process: str = "poisson"


@dataclass
class ExperimentConfig:
    name: str = "desk"
    network: NetworkSpec = field(default_factory=NetworkSpec)
    demand: DemandConfig = field(default_factory=DemandConfig)
    partition: PartitionConfig = field(default_factory=PartitionConfig)
    agent: str = "ga2-naive"
    cells: int = 5
    heads: int = 8
    hidden: Tuple[int, ...] = (8, 16)
    state_scale: float = 0.1
    episodes: int = 300
    decisions: int = 25
    action_interval: int = 20
    seeds: List[int] = field(default_factory=lambda: [0, 1, 2])
    eval_episodes: int = 3
    learner: LearnerConfig = field(default_factory=LearnerConfig)
    eps_max: float = 1.0
    eps_min: float = 0.001
    eps_decay_steps: int = 3000
    sotl_threshold: int = 5
    min_green: int = 20
    fixed_plan: List[Tuple[str, int]] = field(default_factory=lambda: [("NS", 20), ("NSL", 20), ("EW", 20), ("EWL", 20)])
    out: str = "results"

    # ---------------------------------------------------------- validation

    def problems(self) -> List[str]:
        out = list(self.network.problems()) + list(self.partition.problems())
        if self.agent not in AGENT_KINDS:
            out.append(f"agent must be one of {AGENT_KINDS} (got {self.agent!r})")
        for key in ("episodes", "decisions", "action_interval", "cells", "heads"):
            if getattr(self, key) < 1:
                out.append(f"{key} must be >= 1 (got {getattr(self, key)})")
        if self.state_scale <= 0:
            out.append(f"state_scale must be > 0 (got {self.state_scale})")
        if self.eval_episodes < 0:
            out.append(f"eval_episodes must be >= 0 (got {self.eval_episodes})")
        if not self.seeds:
            out.append("seeds must list at least one seed")
        if self.demand.mean_vph <= 0:
            out.append(f"demand.mean_vph must be > 0 (got {self.demand.mean_vph})")
        if self.demand.std_vph is not None and self.demand.std_vph < 0:
            out.append(f"demand.std_vph must be >= 0 (got {self.demand.std_vph})")
        if self.demand.process not in ("poisson", "deterministic"):
            out.append(f"demand.process must be poisson or deterministic (got {self.demand.process!r})")
        if not 0 <= self.eps_min <= self.eps_max <= 1:
            out.append("need 0 <= eps_min <= eps_max <= 1")
        if self.eps_decay_steps < 1:
            out.append("eps_decay_steps must be >= 1")
        if self.sotl_threshold < 1:
            out.append(f"sotl_threshold must be >= 1 (got {self.sotl_threshold})")
        if not 0 <= self.learner.gamma <= 1:
            out.append(f"learner.gamma must be in [0, 1] (got {self.learner.gamma})")
        if self.learner.batch_size < 1 or self.learner.buffer_size < self.learner.batch_size:
            out.append("learner.batch_size must be >= 1 and no larger than learner.buffer_size")
        try:
            for p, d in self.fixed_plan:
                phase_index(p)
                if int(d) < 1:
                    out.append(f"fixed_plan duration for {p} must be >= 1")
        except (TypeError, ValueError) as exc:
            out.append(f"fixed_plan: {exc}")
        return out

    def validate(self) -> None:
        problems = self.problems()
        if problems:
            raise SpecError(problems)

    # ---------------------------------------------------------- (de)serialisation

    def to_dict(self) -> Dict[str, Any]:
        d = dataclasses.asdict(self)
        d["network"]["turn_shares"] = list(self.network.turn_shares)
        d["hidden"] = list(self.hidden)
        d["learner"]["hidden"] = list(self.learner.hidden)
        d["fixed_plan"] = [[p, int(s)] for p, s in self.fixed_plan]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ExperimentConfig":
        d = dict(d or {})
        problems = [f"unknown config key {k!r}" for k in sorted(set(d) - set(cls.__dataclass_fields__))]
        kw: Dict[str, Any] = {}
        try:
            if "network" in d:
                kw["network"] = NetworkSpec.from_dict(d.pop("network") or {})
            if "demand" in d:
                kw["demand"] = _sub(DemandConfig, d.pop("demand"), "demand", problems)
            if "partition" in d:
                part = dict(d.pop("partition") or {})
                if part.get("layout") is not None:
                    part["layout"] = {int(k): [int(v) for v in vs] for k, vs in part["layout"].items()}
                kw["partition"] = _sub(PartitionConfig, part, "partition", problems)
            if "learner" in d:
                lrn = dict(d.pop("learner") or {})
                if "hidden" in lrn:
                    lrn["hidden"] = tuple(int(h) for h in lrn["hidden"])
                kw["learner"] = _sub(LearnerConfig, lrn, "learner", problems)
        except SpecError as exc:
            problems += exc.problems
        if problems:
            raise SpecError(problems)
        if "hidden" in d:
            d["hidden"] = tuple(int(h) for h in d["hidden"])
        if "seeds" in d:
            d["seeds"] = [int(s) for s in d["seeds"]]
        if "fixed_plan" in d:
            d["fixed_plan"] = [(str(p), int(s)) for p, s in d["fixed_plan"]]
        kw.update(d)
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh)
        if data is not None and not isinstance(data, dict):
            raise SpecError([f"{path}: top level must be a mapping"])
        return cls.from_dict(data or {})

    def dump(self) -> str:
        return yaml.safe_dump(self.to_dict(), sort_keys=False)

    def config_hash(self) -> str:
        """Hash of everything that influences results (the output path does not)."""
        d = self.to_dict()
        d.pop("out", None)
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        new = copy.deepcopy(self)
        for k, v in changes.items():
            if not hasattr(new, k):
                raise KeyError(k)
            setattr(new, k, v)
        return new


def _sub(cls, data, name: str, problems: List[str]):
    data = dict(data or {})
    unknown = sorted(set(data) - set(cls.__dataclass_fields__))
    if unknown:
        problems += [f"unknown {name} key {k!r}" for k in unknown]
        return cls()
    return cls(**data)


# ---------------------------------------------------------------- building blocks


@dataclass
class Scenario:
    net: Network
    demand: DemandSpec
    regions: list
    env: SignalEnv


def build_scenario(cfg: ExperimentConfig, seed: int) -> Scenario:
    """Network, seeded demand and padded regions for one seed.

    The demand draw depends only on the seed, so runs that differ in agent or
    hyperparameters see identical arrival rates.
    """
    net = build_network(cfg.network)
    demand = generate_synthetic_demand(net, cfg.demand.mean_vph, seed, cfg.demand.std_vph, cfg.demand.process)
    regions = partition(net, cfg.partition)
    slots = max(cfg.partition.max_region_size, max(r.size for r in regions))
    regions = pad_regions(regions, slots, net.max_lanes_per_intersection)
    env = SignalEnv(net, demand, regions, cells=cfg.cells, action_interval=cfg.action_interval, decisions=cfg.decisions)
    return Scenario(net, demand, regions, env)


def build_learner(cfg: ExperimentConfig, sc: Scenario, seed: int) -> Learner:
    mask = "aug" if cfg.agent == "ga2-aug" else "naive"
    ga2 = GA2(sc.net, sc.regions, cells=cfg.cells, heads=cfg.heads, hidden=cfg.hidden, mask=mask,
              rng=np.random.default_rng(np.random.SeedSequence([seed, 1])), state_scale=cfg.state_scale)
    return Learner(ga2, copy.deepcopy(cfg.learner), seed=seed)


def _clean(m: Mapping[str, Any]) -> Dict[str, Any]:
    out = {}
    for k, v in m.items():
        if isinstance(v, (np.floating, float)):
            out[k] = float(v)
        elif isinstance(v, (np.integer, int)):
            out[k] = int(v)
        else:
            out[k] = v
    return out


def run_seed(cfg: ExperimentConfig, seed: int, on_episode=None) -> Tuple[List[Dict], List[Dict], Dict[str, float]]:
    """Train (if learning) and evaluate one seed.

    Returns (episode records, evaluation records, timing).
    """
    log.info("run %s agent=%s seed=%d", cfg.name, cfg.agent, seed)
    sc = build_scenario(cfg, seed)
    episodes, evals = [], []
    t0 = time.perf_counter()
    if cfg.agent.startswith("ga2"):
        learner = build_learner(cfg, sc, seed)
        sched = EpsSchedule(cfg.eps_max, cfg.eps_min, cfg.eps_decay_steps)
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7]))
        for ep in range(cfg.episodes):
            m = run_learning_episode(sc.env, learner, sched, rng, episode_seed(seed, ep))
            rec = {"type": "episode", "seed": seed, "episode": ep, **_clean(m)}
            episodes.append(rec)
            if on_episode:
                on_episode(rec)
        train_s = time.perf_counter() - t0
        policy = lambda k: evaluate_policy(sc.env, learner, episode_seed(seed, k, True))
    else:
        ctrl_seed = int(np.random.SeedSequence([seed, 3]).generate_state(1)[0])
        ctrl = make_controller(cfg.agent, seed=ctrl_seed, threshold=cfg.sotl_threshold,
                               min_green=cfg.min_green, plan=cfg.fixed_plan)
        for ep in range(cfg.episodes):
            m = run_controller(sc.env, ctrl, episode_seed(seed, ep))
            rec = {"type": "episode", "seed": seed, "episode": ep, **_clean(m)}
            episodes.append(rec)
            if on_episode:
                on_episode(rec)
        train_s = time.perf_counter() - t0
        policy = lambda k: run_controller(sc.env, ctrl, episode_seed(seed, k, True))
    t1 = time.perf_counter()
    for k in range(cfg.eval_episodes):
        evals.append({"type": "eval", "seed": seed, "episode": k, **_clean(policy(k))})
    timing = {"seed": seed, "train_s": train_s, "eval_s": time.perf_counter() - t1}
    return episodes, evals, timing


def seed_score(episodes: Sequence[Dict], evals: Sequence[Dict]) -> float:
    """Per-seed travel time: mean over evaluation episodes (or the last training episode if none)."""
    src = evals if evals else episodes[-1:]
    return float(np.mean([r["average_travel_time"] for r in src]))


@dataclass
class RunResult:
    config_hash: str
    seeds: List[int]
    per_seed_att: Dict[int, float]
    median_att: float
    records: List[Dict] = field(default_factory=list)
    wall_s: float = 0.0
    out_dir: Optional[Path] = None

    def summary(self) -> Dict[str, Any]:
        return {
            "config_hash": self.config_hash,
            "seeds": list(self.seeds),
            "per_seed_average_travel_time": {str(k): v for k, v in self.per_seed_att.items()},
            "median_average_travel_time": self.median_att,
        }


def run_experiment(cfg: ExperimentConfig, out_dir: Optional[Path | str] = None, write: bool = True,
                   jobs: int = 1) -> RunResult:
    """Run every seed (``jobs`` > 1 spreads seeds over worker processes) and aggregate.

    Each seed owns its simulator and agent, so results do not depend on ``jobs``.
    """
    cfg.validate()
    h = cfg.config_hash()
    records, per_seed, timings = [], {}, []
    t0 = time.perf_counter()
    if jobs > 1 and len(cfg.seeds) > 1:
        with ProcessPoolExecutor(max_workers=min(jobs, len(cfg.seeds))) as pool:
            outputs = list(pool.map(run_seed, [cfg] * len(cfg.seeds), cfg.seeds))
    else:
        outputs = (run_seed(cfg, seed) for seed in cfg.seeds)
    for seed, (eps, evs, timing) in zip(cfg.seeds, outputs):
        for r in eps + evs:
            r["config_hash"] = h
        records += eps + evs
        per_seed[seed] = seed_score(eps, evs)
        timings.append(timing)
        log.info("seed %d average travel time %.2f", seed, per_seed[seed])
    res = RunResult(h, list(cfg.seeds), per_seed, float(np.median(list(per_seed.values()))), records,
                    time.perf_counter() - t0)
    if write:
        out = Path(out_dir if out_dir is not None else cfg.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "results.jsonl", "w") as fh:
            for r in records:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        (out / "summary.json").write_text(json.dumps(res.summary(), indent=2, sort_keys=True) + "\n")
        (out / "config.yaml").write_text(f"# config_hash: {h}\n" + cfg.dump())
        with open(out / "timing.jsonl", "w") as fh:
            for t in timings:
                fh.write(json.dumps({"config_hash": h, **t}) + "\n")
            fh.write(json.dumps({"config_hash": h, "total_s": res.wall_s}) + "\n")
        res.out_dir = out
    return res


# ---------------------------------------------------------------- sweeps


def parse_axis(text: str) -> Tuple[str, List[Any]]:
    """``cells=1,3,5`` / ``heads=5,8`` / ``mask=naive,aug``."""
    if "=" not in text:
        raise SpecError([f"sweep axis {text!r} must look like name=v1,v2"])
    name, values = text.split("=", 1)
    name = name.strip()
    if name not in SWEEP_AXES:
        raise SpecError([f"unknown sweep axis {name!r}; choose from {sorted(SWEEP_AXES)}"])
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise SpecError([f"sweep axis {name!r} has no values"])
    if name == "mask":
        bad = [v for v in vals if v not in ("naive", "aug")]
        if bad:
            raise SpecError([f"mask values must be naive or aug (got {bad})"])
        return name, vals
    try:
        return name, [int(v) for v in vals]
    except ValueError:
        raise SpecError([f"sweep axis {name!r} needs integer values (got {vals})"]) from None


def _apply(cfg: ExperimentConfig, name: str, value) -> ExperimentConfig:
    if name == "mask":
        return cfg.replace(agent=f"ga2-{value}")
    return cfg.replace(**{SWEEP_AXES[name]: value})


def sweep(cfg: ExperimentConfig, axes: Mapping[str, Sequence[Any]], out_dir: Optional[Path | str] = None,
          write: bool = True, jobs: int = 1) -> List[Dict[str, Any]]:
    """Cartesian product over ``axes``; every cell reuses ``cfg.seeds`` (paired comparison)."""
    names = list(axes)
    cells = list(itertools.product(*[axes[n] for n in names]))
    variants = []
    for combo in cells:
        c = cfg
        for n, v in zip(names, combo):
            c = _apply(c, n, v)
        c.validate()
        variants.append((combo, c))
    root = Path(out_dir if out_dir is not None else cfg.out)
    rows = []
    for combo, c in variants:
        tag = "_".join(f"{n}-{v}" for n, v in zip(names, combo))
        res = run_experiment(c, root / tag, write=write, jobs=jobs)
        row = {n: v for n, v in zip(names, combo)}
        row.update({"config_hash": res.config_hash, "median_average_travel_time": res.median_att})
        row.update({f"seed_{s}": res.per_seed_att[s] for s in c.seeds})
        rows.append(row)
    if write:
        root.mkdir(parents=True, exist_ok=True)
        with open(root / "sweep.jsonl", "w") as fh:
            for r in rows:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
        (root / "sweep.md").write_text(format_table(rows))
    return rows


def format_table(rows: Sequence[Mapping[str, Any]]) -> str:
    if not rows:
        return ""
    cols = list(rows[0])
    fmt = lambda v: f"{v:.2f}" if isinstance(v, float) else str(v)
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(fmt(r[c]) for c in cols) + " |" for r in rows]
    return "\n".join(lines) + "\n"
