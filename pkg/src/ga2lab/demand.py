"""Arrival processes on entry lanes."""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .network import Network, SpecError

PROCESSES = ("poisson", "deterministic", "trace")


@dataclass
class DemandSpec:
    """Per entry lane arrival rates in vehicles/hour, or an explicit trace.

    ``trace`` rows are ``(time_s, entry_lane_id, count)``; it is used when
    ``process == "trace"``.
    """

    rates_vph: Dict[int, float] = field(default_factory=dict)
    process: str = "poisson"
    trace: List[Tuple[int, int, int]] = field(default_factory=list)

    def problems(self, net: Optional[Network] = None) -> List[str]:
        out = []
        if self.process not in PROCESSES:
            out.append(f"unknown arrival process {self.process!r}")
        out += [f"negative rate on lane {k}" for k, r in self.rates_vph.items() if r < 0]
        out += [f"negative count in trace row {row}" for row in self.trace if row[2] < 0]
        if net is not None:
            entry = set(net.entry_lanes)
            lanes = set(self.rates_vph) | {row[1] for row in self.trace}
            out += [f"lane {k} is not an entry lane" for k in sorted(lanes - entry)]
        return out

    def validate(self, net: Optional[Network] = None) -> None:
        problems = self.problems(net)
        if problems:
            raise SpecError(problems)


def read_trace(path: Path | str) -> List[Tuple[int, int, int]]:
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].lstrip().startswith("#"):
                continue
            if rec[0].strip() == "time_s":
                continue
            rows.append((int(float(rec[0])), int(rec[1]), int(rec[2])))
    return rows


def write_trace(path: Path | str, rows: Sequence[Tuple[int, int, int]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        for row in rows:
            w.writerow(row)


def generate_synthetic_demand(
    net: Network,
    mean_vph: float,
    seed: int,
    std_vph: Optional[float] = None,
    process: str = "poisson",
) -> DemandSpec:
    """One Gaussian draw of the hourly rate per entry lane, truncated at zero."""
    if mean_vph <= 0:
        raise SpecError([f"mean_vph must be > 0 (got {mean_vph})"])
    std = 0.1 * mean_vph if std_vph is None else std_vph
    rng = np.random.default_rng(seed)
    lanes = net.entry_lanes
    draws = rng.normal(mean_vph, std, size=len(lanes)) if std > 0 else np.full(len(lanes), mean_vph)
    rates = {lid: float(max(r, 0.0)) for lid, r in zip(lanes, draws)}
    return DemandSpec(rates_vph=rates, process=process)


class ArrivalSampler:
    """Per-second arrival counts for every entry lane."""

    def __init__(self, net: Network, demand: DemandSpec, rng: np.random.Generator):
        demand.validate(net)
        self.lanes = np.array(net.entry_lanes, dtype=np.int64)
        self.rate = np.array([demand.rates_vph.get(int(l), 0.0) / 3600.0 for l in self.lanes])
        self.process = demand.process
        self.rng = rng
        self.acc = np.zeros(len(self.lanes))
        self.trace: Dict[int, List[Tuple[int, int]]] = {}
        for t, lane, n in demand.trace:
            self.trace.setdefault(int(t), []).append((int(lane), int(n)))

    def draw(self, t: int) -> List[Tuple[int, int]]:
        if self.process == "trace":
            return self.trace.get(t, [])
        if self.process == "poisson":
            counts = self.rng.poisson(self.rate)
        else:
            self.acc += self.rate
            counts = np.floor(self.acc + 1e-12).astype(np.int64)
            self.acc -= counts
        idx = np.nonzero(counts)[0]
        return [(int(self.lanes[i]), int(counts[i])) for i in idx]
