"""Vehicle-level 1 s simulator whose lane aggregates follow store-and-forward dynamics.

Vehicles travel at free-flow speed until they reach the back of the queue at the
stop line. A green movement discharges at most ``c`` vehicles per second from the
standing queue at the head of its lane, and only while the receiving lane has room.
A vehicle picks its lane on the next approach (and so its next turn) once, when it
enters that approach, using the routing-proportion rows.
"""

from __future__ import annotations

import bisect
import hashlib
from collections import deque
from dataclasses import dataclass, field
from typing import Deque, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from .demand import ArrivalSampler, DemandSpec
from .network import (
    JAM_SPACING_M,
    RIGHT,
    TURNS,
    Network,
    RoutingConfig,
    approach_turn_shares,
    routing_proportion_matrix,
)

FREE_SPEED_MPS = 10.0
WAIT_SPEED_MPS = 0.1
ALL_RED_S = 3

PhaseAssignment = Union[Mapping[int, Optional[int]], Sequence[Optional[int]]]


@dataclass
class VehicleRecord:
    id: int
    route: List[int]
    position: float
    current_lane: int
    entry_time: int
    speed: float
    exit_time: Optional[int] = None


@dataclass
class SimEvents:
    entered: int = 0
    exited: int = 0
    discharged: Dict[int, int] = field(default_factory=dict)
    blocked: List[Tuple[int, int]] = field(default_factory=list)  # (lane, movement)


class _Cumulative:
    """Inverse-CDF sampler over a short list of choices."""

    __slots__ = ("items", "cum")

    def __init__(self, items: Sequence[int], weights: Sequence[float]):
        w = np.asarray(weights, dtype=float)
        keep = w > 0
        self.items = [int(i) for i, k in zip(items, keep) if k]
        c = np.cumsum(w[keep])
        self.cum = list(c / c[-1])

    def pick(self, u: float) -> int:
        i = bisect.bisect_right(self.cum, u)
        return self.items[min(i, len(self.items) - 1)]


class Simulator:
    """Single-owner simulation state plus its stepping loop."""

    def __init__(
        self,
        net: Network,
        demand: DemandSpec,
        routing: Optional[RoutingConfig] = None,
        seed: int = 0,
        free_speed: float = FREE_SPEED_MPS,
        all_red: int = ALL_RED_S,
        wait_speed: float = WAIT_SPEED_MPS,
    ):
        self.net = net
        self.routing = routing or RoutingConfig()
        self.rp = routing_proportion_matrix(net, self.routing)
        self.free_speed = float(free_speed)
        self.all_red = int(all_red)
        self.wait_speed = float(wait_speed)
        arrivals_ss, routes_ss = np.random.SeedSequence(seed).spawn(2)
        self.arrivals = ArrivalSampler(net, demand, np.random.default_rng(arrivals_ss))
        self.route_rng = np.random.default_rng(routes_ss)

        n = net.n_in
        self.length = net.lengths()[:n]
        self.cap = net.capacities()[:n]
        self.spacing = np.minimum(JAM_SPACING_M, self.length / self.cap)
        width = int(self.cap.max())
        self._rank = np.arange(width)
        self._target = self.length[:, None] - self._rank[None, :] * self.spacing[:, None]

        self.mv_to = [m.to_lane for m in net.movements]
        self.mv_rate = [m.rate for m in net.movements]
        self.mv_exit = [m.to_lane >= n for m in net.movements]
        shares = approach_turn_shares(net, self.routing)
        self._lane_pick = {}
        self._move_pick = {}
        for lid in range(n):
            row = self.rp[lid]
            ids = np.nonzero(row)[0]
            self._lane_pick[lid] = _Cumulative(ids, row[ids])
            split = dict(zip(TURNS, shares[net.lanes[lid].approach_id]))
            mvs = net.lane_movements[lid]
            w = [split[net.movements[m].turn] for m in mvs]
            if sum(w) <= 0:
                w = [1.0] * len(mvs)
            self._move_pick[lid] = _Cumulative(mvs, w)

        self._n_int = len(net.internal_ids)
        n_mv = len(net.movements)
        self._green = np.zeros((self._n_int, 5, n_mv), dtype=bool)
        for i, v in enumerate(net.internal_ids):
            for p, phase in enumerate(net.phase_table[v]):
                self._green[i, p, list(phase.permitted_movements)] = True
            rights = [m.id for m in net.movements if m.intersection == v and m.turn == RIGHT]
            self._green[i, 4, rights] = True  # all-red still lets right turns go
        self.reset_state()

    # ------------------------------------------------------------ state

    def reset_state(self) -> None:
        n = self.net.n_in
        width = self._rank.size
        self.clock = 0
        self.pos = np.zeros((n, width))
        self.spd = np.zeros((n, width))
        self.count = np.zeros(n, dtype=np.int64)
        self.meta: List[Deque[list]] = [deque() for _ in range(n)]
        self.pending: List[Deque[list]] = [deque() for _ in range(n)]
        self.credit = np.zeros(n)
        self.phase = np.zeros(self._n_int, dtype=np.int64)
        self.next_phase = np.zeros(self._n_int, dtype=np.int64)
        self.countdown = np.zeros(self._n_int, dtype=np.int64)
        self.entered = 0
        self.exited = 0
        self.generated = 0
        self.travel_times: List[int] = []
        self._next_id = 0

    @property
    def on_network(self) -> int:
        return int(self.count.sum())

    @property
    def wave(self) -> np.ndarray:
        """Vehicles per lane over all lanes; exit lanes are sinks and always read 0."""
        out = np.zeros(self.net.n_lanes, dtype=np.int64)
        out[: self.net.n_in] = self.count
        return out

    @property
    def lane_queues(self) -> np.ndarray:
        return self.count.astype(float)

    def wait(self) -> np.ndarray:
        valid = self._rank[None, :] < self.count[:, None]
        return np.count_nonzero(valid & (self.spd < self.wait_speed), axis=1)

    def vehicles(self) -> List[VehicleRecord]:
        out = []
        for lid, q in enumerate(self.meta):
            for r, (vid, _move, t0, route) in enumerate(q):
                out.append(
                    VehicleRecord(vid, list(route), float(self.pos[lid, r]), lid, t0, float(self.spd[lid, r]))
                )
        return out

    def signal_state(self) -> List[Tuple[Optional[int], int]]:
        """Per internal intersection: active phase (``None`` while all-red) and countdown."""
        return [
            (None if self.countdown[i] > 0 else int(self.phase[i]), int(self.countdown[i]))
            for i in range(self._n_int)
        ]

    def digest(self) -> str:
        """Hash of the full dynamic state; equal digests mean equal states."""
        h = hashlib.sha256()
        valid = self._rank[None, :] < self.count[:, None]
        for arr in (self.count, np.where(valid, self.pos, 0.0), np.where(valid, self.spd, 0.0),
                    self.credit, self.phase, self.next_phase, self.countdown):
            h.update(np.ascontiguousarray(arr).tobytes())
        h.update(repr([list(map(tuple, ((m[0], m[1], m[2]) for m in q))) for q in self.meta]).encode())
        h.update(repr([[tuple(p) for p in q] for q in self.pending]).encode())
        h.update(repr((self.clock, self.entered, self.exited, self.generated)).encode())
        return h.hexdigest()

    def insert_vehicle(self, lane: int, position: float, speed: float = 0.0, move: Optional[int] = None) -> int:
        """Place a vehicle behind the last one on ``lane`` (test and scenario setup)."""
        r = int(self.count[lane])
        if r >= self.cap[lane]:
            raise ValueError(f"lane {lane} is full")
        if r and position > self.pos[lane, r - 1]:
            raise ValueError("vehicles must be inserted front to back")
        if not 0 <= position <= self.length[lane]:
            raise ValueError(f"position {position} outside lane {lane}")
        if move is None:
            move = self._move_pick[lane].pick(self.route_rng.random())
        vid = self._new_id()
        self.meta[lane].append([vid, move, self.clock, [lane]])
        self.pos[lane, r] = position
        self.spd[lane, r] = speed
        self.count[lane] += 1
        self.entered += 1
        self.generated += 1
        return vid

    def _new_id(self) -> int:
        vid = self._next_id
        self._next_id += 1
        return vid

    # ------------------------------------------------------------ signals

    def _phase_vector(self, phases: PhaseAssignment) -> List[Optional[int]]:
        ids = self.net.internal_ids
        if isinstance(phases, Mapping):
            seq = [phases.get(v, None) for v in ids]
        else:
            seq = list(phases)
            if len(seq) != len(ids):
                raise ValueError(f"expected {len(ids)} phases, got {len(seq)}")
        for v, p in zip(ids, seq):
            if p is not None and not (isinstance(p, (int, np.integer)) and 0 <= p < len(self.net.phase_table[v])):
                raise ValueError(f"phase {p!r} is not in the phase table of intersection {v}")
        return seq

    def apply_action(self, phases: PhaseAssignment) -> None:
        """Request phases; a changed phase is preceded by an all-red countdown."""
        for i, p in enumerate(self._phase_vector(phases)):
            if p is None:
                continue
            if self.countdown[i] > 0:
                if p == self.phase[i]:
                    # back to the phase being cleared: no need to finish the all-red
                    self.countdown[i] = 0
                self.next_phase[i] = p
            elif p != self.phase[i]:
                self.next_phase[i] = p
                self.countdown[i] = self.all_red
                if self.all_red == 0:
                    self.phase[i] = p

    def _green_movements(self, forced: Optional[List[Optional[int]]]) -> np.ndarray:
        idx = np.arange(self._n_int)
        if forced is not None:
            active = np.array([4 if p is None else p for p in forced], dtype=np.int64)
        else:
            active = np.where(self.countdown > 0, 4, self.phase)
        return self._green[idx, active].any(axis=0)

    # ------------------------------------------------------------ dynamics

    def step(self, joint_phase_assignment: Optional[PhaseAssignment] = None) -> SimEvents:
        """Advance one second.

        With ``joint_phase_assignment`` the given phases (``None`` = all-red) are
        used directly for this second; otherwise the signal state set by
        ``apply_action`` runs.
        """
        forced = None if joint_phase_assignment is None else self._phase_vector(joint_phase_assignment)
        green = self._green_movements(forced)
        ev = SimEvents()
        self._advance()
        self._discharge(green, ev)
        self._arrive(ev)
        self.clock += 1
        if forced is None:
            running = self.countdown > 0
            self.countdown[running] -= 1
            done = running & (self.countdown == 0)
            self.phase[done] = self.next_phase[done]
        return ev

    def _advance(self) -> None:
        valid = self._rank[None, :] < self.count[:, None]
        new = np.minimum(self.pos + self.free_speed, np.maximum(self._target, self.pos))
        self.spd = np.where(valid, new - self.pos, 0.0)
        self.pos = np.where(valid, new, 0.0)

    def _discharge(self, green: np.ndarray, ev: SimEvents) -> None:
        at_stop = (self.count > 0) & (self.pos[:, 0] >= self.length - 1e-9)
        lanes = np.nonzero(at_stop)[0]
        credit = np.zeros_like(self.credit)
        pos, count, cap = self.pos, self.count, self.cap
        for lid in lanes:
            lid = int(lid)
            q = self.meta[lid]
            head_move = q[0][1]
            if not green[head_move]:
                continue
            c = self.credit[lid] + self.mv_rate[head_move]
            n = 0
            L, gap = self.length[lid], self.spacing[lid]
            cnt = int(count[lid])
            while c >= 1.0 and n < cnt and pos[lid, n] >= L - n * gap - 1e-9:
                veh = q[n]
                move = veh[1]
                if not green[move]:
                    break
                if self.mv_exit[move]:
                    self.travel_times.append(self.clock + 1 - veh[2])
                    self.exited += 1
                    ev.exited += 1
                else:
                    lane2 = self._lane_pick[self.mv_to[move]].pick(self.route_rng.random())
                    r2 = int(count[lane2])
                    if r2 >= cap[lane2]:
                        ev.blocked.append((lid, move))
                        break
                    veh[1] = self._move_pick[lane2].pick(self.route_rng.random())
                    veh[3].append(lane2)
                    self.meta[lane2].append(veh)
                    pos[lane2, r2] = 0.0
                    self.spd[lane2, r2] = self.free_speed
                    count[lane2] += 1
                n += 1
                c -= 1.0
            credit[lid] = c - np.floor(c)
            if n:
                for _ in range(n):
                    q.popleft()
                cnt = int(count[lid])
                pos[lid, : cnt - n] = pos[lid, n:cnt]
                self.spd[lid, : cnt - n] = self.spd[lid, n:cnt]
                pos[lid, cnt - n : cnt] = 0.0
                self.spd[lid, cnt - n : cnt] = 0.0
                count[lid] -= n
                ev.discharged[lid] = n
        self.credit = credit

    def _arrive(self, ev: SimEvents) -> None:
        t = self.clock
        for lane, k in self.arrivals.draw(t):
            for _ in range(k):
                lane2 = self._lane_pick[lane].pick(self.route_rng.random())
                move = self._move_pick[lane2].pick(self.route_rng.random())
                self.pending[lane2].append([self._new_id(), move, t])
                self.generated += 1
        for lane in self.net.entry_lanes:
            pq = self.pending[lane]
            if pq and self.count[lane] < self.cap[lane]:
                vid, move, t0 = pq.popleft()
                r = int(self.count[lane])
                self.meta[lane].append([vid, move, t0, [lane]])
                self.pos[lane, r] = 0.0
                self.spd[lane, r] = self.free_speed
                self.count[lane] += 1
                self.entered += 1
                ev.entered += 1

    # ------------------------------------------------------------ observations

    def lane_cell_counts(self, cells: int) -> np.ndarray:
        """|L_in| x B vehicle counts per equal-length cell, cell 0 at the stop line."""
        return lane_cell_counts(self.pos, self.count, self.length, cells)

    def macro_state(self) -> np.ndarray:
        """Per internal intersection ``[wait(l) for l in In_v] + [wave(l) for l in In_v]``.

        Rows are zero-padded to the widest intersection.
        """
        width = self.net.max_lanes_per_intersection
        wait, wave = self.wait(), self.count
        out = np.zeros((self._n_int, 2 * width))
        for i, v in enumerate(self.net.internal_ids):
            lanes = list(self.net.in_lanes[v])
            out[i, : len(lanes)] = wait[lanes]
            out[i, width : width + len(lanes)] = wave[lanes]
        return out

    def region_wait(self, regions: Sequence[Sequence[int]]) -> np.ndarray:
        wait = self.wait()
        return np.array(
            [sum(int(wait[l]) for v in members for l in self.net.in_lanes[v]) for members in regions],
            dtype=float,
        )

    # ------------------------------------------------------------ metrics

    def en_route_ages(self, include_pending: bool = True) -> List[int]:
        ages = [self.clock - m[2] for q in self.meta for m in q]
        if include_pending:
            ages += [self.clock - p[2] for q in self.pending for p in q]
        return ages

    def metrics(self, include_pending: bool = True) -> Dict[str, float]:
        return travel_metrics(self.travel_times, self.en_route_ages(include_pending))


def lane_cell_counts(pos: np.ndarray, count: np.ndarray, length: np.ndarray, cells: int) -> np.ndarray:
    if cells < 1:
        raise ValueError(f"cell count must be >= 1 (got {cells})")
    n, width = pos.shape
    valid = np.arange(width)[None, :] < count[:, None]
    size = length[:, None] / cells
    cell = np.clip(np.floor((length[:, None] - pos) / size), 0, cells - 1).astype(np.int64)
    out = np.zeros((n, cells), dtype=np.int64)
    rows = np.broadcast_to(np.arange(n)[:, None], pos.shape)
    np.add.at(out, (rows[valid], cell[valid]), 1)
    return out


def travel_metrics(travel_times: Sequence[float], en_route_ages: Sequence[float] = ()) -> Dict[str, float]:
    """Average travel time over finished trips plus the current age of unfinished ones."""
    every = list(travel_times) + list(en_route_ages)
    return {
        "average_travel_time": float(np.mean(every)) if every else 0.0,
        "throughput": len(travel_times),
    }
