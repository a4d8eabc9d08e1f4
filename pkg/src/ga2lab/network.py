"""Road network graph, lanes, movements, phases and the static lane/intersection matrices."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np

LEFT, STRAIGHT, RIGHT = "left", "straight", "right"
TURNS = (LEFT, STRAIGHT, RIGHT)
PHASE_NAMES = ("NS", "NSL", "EW", "EWL")
JAM_SPACING_M = 7.5

# heading unit vectors in (row, col) grid coordinates; row 0 is the north edge
NORTH, SOUTH, EAST, WEST = (-1, 0), (1, 0), (0, 1), (0, -1)


class SpecError(ValueError):
    """Raised when a network, routing or demand description is malformed."""

    def __init__(self, problems: Sequence[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class Intersection:
    id: int
    pos: Tuple[float, float]
    internal: bool


@dataclass(frozen=True)
class Approach:
    id: int
    start: int
    end: int
    heading: Tuple[int, int]
    kind: str  # "entry" | "exit" | "internal"
    lane_ids: Tuple[int, ...]


@dataclass(frozen=True)
class Lane:
    id: int
    approach_id: int
    index: int  # 0 is the leftmost lane of the approach
    length: float
    capacity: int
    is_entry: bool
    turns: Tuple[str, ...]


@dataclass(frozen=True)
class Movement:
    id: int
    from_lane: int
    to_lane: int
    turn: str
    rate: float
    intersection: int


@dataclass(frozen=True)
class Phase:
    id: str
    permitted_movements: frozenset
    permitted_lanes: frozenset


@dataclass
class NetworkSpec:
    """Grid description. Lengths are per travel axis: EW approaches run east-west."""

    rows: int = 2
    cols: int = 2
    lanes_per_approach: int = 3
    approach_length_ew_m: float = 300.0
    approach_length_ns_m: float = 300.0
    discharge_rate_vps: float = 1.0
    lane_capacity: Optional[int] = None
    rate_jitter: float = 0.0
    jitter_seed: int = 0
    turn_shares: Tuple[float, float, float] = (0.1, 0.6, 0.3)

    def problems(self) -> List[str]:
        out = []
        if self.rows < 1:
            out.append(f"rows must be >= 1 (got {self.rows})")
        if self.cols < 1:
            out.append(f"cols must be >= 1 (got {self.cols})")
        if self.lanes_per_approach < 1:
            out.append(f"lanes_per_approach must be >= 1 (got {self.lanes_per_approach})")
        if self.approach_length_ew_m <= 0:
            out.append(f"approach_length_ew_m must be > 0 (got {self.approach_length_ew_m})")
        if self.approach_length_ns_m <= 0:
            out.append(f"approach_length_ns_m must be > 0 (got {self.approach_length_ns_m})")
        if self.discharge_rate_vps <= 0:
            out.append(f"discharge_rate_vps must be > 0 (got {self.discharge_rate_vps})")
        if self.lane_capacity is not None and self.lane_capacity < 1:
            out.append(f"lane_capacity must be >= 1 (got {self.lane_capacity})")
        if not 0 <= self.rate_jitter < 1:
            out.append(f"rate_jitter must be in [0, 1) (got {self.rate_jitter})")
        if len(self.turn_shares) != 3 or any(s < 0 for s in self.turn_shares):
            out.append("turn_shares must be three non-negative numbers (left, straight, right)")
        elif abs(sum(self.turn_shares) - 1.0) > 1e-9:
            out.append(f"turn_shares must sum to 1 (got {sum(self.turn_shares)})")
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "NetworkSpec":
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(d) - known)
        if unknown:
            raise SpecError([f"unknown network key {k!r}" for k in unknown])
        d = dict(d)
        if "turn_shares" in d:
            d["turn_shares"] = tuple(float(x) for x in d["turn_shares"])
        return cls(**d)


def default_lane_turns(n: int) -> List[Tuple[str, ...]]:
    if n == 1:
        return [(LEFT, STRAIGHT, RIGHT)]
    if n == 2:
        return [(LEFT,), (STRAIGHT, RIGHT)]
    return [(LEFT,)] + [(STRAIGHT,)] * (n - 2) + [(RIGHT,)]


def _turn_heading(heading: Tuple[int, int], turn: str) -> Tuple[int, int]:
    di, dj = heading
    if turn == STRAIGHT:
        return heading
    if turn == LEFT:
        return (-dj, di)
    return (dj, -di)


def _target_lane_index(turn: str, n: int) -> int:
    return {LEFT: 0, STRAIGHT: n // 2, RIGHT: n - 1}[turn]


class Network:
    """Immutable road graph.

    Incoming lanes (lanes of entry and internal approaches, i.e. lanes that end at an
    internal intersection) carry ids ``0..n_in-1``; exit lanes follow.
    """

    def __init__(
        self,
        intersections: Sequence[Intersection],
        approaches: Sequence[Approach],
        lanes: Sequence[Lane],
        movements: Sequence[Movement],
        phase_table: Mapping[int, Sequence[Phase]],
    ):
        self.intersections = tuple(intersections)
        self.approaches = tuple(approaches)
        self.lanes = tuple(lanes)
        self.movements = tuple(movements)
        self.phase_table = {k: tuple(v) for k, v in phase_table.items()}

        self.internal_ids = tuple(v.id for v in self.intersections if v.internal)
        self.internal_index = {v: i for i, v in enumerate(self.internal_ids)}
        self.n_in = sum(1 for ln in self.lanes if self._is_incoming(ln))
        self.n_lanes = len(self.lanes)

        self.in_lanes: Dict[int, Tuple[int, ...]] = {}
        self.out_lanes: Dict[int, Tuple[int, ...]] = {}
        for v in self.intersections:
            self.in_lanes[v.id] = tuple(
                lid for a in self.approaches if a.end == v.id for lid in a.lane_ids
            )
            self.out_lanes[v.id] = tuple(
                lid for a in self.approaches if a.start == v.id for lid in a.lane_ids
            )
        self.neighbors: Dict[int, Tuple[int, ...]] = {
            v: tuple(
                sorted(a.end for a in self.approaches if a.start == v and a.kind == "internal")
            )
            for v in self.internal_ids
        }
        self.lane_movements: Dict[int, Tuple[int, ...]] = {ln.id: () for ln in self.lanes}
        for mv in self.movements:
            self.lane_movements[mv.from_lane] += (mv.id,)
        self.lane_end = {
            lid: a.end for a in self.approaches for lid in a.lane_ids
        }
        self._check()

    def _is_incoming(self, lane: Lane) -> bool:
        return self.approaches[lane.approach_id].kind != "exit"

    def _check(self) -> None:
        problems = []
        kinds = {v.id: v.internal for v in self.intersections}
        for a in self.approaches:
            s, e = kinds[a.start], kinds[a.end]
            expected = "internal" if s and e else "entry" if e else "exit" if s else None
            if expected != a.kind:
                problems.append(f"approach {a.id} kind {a.kind!r} does not match endpoints")
        for i, ln in enumerate(self.lanes):
            if ln.id != i:
                problems.append(f"lane id {ln.id} at position {i}")
            if ln.capacity < 1 or ln.length <= 0:
                problems.append(f"lane {ln.id} has capacity {ln.capacity}, length {ln.length}")
            if self._is_incoming(ln) != (ln.id < self.n_in):
                problems.append(f"incoming lane ids are not dense (lane {ln.id})")
            if self._is_incoming(ln) and not self.lane_movements[ln.id]:
                problems.append(f"incoming lane {ln.id} has no movement")
        pairs = [(m.from_lane, m.to_lane) for m in self.movements]
        if len(set(pairs)) != len(pairs):
            problems.append("duplicate (from_lane, to_lane) movement")
        if any(m.rate <= 0 for m in self.movements):
            problems.append("non-positive discharge rate")
        right = {m.id for m in self.movements if m.turn == RIGHT}
        for v, phases in self.phase_table.items():
            for p in phases:
                mine = {m for m in right if self.movements[m].intersection == v}
                if not mine <= p.permitted_movements:
                    problems.append(f"phase {p.id} at {v} blocks a right turn")
        if problems:
            raise SpecError(problems)

    @property
    def incoming(self) -> range:
        return range(self.n_in)

    @property
    def entry_lanes(self) -> Tuple[int, ...]:
        return tuple(ln.id for ln in self.lanes[: self.n_in] if ln.is_entry)

    @property
    def max_lanes_per_intersection(self) -> int:
        return max(len(self.in_lanes[v]) for v in self.internal_ids)

    def lane_approach(self, lane: int) -> Approach:
        return self.approaches[self.lanes[lane].approach_id]

    def lane_to_intersection(self, lane: int) -> int:
        return self.lane_end[lane]

    def capacities(self) -> np.ndarray:
        return np.array([ln.capacity for ln in self.lanes], dtype=np.int64)

    def lengths(self) -> np.ndarray:
        return np.array([ln.length for ln in self.lanes], dtype=float)

    def lane_rates(self) -> np.ndarray:
        """Per incoming lane discharge rate; requires one movement per lane."""
        out = np.zeros(self.n_in)
        for lid in self.incoming:
            mvs = self.lane_movements[lid]
            if len(mvs) != 1:
                raise ValueError(f"lane {lid} has {len(mvs)} movements; rate is per movement")
            out[lid] = self.movements[mvs[0]].rate
        return out

    def green_lanes(self, phases: Mapping[int, Optional[int]]) -> np.ndarray:
        """a(l) for every incoming lane; ``None`` is all-red (right turns only)."""
        a = np.zeros(self.n_in)
        for v in self.internal_ids:
            p = phases.get(v)
            for lid in self.in_lanes[v]:
                mvs = [self.movements[m] for m in self.lane_movements[lid]]
                if p is None:
                    ok = all(m.turn == RIGHT for m in mvs)
                else:
                    ok = lid in self.phase_table[v][p].permitted_lanes
                a[lid] = 1.0 if ok else 0.0
        return a

    def __repr__(self) -> str:
        return (
            f"Network(internal={len(self.internal_ids)}, "
            f"external={len(self.intersections) - len(self.internal_ids)}, "
            f"lanes={self.n_lanes}, incoming={self.n_in}, movements={len(self.movements)})"
        )


def _phase_table(
    internal: Sequence[int],
    approaches: Sequence[Approach],
    lanes: Sequence[Lane],
    movements: Sequence[Movement],
) -> Dict[int, List[Phase]]:
    table = {}
    for v in internal:
        mine = [m for m in movements if m.intersection == v]
        phases = []
        for name in PHASE_NAMES:
            vertical = name.startswith("NS")
            turn = LEFT if name.endswith("L") else STRAIGHT
            ok = set()
            for m in mine:
                heading = approaches[lanes[m.from_lane].approach_id].heading
                if m.turn == RIGHT or (m.turn == turn and (heading[1] == 0) == vertical):
                    ok.add(m.id)
            ok_lanes = {m.from_lane for m in mine if m.id in ok}
            phases.append(Phase(name, frozenset(ok), frozenset(ok_lanes)))
        table[v] = phases
    return table


def build_network_from_graph(
    nodes: Sequence[Tuple[float, float, bool]],
    edges: Sequence[Tuple[int, int]],
    lanes_per_approach: int = 3,
    length_fn=None,
    discharge_rate_vps: float = 1.0,
    lane_capacity: Optional[int] = None,
    rate_jitter: float = 0.0,
    jitter_seed: int = 0,
) -> Network:
    """Build a network from node coordinates ``(row, col, internal)`` and directed edges.

    Edges must be axis-aligned so turns can be classified. ``length_fn(heading)``
    returns the approach length for a travel heading.
    """
    if length_fn is None:
        length_fn = lambda heading: 300.0  # noqa: E731
    intersections = [Intersection(i, (r, c), bool(internal)) for i, (r, c, internal) in enumerate(nodes)]
    rng = np.random.default_rng(jitter_seed)

    def unit(a, b):
        (r0, c0), (r1, c1) = intersections[a].pos, intersections[b].pos
        dr, dc = np.sign(r1 - r0), np.sign(c1 - c0)
        if (dr != 0) == (dc != 0):
            raise SpecError([f"edge ({a}, {b}) is not axis-aligned"])
        return int(dr), int(dc)

    def kind(a, b):
        s, e = intersections[a].internal, intersections[b].internal
        if s and e:
            return "internal"
        if e:
            return "entry"
        if s:
            return "exit"
        raise SpecError([f"edge ({a}, {b}) joins two external intersections"])

    # incoming approaches first so incoming lane ids are dense
    ordered = sorted(edges, key=lambda e: (kind(*e) == "exit", e))
    turns = default_lane_turns(lanes_per_approach)
    approaches: List[Approach] = []
    lanes: List[Lane] = []
    for aid, (a, b) in enumerate(ordered):
        heading = unit(a, b)
        k = kind(a, b)
        length = float(length_fn(heading))
        cap = lane_capacity if lane_capacity is not None else int(length // JAM_SPACING_M)
        ids = []
        for idx in range(lanes_per_approach):
            lid = len(lanes)
            lanes.append(Lane(lid, aid, idx, length, cap, k == "entry", turns[idx]))
            ids.append(lid)
        approaches.append(Approach(aid, a, b, heading, k, tuple(ids)))

    by_start_heading = {(ap.start, ap.heading): ap for ap in approaches}
    movements: List[Movement] = []
    for ap in approaches:
        if ap.kind == "exit":
            continue
        v = ap.end
        for lid in ap.lane_ids:
            for turn in lanes[lid].turns:
                out = by_start_heading.get((v, _turn_heading(ap.heading, turn)))
                if out is None:
                    continue
                to = out.lane_ids[_target_lane_index(turn, len(out.lane_ids))]
                rate = discharge_rate_vps
                if rate_jitter:
                    rate *= 1.0 + rng.uniform(-rate_jitter, rate_jitter)
                movements.append(Movement(len(movements), lid, to, turn, rate, v))

    internal = [v.id for v in intersections if v.internal]
    table = _phase_table(internal, approaches, lanes, movements)
    return Network(intersections, approaches, lanes, movements, table)


def build_network(spec: NetworkSpec) -> Network:
    """Rectangular grid of ``rows x cols`` internal intersections ringed by external ones."""
    problems = spec.problems()
    if problems:
        raise SpecError(problems)
    r, c = spec.rows, spec.cols
    nodes: List[Tuple[float, float, bool]] = []
    index: Dict[Tuple[int, int], int] = {}
    for i in range(r):
        for j in range(c):
            index[(i, j)] = len(nodes)
            nodes.append((i, j, True))
    ring = [(-1, j) for j in range(c)] + [(r, j) for j in range(c)]
    ring += [(i, -1) for i in range(r)] + [(i, c) for i in range(r)]
    for p in ring:
        index[p] = len(nodes)
        nodes.append((p[0], p[1], False))

    edges = []
    for (i, j), a in index.items():
        if not nodes[a][2]:
            continue
        for di, dj in (NORTH, SOUTH, EAST, WEST):
            b = index.get((i + di, j + dj))
            if b is not None:
                edges.append((a, b))
                if not nodes[b][2]:
                    edges.append((b, a))

    def length(heading):
        return spec.approach_length_ew_m if heading[0] == 0 else spec.approach_length_ns_m

    return build_network_from_graph(
        nodes,
        edges,
        lanes_per_approach=spec.lanes_per_approach,
        length_fn=length,
        discharge_rate_vps=spec.discharge_rate_vps,
        lane_capacity=spec.lane_capacity,
        rate_jitter=spec.rate_jitter,
        jitter_seed=spec.jitter_seed,
    )


# ---------------------------------------------------------------- matrices


def movement_matrix(net: Network, f1: Sequence[int], f2: Sequence[int]) -> np.ndarray:
    """m(k, l) = 1 iff (k, l) is a movement, over lane lists ``f1`` x ``f2``."""
    f1, f2 = list(f1), list(f2)
    out = np.zeros((len(f1), len(f2)))
    col = {lid: j for j, lid in enumerate(f2)}
    row = {lid: i for i, lid in enumerate(f1)}
    for m in net.movements:
        if m.from_lane in row and m.to_lane in col:
            out[row[m.from_lane], col[m.to_lane]] = 1.0
    return out


@dataclass
class RoutingConfig:
    """Lane-change shares applied when a vehicle enters an approach.

    ``lane_rows`` pins explicit rows: ``{lane_id: [share per lane of its approach]}``.
    ``approach_turn_shares`` overrides turn shares per approach id. With ``seed`` set,
    each approach draws its own turn shares from a Dirichlet centred on ``turn_shares``.
    """

    turn_shares: Tuple[float, float, float] = (0.1, 0.6, 0.3)
    approach_turn_shares: Dict[int, Tuple[float, float, float]] = field(default_factory=dict)
    lane_rows: Dict[int, Sequence[float]] = field(default_factory=dict)
    seed: Optional[int] = None
    concentration: float = 50.0


def approach_turn_shares(net: Network, cfg: RoutingConfig) -> Dict[int, Tuple[float, float, float]]:
    rng = np.random.default_rng(cfg.seed) if cfg.seed is not None else None
    out = {}
    for ap in net.approaches:
        shares = cfg.approach_turn_shares.get(ap.id)
        if shares is None:
            shares = tuple(cfg.turn_shares)
            if rng is not None:
                alpha = np.maximum(np.array(shares) * cfg.concentration, 1e-3)
                shares = tuple(float(x) for x in rng.dirichlet(alpha))
        if len(shares) != 3 or any(s < 0 for s in shares) or abs(sum(shares) - 1) > 1e-9:
            raise SpecError([f"turn shares for approach {ap.id} must be 3 non-negative values summing to 1"])
        out[ap.id] = tuple(shares)
    return out


def routing_proportion_matrix(net: Network, cfg: Optional[RoutingConfig] = None) -> np.ndarray:
    """rp(l, l') over incoming lanes; nonzero only within an approach, rows sum to 1.

    A vehicle arriving on lane ``l`` moves to the lane serving its next turn, so a
    turn-derived row is the turn split spread over the lanes serving each turn.
    """
    cfg = cfg or RoutingConfig()
    shares = approach_turn_shares(net, cfg)
    n = net.n_in
    rp = np.zeros((n, n))
    for ap in net.approaches:
        if ap.kind == "exit":
            continue
        ids = ap.lane_ids
        split = dict(zip(TURNS, shares[ap.id]))
        # a turn with no exit (network edge) keeps its share on the lanes that serve it
        base = np.zeros(len(ids))
        for turn in TURNS:
            serving = [k for k, lid in enumerate(ids) if turn in net.lanes[lid].turns]
            for k in serving:
                base[k] += split[turn] / len(serving)
        for k, lid in enumerate(ids):
            row = cfg.lane_rows.get(lid)
            if row is None:
                row = base
            row = np.asarray(row, dtype=float)
            if row.shape != (len(ids),) or (row < 0).any() or abs(row.sum() - 1.0) > 1e-9:
                raise SpecError([f"routing row for lane {lid} must be {len(ids)} shares summing to 1"])
            rp[lid, list(ids)] = row
    return rp


def adjacency_lanes(net: Network) -> np.ndarray:
    """adj(l, l') = 1 iff incoming lanes l and l' share an approach (diagonal included)."""
    n = net.n_in
    adj = np.zeros((n, n))
    for ap in net.approaches:
        if ap.kind == "exit":
            continue
        ids = list(ap.lane_ids)
        adj[np.ix_(ids, ids)] = 1.0
    return adj


def naive_movement_mask(net: Network) -> np.ndarray:
    lanes = list(net.incoming)
    m = movement_matrix(net, lanes, lanes)
    return np.clip(m + m.T + np.eye(len(lanes)), 0.0, 1.0)


def augmented_movement_mask(net: Network) -> np.ndarray:
    return np.clip(naive_movement_mask(net) + adjacency_lanes(net), 0.0, 1.0)


def intersection_adjacency(net: Network) -> np.ndarray:
    """m(v, u) = 1 iff (v, u) is an internal approach; unit diagonal kept."""
    ids = net.internal_ids
    out = np.eye(len(ids))
    for a in net.approaches:
        if a.kind == "internal":
            out[net.internal_index[a.start], net.internal_index[a.end]] = 1.0
    return out


def mask_nnz(mask: np.ndarray) -> int:
    """Number of ones in an attention mask (the edge count driving attention cost)."""
    return int(np.count_nonzero(mask))


def lane_mask(net: Network, kind: str) -> np.ndarray:
    if kind == "naive":
        return naive_movement_mask(net)
    if kind == "aug":
        return augmented_movement_mask(net)
    raise ValueError(f"unknown mask kind {kind!r}")
