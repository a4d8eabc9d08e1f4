"""Disjoint star-shaped regions over internal intersections, and their padding."""

from __future__ import annotations

from dataclasses import dataclass
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence

import numpy as np
import yaml

from .network import Network, SpecError

STRATEGIES = ("greedy", "random", "min", "singleton")


@dataclass
class Region:
    id: int
    center: int
    members: List[int]  # center first
    padding: int = 0

    @property
    def size(self) -> int:
        return len(self.members)

    @property
    def slots(self) -> List[Optional[int]]:
        return list(self.members) + [None] * self.padding


@dataclass
class PartitionConfig:
    max_region_size: int = 4
    strategy: str = "greedy"
    seed: int = 0
    layout: Optional[Dict[int, List[int]]] = None  # pinned ``region_id: [intersection ids]``
    node_budget: int = 200_000

    def problems(self) -> List[str]:
        out = []
        if self.max_region_size < 1:
            out.append(f"max_region_size must be >= 1 (got {self.max_region_size})")
        if self.strategy not in STRATEGIES:
            out.append(f"unknown partition strategy {self.strategy!r}")
        return out


def _star_center(net: Network, members: Sequence[int]) -> Optional[int]:
    ms = set(members)
    for v in members:
        if ms - {v} <= set(net.neighbors.get(v, ())):
            return v
    return None


def regions_from_layout(net: Network, layout: Mapping[int, Sequence[int]]) -> List[Region]:
    out = []
    for rid in sorted(layout):
        members = [int(v) for v in layout[rid]]
        center = _star_center(net, members)
        if center is None:
            center = members[0] if members else -1
        ordered = [center] + [v for v in members if v != center] if members else []
        out.append(Region(int(rid), center, ordered))
    return out


def _greedy(net: Network, max_size: int, order: Sequence[int], rng=None) -> List[Region]:
    taken = set()
    regions = []
    for v in order:
        if v in taken:
            continue
        free = [u for u in net.neighbors[v] if u not in taken]
        if rng is not None:
            k = int(rng.integers(0, min(len(free), max_size - 1) + 1))
            free = list(rng.permutation(free))[:k]
        else:
            free = free[: max_size - 1]
        members = [v] + [int(u) for u in free]
        taken.update(members)
        regions.append(Region(len(regions), v, members))
    return regions


def _min_regions(net: Network, max_size: int, budget: int) -> List[Region]:
    """Branch and bound for a fewest-region star partition.

    The first uncovered intersection (id order) must join some star; candidate
    stars are enumerated largest first. Falls back to the best partition found
    when the node budget runs out.
    """
    ids = sorted(net.internal_ids)
    nbrs = {v: set(net.neighbors[v]) for v in ids}
    best: List[List[int]] = [[v] for v in ids]
    if max_size == 1:
        return [Region(i, v, [v]) for i, v in enumerate(ids)]
    nodes = 0

    def candidates(v, free):
        out = []
        for c in [v] + sorted(nbrs[v]):
            if c not in free:
                continue
            pool = sorted(u for u in nbrs[c] if u in free and u != v and u != c)
            base = [c] if c == v else [c, v]
            room = max_size - len(base)
            for k in range(min(room, len(pool)), -1, -1):
                for extra in combinations(pool, k):
                    out.append(base + list(extra))
        out.sort(key=len, reverse=True)
        return out

    def search(free: frozenset, chosen: List[List[int]]):
        nonlocal best, nodes
        nodes += 1
        if nodes > budget:
            return
        if not free:
            if len(chosen) < len(best):
                best = [list(r) for r in chosen]
            return
        if len(chosen) + -(-len(free) // max_size) >= len(best):
            return
        v = min(free)
        for reg in candidates(v, free):
            chosen.append(reg)
            search(free - set(reg), chosen)
            chosen.pop()

    search(frozenset(ids), [])
    return [Region(i, r[0], r) for i, r in enumerate(best)]


def partition(net: Network, config: Optional[PartitionConfig] = None) -> List[Region]:
    config = config or PartitionConfig()
    problems = config.problems()
    if problems:
        raise SpecError(problems)
    if config.layout is not None:
        regions = regions_from_layout(net, config.layout)
    elif config.strategy == "singleton" or config.max_region_size == 1:
        regions = [Region(i, v, [v]) for i, v in enumerate(net.internal_ids)]
    elif config.strategy == "greedy":
        regions = _greedy(net, config.max_region_size, net.internal_ids)
    elif config.strategy == "random":
        rng = np.random.default_rng(config.seed)
        order = [int(v) for v in rng.permutation(list(net.internal_ids))]
        regions = _greedy(net, config.max_region_size, order, rng)
    else:
        regions = _min_regions(net, config.max_region_size, config.node_budget)
    violations = validate_partition(net, regions, config.max_region_size)
    if violations:
        raise SpecError(violations)
    return regions


def validate_partition(net: Network, regions: Sequence[Region], max_region_size: Optional[int] = None) -> List[str]:
    """Diagnostics for coverage, disjointness and star shape; empty list means valid."""
    out = []
    seen: Dict[int, int] = {}
    internal = set(net.internal_ids)
    for reg in regions:
        if not reg.members:
            out.append(f"region {reg.id}: empty")
            continue
        if max_region_size is not None and reg.size > max_region_size:
            out.append(f"region {reg.id}: size {reg.size} exceeds {max_region_size}")
        for v in reg.members:
            if v not in internal:
                out.append(f"region {reg.id}: {v} is not an internal intersection")
            if v in seen:
                out.append(f"region {reg.id}: duplicate member {v} (also in region {seen[v]})")
            seen.setdefault(v, reg.id)
        if len(set(reg.members)) == len(reg.members) and _star_center(net, reg.members) is None:
            out.append(f"region {reg.id}: non-star, no member is adjacent to all others")
    for v in sorted(internal - set(seen)):
        out.append(f"uncovered intersection {v}")
    return out


def pad_regions(regions: Sequence[Region], max_region_size: int, max_lanes_per_intersection: int) -> List[Region]:
    """Append dummy slots so every region exposes ``max_region_size`` slots."""
    if max_lanes_per_intersection < 1:
        raise ValueError("max_lanes_per_intersection must be >= 1")
    out = []
    for reg in regions:
        if reg.size > max_region_size:
            raise ValueError(f"region {reg.id} has {reg.size} members, more than {max_region_size}")
        out.append(Region(reg.id, reg.center, list(reg.members), max_region_size - reg.size))
    return out


def dump_layout(regions: Sequence[Region]) -> str:
    return yaml.safe_dump({int(r.id): [int(v) for v in r.members] for r in regions}, default_flow_style=None, sort_keys=True)


def load_layout(text: str) -> Dict[int, List[int]]:
    data = yaml.safe_load(text) or {}
    return {int(k): [int(v) for v in vs] for k, vs in data.items()}
