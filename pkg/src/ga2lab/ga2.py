"""Centralised lane-level and intersection-level GAT stacks, regrouped per region."""

from __future__ import annotations

from typing import List, Optional, Sequence, Tuple

import numpy as np

from .network import Network, intersection_adjacency, lane_mask
from .nn import GATLayer, Module, Tensor, concat, leaky_relu
from .partition import Region


class GATStack(Module):
    """GAT layers applied in sequence with one shared mask, leaky ReLU after each."""

    def __init__(self, f_in: int, widths: Sequence[int], heads: int, rng: np.random.Generator):
        self.layers = []
        for w in widths:
            self.layers.append(GATLayer(f_in, w, heads, rng))
            f_in = w * heads
        self.out_width = f_in

    def __call__(self, h, mask: np.ndarray) -> Tensor:
        h = h if isinstance(h, Tensor) else Tensor(h)
        for layer in self.layers:
            h = leaky_relu(layer(h, mask))
        return h


class GA2(Module):
    """Communication module shared by all regional agents.

    ``S_lane`` is (..., |L_in|, B) cell counts; ``S_itsx`` is (..., |V_int|, 2*max|In_v|)
    wait/wave rows. The two stacks do not share weights. Raw vehicle counts are
    multiplied by ``state_scale`` before the first attention layer.
    """

    def __init__(
        self,
        net: Network,
        regions: Sequence[Region],
        cells: int = 5,
        heads: int = 8,
        hidden: Tuple[int, ...] = (8, 16),
        mask: str = "naive",
        rng: Optional[np.random.Generator] = None,
        state_scale: float = 1.0,
    ):
        if state_scale <= 0:
            raise ValueError(f"state_scale must be > 0 (got {state_scale})")
        rng = rng or np.random.default_rng(0)
        self.state_scale = float(state_scale)
        self.cells, self.heads, self.hidden, self.mask_kind = cells, heads, tuple(hidden), mask
        self.lane_mask = lane_mask(net, mask)
        self.itsx_mask = intersection_adjacency(net)
        self.max_lanes = net.max_lanes_per_intersection
        self.n_lanes = net.n_in
        self.n_itsx = len(net.internal_ids)
        self.lane_stack = GATStack(cells, hidden, heads, rng)
        self.itsx_stack = GATStack(2 * self.max_lanes, hidden, heads, rng)
        self.lane_width = self.lane_stack.out_width
        self.itsx_width = self.itsx_stack.out_width
        self.set_regions(net, regions)

    def set_regions(self, net: Network, regions: Sequence[Region]) -> None:
        slots = max(len(r.slots) for r in regions)
        self.slots = slots
        lane_idx = np.full((len(regions), slots * self.max_lanes), self.n_lanes, dtype=np.int64)
        itsx_idx = np.full((len(regions), slots), self.n_itsx, dtype=np.int64)
        valid = np.zeros((len(regions), slots), dtype=bool)
        for r, reg in enumerate(regions):
            for s, v in enumerate(reg.slots):
                if v is None:
                    continue
                if v not in net.internal_index:
                    raise ValueError(f"region {reg.id} references unknown intersection {v}")
                lanes = net.in_lanes[v]
                lane_idx[r, s * self.max_lanes : s * self.max_lanes + len(lanes)] = lanes
                itsx_idx[r, s] = net.internal_index[v]
                valid[r, s] = True
        self.lane_idx, self.itsx_idx, self.valid = lane_idx, itsx_idx, valid
        self.regions = list(regions)

    @property
    def obs_width(self) -> int:
        return self.slots * (self.max_lanes * self.lane_width + self.itsx_width)

    def embed_lane_states(self, s_lane) -> Tensor:
        s_lane = np.asarray(s_lane.data if isinstance(s_lane, Tensor) else s_lane, dtype=float)
        if s_lane.shape[-2:] != (self.n_lanes, self.cells):
            raise ValueError(f"lane state shape {s_lane.shape[-2:]} != {(self.n_lanes, self.cells)}")
        return self.lane_stack(s_lane * self.state_scale, self.lane_mask)

    def embed_itsx_states(self, s_itsx) -> Tensor:
        s_itsx = np.asarray(s_itsx.data if isinstance(s_itsx, Tensor) else s_itsx, dtype=float)
        if s_itsx.shape[-2:] != (self.n_itsx, 2 * self.max_lanes):
            raise ValueError(f"intersection state shape {s_itsx.shape[-2:]} != {(self.n_itsx, 2 * self.max_lanes)}")
        return self.itsx_stack(s_itsx * self.state_scale, self.itsx_mask)

    def build_observations(self, h_lane: Tensor, h_itsx: Tensor) -> Tensor:
        """(..., R, obs_width): per region, lane blocks of every slot then intersection blocks.

        Dummy slots and missing lanes gather an appended zero row.
        """
        lead = h_lane.shape[:-2]
        zl = Tensor(np.zeros(lead + (1, self.lane_width)))
        zi = Tensor(np.zeros(lead + (1, self.itsx_width)))
        lanes = concat([h_lane, zl], axis=-2).take(self.lane_idx, axis=-2)  # (..., R, S*Lmax, D)
        itsx = concat([h_itsx, zi], axis=-2).take(self.itsx_idx, axis=-2)  # (..., R, S, D)
        n_reg = self.lane_idx.shape[0]
        lanes = lanes.reshape(*lead, n_reg, self.slots * self.max_lanes * self.lane_width)
        itsx = itsx.reshape(*lead, n_reg, self.slots * self.itsx_width)
        return concat([lanes, itsx], axis=-1)

    def __call__(self, s_lane, s_itsx) -> Tensor:
        return self.build_observations(self.embed_lane_states(s_lane), self.embed_itsx_states(s_itsx))

