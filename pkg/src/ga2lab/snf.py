"""Store-and-forward lane accounting: a fractional-flow simulator and the matrix-form update.

The two paths are written independently. ``FluidSimulator`` walks lanes one at a
time using the per-lane queue update; ``snf_update_oracle`` evaluates the
regional decomposition ``X' = X + Intra + Inter + External`` with matrices.

Blockage rule used by both: a movement (l, m) may discharge only while its
receiving lane is not full, ``wave(m) < wave_max(m)``. Exit lanes never block.
"""

from __future__ import annotations

from typing import Dict, Optional, Sequence

import numpy as np

from .network import Network, movement_matrix


def lane_full(net: Network, wave: np.ndarray) -> np.ndarray:
    """Boolean per lane (all lanes); exit lanes are never full."""
    full = np.zeros(net.n_lanes, dtype=bool)
    cap = net.capacities()[: net.n_in]
    full[: net.n_in] = np.asarray(wave[: net.n_in]) >= cap
    return full


def blockage_matrix(net: Network, wave: np.ndarray, f1: Sequence[int], f2: Sequence[int]) -> np.ndarray:
    """bm(k, l) = 1 iff (k, l) is a movement and lane l can still take vehicles.

    Rows are upstream lanes ``f1``, columns receiving lanes ``f2``. ``wave`` is a
    vector over all lanes.
    """
    m = movement_matrix(net, f1, f2)
    full = lane_full(net, wave)
    open_cols = ~full[list(f2)] if len(f2) else np.zeros(0, dtype=bool)
    return m * open_cols[None, :]


def _check_inputs(X, RP):
    if np.any(np.asarray(X) < 0):
        raise ValueError("queue vector has negative entries")
    rows = np.asarray(RP).sum(axis=1)
    if RP.size and (np.any(np.asarray(RP) < 0) or not np.allclose(rows, 1.0, atol=1e-12, rtol=0)):
        raise ValueError("routing-proportion rows must be non-negative and sum to 1")


def snf_decomposition(
    X: np.ndarray,
    A: np.ndarray,
    C: np.ndarray,
    RP: np.ndarray,
    M: np.ndarray,
    BM: np.ndarray,
    external_d: np.ndarray,
    region: Optional[np.ndarray] = None,
) -> Dict[str, np.ndarray]:
    """Intra, Inter and External terms for the incoming lanes of a region.

    ``X, A, C, external_d`` are vectors over the n incoming lanes; ``RP`` is n x n;
    ``M`` and ``BM`` are n x n_all (columns include exit lanes, incoming lanes first).
    ``region`` is a boolean mask over incoming lanes (default: every lane).
    """
    X, A, C, d = (np.asarray(v, dtype=float) for v in (X, A, C, external_d))
    n = X.shape[0]
    if RP.shape != (n, n) or M.shape[0] != n or BM.shape != M.shape or M.shape[1] < n:
        raise ValueError("matrix shapes are inconsistent with the lane vector")
    if A.shape != (n,) or C.shape != (n,) or d.shape != (n,):
        raise ValueError("vector shapes are inconsistent with the lane vector")
    _check_inputs(X, RP)
    F = np.ones(n, dtype=bool) if region is None else np.asarray(region, dtype=bool)
    Fp = ~F

    x_hat = np.minimum(C * A, X)
    # vehicles routed onto each incoming lane per unit leaving upstream lane
    m_hat = BM[:, :n] @ RP
    leaves = BM.sum(axis=1)

    intra = x_hat[F] @ m_hat[np.ix_(F, F)] - x_hat[F] * leaves[F]
    inter = x_hat[Fp] @ m_hat[np.ix_(Fp, F)]
    external = d[F]
    return {"intra": intra, "inter": inter, "external": external, "x_hat": x_hat}


def snf_update_oracle(X, A, C, RP, M, BM, external_d, region=None) -> np.ndarray:
    """X'(F_in) = X(F_in) + Intra + Inter + External (pure)."""
    parts = snf_decomposition(X, A, C, RP, M, BM, external_d, region)
    F = np.ones(len(X), dtype=bool) if region is None else np.asarray(region, dtype=bool)
    return np.asarray(X, dtype=float)[F] + parts["intra"] + parts["inter"] + parts["external"]


class FluidSimulator:
    """Real-valued lane queues evolved lane by lane.

    Requires one movement per incoming lane (the queue model gives each lane a
    unique downstream lane).
    """

    def __init__(self, net: Network, rp: np.ndarray, X0: Optional[np.ndarray] = None):
        self.net = net
        self.rp = np.asarray(rp, dtype=float)
        n = net.n_in
        self.X = np.zeros(n) if X0 is None else np.asarray(X0, dtype=float).copy()
        self.cap = [ln.capacity for ln in net.lanes]
        self.down: Dict[int, int] = {}
        self.rate: Dict[int, float] = {}
        for lid in range(n):
            mvs = net.lane_movements[lid]
            if len(mvs) != 1:
                raise ValueError(f"lane {lid} has {len(mvs)} movements; the fluid model needs exactly one")
            mv = net.movements[mvs[0]]
            self.down[lid] = mv.to_lane
            self.rate[lid] = mv.rate
        # feeders[l'] = upstream lanes whose movement ends on lane l'
        self.feeders: Dict[int, list] = {lid: [] for lid in range(net.n_lanes)}
        for k, m in self.down.items():
            self.feeders[m].append(k)

    def wave(self) -> np.ndarray:
        out = np.zeros(self.net.n_lanes)
        out[: self.net.n_in] = self.X
        return out

    def step(self, A: np.ndarray, d: Optional[np.ndarray] = None) -> np.ndarray:
        net, X = self.net, self.X
        n = net.n_in
        d = np.zeros(n) if d is None else d
        if np.any(X < 0):
            raise ValueError("queue vector has negative entries")

        leave = {}
        for l in range(n):
            m = self.down[l]
            open_ = m >= n or X[m] < self.cap[m]
            leave[l] = min(self.rate[l] * A[l], X[l]) if open_ else 0.0

        new = X.copy()
        for l in range(n):
            lane = net.lanes[l]
            new[l] -= leave[l]
            if lane.is_entry:
                new[l] += d[l]
                continue
            # vehicles landing on any lane l' of this approach, then a share r(l', l) moves to l
            for lp in net.approaches[lane.approach_id].lane_ids:
                arriving = sum(leave[k] for k in self.feeders[lp])
                new[l] += arriving * self.rp[lp, l]
        self.X = new
        return new.copy()
