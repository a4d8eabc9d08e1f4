"""Independent reference implementations used only by the tests.

Nothing here imports the package's matrix builders or layers; each function
recomputes its quantity straight from the definition.
"""

from __future__ import annotations

import math
from typing import Dict, List, Tuple

import numpy as np

HEADINGS = {"N": (-1, 0), "S": (1, 0), "E": (0, 1), "W": (0, -1)}


def _turn(h: Tuple[int, int], turn: str) -> Tuple[int, int]:
    di, dj = h
    if turn == "straight":
        return h
    if turn == "left":
        return (-dj, di)
    return (dj, -di)


def grid_movement_counts(rows: int, cols: int) -> Dict[str, int]:
    """Brute-force movement counts on a grid with one lane per turn (3 lanes per approach).

    ``internal_links`` counts movements whose receiving lane ends at an internal
    intersection (i.e. links between two incoming lanes).
    """
    inside = lambda i, j: 0 <= i < rows and 0 <= j < cols
    total = internal_links = 0
    for i in range(rows):
        for j in range(cols):
            for h in HEADINGS.values():  # heading of travel on the incoming approach
                for turn in ("left", "straight", "right"):
                    o = _turn(h, turn)
                    total += 1
                    if inside(i + o[0], j + o[1]):
                        internal_links += 1
    return {"movements": total, "internal_links": internal_links}


def grid_adjacent_pairs(rows: int, cols: int, lanes: int) -> int:
    """Ordered off-diagonal same-approach lane pairs over incoming approaches."""
    approaches = 4 * rows * cols  # every internal intersection has 4 incoming approaches
    return approaches * lanes * (lanes - 1)


def leaky(x: float, slope: float = 0.2) -> float:
    return x if x > 0 else slope * x


def gat_reference(h: np.ndarray, mask: np.ndarray, W: np.ndarray, a: np.ndarray, slope: float = 0.2) -> np.ndarray:
    """Per-definition multi-head GAT with explicit loops.

    ``W`` is (K, F', F) and ``a`` is (K, 2F'). Output row i is the concatenation
    over heads of sum_{j in N(i)} alpha_ij W^k h_j.
    """
    K, Fp, F = W.shape
    N = h.shape[0]
    out = np.zeros((N, K * Fp))
    for k in range(K):
        wh = [[sum(W[k, p, q] * h[j, q] for q in range(F)) for p in range(Fp)] for j in range(N)]
        for i in range(N):
            nbrs = [j for j in range(N) if mask[i, j]]
            if not nbrs:
                raise ValueError("node without neighbours")
            scores = {}
            for j in nbrs:
                s = sum(a[k, p] * wh[i][p] for p in range(Fp)) + sum(a[k, Fp + p] * wh[j][p] for p in range(Fp))
                scores[j] = leaky(s, slope)
            top = max(scores.values())
            ex = {j: math.exp(s - top) for j, s in scores.items()}
            z = sum(ex.values())
            for p in range(Fp):
                out[i, k * Fp + p] = sum(ex[j] / z * wh[j][p] for j in nbrs)
    return out


def softmax_jacobian_action(alpha_row: np.ndarray, g_row: np.ndarray) -> np.ndarray:
    """J^T g for a softmax row: diag(a) g - a (a . g)."""
    return alpha_row * g_row - alpha_row * float(alpha_row @ g_row)


def snf_lane_reference(X, A, C, down: Dict[int, int], cap, rp, approach_lanes: List[List[int]], entry, d):
    """Scalar per-lane SNF update: leave, arrive via routing, add demand on entry lanes."""
    n = len(X)
    leave = []
    for l in range(n):
        m = down[l]
        ok = m >= n or X[m] < cap[m]
        leave.append(min(C[l] * A[l], X[l]) if ok else 0.0)
    new = [X[l] - leave[l] for l in range(n)]
    lane_group = {}
    for grp in approach_lanes:
        for l in grp:
            lane_group[l] = grp
    for l in range(n):
        if entry[l]:
            new[l] += d[l]
            continue
        for lp in lane_group[l]:
            inflow = sum(leave[k] for k in range(n) if down[k] == lp)
            new[l] += inflow * rp[lp][l]
    return np.array(new)
