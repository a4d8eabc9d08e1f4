"""The ten acceptance criteria, one test each, at their stated tolerances.

Every test prints a ``criterion N: PASS|FAIL|WARN ...`` line (also collected in
the terminal summary). Criteria 8-10 train and evaluate agents on the desk
scenario and take most of the suite's wall-clock time; results are shared
between them through a per-session cache keyed by config hash.
"""

import copy
import time
import warnings

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, ROOT
from ga2lab.agents import Learner, LearnerConfig, ReplayBuffer, Transition
from ga2lab.demand import DemandSpec, generate_synthetic_demand
from ga2lab.experiment import ExperimentConfig, run_experiment
from ga2lab.ga2 import GA2
from ga2lab.network import NetworkSpec, build_network
from ga2lab.nn import GATLayer, Tensor, grad_check, gat_forward
from ga2lab.partition import (PartitionConfig, load_layout, pad_regions, partition, regions_from_layout,
                              validate_partition)
from ga2lab.sim import Simulator, lane_cell_counts
from ga2lab.snf import FluidSimulator, snf_update_oracle
from snf_helpers import random_snf_inputs


def report(n, ok, detail, soft=False):
    status = "PASS" if ok else ("WARN" if soft else "FAIL")
    line = f"criterion {n}: {status} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    if not ok and soft:
        warnings.warn(line)
    return ok


_RUNS = {}


def desk_run(**changes):
    cfg = ExperimentConfig.load(ROOT / "configs" / "desk.yaml").replace(**changes)
    key = cfg.config_hash()
    if key not in _RUNS:
        _RUNS[key] = run_experiment(cfg, write=False)
    return _RUNS[key]


# ---------------------------------------------------------------- 1


def test_criterion_1_conservation():
    t0 = time.perf_counter()
    worst = 0
    scenarios = [((1, 2), 500), ((2, 2), 900)]
    for shape, vph in scenarios:
        net = build_network(NetworkSpec(*shape))
        sim = Simulator(net, generate_synthetic_demand(net, vph, seed=1), seed=1)
        ctl = np.random.default_rng(2)
        for k in range(10_000):
            if k % 20 == 0:
                sim.apply_action([int(p) for p in ctl.integers(0, 4, len(net.internal_ids))])
            sim.step()
            worst = max(worst, abs(sim.entered - sim.exited - sim.on_network))
    dt = time.perf_counter() - t0
    ok = worst == 0 and dt < 10 * len(scenarios)
    report(1, ok, f"max |entered - exited - on_network| = {worst} over 10000 steps x {len(scenarios)} scenarios "
                  f"({dt:.1f} s, {dt / len(scenarios):.1f} s per scenario)")
    assert worst == 0 and dt / len(scenarios) < 10


# ---------------------------------------------------------------- 2


def test_criterion_2_snf_oracle_equivalence():
    t0 = time.perf_counter()
    worst = 0.0
    for shape in ((1, 2), (2, 2)):
        net = build_network(NetworkSpec(*shape))
        rng = np.random.default_rng(2024)
        for trial in range(100):
            X, A, C, rp, M, BM, d = random_snf_inputs(net, rng, rp_seed=trial)
            fs = FluidSimulator(net, rp, X)
            fs.rate = {l: C[l] for l in range(net.n_in)}
            worst = max(worst, float(np.max(np.abs(fs.step(A, d) - snf_update_oracle(X, A, C, rp, M, BM, d)))))
    dt = time.perf_counter() - t0
    report(2, worst <= 1e-9 and dt < 5, f"max abs error {worst:.2e} over 2 x 100 steps ({dt:.2f} s)")
    assert worst <= 1e-9 and dt < 5


# ---------------------------------------------------------------- 3


def test_criterion_3_gat_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(3)
    row_err, masked_leak, shape_ok, bitwise = 0.0, 0.0, True, True
    for trial in range(30):
        n = int(rng.integers(2, 16))
        mask = (rng.random((n, n)) < 0.4).astype(float)
        mask = np.clip(mask + mask.T + np.eye(n), 0, 1)
        for heads in (1, 5, 8):
            layer = GATLayer(6, 4, heads, rng)
            h = rng.normal(size=(n, 6))
            alpha, _ = layer.attention(Tensor(h), mask)
            row_err = max(row_err, float(np.max(np.abs(alpha.data.sum(-1) - 1))))
            masked_leak = max(masked_leak, float(np.max(np.abs(alpha.data[:, mask == 0]), initial=0.0)))
            out = gat_forward(h, mask, layer)
            shape_ok &= out.shape == (n, heads * 4)
            perm = rng.permutation(n)
            ref = gat_forward(h, mask, layer, exact=True)
            permuted = gat_forward(h[perm], mask[np.ix_(perm, perm)], layer, exact=True)
            bitwise &= np.array_equal(permuted[np.argsort(perm)], ref)
    dt = time.perf_counter() - t0
    ok = row_err <= 1e-9 and masked_leak == 0.0 and shape_ok and bitwise and dt < 5
    report(3, ok, f"row-sum error {row_err:.1e}, masked max {masked_leak}, shapes {shape_ok}, "
                  f"bitwise equivariant {bitwise} ({dt:.2f} s)")
    assert ok


# ---------------------------------------------------------------- 4


def test_criterion_4_gradient_fidelity():
    t0 = time.perf_counter()
    net = build_network(NetworkSpec(1, 2))
    worst = 0.0
    for point in range(3):
        rng = np.random.default_rng(100 + point)
        regions = pad_regions(partition(net, PartitionConfig(4, "greedy")), 2, net.max_lanes_per_intersection)
        ga = GA2(net, regions, cells=3, heads=2, hidden=(3, 4), rng=rng)
        ln = Learner(ga, LearnerConfig(hidden=(6,), batch_size=2), seed=point)
        buf = ReplayBuffer(4, seed=point)
        for _ in range(2):
            buf.add(Transition(0, rng.integers(0, 6, (net.n_in, 3)), rng.integers(0, 9, (2, 24)),
                               rng.integers(0, 4, (1, 2)), rng.normal(size=1) * 30,
                               rng.integers(0, 6, (net.n_in, 3)), rng.integers(0, 9, (2, 24))))
        batch = buf.batch([0, 1])
        y = ln.td_targets(batch)
        loss_fn = lambda: ln.loss(batch, y)[0]
        worst = max(worst, grad_check(loss_fn, ln.parameters(), eps=1e-4, max_coords=12, rng=rng,
                                       floor=1e-6))
    dt = time.perf_counter() - t0
    report(4, worst < 1e-4 and dt < 30, f"max relative error {worst:.2e} at 3 points ({dt:.1f} s)")
    assert worst < 1e-4 and dt < 30


# ---------------------------------------------------------------- 5


def test_criterion_5_micro_state_identity():
    rng = np.random.default_rng(5)
    single_ok, sums_ok = True, True
    for _ in range(1000):
        n, width = int(rng.integers(1, 20)), 40
        length = rng.uniform(50, 800, n)
        count = rng.integers(0, width + 1, n)
        pos = rng.uniform(0, 1, (n, width)) * length[:, None]
        single_ok &= np.array_equal(lane_cell_counts(pos, count, length, 1)[:, 0], count)
        b = int(rng.integers(1, 12))
        sums_ok &= np.array_equal(lane_cell_counts(pos, count, length, b).sum(1), count)
    net = build_network(NetworkSpec(2, 2))
    sim = Simulator(net, generate_synthetic_demand(net, 800, 5), seed=5)
    for k in range(600):
        sim.step()
        if k % 50 == 0:
            single_ok &= np.array_equal(sim.lane_cell_counts(1)[:, 0], sim.count)
            sums_ok &= all(np.array_equal(sim.lane_cell_counts(b).sum(1), sim.count) for b in (2, 3, 5, 7))
    report(5, single_ok and sums_ok, f"B=1 equals wave: {single_ok}; cell sums equal wave for all B: {sums_ok}")
    assert single_ok and sums_ok


# ---------------------------------------------------------------- 6


def _trajectory(net, demand, seed, actions, tweak=None, steps=400):
    sim = Simulator(net, demand, seed=seed)
    out = []
    for t in range(steps):
        if t % 20 == 0:
            sim.apply_action(actions[t // 20])
        if tweak is not None and t == tweak:
            sim.insert_vehicle(0, 1.0)
        sim.step()
        out.append(sim.digest())
    return out


def test_criterion_6_determinism_and_markov():
    t0 = time.perf_counter()
    net = build_network(NetworkSpec(2, 2))
    demand = generate_synthetic_demand(net, 700, 6)
    acts = [[int(p) for p in row] for row in np.random.default_rng(6).integers(0, 4, (20, 4))]
    base = _trajectory(net, demand, 6, acts)
    same = base == _trajectory(net, demand, 6, acts)
    # changing the action at decision 10 leaves steps before 200 untouched and changes the state from then on
    alt = [list(a) for a in acts]
    alt[10] = [(p + 1) % 4 for p in alt[10]]
    act_traj = _trajectory(net, demand, 6, alt)
    act_ok = act_traj[:200] == base[:200] and act_traj[200] != base[200]
    seed_traj = _trajectory(net, demand, 7, acts)
    seed_ok = seed_traj != base
    st_traj = _trajectory(net, demand, 6, acts, tweak=150)
    state_ok = st_traj[:150] == base[:150] and st_traj[150] != base[150]
    # Markov: a copy taken mid-run continues exactly like the original
    sim = Simulator(net, demand, seed=6)
    for _ in range(100):
        sim.step()
    twin = copy.deepcopy(sim)
    markov = all((sim.step(), twin.step(), sim.digest() == twin.digest())[2] for _ in range(200))
    dt = time.perf_counter() - t0
    ok = same and act_ok and seed_ok and state_ok and markov and dt < 10
    report(6, ok, f"identical {same}, action-divergence {act_ok}, draw-divergence {seed_ok}, "
                  f"state-divergence {state_ok}, copy continues identically {markov} ({dt:.1f} s)")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_7_partition_constraints():
    rng = np.random.default_rng(7)
    failures = []
    for trial in range(100):
        rows, cols = int(rng.integers(2, 5)), int(rng.integers(2, 5))
        net = build_network(NetworkSpec(rows, cols))
        size = int(rng.integers(1, 6))
        regions = partition(net, PartitionConfig(size, "random", seed=int(rng.integers(10**6))))
        probs = validate_partition(net, regions, size)
        if probs:
            failures.append((rows, cols, size, probs))
    pinned = []
    for name, shape, n_regions in (("layout_4x4.yaml", (4, 4), 4), ("layout_16x3.yaml", (16, 3), 13)):
        net = build_network(NetworkSpec(*shape))
        layout = load_layout((ROOT / "configs" / name).read_text())
        regions = regions_from_layout(net, layout)
        pinned.append(len(regions) == n_regions and validate_partition(net, regions, 4) == [])
    ok = not failures and all(pinned)
    report(7, ok, f"{100 - len(failures)}/100 random partitions valid; pinned layouts valid {pinned}")
    assert ok


# ---------------------------------------------------------------- 8-10 (training runs)


@pytest.mark.slow
def test_criterion_8_learning_smoke():
    t0 = time.perf_counter()
    fixed = desk_run(agent="fixed")
    naive = desk_run(agent="ga2-naive")
    aug = desk_run(agent="ga2-aug")
    dt = time.perf_counter() - t0
    ratio = naive.median_att / fixed.median_att
    soft = aug.median_att <= 1.05 * naive.median_att
    report("8b", soft, f"GA2-Aug {aug.median_att:.2f} vs GA2-Naive+5% {1.05 * naive.median_att:.2f}", soft=True)
    ok = ratio <= 0.9
    report(8, ok, f"GA2-Naive median {naive.median_att:.2f} / fixed {fixed.median_att:.2f} = {ratio:.3f} "
                  f"(target <= 0.9; {dt / 60:.1f} min)")
    assert ok


@pytest.mark.slow
def test_criterion_9_cell_sweep():
    res = {b: desk_run(agent="ga2-naive", cells=b) for b in (1, 3, 5)}
    medians = {b: r.median_att for b, r in res.items()}
    ok = medians[1] == max(medians.values())
    report(9, ok, "median ATT by cells " + ", ".join(f"B={b}: {m:.2f}" for b, m in medians.items()), soft=True)


@pytest.mark.slow
def test_criterion_10_baseline_ordering():
    fixed = desk_run(agent="fixed")
    sotl = desk_run(agent="sotl")
    ok = sotl.median_att < fixed.median_att
    report(10, ok, f"SOTL median {sotl.median_att:.2f} vs fixed {fixed.median_att:.2f}")
    assert ok


@pytest.mark.slow
def test_learning_curve_improves():
    """Last-50-episode mean travel time of GA2-Naive is below its first-50 mean on every seed."""
    res = desk_run(agent="ga2-naive")
    for seed in res.seeds:
        att = [r["average_travel_time"] for r in res.records if r["type"] == "episode" and r["seed"] == seed]
        assert np.mean(att[-50:]) < np.mean(att[:50])
