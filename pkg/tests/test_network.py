import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ga2lab.network import (
    LEFT, RIGHT, STRAIGHT, NetworkSpec, RoutingConfig, SpecError, adjacency_lanes, augmented_movement_mask,
    build_network, build_network_from_graph, intersection_adjacency, mask_nnz, movement_matrix,
    naive_movement_mask, routing_proportion_matrix,
)
from oracles import grid_adjacent_pairs, grid_movement_counts


def test_grid_sizes(net22, net44):
    assert len(net22.internal_ids) == 4
    assert len(net22.intersections) - len(net22.internal_ids) == 8
    assert len(net44.internal_ids) == 16
    assert len(build_network(NetworkSpec(16, 3)).internal_ids) == 48


def test_hangzhou_like_lengths(net44):
    lengths = {net44.approaches[ln.approach_id].heading: ln.length for ln in net44.lanes}
    assert lengths[(0, 1)] == lengths[(0, -1)] == 800.0
    assert lengths[(1, 0)] == lengths[(-1, 0)] == 600.0


def test_malformed_spec_lists_every_field():
    with pytest.raises(SpecError) as exc:
        build_network(NetworkSpec(2, 2, lanes_per_approach=0, approach_length_ew_m=-5.0))
    text = " ".join(exc.value.problems)
    assert "lanes_per_approach" in text and "approach_length_ew_m" in text


def test_network_invariants(net22):
    kinds = {v.id: v.internal for v in net22.intersections}
    for a in net22.approaches:
        expect = {(False, True): "entry", (True, False): "exit", (True, True): "internal"}[(kinds[a.start], kinds[a.end])]
        assert a.kind == expect
    assert sorted(ln.id for ln in net22.lanes[: net22.n_in]) == list(range(net22.n_in))
    for lid in net22.incoming:
        assert net22.lane_movements[lid], f"lane {lid} has no movement"
    for ln in net22.lanes:
        assert ln.capacity >= 1 and ln.length > 0
    assert len({(m.from_lane, m.to_lane) for m in net22.movements}) == len(net22.movements)
    assert all(m.rate > 0 for m in net22.movements)


def test_capacity_is_jam_spacing(net22):
    assert {ln.capacity for ln in net22.lanes} == {40}  # floor(300 / 7.5)


def test_right_turns_always_permitted(net22):
    for v in net22.internal_ids:
        rights = {m.id for m in net22.movements if m.intersection == v and m.turn == RIGHT}
        for ph in net22.phase_table[v]:
            assert rights <= ph.permitted_movements
        assert [ph.id for ph in net22.phase_table[v]] == ["NS", "NSL", "EW", "EWL"]


def _series_pair():
    # two internal intersections in a row, one lane, only straight movements matter
    nodes = [(0, 0, True), (0, 1, True), (0, -1, False), (0, 2, False)]
    edges = [(2, 0), (0, 1), (1, 3)]
    return build_network_from_graph(nodes, edges, lanes_per_approach=1)


def test_movement_matrix_single_movement():
    net = _series_pair()
    by_kind = {a.kind: a.lane_ids[0] for a in net.approaches}
    entry, mid, out = by_kind["entry"], by_kind["internal"], by_kind["exit"]
    lanes = [entry, mid, out]
    m = movement_matrix(net, lanes, lanes)
    expect = np.zeros((3, 3))
    expect[0, 1] = expect[1, 2] = 1  # entry -> internal -> exit, straight through
    assert np.array_equal(m, expect)


def test_movement_matrix_empty(net22):
    assert movement_matrix(net22, [], []).shape == (0, 0)


def test_movement_matrix_2x2_against_enumeration(net22):
    lanes = list(range(net22.n_lanes))
    m = movement_matrix(net22, lanes, lanes)
    counts = grid_movement_counts(2, 2)
    assert int(m.sum()) == counts["movements"] == 48
    inc = list(net22.incoming)
    assert int(movement_matrix(net22, inc, inc).sum()) == counts["internal_links"] == 24
    # three lanes per approach, one turn per lane: out-degree 1 everywhere
    assert np.array_equal(m[: net22.n_in].sum(axis=1), np.ones(net22.n_in))


@given(st.data())
@settings(max_examples=30, deadline=None)
def test_movement_matrix_is_a_submatrix(data):
    # movements are directed, so M(F1, F2) is the (F1, F2) block of the full matrix and
    # M(F2, F1)^T is the same block of the reversed relation
    net = build_network(NetworkSpec(2, 2))
    ids = list(range(net.n_lanes))
    full = movement_matrix(net, ids, ids)
    f1 = data.draw(st.lists(st.sampled_from(ids), unique=True, max_size=20))
    f2 = data.draw(st.lists(st.sampled_from(ids), unique=True, max_size=20))
    assert np.array_equal(movement_matrix(net, f1, f2), full[np.ix_(f1, f2)])
    assert np.array_equal(movement_matrix(net, f2, f1).T, full.T[np.ix_(f1, f2)])


def test_routing_single_lane_is_identity():
    net = build_network(NetworkSpec(1, 2, lanes_per_approach=1))
    rp = routing_proportion_matrix(net)
    assert np.array_equal(rp, np.eye(net.n_in))


def test_routing_explicit_middle_row(net22):
    ap = net22.approaches[0]
    mid = ap.lane_ids[1]
    rp = routing_proportion_matrix(net22, RoutingConfig(lane_rows={mid: [0.25, 0.5, 0.25]}))
    assert np.array_equal(rp[mid, list(ap.lane_ids)], [0.25, 0.5, 0.25])


def test_routing_turn_shares_rows(net22):
    rp = routing_proportion_matrix(net22, RoutingConfig(turn_shares=(0.1, 0.6, 0.3)))
    ap = net22.approaches[0]
    ids = list(ap.lane_ids)
    assert np.allclose(rp[ids[0], ids], [0.1, 0.6, 0.3], atol=0, rtol=0) or np.array_equal(rp[ids[0], ids], [0.1, 0.6, 0.3])
    assert np.all(np.abs(rp.sum(axis=1) - 1) <= 1e-12)


def test_routing_bad_shares_rejected(net22):
    with pytest.raises(SpecError):
        routing_proportion_matrix(net22, RoutingConfig(turn_shares=(0.5, 0.5, 0.5)))
    with pytest.raises(SpecError):
        routing_proportion_matrix(net22, RoutingConfig(lane_rows={0: [0.9, 0.2, 0.0]}))


@given(st.integers(0, 10_000), st.integers(1, 3))
@settings(max_examples=25, deadline=None)
def test_routing_rows_stay_inside_approach(seed, lanes):
    net = build_network(NetworkSpec(2, 2, lanes_per_approach=lanes))
    rp = routing_proportion_matrix(net, RoutingConfig(seed=seed))
    assert np.all(np.abs(rp.sum(axis=1) - 1) <= 1e-12)
    assert np.all(rp >= 0)
    assert np.all(rp[adjacency_lanes(net) == 0] == 0)


def test_naive_mask_small_cases():
    net = _series_pair()
    sub = naive_movement_mask(net)
    assert np.array_equal(sub, [[1, 1], [1, 1]])  # incoming lanes 0 and 1 linked by one movement
    solo = build_network(NetworkSpec(1, 1, lanes_per_approach=1))
    assert np.array_equal(naive_movement_mask(solo), np.eye(solo.n_in))


def test_naive_mask_2x2_count(net22):
    nnz = mask_nnz(naive_movement_mask(net22))
    assert nnz == net22.n_in + 2 * grid_movement_counts(2, 2)["internal_links"] == 96


def test_augmented_mask_cases(net22):
    one = build_network(NetworkSpec(1, 1, lanes_per_approach=3))
    aug = augmented_movement_mask(one)
    ids = list(one.approaches[0].lane_ids)
    assert np.array_equal(aug[np.ix_(ids, ids)], np.ones((3, 3)))
    single = build_network(NetworkSpec(2, 2, lanes_per_approach=1))
    assert np.array_equal(augmented_movement_mask(single), naive_movement_mask(single))
    diff = mask_nnz(augmented_movement_mask(net22)) - mask_nnz(naive_movement_mask(net22))
    assert diff == grid_adjacent_pairs(2, 2, 3) == 96


@pytest.mark.parametrize("kind", [naive_movement_mask, augmented_movement_mask])
def test_masks_symmetric_binary_unit_diagonal(net22, kind):
    m = kind(net22)
    assert np.array_equal(m, m.T)
    assert set(np.unique(m)) <= {0.0, 1.0}
    assert np.all(np.diag(m) == 1)


def test_intersection_adjacency():
    assert np.array_equal(intersection_adjacency(build_network(NetworkSpec(1, 2))), [[1, 1], [1, 1]])
    assert np.array_equal(intersection_adjacency(build_network(NetworkSpec(1, 1))), [[1]])
    adj = intersection_adjacency(build_network(NetworkSpec(4, 4)))
    interior = [5, 6, 9, 10]
    assert all(adj[i].sum() == 5 for i in interior)
    assert np.array_equal(adj, adj.T)


def test_lane_turn_layout(net22):
    ap = net22.approaches[0]
    assert [net22.lanes[l].turns for l in ap.lane_ids] == [(LEFT,), (STRAIGHT,), (RIGHT,)]
