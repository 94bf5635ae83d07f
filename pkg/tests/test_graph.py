import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gammazero import _graph_kernel as GK
from gammazero.belief import ParticleBelief, init_belief, update_belief
from gammazero.checks import random_rocksample_belief
from gammazero.domains import CHECK0, LightDark, RockObs, RockSample
from gammazero.errors import DataError, InvalidArgumentError
from gammazero.graph import (
    ACTION, D_EDGE, D_NODE, GLOBAL, LOCATION, NODE_GLOBAL, OBJECT, PREDICATE, aggregate_predicates, build_graph,
    graph_from_record, graph_to_json, graph_to_record, node_features, support_band,
)
from gammazero.predicates import AGENT, GroundedPredicate, loc_id, rock_id


def fixed_belief(model, good_fraction=None, n=100):
    rows = model.sample_particles(n, np.random.default_rng(0))
    if good_fraction is not None:
        rows[:, 3] = np.arange(n) < round(good_fraction * n)
    return ParticleBelief(rows, np.full(n, 1.0 / n))


@pytest.fixture
def rs42():
    return RockSample.create(4, rock_positions=[(1, 3), (3, 0)])


def test_hand_enumerated_fixture(rs42):
    b = fixed_belief(rs42)
    g = build_graph(b, rs42)
    # 1 global, agent + 2 rocks, cells (0,2) (1,3) (3,0) + exit,
    # AtLocation + 2 RockAt + 2 RockGood, 7 actions
    assert g.count(GLOBAL) == 1
    assert g.count(OBJECT) == 3
    assert g.count(LOCATION) == 4
    assert g.count(PREDICATE) == 5
    assert g.count(ACTION) == 7
    assert g.num_nodes == 20
    # 19 global links, 5 pred-obj, 3 pred-loc, 7 act-obj, 5 + 8 + 4 pred-act; both directions
    assert g.num_edges == 2 * (19 + 5 + 3 + 7 + 17)


def test_aggregate_predicates_values(rs42):
    b = fixed_belief(rs42, good_fraction=0.6)
    sup = aggregate_predicates(b, rs42)
    assert sup[GroundedPredicate("AtLocation", (AGENT, loc_id(0, 2)))] == 1.0
    assert sup[GroundedPredicate("RockGood", (rock_id(0),))] == pytest.approx(0.6)
    assert GroundedPredicate("RockSampled", (rock_id(0),)) not in sup


def test_threshold_gates_predicates(rs42):
    b = fixed_belief(rs42, good_fraction=0.02)
    g = build_graph(b, rs42, tau=0.05)
    assert "RockGood(rock_0)" not in g.labels()
    b = fixed_belief(rs42, good_fraction=0.6)
    g = build_graph(b, rs42)
    i = g.labels().index("RockGood(rock_0)")
    assert g.x_node[i, 17] == pytest.approx(0.6)
    out = g.x_edge[(g.src == i) & (g.edge_types() != NODE_GLOBAL)]
    assert len(out) > 0
    np.testing.assert_allclose(out[:, 12], 0.6)
    assert np.all(out[:, 13 + 2] == 1.0)  # weak band


def test_support_bands():
    np.testing.assert_array_equal(support_band([1.0, 0.96, 0.95, 0.7, 0.69, 0.3, 0.29, 0.0]),
                                  [0, 0, 1, 1, 2, 2, 3, 3])


def test_tau_range(rs42):
    b = fixed_belief(rs42)
    for tau in (0.0, 1.0, -0.1):
        with pytest.raises(InvalidArgumentError):
            build_graph(b, rs42, tau)


def test_node_feature_payloads():
    m = RockSample.create(5, rock_positions=[(0, 0), (4, 4)])
    g = build_graph(fixed_belief(m), m)
    gf = node_features(g, 0)
    np.testing.assert_array_equal(gf[:5], [0, 0, 0, 0, 1])
    assert not gf[5:].any()
    labels = g.labels()
    np.testing.assert_array_equal(g.x_node[labels.index("loc_0_0"), 8:10], [0.0, 0.0])
    np.testing.assert_allclose(g.x_node[labels.index("loc_4_4"), 8:10], [0.8, 0.8])


def test_structural_invariants():
    m = RockSample.create(6, k=4, placement_seed=3)
    rng = np.random.default_rng(0)
    for _ in range(10):
        g = build_graph(random_rocksample_belief(m, rng, n_particles=300), m)
        assert g.count(GLOBAL) == 1 and g.node_type[0] == GLOBAL
        assert np.all(g.x_edge[:, :10].sum(axis=1) == 1.0)
        assert np.all((g.x_edge[:, 12] >= 0) & (g.x_edge[:, 12] <= 1))
        band = np.argmax(g.x_edge[:, 13:17], axis=1)
        np.testing.assert_array_equal(band, support_band(g.x_edge[:, 12]))
        assert sorted(g.actions.tolist()) == list(range(m.action_count))
        linked = set(g.dst[g.src == 0].tolist())
        assert linked == set(range(1, g.num_nodes))
        order = np.lexsort((g.edge_types(), g.src, g.dst))
        np.testing.assert_array_equal(order, np.arange(g.num_edges))


@given(seed=st.integers(0, 10_000), lo=st.floats(0.01, 0.5), hi=st.floats(0.5, 0.99))
def test_threshold_monotonicity(seed, lo, hi):
    m = RockSample.create(5, k=3, placement_seed=seed % 50)
    b = random_rocksample_belief(m, np.random.default_rng(seed), n_particles=200)
    low = set(build_graph(b, m, lo).labels())
    high = set(build_graph(b, m, hi).labels())
    assert high <= low


def test_graphs_are_deterministic():
    m = RockSample.create(5, k=3, placement_seed=1)
    b = random_rocksample_belief(m, np.random.default_rng(4), n_particles=300)
    assert graph_to_json(build_graph(b, m)) == graph_to_json(build_graph(b, m))


def test_dimensions_do_not_depend_on_size():
    for n, k in ((2, 1), (5, 3), (11, 8)):
        m = RockSample.create(n, k=k, placement_seed=0)
        g = build_graph(fixed_belief(m), m)
        assert g.x_node.shape[1] == D_NODE and g.x_edge.shape[1] == D_EDGE
    g = build_graph(init_belief(LightDark.create(), 100, np.random.default_rng(0)), LightDark.create())
    assert g.x_node.shape[1] == D_NODE and g.x_edge.shape[1] == D_EDGE


def _canonical(g):
    nodes = sorted(map(tuple, g.x_node.round(12)))
    edges = sorted(
        tuple(g.x_node[s].round(12)) + tuple(g.x_node[d].round(12)) + tuple(f.round(12))
        for s, d, f in zip(g.src, g.dst, g.x_edge)
    )
    return nodes, edges


@given(seed=st.integers(0, 10_000), perm=st.permutations([0, 1, 2]))
def test_relabeling_is_an_isomorphism(seed, perm):
    m = RockSample.create(5, k=3, placement_seed=seed % 30)
    b = random_rocksample_belief(m, np.random.default_rng(seed), n_particles=200)
    r = m.relabeled(perm)
    rb = ParticleBelief(r.relabel_particles(b.states, perm), b.weights)
    g, h = build_graph(b, m), build_graph(rb, r)
    assert g.num_nodes == h.num_nodes and g.num_edges == h.num_edges
    assert _canonical(g) == _canonical(h)


def test_record_roundtrip():
    m = RockSample.create(4, k=2, placement_seed=1)
    g = build_graph(random_rocksample_belief(m, np.random.default_rng(2)), m)
    h = graph_from_record(json.loads(json.dumps(graph_to_record(g))))
    for name in ("node_type", "x_node", "src", "dst", "x_edge", "action_nodes", "actions", "action_mask"):
        np.testing.assert_array_equal(getattr(g, name), getattr(h, name))
    assert h.action_names == g.action_names


def test_record_rejects_bad_version():
    m = RockSample.create(3, k=1)
    rec = graph_to_record(build_graph(fixed_belief(m), m))
    rec["schema_version"] = 99
    with pytest.raises(DataError):
        graph_from_record(rec)
    del rec["nodes"]
    rec["schema_version"] = 1
    with pytest.raises(DataError):
        graph_from_record(rec)


def test_sample_masked_off_rock():
    m = RockSample.create(4, rock_positions=[(3, 3)])
    g = build_graph(fixed_belief(m), m)
    assert not g.action_mask[4] and g.action_mask[[0, 1, 2, 3, 5]].all()


def test_lightdark_graph():
    m = LightDark.create()
    b = init_belief(m, 500, np.random.default_rng(0))
    g = build_graph(b, m)
    assert g.count(ACTION) == 3 and g.count(GLOBAL) == 1
    sup = [g.x_node[i, 17] for i in range(g.num_nodes) if g.node_type[i] == PREDICATE]
    assert all(s >= 0.05 for s in sup)


@pytest.mark.skipif(GK.rs_graph_arrays is None, reason="numba disabled")
@given(seed=st.integers(0, 10_000), n=st.integers(2, 7), k=st.integers(1, 5), tau=st.sampled_from([0.05, 0.2, 0.5]))
def test_compiled_graph_matches_reference(seed, n, k, tau):
    k = min(k, n * n - 1)
    m = RockSample.create(n, k=k, placement_seed=seed)
    rng = np.random.default_rng(seed)
    b = init_belief(m, 200, rng)
    state = m.sample_particles(1, rng)[0]
    for _ in range(int(rng.integers(0, 8))):
        if state[2]:
            break
        a = int(rng.integers(m.action_count))
        state = m.propagate(state[None], a)[0][0]
        b = update_belief(m, b, a, m.sample_observation_row(state, a, rng), rng)
    g = build_graph(b, m, tau)
    node_type, xn, src, dst, xe, a0, legal, key, starts = GK.rocksample_arrays(b.states, b.weights, m, tau)
    np.testing.assert_array_equal(node_type, g.node_type)
    np.testing.assert_allclose(xn, g.x_node, atol=1e-12)
    np.testing.assert_array_equal(src, g.src)
    np.testing.assert_array_equal(dst, g.dst)
    np.testing.assert_allclose(xe, g.x_edge, atol=1e-12)
    assert a0 == g.action_nodes[0]
    np.testing.assert_array_equal(legal, g.action_mask)
    np.testing.assert_array_equal(starts, np.searchsorted(g.dst, np.arange(g.num_nodes)))


def test_check_edges_carry_distance_and_accuracy():
    m = RockSample.create(5, rock_positions=[(3, 2)])
    g = build_graph(fixed_belief(m), m)
    chk = g.action_nodes[CHECK0]
    rock = g.labels().index("rock_0")
    e = g.x_edge[(g.src == chk) & (g.dst == rock)][0]
    assert e[17] == pytest.approx(3 / 5)  # distance 3, normalized by n
    assert e[18] == pytest.approx(0.5 * (1 + 2 ** (-3 / 20)))
    _ = RockObs
