import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gammazero.belief import ParticleBelief
from gammazero.checks import perturbed_params, random_rocksample_belief
from gammazero.domains import RockSample
from gammazero.errors import DataError, NumericError, ParamFileError, ShapeError
from gammazero.gnn import GnnParameters, forward, load_params, make_batch, param_shapes, save_params
from gammazero.gnn.fast import FastNetwork, masked_softmax
from gammazero.gnn.network import forward_batch
from gammazero.gnn.train import TrainingConfig, TrainingSample, gradient, loss, train
from gammazero.graph import D_EDGE, D_NODE, build_graph


def naive_forward(params, g):
    """Loop-by-loop reading of the architecture with explicit concatenations."""
    A, H = params.arrays, params.hidden
    N, E = g.num_nodes, g.num_edges
    v = np.tanh(g.x_node @ A["enc_node_W"] + A["enc_node_b"])
    e = np.tanh(g.x_edge @ A["enc_edge_W"] + A["enc_edge_b"])
    gi = int(np.flatnonzero(g.node_type == 4)[0])
    glob = v[gi].copy()

    def attend(rows, att):
        s = np.array([r @ att for r in rows])
        w = np.exp(s - s.max())
        w /= w.sum()
        return sum(wi * r for wi, r in zip(w, rows))

    for l in range(params.rounds):
        e_new = np.empty_like(e)
        for j in range(E):
            x = np.concatenate([e[j], v[g.src[j]], v[g.dst[j]], glob])
            h = np.tanh(x @ A[f"edge{l}_W1"] + A[f"edge{l}_b1"])
            e_new[j] = e[j] + np.tanh(h @ A[f"edge{l}_W2"] + A[f"edge{l}_b2"])
        v_new = np.empty_like(v)
        for i in range(N):
            agg = attend([e_new[j] for j in range(E) if g.dst[j] == i], A[f"att{l}_node"])
            x = np.concatenate([v[i], agg, glob])
            h = np.tanh(x @ A[f"node{l}_W1"] + A[f"node{l}_b1"])
            v_new[i] = v[i] + np.tanh(h @ A[f"node{l}_W2"] + A[f"node{l}_b2"])
        pn = attend(list(v_new), A[f"att{l}_glob_node"])
        pe = attend(list(e_new), A[f"att{l}_glob_edge"])
        x = np.concatenate([glob, pn, pe])
        h = np.tanh(x @ A[f"glob{l}_W1"] + A[f"glob{l}_b1"])
        glob = glob + np.tanh(h @ A[f"glob{l}_W2"] + A[f"glob{l}_b2"])
        v, e = v_new, e_new
    value = np.tanh(glob @ A["value_W1"] + A["value_b1"]) @ A["value_W2"] + A["value_b2"][0]
    logits = np.array([
        np.tanh(np.concatenate([glob, v[a]]) @ A["policy_W1"] + A["policy_b1"]) @ A["policy_W2"] + A["policy_b2"][0]
        for a in g.action_nodes
    ])
    return value, logits


def small_graphs(count=4, seed=0):
    out = []
    rng = np.random.default_rng(seed)
    for i in range(count):
        m = RockSample.create(3 + i % 3, k=1 + i % 3, placement_seed=i)
        out.append(build_graph(random_rocksample_belief(m, rng, n_particles=100), m))
    return out


@pytest.mark.parametrize("hidden,rounds", [(4, 1), (8, 2), (6, 3)])
def test_forward_matches_naive_oracle(hidden, rounds):
    params = perturbed_params(hidden, rounds, seed=hidden)
    for g in small_graphs():
        out = forward(params, g)
        value, logits = naive_forward(params, g)
        assert out.value == pytest.approx(value, abs=1e-12)
        np.testing.assert_allclose(out.logits, logits, atol=1e-12)


def test_fast_network_matches_reference():
    params = perturbed_params(16, 2, seed=3)
    net = FastNetwork(params)
    for g in small_graphs(6, seed=1):
        a, b = forward(params, g), net(g)
        assert a.value == pytest.approx(b.value, abs=1e-12)
        np.testing.assert_allclose(a.policy, b.policy, atol=1e-12)


def test_batched_equals_single():
    params = perturbed_params(8, 2, seed=0)
    graphs = small_graphs(5)
    values, logits, _ = forward_batch(params, make_batch(graphs))
    offset = 0
    for i, g in enumerate(graphs):
        out = forward(params, g)
        assert values[i] == pytest.approx(out.value, abs=1e-12)
        np.testing.assert_allclose(logits[offset : offset + len(g.action_nodes)], out.logits, atol=1e-12)
        offset += len(g.action_nodes)


def test_zero_value_head_gives_zero():
    params = GnnParameters.init(D_NODE, D_EDGE, 8, 2, seed=0)
    for g in small_graphs():
        assert forward(params, g).value == 0.0


def test_identical_logits_give_uniform_policy():
    params = GnnParameters.init(D_NODE, D_EDGE, 8, 2, seed=0)
    params.arrays["policy_W2"][:] = 0.0
    m = RockSample.create(4, rock_positions=[(3, 3), (2, 0)])
    g = build_graph(random_rocksample_belief(m, np.random.default_rng(0), steps=0), m)
    p = forward(params, g).policy
    legal = g.action_mask
    np.testing.assert_allclose(p[legal], 1.0 / legal.sum())
    assert np.all(p[~legal] == 0.0)


def test_softmax_normalization():
    params = perturbed_params(8, 2, seed=5, scale=2.0)
    for g in small_graphs(6, seed=2):
        p = forward(params, g).policy
        assert abs(p.sum() - 1.0) < 1e-6 and np.all(p >= 0)
        assert len(p) == len(g.action_nodes)


@given(logits=st.lists(st.floats(-50, 50), min_size=1, max_size=12), seed=st.integers(0, 1000))
def test_masked_softmax_properties(logits, seed):
    z = np.array(logits)
    mask = np.random.default_rng(seed).random(len(z)) < 0.7
    mask[0] = True
    p = masked_softmax(z, mask)
    assert abs(p.sum() - 1.0) < 1e-12 and np.all(p[~mask] == 0)
    np.testing.assert_allclose(masked_softmax(z + 13.0, mask), p, atol=1e-12)


def test_rock_relabeling_equivariance():
    params = perturbed_params(8, 2, seed=1)
    m = RockSample.create(5, k=3, placement_seed=2)
    rng = np.random.default_rng(0)
    for perm in ([1, 2, 0], [2, 1, 0]):
        b = random_rocksample_belief(m, rng)
        r = m.relabeled(perm)
        out = forward(params, build_graph(b, m))
        alt = forward(params, build_graph(ParticleBelief(r.relabel_particles(b.states, perm), b.weights), r))
        assert alt.value == pytest.approx(out.value, abs=1e-6)
        expect = alt.policy.copy()
        for i in range(3):
            expect[5 + i] = alt.policy[5 + perm[i]]
        np.testing.assert_allclose(expect, out.policy, atol=1e-6)


def test_size_transfer():
    params = perturbed_params(8, 2, seed=1)
    for n, k in ((3, 1), (8, 6), (12, 10)):
        m = RockSample.create(n, k=k, placement_seed=0)
        g = build_graph(random_rocksample_belief(m, np.random.default_rng(n), n_particles=200), m)
        assert len(forward(params, g).policy) == 5 + k


def test_shape_mismatch_names_role():
    params = GnnParameters.init(D_NODE + 1, D_EDGE, 4, 1)
    with pytest.raises(ShapeError, match="node features"):
        forward(params, small_graphs(1)[0])
    params = GnnParameters.init(D_NODE, D_EDGE - 1, 4, 1)
    with pytest.raises(ShapeError, match="edge features"):
        forward(params, small_graphs(1)[0])


def test_shapes_independent_of_instance():
    shapes = dict(param_shapes(D_NODE, D_EDGE, 16, 2))
    p = GnnParameters.init(D_NODE, D_EDGE, 16, 2)
    assert {k: v.shape for k, v in p.arrays.items()} == shapes


# ------------------------------------------------------------------ loss


def samples_for(graphs, seed=0):
    rng = np.random.default_rng(seed)
    out = []
    for g in graphs:
        legal = np.flatnonzero(g.action_mask)
        out.append(TrainingSample(g, int(rng.choice(legal)), float(rng.normal(5, 3))))
    return out


def test_uniform_policy_cross_entropy_is_log_m():
    params = GnnParameters.init(D_NODE, D_EDGE, 8, 1, seed=0)
    params.arrays["policy_W2"][:] = 0.0
    m = RockSample.create(4, rock_positions=[(3, 3), (2, 0)])
    g = build_graph(random_rocksample_belief(m, np.random.default_rng(0), steps=0), m)
    s = TrainingSample(g, 0, 0.0)
    lb = loss(params, [s], TrainingConfig())
    assert lb.cross_entropy == pytest.approx(math.log(g.action_mask.sum()), abs=1e-12)
    assert lb.value_mse == 0.0


def test_lambda_v_zero_isolates_cross_entropy():
    params = perturbed_params(8, 1, seed=0)
    ss = samples_for(small_graphs())
    lb = loss(params, ss, TrainingConfig(lambda_v=0.0, lambda_p=0.7))
    assert lb.total == pytest.approx(0.7 * lb.cross_entropy, abs=1e-15)


def test_perfect_prediction_zero_loss():
    params = GnnParameters.init(D_NODE, D_EDGE, 4, 1, seed=0)
    g = small_graphs(1)[0]
    a = int(np.flatnonzero(g.action_mask)[0])
    # huge logit on the target node only
    params.arrays["policy_W2"][:] = 0.0
    params.arrays["policy_b2"][:] = 0.0
    lb = loss(params, [TrainingSample(g, a, 0.0)], TrainingConfig())
    assert lb.value_mse == 0.0
    logits = np.full(len(g.action_nodes), -1e3)
    logits[a] = 0.0
    p = masked_softmax(logits, g.action_mask)
    assert -math.log(p[a]) == pytest.approx(0.0, abs=1e-12)


def test_bad_target_rejected():
    g = small_graphs(1)[0]
    with pytest.raises(DataError):
        TrainingSample(g, len(g.action_nodes), 0.0)


# -------------------------------------------------------------- gradient


def central_difference(params, samples, cfg, name, idx, h=1e-5):
    p = params.copy()
    arr = p.arrays[name]
    old = arr[idx]
    arr[idx] = old + h
    up = loss(p, samples, cfg).total
    arr[idx] = old - h
    down = loss(p, samples, cfg).total
    arr[idx] = old
    return (up - down) / (2 * h)


def test_gradient_matches_finite_differences():
    params = perturbed_params(6, 2, seed=4)
    ss = samples_for(small_graphs(3, seed=4), seed=4)
    cfg = TrainingConfig()
    grads, _ = gradient(params, ss, cfg)
    rng = np.random.default_rng(0)
    names = params.names()
    worst = 0.0
    for name in names:  # one coordinate in every array, plus extra random ones
        idx = tuple(int(rng.integers(s)) for s in params.arrays[name].shape)
        fd = central_difference(params, ss, cfg, name, idx)
        worst = max(worst, abs(grads[name][idx] - fd) / max(abs(fd), abs(grads[name][idx]), 1e-6))
    assert len(names) >= 20
    assert worst < 1e-4


def test_duplicated_batch_gradient_equals_single():
    params = perturbed_params(6, 1, seed=2)
    s = samples_for(small_graphs(1))[0]
    g1, _ = gradient(params, [s], TrainingConfig())
    g2, _ = gradient(params, [s, s], TrainingConfig())
    for k in g1:
        np.testing.assert_allclose(g1[k], g2[k], atol=1e-12)


def test_no_path_means_zero_gradient():
    params = perturbed_params(6, 1, seed=2)
    params.arrays["value_W2"][:] = 0.0
    s = samples_for(small_graphs(1))[0]
    grads, _ = gradient(params, [s], TrainingConfig(lambda_p=0.0))
    # with a zero value output layer and no policy loss, nothing upstream of it moves
    for k, gk in grads.items():
        if k not in ("value_W2", "value_b2"):
            assert not gk.any(), k


def test_nonfinite_forward_raises():
    params = perturbed_params(4, 1, seed=0)
    params.arrays["value_b2"][0] = np.inf
    with pytest.raises(NumericError):
        forward(params, small_graphs(1)[0])


# ---------------------------------------------------------------- train


def test_single_sample_memorized():
    s = samples_for(small_graphs(1))[0]
    res = train([s], TrainingConfig(hidden=16, rounds=2, learning_rate=3e-3, epochs=400, seed=0))
    assert res.log[-1].train_loss < 0.01
    assert res.log[-1].val_accuracy == 1.0


def test_training_is_deterministic():
    ss = samples_for(small_graphs(4))
    cfg = TrainingConfig(hidden=4, rounds=1, learning_rate=1e-3, epochs=3, seed=7)
    a, b = train(ss, cfg), train(ss, cfg)
    np.testing.assert_array_equal(a.params.flat(), b.params.flat())


def test_zero_learning_rate_keeps_params():
    ss = samples_for(small_graphs(4))
    init = perturbed_params(4, 1, seed=0)
    res = train(ss, TrainingConfig(hidden=4, rounds=1, learning_rate=0.0, epochs=2), init=init)
    np.testing.assert_array_equal(res.params.flat(), init.flat())


def test_training_log_csv(tmp_path):
    ss = samples_for(small_graphs(4))
    res = train(ss, TrainingConfig(hidden=4, rounds=1, epochs=2), log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "epoch,train_loss,val_loss,val_accuracy,val_value_mse"
    assert len(lines) == 3 and res.best_epoch >= 1


def test_empty_dataset_rejected():
    with pytest.raises(DataError):
        train([], TrainingConfig())


def test_divergence_keeps_finite_params():
    ss = samples_for(small_graphs(4))
    # squared errors of +-1e200 overflow to inf
    bad = [TrainingSample(s.graph, s.target_action, (-1) ** i * 1e200) for i, s in enumerate(ss)]
    res = train(bad, TrainingConfig(hidden=4, rounds=1, epochs=3, learning_rate=1e-3, init_value_bias=False))
    assert res.diverged
    assert np.isfinite(res.params.flat()).all()


# ----------------------------------------------------------- param file


def test_param_file_roundtrip(tmp_path):
    params = perturbed_params(8, 2, seed=9)
    path = tmp_path / "p.bin"
    save_params(params, path)
    back = load_params(path, D_NODE, D_EDGE)
    np.testing.assert_array_equal(back.flat(), params.flat())
    g = small_graphs(1)[0]
    assert forward(back, g).value == forward(params, g).value


def test_param_file_errors(tmp_path):
    params = perturbed_params(4, 1, seed=0)
    path = tmp_path / "p.bin"
    save_params(params, path)
    blob = path.read_bytes()
    (tmp_path / "short.bin").write_bytes(blob[:-3])
    with pytest.raises(ParamFileError, match="truncated"):
        load_params(tmp_path / "short.bin")
    with pytest.raises(ParamFileError, match="d_node"):
        load_params(path, d_node=D_NODE + 1)
    (tmp_path / "junk.bin").write_bytes(b"hello world" * 4)
    with pytest.raises(ParamFileError):
        load_params(tmp_path / "junk.bin")
    bumped = bytearray(blob)
    bumped[8] = 9  # schema_version
    (tmp_path / "ver.bin").write_bytes(bytes(bumped))
    with pytest.raises(ParamFileError, match="schema_version"):
        load_params(tmp_path / "ver.bin")


def test_nonfinite_params_not_saved(tmp_path):
    params = perturbed_params(4, 1, seed=0)
    params.arrays["enc_node_b"][0] = np.nan
    with pytest.raises(NumericError):
        save_params(params, tmp_path / "p.bin")
