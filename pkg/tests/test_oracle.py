import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gammazero.belief import ExactBelief, ParticleBelief, exact_initial_belief, init_belief
from gammazero.dataset import read_dataset, write_dataset
from gammazero.domains import LightDark, RockSample
from gammazero.domains.rocksample import RockState
from gammazero.errors import ExpertBudgetError, InvalidArgumentError
from gammazero.oracle import (
    Expert,
    ExpertConfig,
    collect_expert_data,
    expectimax,
    expert_mcts,
    mdp_values,
    qmdp_leaf,
    rocksample_blind_leaf,
)

N, S, E, W, SAMPLE = range(5)


# ---------------------------------------------------- independent oracle


class ToyRocks:
    """Plain-Python RockSample rules written from scratch, states as tuples."""

    def __init__(self, n, rocks, halflife=20.0, gamma=0.95):
        self.n, self.rocks, self.h, self.gamma = n, list(rocks), halflife, gamma
        self.k = len(rocks)

    def step(self, s, a):
        x, y, done, good, sampled = s
        if done:
            return s, 0.0
        if a < 4:
            dx, dy = [(0, 1), (0, -1), (1, 0), (-1, 0)][a]
            nx, ny = x + dx, y + dy
            if 0 <= nx < self.n and 0 <= ny < self.n:
                return (nx, ny, 0, good, sampled), 0.0
            if a == E:
                return (self.n, y, 1, good, sampled), 10.0
            return s, 0.0
        if a == SAMPLE:
            for i, (rx, ry) in enumerate(self.rocks):
                if (rx, ry) == (x, y):
                    r = 10.0 if good[i] else -10.0
                    g = good[:i] + (0,) + good[i + 1 :]
                    sm = sampled[:i] + (1,) + sampled[i + 1 :]
                    return (x, y, 0, g, sm), r
            return s, -10.0
        return s, 0.0

    def obs_probs(self, s, a):
        if a < 5:
            return {0: 1.0}
        i = a - 5
        rx, ry = self.rocks[i]
        acc = 0.5 * (1 + 2 ** (-math.hypot(s[0] - rx, s[1] - ry) / self.h))
        p_good = acc if s[3][i] else 1 - acc
        return {1: p_good, 2: 1 - p_good}

    def value(self, belief, depth):
        live = {s: p for s, p in belief.items() if not s[2] and p > 0}
        if depth == 0 or not live:
            return 0.0, None
        on_rock = any((s[0], s[1]) in self.rocks for s in live)
        best, best_a = -math.inf, None
        for a in range(5 + self.k):
            if a == SAMPLE and not on_rock:
                continue
            q = 0.0
            post: dict = {}
            for s, p in belief.items():
                s2, r = self.step(s, a)
                q += p * r
                for o, po in self.obs_probs(s2, a).items() if not s2[2] else [(0, 1.0)]:
                    post.setdefault(o, {})
                    post[o][s2] = post[o].get(s2, 0.0) + p * po
            for o, dist in post.items():
                mass = sum(dist.values())
                if mass > 0:
                    q += self.gamma * mass * self.value({s: v / mass for s, v in dist.items()}, depth - 1)[0]
            if q > best + 1e-12:
                best, best_a = q, a
        return best, best_a


def uniform_prior(toy, start):
    from itertools import product

    out = {}
    for bits in product((0, 1), repeat=toy.k):
        out[(start[0], start[1], 0, bits, (0,) * toy.k)] = 0.5**toy.k
    return out


def point_belief(model, state):
    return ExactBelief(model.encode(state)[None, :], np.array([1.0]))


# ------------------------------------------------------------ expectimax


def test_adjacent_to_exit_with_bad_rocks_goes_east():
    m = RockSample.create(4, rock_positions=[(0, 0), (1, 3)])
    b = point_belief(m, RockState(3, 2, (False, False), (False, False)))
    res = expectimax(b, m, 1)
    # depth-1 Q values: East collects the exit, everything else is worth 0 or less
    assert res.best_action == E
    assert res.value == pytest.approx(10.0)
    assert all(q <= 0.0 for a, q in res.q_values.items() if a != E)


def test_terminal_belief():
    m = RockSample.create(4, rock_positions=[(0, 0)])
    b = point_belief(m, RockState(4, 2, (True,), (False,), True))
    res = expectimax(b, m, 3)
    assert res.terminal and res.best_action is None and res.value == 0.0


def test_known_good_rock_sampled():
    m = RockSample.create(4, rock_positions=[(1, 1)])
    res = expectimax(point_belief(m, RockState(1, 1, (True,), (False,))), m, 1)
    assert res.best_action == SAMPLE and res.value == pytest.approx(10.0)


def test_two_cell_toy_hand_value():
    # 2x2 grid, rock under the start (0, 1). Four steps: check (perfect at
    # distance 0), sample if good, walk east twice.
    m = RockSample.create(2, rock_positions=[(0, 1)])
    b = exact_initial_belief(m)
    g = 0.95
    good = g * 10 + g**3 * 10
    bad = g**2 * 10
    assert expectimax(b, m, 4).value == pytest.approx(0.5 * good + 0.5 * bad, abs=1e-9)
    # with two steps the exit alone is best
    assert expectimax(b, m, 2).value == pytest.approx(g * 10, abs=1e-9)
    assert expectimax(b, m, 2).best_action == E


@settings(deadline=None, max_examples=25)
@given(
    n=st.integers(2, 4),
    rocks=st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=2, unique=True),
    depth=st.integers(1, 3),
    halflife=st.sampled_from([0.5, 2.0, 20.0]),
)
def test_expectimax_matches_scalar_oracle(n, rocks, depth, halflife):
    rocks = [(x % n, y % n) for x, y in rocks]
    if len(set(rocks)) < len(rocks):
        rocks = rocks[:1]
    m = RockSample.create(n, rock_positions=rocks, sensor_halflife=halflife)
    toy = ToyRocks(n, rocks, halflife)
    want, want_a = toy.value(uniform_prior(toy, m.start), depth)
    res = expectimax(exact_initial_belief(m), m, depth)
    assert res.value == pytest.approx(want, abs=1e-9)
    assert res.q_values[res.best_action] == pytest.approx(want, abs=1e-9)
    # lowest index among maximisers
    best = max(res.q_values.values())
    assert res.best_action == min(a for a, q in res.q_values.items() if q >= best - 1e-12)


def test_self_consistency_on_particles(rng):
    m = RockSample.create(3, k=2, placement_seed=1)
    res = expectimax(init_belief(m, 300, rng), m, 3)
    assert all(res.value >= q - 1e-9 for q in res.q_values.values())


def test_node_budget_guard():
    m = RockSample.create(5, k=4, placement_seed=0)
    with pytest.raises(ExpertBudgetError):
        expectimax(exact_initial_belief(m), m, 4, node_budget=50)


def test_bad_depth():
    m = RockSample.create(3, k=1)
    with pytest.raises(InvalidArgumentError):
        expectimax(exact_initial_belief(m), m, 0)


def test_lightdark_expectimax_runs(rng):
    m = LightDark()
    b = init_belief(m, 200, rng)
    res = expectimax(b, m, 2, max_particles=32, rng=rng)
    assert math.isfinite(res.value) and res.best_action in res.q_values


# ---------------------------------------------------------------- leaves


def test_blind_leaf_lower_than_qmdp(rng):
    m = RockSample.create(4, k=3, placement_seed=2)
    b = ExactBelief.from_particles(init_belief(m, 500, rng))
    blind = rocksample_blind_leaf(m, b.support, b.probs)
    upper = qmdp_leaf(m)(m, b.support, b.probs)
    assert blind <= upper + 1e-9


def test_blind_leaf_known_rocks():
    m = RockSample.create(3, rock_positions=[(2, 1)])
    b = point_belief(m, RockState(0, 1, (True,), (False,)))
    g = 0.95
    # walk two steps east, sample at t=2, exit at t=3
    assert rocksample_blind_leaf(m, b.support, b.probs) == pytest.approx(g**2 * 10 + g**3 * 10)


def test_mdp_values_known_state():
    m = RockSample.create(3, rock_positions=[(2, 1)])
    V = mdp_values(m)
    assert V[0, 1, 1] == pytest.approx(0.95**2 * 10 + 0.95**3 * 10)
    assert V[2, 0, 0] == pytest.approx(10.0)


# ------------------------------------------------------------ expert_mcts


def test_expert_mcts_matches_expectimax_on_toy():
    from gammazero.checks import toy_model
    from gammazero.mcts import SearchConfig

    m = toy_model()
    want = expectimax(exact_initial_belief(m), m, m.horizon)
    assert want.best_action == 5
    cfg = SearchConfig(max_depth=m.horizon)
    for seed in range(5):
        rng = np.random.default_rng(seed)
        res = expert_mcts(init_belief(m, 500, rng), m, 5000, rng, cfg)
        assert res.best_action == want.best_action


def test_expert_mcts_single_sim(rng):
    m = RockSample.create(4, k=2)
    res = expert_mcts(init_belief(m, 100, rng), m, 1, rng)
    assert len(res.q_values) == 1 and res.best_action in res.q_values


def test_expert_mcts_deterministic():
    m = RockSample.create(4, k=2)
    out = []
    for _ in range(2):
        rng = np.random.default_rng(3)
        out.append(expert_mcts(init_belief(m, 200, rng), m, 300, rng))
    assert out[0] == out[1]


# ------------------------------------------------------------ collection


class AllBad(RockSample):
    def sample_particles(self, n, rng):
        out = super().sample_particles(n, rng)
        out[:, 3 : 3 + self.k] = 0
        return out


def all_bad(n, rocks):
    base = RockSample.create(n, rock_positions=rocks)
    return AllBad(base.params, base.discount, base.horizon)


def test_episode_length_and_no_sample_targets():
    m = all_bad(6, [(2, 3), (4, 1)])
    ds = collect_expert_data(m, Expert(m), 1, np.random.default_rng(0), n_particles=50)
    assert len(ds) == 6  # six steps east from x=0
    assert all(s.target_action == E for s in ds.samples)
    assert ds.provenance["expert"] == "expectimax(depth=3,leaf=blind)"


def test_value_targets_are_value_to_go():
    m = all_bad(4, [(1, 1)])
    ds = collect_expert_data(m, Expert(m), 1, np.random.default_rng(0), n_particles=20)
    for t, s in enumerate(ds.samples):
        assert s.target_value == pytest.approx(0.95 ** (3 - t) * 10)


def test_failing_expert_discards_episode(rng, caplog):
    m = RockSample.create(3, k=1)
    calls = {"n": 0}

    def expert(belief, rng):
        calls["n"] += 1
        raise ExpertBudgetError("boom")

    ds = collect_expert_data(m, expert, 2, rng, n_particles=10)
    assert len(ds) == 0 and calls["n"] == 2
    assert "discarded" in caplog.text


def test_dataset_roundtrip_and_determinism(tmp_path):
    m = RockSample.create(4, k=2, placement_seed=1)
    paths = []
    for i in range(2):
        ds = collect_expert_data(m, Expert(m, ExpertConfig(depth=2)), 2, np.random.default_rng(5), n_particles=100)
        paths.append(tmp_path / f"d{i}.jsonl")
        write_dataset(ds, paths[-1])
    assert paths[0].read_bytes() == paths[1].read_bytes()
    back = read_dataset(paths[0])
    for a, b in zip(ds.samples, back.samples):
        assert a.target_action == b.target_action and a.target_value == b.target_value
        for name in ("x_node", "x_edge", "src", "dst", "action_mask"):
            np.testing.assert_array_equal(getattr(a.graph, name), getattr(b.graph, name))


def test_collect_rejects_zero_episodes(rng):
    m = RockSample.create(3, k=1)
    with pytest.raises(InvalidArgumentError):
        collect_expert_data(m, Expert(m), 0, rng)
