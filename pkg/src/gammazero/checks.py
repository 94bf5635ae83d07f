"""Self-checks run by ``gammazero oracle-check`` and by the acceptance tests.

Each check returns a :class:`CheckResult`; none of them raises on failure, so
a caller can run the whole suite and report every outcome.
"""

from __future__ import annotations

import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field

import numpy as np

from .belief import (
    ExactBelief,
    ParticleBelief,
    downsample,
    exact_initial_belief,
    exact_update,
    init_belief,
    update_belief,
)
from .domains import RockSample
from .gnn import GnnParameters, forward, load_params, save_params
from .gnn.train import TrainingConfig, TrainingSample, gradient, loss
from .graph import D_EDGE, D_NODE, build_graph
from .mcts import SearchConfig, check_tree, plan, root_distribution, root_selection
from .oracle import expectimax, make_leaf

log = logging.getLogger(__name__)


@dataclass
class CheckResult:
    name: str
    passed: bool
    value: float
    threshold: float
    detail: str = ""
    seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return f"{status} {self.name}: {self.value:.6g} (threshold {self.threshold:g}) {self.detail}".rstrip()


def _timed(fn):
    def run(*args, **kwargs):
        t0 = time.perf_counter()
        res = fn(*args, **kwargs)
        res.seconds = time.perf_counter() - t0
        return res

    run.__name__ = fn.__name__
    run.__doc__ = fn.__doc__
    return run


def random_rocksample_belief(model, rng, n_particles: int = 500, steps: int = 4) -> ParticleBelief:
    """A particle belief reached by a few random legal actions with sampled observations."""
    belief = init_belief(model, n_particles, rng)
    state = model.sample_particles(1, rng)[0]
    for _ in range(steps):
        legal = np.flatnonzero(model.legal_actions(belief.states, belief.weights))
        a = int(rng.choice(legal))
        nxt, _ = model.propagate(state[None], a)
        if model.terminal_mask(nxt)[0]:
            break
        state = nxt[0]
        belief = update_belief(model, belief, a, model.sample_observation_row(state, a, rng), rng)
    return belief


def perturbed_params(hidden: int, rounds: int, seed: int, scale: float = 0.3) -> GnnParameters:
    """Random parameters with every array (zero-initialized ones included) made nonzero."""
    rng = np.random.default_rng(seed)
    p = GnnParameters.init(D_NODE, D_EDGE, hidden, rounds, seed=seed)
    for name, a in p.arrays.items():
        a += rng.normal(0.0, scale, a.shape)
    return p


# -------------------------------------------------------------- filter


def _joint_tv(belief: ParticleBelief, exact: ExactBelief) -> float:
    approx = ExactBelief.from_particles(belief)
    mass: dict[bytes, float] = {}
    for row, p in zip(exact.support, exact.probs):
        mass[row.tobytes()] = mass.get(row.tobytes(), 0.0) + float(p)
    for row, p in zip(approx.support, approx.probs):
        mass[row.tobytes()] = mass.get(row.tobytes(), 0.0) - float(p)
    return 0.5 * sum(abs(v) for v in mass.values())


@_timed
def filter_vs_exact(instances=((3, 1), (3, 2)), traces: int = 20, steps: int = 10, n_particles: int = 10_000,
                    seed: int = 0, threshold: float = 0.05) -> CheckResult:
    """Particle filter against the exact Bayes filter on seeded random traces.

    The distance is the total variation between the full joint state
    distributions, which bounds the distance between any pair of marginals.
    """
    worst = 0.0
    where = ""
    for n, k in instances:
        model = RockSample.create(n, k=k, placement_seed=seed)
        for t in range(traces):
            rng = np.random.default_rng([seed, n, k, t])
            state = model.sample_particles(1, rng)[0]
            pb = init_belief(model, n_particles, rng)
            eb = exact_initial_belief(model)
            for step in range(steps):
                legal = np.flatnonzero(model.legal_actions(eb.support, eb.probs))
                a = int(rng.choice(legal))
                nxt, _ = model.propagate(state[None], a)
                if model.terminal_mask(nxt)[0]:
                    break
                state = nxt[0]
                obs = model.sample_observation_row(state, a, rng)
                eb = exact_update(model, eb, a, obs)
                pb = update_belief(model, pb, a, obs, rng)
                tv = _joint_tv(pb, eb)
                if tv > worst:
                    worst, where = tv, f"RockSample({n},{k}) trace {t} step {step}"
    return CheckResult("filter_vs_exact", worst < threshold, worst, threshold, f"worst at {where}" if where else "")


# ------------------------------------------------------------ gradient


def gradient_fixture(seed: int = 0, hidden: int = 8, rounds: int = 2):
    rng = np.random.default_rng(seed)
    model = RockSample.create(4, k=2, placement_seed=seed + 1)
    samples = []
    for target_value in (3.0, -1.0):
        b = random_rocksample_belief(model, rng, 200, steps=3)
        g = build_graph(b, model)
        legal = np.flatnonzero(g.action_mask)
        samples.append(TrainingSample(g, int(rng.choice(legal)), target_value))
    return perturbed_params(hidden, rounds, seed + 7), samples


@_timed
def gradient_check(seed: int = 0, coords: int = 24, h: float = 1e-4, threshold: float = 1e-4) -> CheckResult:
    """Analytic gradient against central differences on random coordinates.

    Every parameter array contributes at least one coordinate before the rest
    are drawn at random. Relative error is |a - f| / max(|a|, |f|, 1e-8).
    """
    params, samples = gradient_fixture(seed)
    cfg = TrainingConfig(hidden=params.hidden, rounds=params.rounds)
    grads, _ = gradient(params, samples, cfg)
    rng = np.random.default_rng(seed + 99)
    names = params.names()
    picks = list(names) + [names[int(rng.integers(len(names)))] for _ in range(max(0, coords - len(names)))]
    worst, where = 0.0, ""
    for name in picks:
        a = params.arrays[name]
        idx = tuple(int(rng.integers(0, s)) for s in a.shape)
        orig = a[idx]
        a[idx] = orig + h
        lp = loss(params, samples, cfg).total
        a[idx] = orig - h
        lm = loss(params, samples, cfg).total
        a[idx] = orig
        fd = (lp - lm) / (2 * h)
        an = float(grads[name][idx])
        rel = abs(fd - an) / max(abs(fd), abs(an), 1e-8)
        if rel > worst:
            worst, where = rel, f"{name}{list(idx)}"
    return CheckResult("gradient_vs_fd", worst < threshold, worst, threshold,
                       f"{len(picks)} coordinates, worst {where}")


# --------------------------------------------------------- equivariance


@_timed
def equivariance_check(params: GnnParameters | None = None, beliefs: int = 10, seed: int = 0,
                       threshold: float = 1e-6) -> CheckResult:
    """Relabel rocks of RockSample(5,3) beliefs; policy must permute and value stay put."""
    params = params or perturbed_params(16, 2, seed)
    rng = np.random.default_rng(seed)
    model = RockSample.create(5, k=3, placement_seed=seed + 2)
    worst = 0.0
    for _ in range(beliefs):
        belief = random_rocksample_belief(model, rng, 300, steps=int(rng.integers(0, 6)))
        perm = rng.permutation(model.k)
        m2 = model.relabeled(perm)
        b2 = ParticleBelief(model.relabel_particles(belief.states, perm), belief.weights, belief.domain)
        o1 = forward(params, build_graph(belief, model))
        o2 = forward(params, build_graph(b2, m2))
        expect = o1.policy.copy()
        for i, j in enumerate(perm):
            expect[5 + j] = o1.policy[5 + i]
        worst = max(worst, abs(o1.value - o2.value), float(np.max(np.abs(expect - o2.policy))))
    return CheckResult("equivariance", worst <= threshold, worst, threshold, f"{beliefs} beliefs of RockSample(5,3)")


# ------------------------------------------------------ plug-in oracle


def toy_model(horizon: int = 2) -> RockSample:
    """3x3 grid, one rock under the start cell (0, 1), two-step horizon.

    Sampling blind is worth 0 in expectation; checking first (perfect accuracy
    at distance 0) and sampling only a good rock is worth 0.5 * 0.95 * 10.
    """
    return RockSample.create(3, rock_positions=[(0, 1)], horizon=horizon)


class ExactValue:
    """Evaluator returning the exact finite-horizon value-to-go of a tree node.

    A node at tree depth ``d`` has ``horizon - d`` steps left; its value is the
    expectimax value over that many steps. Memoised on the exact support.
    """

    def __init__(self, model):
        self.model = model
        self.leaf = make_leaf(model, "zero")
        self.cache: dict = {}

    def __call__(self, belief, depth, rng):
        steps = self.model.horizon - depth
        if steps < 1:
            return 0.0, None
        exact = ExactBelief.from_particles(belief)
        key = (exact.key(), steps)
        v = self.cache.get(key)
        if v is None:
            v = expectimax(exact, self.model, steps, self.leaf).value
            self.cache[key] = v
        return v, None


@_timed
def plugin_oracle_check(trials: int = 100, n_sims: int = 5000, n_particles: int = 1000,
                        seed: int = 0, required: int = 95) -> CheckResult:
    """MCTS with exact values as the leaf evaluator must pick the expectimax action."""
    model = toy_model()
    evaluator = ExactValue(model)
    cfg = SearchConfig(n_sims=n_sims, max_depth=model.horizon)
    hits = 0
    actions = {}
    for t in range(trials):
        rng = np.random.default_rng([seed, t])
        belief = init_belief(model, n_particles, rng)
        target = expectimax(belief, model, model.horizon, evaluator.leaf).best_action
        a, _ = plan(belief, model, evaluator, cfg, rng)
        hits += int(a == target)
        actions[a] = actions.get(a, 0) + 1
    return CheckResult("plugin_oracle", hits >= required, hits, required,
                       f"of {trials} trials; chosen actions {dict(sorted(actions.items()))}",
                       extra={"actions": actions})


# ----------------------------------------------------- invariant suite


@_timed
def pw_and_counts_check(seed: int = 0, n_sims: int = 300) -> CheckResult:
    """Progressive-widening bound and count conservation at every node, after every simulation."""
    model = RockSample.create(4, k=3, placement_seed=seed)
    rng = np.random.default_rng(seed)
    belief = init_belief(model, 500, rng)
    cfg = SearchConfig(n_sims=n_sims, check_invariants=True)
    params = perturbed_params(8, 2, seed)
    try:
        _, _, root = plan(belief, model, params, cfg, rng, return_tree=True)
        nodes = check_tree(root, cfg)
    except AssertionError as exc:
        return CheckResult("pw_bound_and_count_conservation", False, 0, 0, str(exc))
    return CheckResult("pw_bound_and_count_conservation", True, nodes, 0, "nodes checked")


@_timed
def weight_normalization_check(seed: int = 0, steps: int = 10) -> CheckResult:
    model = RockSample.create(4, k=3, placement_seed=seed)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(5):
        belief = init_belief(model, 1000, rng)
        state = model.sample_particles(1, rng)[0]
        for _ in range(steps):
            a = int(rng.choice(np.flatnonzero(model.legal_actions(belief.states, belief.weights))))
            nxt, _ = model.propagate(state[None], a)
            if model.terminal_mask(nxt)[0]:
                break
            state = nxt[0]
            belief = update_belief(model, belief, a, model.sample_observation_row(state, a, rng), rng)
            worst = max(worst, abs(float(belief.weights.sum()) - 1.0))
            worst = max(worst, abs(float(downsample(belief, 100, rng).weights.sum()) - 1.0))
    return CheckResult("weight_normalization", worst <= 1e-9, worst, 1e-9)


@_timed
def threshold_monotonicity_check(seed: int = 0) -> CheckResult:
    model = RockSample.create(5, k=4, placement_seed=seed)
    rng = np.random.default_rng(seed)
    taus = [0.01, 0.05, 0.1, 0.3, 0.5, 0.9]
    violations = 0
    for _ in range(10):
        belief = random_rocksample_belief(model, rng, 400, steps=int(rng.integers(0, 8)))
        prev = None
        for tau in taus:
            g = build_graph(belief, model, tau)
            preds = {nid for nid, t in zip(g.node_ids, g.node_type) if t == 2}
            if prev is not None and not preds <= prev:
                violations += 1
            prev = preds
    return CheckResult("threshold_monotonicity", violations == 0, violations, 0, "violations")


@_timed
def softmax_normalization_check(seed: int = 0) -> CheckResult:
    params = perturbed_params(16, 2, seed, scale=1.0)
    rng = np.random.default_rng(seed)
    worst = 0.0
    for n, k in ((3, 1), (5, 3), (8, 6)):
        model = RockSample.create(n, k=k, placement_seed=seed)
        for _ in range(4):
            out = forward(params, build_graph(random_rocksample_belief(model, rng, 300, 3), model))
            worst = max(worst, abs(float(out.policy.sum()) - 1.0))
            if (out.policy < 0).any():
                worst = math.inf
    return CheckResult("softmax_normalization", worst <= 1e-6, worst, 1e-6)


@_timed
def shift_invariance_check(seed: int = 0, cases: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for _ in range(cases):
        m = int(rng.integers(1, 8))
        counts = rng.integers(1, 50, size=m)
        q = rng.normal(0, 5, size=m)
        stats = {a: {"n": int(c), "q": float(v)} for a, c, v in zip(range(m), counts, q)}
        shift = float(rng.normal(0, 100))
        shifted = {a: {"n": s["n"], "q": s["q"] - shift} for a, s in stats.items()}
        if root_selection(stats) != root_selection(shifted):
            bad += 1
        if not np.allclose(root_distribution(counts, q), root_distribution(counts, q - shift)):
            bad += 1
    return CheckResult("root_selection_shift_invariance", bad == 0, bad, 0, f"violations in {cases} cases")


@_timed
def param_roundtrip_check(seed: int = 0) -> CheckResult:
    params = perturbed_params(8, 2, seed)
    model = RockSample.create(4, k=2, placement_seed=seed)
    g = build_graph(init_belief(model, 200, np.random.default_rng(seed)), model)
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "params.bin")
        save_params(params, path)
        loaded = load_params(path)
    same = all(np.array_equal(params.arrays[n], loaded.arrays[n]) for n in params.names())
    o1, o2 = forward(params, g), forward(loaded, g)
    same = same and o1.value == o2.value and np.array_equal(o1.logits, o2.logits)
    return CheckResult("param_file_roundtrip", bool(same), float(not same), 0, "bit-exact" if same else "mismatch")


def invariant_suite(seed: int = 0) -> list[CheckResult]:
    return [
        pw_and_counts_check(seed),
        weight_normalization_check(seed),
        threshold_monotonicity_check(seed),
        softmax_normalization_check(seed),
        shift_invariance_check(seed),
        param_roundtrip_check(seed),
    ]


def oracle_check(seed: int = 0, quick: bool = False) -> list[CheckResult]:
    """Filter-vs-exact, gradient-vs-finite-difference, equivariance, plug-in search and the invariant suite."""
    results = [
        filter_vs_exact(traces=5 if quick else 20, n_particles=2000 if quick else 10_000, seed=seed),
        gradient_check(seed),
        equivariance_check(seed=seed),
        plugin_oracle_check(trials=20 if quick else 100, required=19 if quick else 95, seed=seed),
    ]
    results += invariant_suite(seed)
    return results
