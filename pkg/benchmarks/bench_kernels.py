"""Compare the compiled kernels against the numpy fallback.

Run ``python benchmarks/bench_kernels.py``. The numba switch is read at import
time, so each backend is measured in its own subprocess (the numpy one with
``GAMMAZERO_DISABLE_NUMBA=1``) and the parent prints a side-by-side table.
``--json`` prints the raw per-backend timings instead.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import timeit


def _best(fn, number: int, repeat: int = 5) -> float:
    fn()  # warm-up, includes compilation
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def measure() -> dict:
    import numpy as np

    from gammazero import _kernels as K
    from gammazero.belief import init_belief, update_belief
    from gammazero.checks import perturbed_params, random_rocksample_belief
    from gammazero.domains import RockSample
    from gammazero.gnn.fast import FastNetwork
    from gammazero.graph import build_graph
    from gammazero.mcts import GnnEvaluator, RolloutEvaluator, SearchConfig, plan

    model = RockSample.create(6, 5, placement_seed=0)
    rng = np.random.default_rng(0)
    belief = random_rocksample_belief(model, rng, n_particles=1000)
    states = np.ascontiguousarray(belief.states)
    weights = np.full(1000, 1e-3)
    params = perturbed_params(16, 2, seed=0)
    net = FastNetwork(params)
    graph = build_graph(belief, model)
    gidx = int(np.flatnonzero(graph.node_type == 4)[0])
    u = rng.random(1000)
    acts = rng.integers(0, model.action_count, size=15)
    row = np.ascontiguousarray(states[0])
    obs = model.sample_observation_row(row, 5, np.random.default_rng(0))
    ev = GnnEvaluator(params, model)
    cfg = SearchConfig.for_model(model).replace(n_sims=200)

    def plan_gnn():
        ev._cache.clear()
        plan(init_belief(model, 1000, np.random.default_rng(1)), model, ev, cfg, np.random.default_rng(1))

    def plan_uniform():
        plan(init_belief(model, 1000, np.random.default_rng(1)), model, RolloutEvaluator(model, cfg.max_depth),
             cfg, np.random.default_rng(1))

    cases = {
        "propagate (1000 particles)": (lambda: model.propagate(states, 2), 200),
        "likelihood (1000 particles)": (lambda: model.likelihoods(states, 5, obs), 200),
        "systematic resample (1000)": (lambda: K.systematic_resample(weights, u[0], 1000), 500),
        "random rollout (15 steps)": (lambda: model.rollout(row, acts), 2000),
        "belief update (1000 particles)": (
            lambda: update_belief(model, belief, 5, obs, np.random.default_rng(0)), 100),
        "graph + forward (search evaluator)": (lambda: (ev._cache.clear(), ev(belief, 0, rng)), 200),
        "forward only (H=16, L=2)": (
            lambda: net.run(graph.x_node, graph.x_edge, graph.src, graph.dst, gidx, graph.action_nodes), 200),
        "plan, network evaluator (200 sims)": (plan_gnn, 1),
        "plan, rollout evaluator (200 sims)": (plan_uniform, 1),
    }
    out = {"numba": K.USING_NUMBA}
    for name, (fn, number) in cases.items():
        out[name] = _best(fn, number)
    return out


def _child(disable: bool) -> dict:
    env = dict(os.environ)
    if disable:
        env["GAMMAZERO_DISABLE_NUMBA"] = "1"
    else:
        env.pop("GAMMAZERO_DISABLE_NUMBA", None)
    res = subprocess.run([sys.executable, __file__, "--child"], env=env, capture_output=True, text=True, check=True)
    return json.loads(res.stdout.strip().splitlines()[-1])


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--child", action="store_true", help=argparse.SUPPRESS)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()
    if args.child:
        print(json.dumps(measure()))
        return
    fast, slow = _child(False), _child(True)
    if args.json:
        print(json.dumps({"numba": fast, "numpy": slow}, indent=2))
        return
    print(f"{'case':40s} {'numba':>12s} {'numpy':>12s} {'speedup':>8s}")
    for name in fast:
        if name == "numba":
            continue
        a, b = fast[name], slow[name]
        print(f"{name:40s} {a * 1e6:10.1f}us {b * 1e6:10.1f}us {b / a:7.1f}x")


if __name__ == "__main__":
    main()
