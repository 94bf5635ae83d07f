"""End-to-end acceptance criteria. Each test appends one PASS/FAIL line to the terminal summary.

Criteria 4 to 6 share one network, trained once per session on expert-labelled
RockSample(4,2)/(4,3) beliefs. The full module takes about 15 minutes on one CPU core.
"""

import dataclasses
import time

import numpy as np
import pytest
from scipy import stats

from gammazero.checks import equivariance_check, filter_vs_exact, gradient_check, invariant_suite, plugin_oracle_check
from gammazero.cli import collect
from gammazero.config import RunConfig
from gammazero.domains import RockSample
from gammazero.evaluation import evaluate, make_agent
from gammazero.gnn.train import train
from gammazero.mcts import SearchConfig

pytestmark = pytest.mark.slow

EPISODES = 100
N_PARTICLES = 1000


def record(log, number, passed, text):
    line = f"{'PASS' if passed else 'FAIL'} criterion {number}: {text}"
    print(line)
    log.append(line)
    return passed


@pytest.fixture(scope="session")
def trained():
    t0 = time.perf_counter()
    cfg = RunConfig()
    cfg.collect.episodes = 40
    cfg.belief.n_particles = N_PARTICLES
    dataset = collect(cfg)
    train_cfg = dataclasses.replace(
        cfg.training, hidden=16, rounds=2, learning_rate=2e-3, epochs=60, batch_size=32, seed=0
    )
    result = train(dataset.samples, train_cfg)
    return dataset, result, time.perf_counter() - t0


def test_criterion_1_filter(acceptance_log):
    res = filter_vs_exact()
    ok = res.passed and res.seconds < 60
    assert record(acceptance_log, 1, ok, f"max joint TV {res.value:.4f} < 0.05 over 40 traces ({res.seconds:.1f}s)")


def test_criterion_2_gradient(acceptance_log):
    res = gradient_check()
    ok = res.passed and res.seconds < 60
    assert record(acceptance_log, 2, ok, f"max relative error {res.value:.2e} < 1e-4, {res.detail} ({res.seconds:.1f}s)")


def test_criterion_3_equivariance(acceptance_log, trained):
    res = equivariance_check(trained[1].params)
    assert record(acceptance_log, 3, res.passed, f"max deviation {res.value:.2e} <= 1e-6 on 10 beliefs")


def test_criterion_4_learning(acceptance_log, trained):
    dataset, result, seconds = trained
    best = result.log[result.best_epoch - 1]
    v = np.array([dataset.samples[i].target_value for i in result.val_indices])
    ratio = best.val_value_mse / v.var()
    ok = len(dataset) >= 500 and best.val_accuracy >= 0.70 and ratio <= 0.25 and seconds < 1800
    assert record(acceptance_log, 4, ok,
                  f"{len(dataset)} samples, val top-1 {best.val_accuracy:.3f} >= 0.70, "
                  f"value MSE / var {ratio:.3f} <= 0.25 ({seconds:.0f}s)")


def test_criterion_5_transfer(acceptance_log, trained):
    params = trained[1].params
    model = RockSample.create(8, k=6, placement_seed=0)
    t0 = time.perf_counter()
    raw = evaluate(model, make_agent("raw_policy", model, params), EPISODES, 0, N_PARTICLES)
    rnd = evaluate(model, make_agent("random", model), EPISODES, 0, N_PARTICLES)
    uni = evaluate(model, make_agent("uniform_mcts", model, search=SearchConfig(n_sims=1000)), EPISODES, 0, N_PARTICLES)
    seconds = time.perf_counter() - t0
    ok = raw.mean >= 1.5 * rnd.mean and raw.mean >= 0.9 * uni.mean and seconds < 1800
    assert record(acceptance_log, 5, ok,
                  f"raw_policy {raw.mean:.2f}+-{raw.stderr:.2f} vs random {rnd.mean:.2f} (x1.5) "
                  f"and uniform MCTS(1000) {uni.mean:.2f} (x0.9) on RockSample(8,6) ({seconds:.0f}s)")


def test_criterion_6_search(acceptance_log, trained):
    params = trained[1].params
    model = RockSample.create(6, k=5, placement_seed=0)
    cfg = SearchConfig(n_sims=500)
    gz = evaluate(model, make_agent("mcts", model, params, cfg), EPISODES, 0, N_PARTICLES)
    base = evaluate(model, make_agent("uniform_mcts", model, search=cfg), EPISODES, 0, N_PARTICLES)
    diff = np.array(gz.returns) - np.array(base.returns)
    p = stats.ttest_rel(gz.returns, base.returns, alternative="greater").pvalue
    time_ratio = gz.mean_planning_time / base.mean_planning_time
    ok = diff.mean() >= 0 and p < 0.05 and time_ratio <= 2.0
    assert record(acceptance_log, 6, ok,
                  f"mean difference {diff.mean():+.2f} (GammaZero {gz.mean:.2f} vs uniform {base.mean:.2f}), "
                  f"one-sided paired p={p:.2g} < 0.05, planning time ratio {time_ratio:.2f} <= 2")


def test_criterion_7_plugin_oracle(acceptance_log):
    res = plugin_oracle_check(trials=100, n_sims=5000, required=95)
    assert record(acceptance_log, 7, res.passed, f"{res.value}/100 trials match expectimax ({res.seconds:.1f}s)")


def test_criterion_8_invariants(acceptance_log):
    results = invariant_suite()
    failed = [r.name for r in results if not r.passed]
    names = ", ".join(r.name for r in results)
    assert record(acceptance_log, 8, not failed, f"{len(results) - len(failed)}/{len(results)} green ({names})"
                  + (f"; failed: {failed}" if failed else ""))
