"""Episode runner and the agent modes compared by the harness."""

from __future__ import annotations

import csv
import math
import multiprocessing
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .belief import init_belief, reweight, update_belief
from .domains import PomdpModel
from .errors import InvalidArgumentError
from .gnn import GnnParameters, forward
from .graph import DEFAULT_TAU, build_graph
from .mcts import GnnEvaluator, RolloutEvaluator, SearchConfig, plan
from .oracle import Expert, ExpertConfig

MODES = ("raw_policy", "raw_value", "mcts", "uniform_mcts", "random", "expert")
GH_OBS = 5


def episode_rngs(seed: int, index: int):
    """Independent streams for the hidden state, the environment and the agent.

    Keeping them apart pairs episodes across modes: episode ``i`` draws the same
    hidden rock qualities whatever the agent does.
    """
    return tuple(np.random.default_rng([seed, index, j]) for j in range(3))


# ------------------------------------------------------------------ agents


def argmax_legal(scores: np.ndarray, mask: np.ndarray) -> int:
    z = np.where(mask, scores, -np.inf)
    return int(np.argmax(z))


class RawPolicyAgent:
    def __init__(self, model, params: GnnParameters, tau: float = DEFAULT_TAU):
        self.model, self.params, self.tau = model, params, tau

    def __call__(self, belief, rng) -> int:
        g = build_graph(belief, self.model, self.tau)
        out = forward(self.params, g)
        return int(g.actions[argmax_legal(out.policy, g.action_mask)])


class RawValueAgent:
    """Greedy one-step lookahead on the network's value of successor beliefs."""

    def __init__(self, model, params: GnnParameters, tau: float = DEFAULT_TAU, n_particles: int | None = 200):
        self.model, self.params, self.tau, self.n_particles = model, params, tau, n_particles

    def _value(self, belief) -> float:
        if belief.is_terminal(self.model):
            return 0.0
        return forward(self.params, build_graph(belief, self.model, self.tau)).value

    def q_values(self, belief, rng) -> np.ndarray:
        from .belief import downsample

        model = self.model
        if self.n_particles is not None:
            belief = downsample(belief, self.n_particles, rng)
        legal = model.legal_actions(belief.states, belief.weights)
        q = np.full(model.action_count, -np.inf)
        for a in np.flatnonzero(legal):
            nxt, rew = model.propagate(belief.states, int(a))
            r = belief.expected_reward(rew)
            branches = model.observation_branches(int(a))
            if branches is None:
                idx = [belief.sample_index(rng) for _ in range(GH_OBS)]
                branches = [model.sample_observation_row(nxt[i], int(a), rng) for i in idx]
                probs = np.full(len(branches), 1.0 / len(branches))
            else:
                probs = np.array([belief.weights @ model.likelihoods(nxt, int(a), o) for o in branches])
            future = 0.0
            for o, po in zip(branches, probs):
                if po <= 0:
                    continue
                child = reweight(model, nxt, belief.weights, int(a), o, rng)
                future += po * self._value(child)
            q[a] = r + model.discount * future / probs.sum()
        return q

    def __call__(self, belief, rng) -> int:
        q = self.q_values(belief, rng)
        return int(np.argmax(q))


class MctsAgent:
    def __init__(self, model, evaluator, cfg: SearchConfig, trace=None):
        self.model, self.evaluator, self.cfg, self.trace = model, evaluator, cfg, trace

    def __call__(self, belief, rng) -> int:
        action, _ = plan(belief, self.model, self.evaluator, self.cfg, rng, trace=self.trace)
        return action


class RandomAgent:
    def __init__(self, model):
        self.model = model

    def __call__(self, belief, rng) -> int:
        return int(rng.integers(self.model.action_count))


class ExpertAgent:
    def __init__(self, model, config: ExpertConfig | None = None):
        self.expert = Expert(model, config)

    def __call__(self, belief, rng) -> int:
        return int(self.expert(belief, rng).best_action)


def make_agent(mode: str, model: PomdpModel, params: GnnParameters | None = None,
               search: SearchConfig | None = None, expert: ExpertConfig | None = None,
               tau: float = DEFAULT_TAU, trace=None):
    if mode not in MODES:
        raise InvalidArgumentError(f"unknown mode {mode!r}; choose from {MODES}")
    if mode in ("raw_policy", "raw_value", "mcts") and params is None:
        raise InvalidArgumentError(f"mode {mode} needs network parameters")
    search = search or SearchConfig.for_model(model)
    if mode == "raw_policy":
        return RawPolicyAgent(model, params, tau)
    if mode == "raw_value":
        return RawValueAgent(model, params, tau)
    if mode == "mcts":
        return MctsAgent(model, GnnEvaluator(params, model, tau), search.replace(tau=tau), trace)
    if mode == "uniform_mcts":
        return MctsAgent(model, RolloutEvaluator(model, search.max_depth), search, trace)
    if mode == "random":
        return RandomAgent(model)
    return ExpertAgent(model, expert)


# ---------------------------------------------------------------- episodes


@dataclass
class EpisodeResult:
    discounted_return: float
    length: int
    planning_time: float  # total seconds spent choosing actions
    actions: list = field(default_factory=list)


def run_episode(model: PomdpModel, agent, seed: int, index: int, n_particles: int) -> EpisodeResult:
    state_rng, env_rng, agent_rng = episode_rngs(seed, index)
    state = model.sample_particles(1, state_rng)[0]
    belief = init_belief(model, n_particles, agent_rng)
    total, disc, spent = 0.0, 1.0, 0.0
    actions = []
    for _ in range(model.horizon):
        if model.terminal_mask(state[None])[0]:
            break
        t0 = time.perf_counter()
        a = model.check_action(agent(belief, agent_rng))
        spent += time.perf_counter() - t0
        nxt, rew = model.propagate(state[None], a)
        total += disc * float(rew[0])
        disc *= model.discount
        state = nxt[0]
        obs = model.sample_observation_row(state, a, env_rng)
        belief = update_belief(model, belief, a, obs, agent_rng)
        actions.append(a)
    return EpisodeResult(total, len(actions), spent, actions)


@dataclass
class EvalReport:
    mode: str
    instance: dict
    returns: list
    lengths: list
    planning_times: list

    @property
    def episodes(self) -> int:
        return len(self.returns)

    @property
    def mean(self) -> float:
        return float(np.mean(self.returns))

    @property
    def stderr(self) -> float:
        if len(self.returns) < 2:
            return 0.0
        return float(np.std(self.returns, ddof=1) / math.sqrt(len(self.returns)))

    @property
    def mean_planning_time(self) -> float:
        """Seconds per action, averaged over every step of every episode."""
        steps = sum(self.lengths)
        return float(sum(self.planning_times) / steps) if steps else 0.0

    def summary(self) -> dict:
        return {
            "mode": self.mode, "episodes": self.episodes, "mean": self.mean, "stderr": self.stderr,
            "mean_planning_time": self.mean_planning_time, "mean_length": float(np.mean(self.lengths)),
        }

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["episode", "return", "length", "planning_time"])
            for i, (r, n, t) in enumerate(zip(self.returns, self.lengths, self.planning_times)):
                w.writerow([i, repr(r), n, repr(t)])


def _run_indexed(args):
    model, agent, seed, i, n_particles = args
    return run_episode(model, agent, seed, i, n_particles)


def evaluate(model: PomdpModel, agent, episodes: int, seed: int, n_particles: int, mode: str = "",
             workers: int = 1) -> EvalReport:
    """Run ``episodes`` seeded episodes; with ``workers > 1`` they fan out over processes.

    Episode ``i`` depends only on ``(seed, i)``, so the report is the same for
    any worker count.
    """
    if episodes < 1:
        raise InvalidArgumentError("episodes must be >= 1")
    jobs = [(model, agent, seed, i, n_particles) for i in range(episodes)]
    if workers > 1:
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            results = list(pool.map(_run_indexed, jobs))
    else:
        results = [_run_indexed(j) for j in jobs]
    return EvalReport(
        mode=mode,
        instance=model.params_dict(),
        returns=[r.discounted_return for r in results],
        lengths=[r.length for r in results],
        planning_times=[r.planning_time for r in results],
    )
