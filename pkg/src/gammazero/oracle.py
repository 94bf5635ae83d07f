"""Expert policies used to label training data.

``expectimax`` searches the belief tree exhaustively (max over actions,
expectation over observations) down to a fixed depth. Leaf values come from a
pluggable evaluator; the default is 0. Two informed leaves are provided:

* :func:`rocksample_blind_leaf`: best open-loop plan (visit some rocks in some
  order, sample, exit) under the current rock marginals. It ignores future
  sensing, so checking a rock near the root has real value in the search.
* :func:`lightdark_blind_leaf`: best "move j steps then stop" plan.
"""

from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .belief import ExactBelief, ParticleBelief, downsample, init_belief, update_belief
from .domains import LightDark, PomdpModel, RockSample
from .domains.lightdark import STOP
from .errors import DataError, ExpertBudgetError, GammaZeroError, InvalidArgumentError, ZeroPosteriorError
from .graph import DEFAULT_TAU, build_graph
from .gnn.train import TrainingSample

log = logging.getLogger(__name__)

Leaf = Callable[[PomdpModel, np.ndarray, np.ndarray], float]

GH_POINTS = 5
DEFAULT_NODE_BUDGET = 2_000_000


@dataclass(frozen=True)
class ExpertResult:
    best_action: int | None
    value: float
    q_values: dict = field(default_factory=dict)
    terminal: bool = False


def zero_leaf(model, states, probs) -> float:
    return 0.0


# ----------------------------------------------------------------- leaves


def rocksample_blind_leaf(model: RockSample, states: np.ndarray, probs: np.ndarray) -> float:
    """Value of the best open-loop plan: visit an ordered subset of rocks, sample each, exit east."""
    live = states[:, 2] == 0
    if not live.any():
        return 0.0
    k = model.k
    p_live = probs[live]
    mass = p_live.sum()
    x0, y0 = (int(v) for v in states[np.flatnonzero(live)[0], :2])
    if not np.all(states[live, 0] == x0) or not np.all(states[live, 1] == y0):
        # position is normally known exactly; fall back to averaging per cell
        total = 0.0
        for x, y in {(int(a), int(b)) for a, b in states[live, :2]}:
            sel = live & (states[:, 0] == x) & (states[:, 1] == y)
            total += rocksample_blind_leaf(model, states[sel], probs[sel])
        return total
    good = (p_live @ states[live, 3 : 3 + k]) / mass
    rewards = model.params.rewards
    gamma = model.discount
    gain = good * rewards.good_sample + (1.0 - good) * rewards.bad_sample
    useful = [i for i in range(k) if gain[i] > 0]
    n = model.grid_n
    rx, ry = model.rock_x, model.rock_y
    best = gamma ** (n - x0 - 1) * rewards.exit
    for r in range(1, len(useful) + 1):
        for order in itertools.permutations(useful, r):
            t, x, y, total = 0, x0, y0, 0.0
            for i in order:
                t += abs(int(rx[i]) - x) + abs(int(ry[i]) - y)
                x, y = int(rx[i]), int(ry[i])
                total += gamma**t * gain[i]
                t += 1
            total += gamma ** (t + n - x - 1) * rewards.exit
            best = max(best, total)
    return float(mass * best)


def lightdark_blind_leaf(model: LightDark, states: np.ndarray, probs: np.ndarray, reach: int = 15) -> float:
    """Best value of moving ``j`` unit steps (either direction) and then stopping."""
    p = model.params
    live = states[:, 1] == 0
    if not live.any():
        return 0.0
    y = states[live, 0]
    w = probs[live]
    gamma = model.discount
    best = -math.inf
    for j in range(-reach, reach + 1):
        steps = abs(j)
        hit = np.abs(y + j * p.step_size - p.goal_y) <= p.goal_tolerance
        stop = float(w @ np.where(hit, p.goal_reward, p.miss_penalty))
        cost = p.step_cost * sum(gamma**t for t in range(steps)) * w.sum()
        best = max(best, cost + gamma**steps * stop)
    return best


def default_leaf(model: PomdpModel) -> Leaf:
    if isinstance(model, RockSample):
        return rocksample_blind_leaf
    if isinstance(model, LightDark):
        return lightdark_blind_leaf
    return zero_leaf


# ------------------------------------------------------------- expectimax


class _Search:
    def __init__(self, model: PomdpModel, leaf: Leaf, node_budget: int):
        self.model = model
        self.leaf = leaf
        self.budget = node_budget
        self.nodes = 0
        self.memo: dict = {}
        self.discrete = not getattr(model, "continuous_observations", False)

    def _key(self, states, probs):
        if self.discrete:
            return tuple(sorted(zip((r.tobytes() for r in states), np.round(probs, 12).tolist())))
        return (states.tobytes(), np.round(probs, 12).tobytes())

    def _branches(self, states, probs, action):
        """Yield (probability, posterior states, posterior probs) per observation branch."""
        model = self.model
        nxt, rew = model.propagate(states, action)
        expected_r = float(probs @ rew)
        if model.terminal_mask(nxt).all():
            return expected_r, [(1.0, nxt, probs)]
        out = []
        branches = model.observation_branches(action)
        if branches is not None:
            for o in branches:
                w = probs * model.likelihoods(nxt, action, o)
                po = float(w.sum())
                if po <= 0.0:
                    continue
                b = ExactBelief.from_weighted(nxt, w)
                out.append((po, b.support, b.probs))
        else:
            out = self._gauss_hermite(nxt, probs, action)
        return expected_r, out

    def _gauss_hermite(self, nxt, probs, action):
        model = self.model
        live = ~model.terminal_mask(nxt)
        y = nxt[:, 0]
        w = probs * live
        w = w / w.sum()
        mu = float(w @ y)
        sd = float(np.sqrt(w @ (model.params.noise(y) ** 2 + (y - mu) ** 2)))
        xs, ws = np.polynomial.hermite.hermgauss(GH_POINTS)
        out = []
        for x, wt in zip(xs, ws):
            o = mu + math.sqrt(2.0) * sd * x
            post = probs * model.likelihoods(nxt, action, o)
            tot = post.sum()
            if tot > 0:
                out.append((float(wt / math.sqrt(math.pi)), nxt, post / tot))
        return out

    def value(self, states, probs, depth) -> tuple[float, int | None, dict]:
        model = self.model
        if model.terminal_mask(states)[probs > 0].all():
            return 0.0, None, {}
        if depth == 0:
            return self.leaf(model, states, probs), None, {}
        key = (self._key(states, probs), depth)
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        self.nodes += 1
        if self.nodes > self.budget:
            raise ExpertBudgetError(f"expectimax exceeded its node budget of {self.budget}")
        legal = model.legal_actions(states, probs)
        gamma = model.discount
        q = {}
        for a in range(model.action_count):
            if not legal[a]:
                continue
            r, branches = self._branches(states, probs, a)
            future = 0.0
            for po, s2, p2 in branches:
                future += po * self.value(s2, p2, depth - 1)[0]
            q[a] = r + gamma * future
        best = max(q, key=lambda a: (q[a], -a))
        result = (q[best], best, q)
        self.memo[key] = result
        return result


def _as_support(belief, model: PomdpModel, max_particles: int | None, rng):
    if isinstance(belief, ExactBelief):
        return belief.support, belief.probs
    if not isinstance(belief, ParticleBelief):
        raise InvalidArgumentError("expectimax needs a ParticleBelief or ExactBelief")
    if not getattr(model, "continuous_observations", False):
        ex = ExactBelief.from_particles(belief)
        return ex.support, ex.probs
    if max_particles is not None and belief.n > max_particles:
        belief = downsample(belief, max_particles, rng or np.random.default_rng(0))
    return np.asarray(belief.states), np.asarray(belief.weights)


def expectimax(
    belief,
    model: PomdpModel,
    depth: int,
    leaf: Leaf | None = None,
    node_budget: int = DEFAULT_NODE_BUDGET,
    max_particles: int | None = 64,
    rng: np.random.Generator | None = None,
) -> ExpertResult:
    """Depth-limited belief expectimax; ties go to the lowest action index.

    Discrete domains are searched on the exact merged support of ``belief``.
    Continuous-observation domains use a moment-matched Gauss-Hermite
    discretization of the predictive observation over (at most
    ``max_particles``) particles.
    """
    if depth < 1:
        raise InvalidArgumentError(f"depth must be >= 1, got {depth}")
    states, probs = _as_support(belief, model, max_particles, rng)
    search = _Search(model, leaf or zero_leaf, node_budget)
    if model.terminal_mask(states)[probs > 0].all():
        return ExpertResult(None, 0.0, {}, terminal=True)
    v, a, q = search.value(states, probs, depth)
    return ExpertResult(int(a), float(v), {int(k): float(x) for k, x in q.items()})


def mdp_values(model: RockSample, tol: float = 1e-10) -> np.ndarray:
    """Fully observable optimal values indexed by ``[x, y, mask]`` (mask of good, unsampled rocks)."""
    n, k = model.grid_n, model.k
    rw = model.params.rewards
    masks = np.arange(2**k)
    V = np.zeros((n, n, 2**k))
    xs, ys, ms = np.meshgrid(np.arange(n), np.arange(n), masks, indexing="ij")
    rock_here = np.full((n, n), -1)
    for i in range(k):
        rock_here[model.rock_x[i], model.rock_y[i]] = i
    ri = rock_here[xs, ys]
    has = ri >= 0
    bit = np.where(has, 1 << np.maximum(ri, 0), 0)
    good_here = has & ((ms & bit) != 0)
    sample_r = np.where(good_here, rw.good_sample, rw.bad_sample)
    after = ms & ~bit
    while True:
        cand = [sample_r + model.discount * V[xs, ys, after]]
        for dx, dy in ((0, 1), (0, -1), (1, 0), (-1, 0)):
            nx, ny = xs + dx, ys + dy
            inside = (nx >= 0) & (nx < n) & (ny >= 0) & (ny < n)
            nxc, nyc = np.clip(nx, 0, n - 1), np.clip(ny, 0, n - 1)
            if dx == 1:
                exits = nx >= n
                q = np.where(exits, rw.exit, np.where(inside, model.discount * V[nxc, nyc, ms], 0.0))
            else:
                q = np.where(inside, model.discount * V[nxc, nyc, ms], rw.illegal + model.discount * V)
            cand.append(q)
        new = np.max(cand, axis=0)
        if np.max(np.abs(new - V)) < tol:
            return new
        V = new


def qmdp_leaf(model: RockSample) -> Leaf:
    """Leaf returning the belief-weighted fully observable value (an upper bound)."""
    V = mdp_values(model)
    k = model.k
    weights = 1 << np.arange(k)

    def leaf(_model, states, probs):
        live = states[:, 2] == 0
        good = states[live, 3 : 3 + k] & (1 - states[live, 3 + k :])
        idx = good @ weights
        return float(probs[live] @ V[states[live, 0], states[live, 1], idx])

    return leaf


# --------------------------------------------------------------- experts


@dataclass
class ExpertConfig:
    kind: str = "expectimax"  # or "mcts"
    depth: int = 3
    leaf: str = "blind"  # "blind", "zero" or "qmdp"
    node_budget: int = DEFAULT_NODE_BUDGET
    n_sims: int = 50_000
    max_particles: int = 64

    def __post_init__(self):
        if self.kind not in ("expectimax", "mcts"):
            raise InvalidArgumentError(f"unknown expert kind {self.kind!r}")
        if self.leaf not in ("blind", "zero", "qmdp"):
            raise InvalidArgumentError(f"unknown leaf {self.leaf!r}")
        if self.depth < 1 or self.n_sims < 1:
            raise InvalidArgumentError("depth and n_sims must be positive")


def make_leaf(model: PomdpModel, name: str) -> Leaf:
    if name == "zero":
        return zero_leaf
    if name == "qmdp":
        if not isinstance(model, RockSample):
            raise InvalidArgumentError("the qmdp leaf is only defined for RockSample")
        return qmdp_leaf(model)
    return default_leaf(model)


def expert_mcts(belief: ParticleBelief, model: PomdpModel, n_sims: int, rng: np.random.Generator, config=None) -> ExpertResult:
    """High-budget uniform-prior MCTS with random-rollout leaves; returns the most visited action and its Q."""
    from .mcts import RolloutEvaluator, SearchConfig, plan

    if n_sims < 1:
        raise InvalidArgumentError("n_sims must be >= 1")
    cfg = config or SearchConfig.for_model(model)
    cfg = cfg.replace(n_sims=n_sims, z_q=0.0, z_n=1.0, sample_root=False)
    action, stats = plan(belief, model, RolloutEvaluator(model, cfg.max_depth), cfg, rng)
    q = {int(a): float(s["q"]) for a, s in stats.table.items()}
    return ExpertResult(int(action), q[int(action)], q)


class Expert:
    """Callable wrapper: ``expert(belief, rng) -> ExpertResult``."""

    def __init__(self, model: PomdpModel, config: ExpertConfig | None = None):
        self.model = model
        self.config = config or ExpertConfig()
        self._leaf = make_leaf(model, self.config.leaf)

    @property
    def name(self) -> str:
        c = self.config
        if c.kind == "mcts":
            return f"mcts(n_sims={c.n_sims})"
        return f"expectimax(depth={c.depth},leaf={c.leaf})"

    def __call__(self, belief, rng) -> ExpertResult:
        c = self.config
        if c.kind == "mcts":
            return expert_mcts(belief, self.model, c.n_sims, rng)
        return expectimax(belief, self.model, c.depth, self._leaf, c.node_budget, c.max_particles, rng)


@dataclass
class Dataset:
    samples: list
    provenance: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.samples)

    def check(self) -> "Dataset":
        dims = {(s.graph.x_node.shape[1], s.graph.x_edge.shape[1]) for s in self.samples}
        if len(dims) > 1:
            raise DataError(f"samples disagree on feature dimensions: {sorted(dims)}")
        return self


def run_expert_episode(model: PomdpModel, expert, rng: np.random.Generator, n_particles: int, tau: float = DEFAULT_TAU):
    """One episode driven by ``expert``; returns the (graph, action, value) samples recorded along it."""
    belief = init_belief(model, n_particles, rng)
    state = model.sample_particles(1, rng)[0]
    samples = []
    for _ in range(model.horizon):
        if model.terminal_mask(state[None])[0]:
            break
        res = expert(belief, rng)
        if res.terminal or res.best_action is None:
            break
        graph = build_graph(belief, model, tau)
        samples.append(TrainingSample(graph, int(res.best_action), float(res.value)))
        nxt, _ = model.propagate(state[None], res.best_action)
        state = nxt[0]
        obs = model.sample_observation_row(state, res.best_action, rng)
        belief = update_belief(model, belief, res.best_action, obs, rng)
    return samples


def collect_expert_data(
    model: PomdpModel,
    expert,
    episodes: int,
    rng: np.random.Generator,
    n_particles: int = 1000,
    tau: float = DEFAULT_TAU,
    provenance: dict | None = None,
) -> Dataset:
    """Roll out ``episodes`` expert episodes and record one sample per decision."""
    if episodes < 1:
        raise InvalidArgumentError("episodes must be >= 1")
    samples = []
    for ep in range(episodes):
        try:
            samples += run_expert_episode(model, expert, rng, n_particles, tau)
        except (GammaZeroError, ZeroPosteriorError) as exc:
            log.warning("episode %d discarded: %s", ep, exc)
    prov = {
        "domain": model.name,
        "instances": [model.params_dict()],
        "expert": getattr(expert, "name", type(expert).__name__),
        "episodes": episodes,
    }
    prov.update(provenance or {})
    return Dataset(samples, prov).check()
