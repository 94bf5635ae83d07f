"""Belief-space MCTS with prior-guided progressive widening and learned leaf values.

A simulation descends belief node -> action edge -> observation child until it
creates a new belief node (or hits a terminal node or the depth limit). The
new node is evaluated once by the evaluator, which supplies both a value and
action priors; the value is then backed up along the path.
"""

from __future__ import annotations

import dataclasses
import json
import hashlib
import math
import time
from dataclasses import dataclass, field
from typing import Protocol

import numpy as np

from .belief import ParticleBelief, downsample, reweight
from ._graph_kernel import rocksample_arrays
from .domains import LightDark, PomdpModel, RockSample
from .errors import InvalidArgumentError, NoActionError, NumericError
from .gnn import GnnParameters, forward
from .gnn.fast import FastNetwork, masked_softmax
from .graph import DEFAULT_TAU, build_graph


@dataclass(frozen=True)
class SearchConfig:
    n_sims: int = 500
    c_puct: float = 50.0
    k_a: float = 2.0
    alpha_a: float = 0.9
    k_o: float = 2.0
    alpha_o: float = 0.1
    max_depth: int = 15
    z_n: float = 1.0
    z_q: float = 1.0
    tree_particles: int = 100
    sample_root: bool = False
    tau: float = DEFAULT_TAU
    check_invariants: bool = False

    def __post_init__(self):
        if self.n_sims < 1 or self.max_depth < 1 or self.tree_particles < 1:
            raise InvalidArgumentError("n_sims, max_depth and tree_particles must be positive")
        if self.c_puct < 0 or self.k_a <= 0 or self.k_o <= 0:
            raise InvalidArgumentError("c_puct must be >= 0 and k_a, k_o > 0")
        if not (0.0 <= self.alpha_a < 1.0 and 0.0 <= self.alpha_o < 1.0):
            raise InvalidArgumentError("alpha_a and alpha_o must lie in [0, 1)")
        if self.z_n < 0 or self.z_q < 0:
            raise InvalidArgumentError("z_n and z_q must be non-negative")

    @classmethod
    def for_model(cls, model: PomdpModel, **overrides) -> "SearchConfig":
        depth = 10 if isinstance(model, LightDark) else 15
        return cls(**{"max_depth": depth, **overrides})

    def replace(self, **changes) -> "SearchConfig":
        return dataclasses.replace(self, **changes)


# -------------------------------------------------------------- evaluators


class Evaluator(Protocol):
    def __call__(self, belief: ParticleBelief, depth: int, rng: np.random.Generator) -> tuple[float, np.ndarray | None]:
        """Value estimate and action priors (None means uniform) for a non-terminal belief."""


class GnnEvaluator:
    """Value and priors from the network on the belief graph.

    Results are memoised on the belief marginals that determine the graph: particle beliefs in
    a tree often repeat exactly (the same cell and rock marginals reached by
    different action orders), and the graph is a pure function of the belief.
    """

    def __init__(self, params: GnnParameters, model: PomdpModel, tau: float = DEFAULT_TAU, cache_size: int = 50_000):
        self.params = params
        self.model = model
        self.tau = tau
        self.net = FastNetwork(params)
        self.cache_size = cache_size
        self._cache: dict = {}
        self.hits = 0
        self.calls = 0

    def _arrays(self, belief):
        if isinstance(self.model, RockSample):
            out = rocksample_arrays(belief.states, belief.weights, self.model, self.tau)
            if out is not None:
                node_type, xn, src, dst, xe, a0, legal, key, dst_starts = out
                return (xn, xe, src, dst, 0, np.arange(a0, xn.shape[0]), legal, None, dst_starts), key.tobytes()
        g = build_graph(belief, self.model, self.tau)
        gidx = int(np.flatnonzero(g.node_type == 4)[0])
        h = hashlib.blake2b(digest_size=16)
        for arr in (g.x_node, g.x_edge, g.src, g.action_mask):
            h.update(arr.tobytes())
        return (g.x_node, g.x_edge, g.src, g.dst, gidx, g.action_nodes, g.action_mask, g.actions, None), h.digest()

    def __call__(self, belief, depth, rng):
        self.calls += 1
        (xn, xe, src, dst, gidx, anodes, legal, actions, starts), key = self._arrays(belief)
        hit = self._cache.get(key)
        if hit is not None:
            self.hits += 1
            return hit
        value, logits = self.net.run(xn, xe, src, dst, gidx, anodes, starts)
        policy = masked_softmax(logits, legal)
        if not (math.isfinite(value) and math.isfinite(policy[0])):
            raise NumericError("network produced a non-finite output")
        if actions is None:
            priors = policy
        else:
            priors = np.zeros(self.model.action_count)
            priors[actions] = policy
        if len(self._cache) >= self.cache_size:
            self._cache.clear()
        self._cache[key] = (value, priors)
        return value, priors


class RolloutEvaluator:
    """Uniform priors; value from one uniformly random rollout of a sampled particle."""

    def __init__(self, model: PomdpModel, max_depth: int = 15):
        self.model = model
        self.max_depth = max_depth

    def __call__(self, belief, depth, rng):
        steps = self.max_depth - depth
        if steps <= 0:
            return 0.0, None
        row = belief.states[belief.sample_index(rng)]
        actions = rng.integers(0, self.model.action_count, size=steps)
        return self.model.rollout(np.ascontiguousarray(row), actions), None


class ValueFunctionEvaluator:
    """Wraps a plain ``belief -> value`` function (e.g. exact values for testing)."""

    def __init__(self, fn, priors=None):
        self.fn = fn
        self.priors = priors

    def __call__(self, belief, depth, rng):
        return float(self.fn(belief)), self.priors


def evaluate_leaf(belief: ParticleBelief, params: GnnParameters, model: PomdpModel, tau: float = DEFAULT_TAU) -> float:
    """Network value of ``belief``; 0 for terminal beliefs."""
    if belief.is_terminal(model):
        return 0.0
    return forward(params, build_graph(belief, model, tau)).value


# -------------------------------------------------------------------- tree


class ActionEdge:
    __slots__ = ("action", "n", "q", "prior", "reward", "next_states", "weights", "cum", "children", "obs_keys")

    def __init__(self, action: int, prior: float, q0: float):
        self.action = action
        self.n = 0
        self.q = q0
        self.prior = prior
        self.reward = 0.0
        self.next_states = None
        self.weights = None
        self.cum = None
        self.children: dict = {}
        self.obs_keys: list = []


class BeliefNode:
    __slots__ = ("belief", "n", "value", "priors", "legal", "children", "terminal", "depth")

    def __init__(self, belief: ParticleBelief, depth: int):
        self.belief = belief
        self.depth = depth
        self.n = 0
        self.value = 0.0
        self.priors = None
        self.legal = None
        self.children: dict[int, ActionEdge] = {}
        self.terminal = False

    def widening_limit(self, cfg: SearchConfig) -> int:
        return math.ceil(cfg.k_a * max(self.n, 1) ** cfg.alpha_a)


@dataclass
class RootStats:
    table: dict
    n_sims: int
    action: int
    planning_time: float
    pi: dict = field(default_factory=dict)

    def to_record(self) -> dict:
        return {
            "action": int(self.action),
            "n_sims": self.n_sims,
            "planning_time": self.planning_time,
            "root": {str(a): v for a, v in sorted(self.table.items())},
            "pi": {str(a): p for a, p in sorted(self.pi.items())},
        }


def select_action(node: BeliefNode, cfg: SearchConfig, rng: np.random.Generator | None = None) -> ActionEdge:
    """Widen with a prior-drawn action if the budget allows, otherwise pick by PUCT."""
    expanded = node.children
    if len(expanded) < node.widening_limit(cfg):
        cand = node.legal.copy()
        for a in expanded:
            cand[a] = False
        if cand.any():
            p = np.where(cand, node.priors, 0.0)
            total = p.sum()
            if not total > 0:
                p = cand / cand.sum()
            else:
                p = p / total
            rng = rng or np.random.default_rng()
            a = int(np.searchsorted(np.cumsum(p), rng.random() * 1.0, side="right"))
            a = min(a, len(p) - 1)
            while not cand[a]:  # guard against round-off at the cumsum tail
                a -= 1
            edge = ActionEdge(a, float(node.priors[a]), node.value)
            expanded[a] = edge
            return edge
    scale = cfg.c_puct * math.sqrt(max(node.n, 1))
    best, best_score = None, -math.inf
    for a in sorted(expanded):
        e = expanded[a]
        score = e.q + scale * e.prior / (1 + e.n)
        if score > best_score:
            best, best_score = e, score
    return best


def backpropagate(path, leaf_value: float, discount: float) -> None:
    """Bottom-up ``G = r + discount * G`` with running-mean Q updates."""
    g = leaf_value
    for node, edge in reversed(path):
        g = edge.reward + discount * g
        edge.n += 1
        node.n += 1
        edge.q += (g - edge.q) / edge.n


def root_distribution(counts, q, z_n: float = 1.0, z_q: float = 1.0) -> np.ndarray:
    """pi proportional to N^z_n * exp(Q)^z_q, with Q shifted by its max first."""
    counts = np.asarray(counts, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    w = np.power(counts, z_n) * np.exp(z_q * (q - q.max()))
    total = w.sum()
    if not total > 0:
        w = np.ones_like(w)
        total = w.sum()
    return w / total


def root_selection(stats: dict, z_n: float = 1.0, z_q: float = 1.0, rng=None, sample: bool = False) -> int:
    """Action from ``{action: {"n": .., "q": ..}}``; argmax (lowest index on ties) unless ``sample``."""
    if not stats:
        raise NoActionError("no expanded root action")
    actions = sorted(stats)
    pi = root_distribution([stats[a]["n"] for a in actions], [stats[a]["q"] for a in actions], z_n, z_q)
    if sample:
        rng = rng or np.random.default_rng()
        return int(actions[int(rng.choice(len(actions), p=pi))])
    return int(actions[int(np.argmax(pi))])


class Planner:
    """One search tree per :meth:`plan` call."""

    def __init__(self, model: PomdpModel, evaluator, cfg: SearchConfig, rng: np.random.Generator):
        self.model = model
        self.evaluator = evaluator
        self.cfg = cfg
        self.rng = rng
        self.discrete = not getattr(model, "continuous_observations", False)

    def _node(self, belief: ParticleBelief, depth: int) -> BeliefNode:
        node = BeliefNode(belief, depth)
        if belief.is_terminal(self.model):
            node.terminal = True
            return node
        A = self.model.action_count
        node.legal = self.model.legal_actions(belief.states, belief.weights)
        value, priors = self.evaluator(belief, depth, self.rng)
        node.value = float(value)
        node.priors = np.full(A, 1.0 / A) if priors is None else np.asarray(priors, dtype=np.float64)
        return node

    def _ensure_transition(self, node: BeliefNode, edge: ActionEdge) -> None:
        if edge.next_states is not None:
            return
        b = node.belief
        nxt, rew = self.model.propagate(b.states, edge.action)
        edge.next_states = nxt
        edge.weights = b.weights
        edge.reward = b.expected_reward(rew)
        edge.cum = np.cumsum(b.weights)

    def _child(self, node: BeliefNode, edge: ActionEdge) -> tuple[BeliefNode, bool]:
        """Observation child to descend into, and whether it was just created."""
        cfg, rng, model = self.cfg, self.rng, self.model
        if not self.discrete and edge.obs_keys and len(edge.obs_keys) >= math.ceil(cfg.k_o * max(edge.n, 1) ** cfg.alpha_o):
            key = edge.obs_keys[int(rng.integers(len(edge.obs_keys)))]
            return edge.children[key], False
        i = min(int(np.searchsorted(edge.cum, rng.random() * edge.cum[-1], side="right")), len(edge.cum) - 1)
        obs = model.sample_observation_row(edge.next_states[i], edge.action, rng)
        key = int(obs) if self.discrete else float(obs)
        child = edge.children.get(key)
        if child is not None:
            return child, False
        post = reweight(model, edge.next_states, edge.weights, edge.action, obs, rng)
        post = downsample(post, cfg.tree_particles, rng)
        child = self._node(post, node.depth + 1)
        edge.children[key] = child
        edge.obs_keys.append(key)
        return child, True

    def simulate(self, root: BeliefNode) -> None:
        path = []
        node = root
        value = 0.0
        while True:
            if node.terminal:
                value = 0.0
                break
            if node.depth >= self.cfg.max_depth:
                value = node.value
                break
            edge = select_action(node, self.cfg, self.rng)
            self._ensure_transition(node, edge)
            path.append((node, edge))
            child, created = self._child(node, edge)
            if created or child.terminal:
                value = 0.0 if child.terminal else child.value
                break
            node = child
        backpropagate(path, value, self.model.discount)
        if self.cfg.check_invariants:
            for n, _ in path:
                check_node(n, self.cfg)

    def plan(self, belief: ParticleBelief):
        start = time.perf_counter()
        root = self._node(belief, 0)
        if root.terminal:
            raise NoActionError("belief is terminal; no action to plan")
        if not root.legal.any():
            raise NoActionError("no executable action at the root belief")
        for _ in range(self.cfg.n_sims):
            self.simulate(root)
        table = {a: {"n": e.n, "q": e.q, "prior": e.prior} for a, e in sorted(root.children.items())}
        action = root_selection(table, self.cfg.z_n, self.cfg.z_q, self.rng, self.cfg.sample_root)
        actions = sorted(table)
        pi = root_distribution([table[a]["n"] for a in actions], [table[a]["q"] for a in actions], self.cfg.z_n, self.cfg.z_q)
        elapsed = time.perf_counter() - start
        stats = RootStats(table, self.cfg.n_sims, action, elapsed, dict(zip(actions, pi.tolist())))
        return action, stats, root


def check_node(node: BeliefNode, cfg: SearchConfig) -> None:
    if node.terminal:
        return
    total = sum(e.n for e in node.children.values())
    assert total == node.n, f"count conservation violated: {total} != {node.n}"
    assert len(node.children) <= node.widening_limit(cfg), "progressive widening bound violated"
    for e in node.children.values():
        assert math.isfinite(e.q), "non-finite Q"


def walk(root: BeliefNode):
    """Every belief node of the tree, depth first."""
    stack = [root]
    while stack:
        node = stack.pop()
        yield node
        for e in node.children.values():
            stack.extend(e.children.values())


def check_tree(root: BeliefNode, cfg: SearchConfig) -> int:
    count = 0
    for node in walk(root):
        check_node(node, cfg)
        count += 1
    return count


def plan(belief: ParticleBelief, model: PomdpModel, evaluator, config: SearchConfig, rng: np.random.Generator,
         trace=None, return_tree: bool = False):
    """Run ``config.n_sims`` simulations from ``belief`` and return ``(action, RootStats)``.

    ``evaluator`` is a :class:`GnnParameters` (learned priors and values) or any
    callable following the :class:`Evaluator` protocol. ``trace`` may be a
    writable text file; one JSON line per decision is appended to it.
    """
    if isinstance(evaluator, GnnParameters):
        evaluator = GnnEvaluator(evaluator, model, config.tau)
    planner = Planner(model, evaluator, config, rng)
    action, stats, root = planner.plan(belief)
    if trace is not None:
        trace.write(json.dumps(stats.to_record(), sort_keys=True) + "\n")
    if return_tree:
        return action, stats, root
    return action, stats
