"""Particle-filter beliefs and an exact Bayes filter for small discrete instances."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import predicates
from .domains import PomdpModel
from .errors import (
    BeliefDepletionError,
    InvalidArgumentError,
    UnsupportedDomainError,
    ZeroPosteriorError,
)

log = logging.getLogger(__name__)

RESAMPLE_FRACTION = 0.5


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.flags.writeable = False
    return a


@dataclass(frozen=True, eq=False)
class ParticleBelief:
    """Weighted particle set. ``states`` holds one encoded state per row."""

    states: np.ndarray
    weights: np.ndarray
    domain: str = ""

    def __post_init__(self):
        if self.states.shape[0] != self.weights.shape[0]:
            raise InvalidArgumentError("particles and weights differ in length")
        if self.states.shape[0] == 0:
            raise InvalidArgumentError("a belief needs at least one particle")
        object.__setattr__(self, "states", _frozen(self.states))
        object.__setattr__(self, "weights", _frozen(np.asarray(self.weights, dtype=np.float64)))

    @property
    def n(self) -> int:
        return self.states.shape[0]

    particle_count = n

    def particles(self, model: PomdpModel) -> list:
        return [model.decode(r) for r in self.states]

    def ess(self) -> float:
        return 1.0 / float(np.dot(self.weights, self.weights))

    def is_terminal(self, model: PomdpModel) -> bool:
        """True when every particle with positive weight is terminal."""
        live = self.weights > 0
        return bool(model.terminal_mask(self.states)[live].all())

    def expected_reward(self, rewards: np.ndarray) -> float:
        return float(np.dot(self.weights, rewards))

    def sample_index(self, rng: np.random.Generator) -> int:
        cum = np.cumsum(self.weights)
        return min(int(np.searchsorted(cum, rng.random() * cum[-1], side="right")), self.n - 1)


def systematic_resample(weights: np.ndarray, rng: np.random.Generator, m: int | None = None) -> np.ndarray:
    """Indices of ``m`` (default ``len(weights)``) systematically resampled particles."""
    weights = np.ascontiguousarray(weights, dtype=np.float64)
    m = weights.shape[0] if m is None else int(m)
    return K.systematic_resample(weights, rng.random(), m)


def init_belief(model: PomdpModel, n: int, rng: np.random.Generator) -> ParticleBelief:
    if n < 1:
        raise InvalidArgumentError(f"particle count must be >= 1, got {n}")
    return ParticleBelief(model.sample_particles(n, rng), np.full(n, 1.0 / n), model.name)


def downsample(belief: ParticleBelief, m: int, rng: np.random.Generator) -> ParticleBelief:
    """Systematically resample to ``m`` equally weighted particles (no-op if already <= m)."""
    if belief.n <= m:
        return belief
    idx = systematic_resample(belief.weights, rng, m)
    return ParticleBelief(belief.states[idx], np.full(m, 1.0 / m), belief.domain)


def reweight(
    model: PomdpModel,
    next_states: np.ndarray,
    weights: np.ndarray,
    action: int,
    obs,
    rng: np.random.Generator,
    resample_fraction: float = RESAMPLE_FRACTION,
) -> ParticleBelief:
    """Correction step: weight propagated particles by the observation likelihood."""
    n = next_states.shape[0]
    w = weights * model.likelihoods(next_states, action, obs)
    total = float(w.sum())
    if not total > 0.0 or not np.isfinite(total):
        log.debug("particle weights collapsed on action %d obs %r; redrawing", action, obs)
        next_states = model.reinit_particles(next_states, rng)
        w = model.likelihoods(next_states, action, obs) / n
        total = float(w.sum())
        if not total > 0.0 or not np.isfinite(total):
            raise BeliefDepletionError(
                "belief depleted after fallback",
                {"particles": n, "retries": 1, "action": int(action), "observation": repr(obs)},
            )
    w = w / total
    if 1.0 / float(np.dot(w, w)) < resample_fraction * n:
        idx = systematic_resample(w, rng)
        next_states = next_states[idx]
        w = np.full(n, 1.0 / n)
    return ParticleBelief(next_states, w, model.name)


def update_belief(
    model: PomdpModel,
    belief: ParticleBelief,
    action: int,
    obs,
    rng: np.random.Generator,
    resample_fraction: float = RESAMPLE_FRACTION,
) -> ParticleBelief:
    """Propagate every particle through ``action`` and condition on ``obs``."""
    action = model.check_action(action)
    next_states, _ = model.propagate(belief.states, action)
    return reweight(model, next_states, belief.weights, action, obs, rng, resample_fraction)


def marginal(belief, predicate, model: PomdpModel | None = None) -> float:
    """Probability mass of the states satisfying ``predicate``.

    ``predicate`` is either a :class:`~gammazero.predicates.GroundedPredicate`
    (needs ``model``) or a callable mapping the state array to a boolean mask.
    Works for particle and exact beliefs alike.
    """
    states, probs = _mass(belief)
    if isinstance(predicate, predicates.GroundedPredicate):
        if model is None:
            raise InvalidArgumentError("a model is required to evaluate grounded predicates")
        mask = predicates.evaluate(model, predicate, states)
    else:
        mask = np.asarray(predicate(states), dtype=bool)
    return float(np.dot(probs, mask))


def _mass(belief):
    if isinstance(belief, ParticleBelief):
        return belief.states, belief.weights
    return belief.support, belief.probs


# ------------------------------------------------------------- exact filter


@dataclass(frozen=True, eq=False)
class ExactBelief:
    """Distribution over distinct encoded states; used as an oracle on small instances."""

    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=np.float64)
        if probs.ndim != 1 or probs.shape[0] != self.support.shape[0]:
            raise InvalidArgumentError("support and probs differ in length")
        if (probs < 0).any() or abs(probs.sum() - 1.0) > 1e-12:
            raise InvalidArgumentError("exact belief probabilities must be a distribution")
        object.__setattr__(self, "support", _frozen(self.support))
        object.__setattr__(self, "probs", _frozen(probs))

    def states(self, model: PomdpModel) -> list:
        return [model.decode(r) for r in self.support]

    def is_terminal(self, model: PomdpModel) -> bool:
        return bool(model.terminal_mask(self.support)[self.probs > 0].all())

    def key(self, digits: int = 12) -> tuple:
        """Hashable canonical form (row bytes with rounded probabilities)."""
        return tuple(sorted(zip((r.tobytes() for r in self.support), np.round(self.probs, digits).tolist())))

    @classmethod
    def from_weighted(cls, rows: np.ndarray, weights: np.ndarray) -> "ExactBelief":
        """Merge duplicate rows, drop zero mass and normalize."""
        index: dict[bytes, int] = {}
        keep: list[int] = []
        mass: list[float] = []
        for i, (row, w) in enumerate(zip(rows, weights)):
            if w <= 0:
                continue
            key = row.tobytes()
            j = index.get(key)
            if j is None:
                index[key] = len(keep)
                keep.append(i)
                mass.append(float(w))
            else:
                mass[j] += float(w)
        if not keep:
            raise ZeroPosteriorError("no state carries positive probability")
        probs = np.array(mass)
        return cls(rows[keep], probs / probs.sum())

    @classmethod
    def from_particles(cls, belief: ParticleBelief) -> "ExactBelief":
        return cls.from_weighted(belief.states, belief.weights)


def _require_enumerable(model: PomdpModel):
    if model.continuous_observations or not hasattr(model, "enumerate_initial_states"):
        raise UnsupportedDomainError(f"{model.name} has no enumerable state space")


def exact_initial_belief(model: PomdpModel) -> ExactBelief:
    _require_enumerable(model)
    states = model.enumerate_initial_states()
    rows = np.stack([model.encode(s) for s in states])
    return ExactBelief(rows, np.full(len(states), 1.0 / len(states)))


def exact_update(model: PomdpModel, belief: ExactBelief, action: int, obs) -> ExactBelief:
    """Exact Bayes posterior after ``action`` and ``obs``."""
    _require_enumerable(model)
    action = model.check_action(action)
    nxt, _ = model.propagate(belief.support, action)
    post = belief.probs * model.likelihoods(nxt, action, obs)
    if not post.sum() > 0:
        raise ZeroPosteriorError(
            f"observation {obs!r} has zero likelihood under every supported state"
        )
    return ExactBelief.from_weighted(nxt, post)


def rock_marginals(model, belief) -> np.ndarray:
    """P(rock i good) for every rock of a RockSample belief (particle or exact)."""
    states, probs = _mass(belief)
    return probs @ states[:, 3 : 3 + model.k]

