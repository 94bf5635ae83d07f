"""Generative POMDP interface shared by the benchmark domains.

States exist in two forms. The scalar API works on hashable named tuples and
is what the environment and the exact filter use. The batch API works on a 2-D
array of encoded particles (one row per state) and is what the particle filter,
the tree search and the graph encoder use.
"""

from __future__ import annotations

import abc
from typing import Any, Sequence

import numpy as np

from ..errors import InvalidActionError


class PomdpModel(abc.ABC):
    """Base class for a generative POMDP with a fixed, enumerated action set."""

    name: str = "pomdp"
    continuous_observations: bool = False

    def __init__(self, discount: float, horizon: int):
        if not 0.0 < discount <= 1.0:
            raise ValueError(f"discount must lie in (0, 1], got {discount}")
        if horizon < 1:
            raise ValueError(f"horizon must be positive, got {horizon}")
        self.discount = float(discount)
        self.horizon = int(horizon)

    # ------------------------------------------------------------ actions
    @property
    @abc.abstractmethod
    def action_count(self) -> int: ...

    @abc.abstractmethod
    def action_name(self, action: int) -> str: ...

    def check_action(self, action: int) -> int:
        if isinstance(action, (bool, np.bool_)) or not isinstance(action, (int, np.integer)):
            raise InvalidActionError(f"action must be an integer index, got {action!r}")
        if not 0 <= action < self.action_count:
            raise InvalidActionError(
                f"action {action} out of range for {self.name} with {self.action_count} actions"
            )
        return int(action)

    # -------------------------------------------------------- scalar API
    @abc.abstractmethod
    def initial_state(self, rng: np.random.Generator): ...

    @abc.abstractmethod
    def is_terminal(self, state) -> bool: ...

    def transition(self, state, action: int, rng: np.random.Generator | None = None):
        """Successor of ``state`` under ``action``. Dynamics are deterministic."""
        action = self.check_action(action)
        if self.is_terminal(state):
            raise InvalidActionError("cannot act from a terminal state")
        nxt, _ = self.propagate(self.encode(state)[None, :], action)
        return self.decode(nxt[0])

    def reward(self, state, action: int, next_state=None) -> float:
        action = self.check_action(action)
        _, rew = self.propagate(self.encode(state)[None, :], action)
        return float(rew[0])

    def sample_observation(self, next_state, action: int, rng: np.random.Generator):
        action = self.check_action(action)
        return self.sample_observation_row(self.encode(next_state), action, rng)

    def observation_likelihood(self, obs, next_state, action: int) -> float:
        action = self.check_action(action)
        return float(self.likelihoods(self.encode(next_state)[None, :], action, obs)[0])

    # --------------------------------------------------------- batch API
    @abc.abstractmethod
    def encode(self, state) -> np.ndarray: ...

    @abc.abstractmethod
    def decode(self, row: np.ndarray): ...

    @abc.abstractmethod
    def sample_particles(self, n: int, rng: np.random.Generator) -> np.ndarray:
        """``n`` i.i.d. draws from the initial-state prior, encoded."""

    @abc.abstractmethod
    def propagate(self, particles: np.ndarray, action: int) -> tuple[np.ndarray, np.ndarray]:
        """Successor particles and per-particle rewards. ``action`` is pre-validated."""

    @abc.abstractmethod
    def likelihoods(self, particles: np.ndarray, action: int, obs) -> np.ndarray: ...

    @abc.abstractmethod
    def sample_observation_row(self, row: np.ndarray, action: int, rng: np.random.Generator): ...

    @abc.abstractmethod
    def terminal_mask(self, particles: np.ndarray) -> np.ndarray: ...

    @abc.abstractmethod
    def reinit_particles(self, particles: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Redraw the hidden part of each particle, keeping deterministic knowns."""

    def legal_actions(self, particles: np.ndarray, weights: np.ndarray) -> np.ndarray:
        return np.ones(self.action_count, dtype=bool)

    def observation_branches(self, action: int) -> Sequence[Any] | None:
        """Enumerated observations for ``action``, or None when continuous."""
        return None

    @abc.abstractmethod
    def rollout(self, row: np.ndarray, actions: np.ndarray) -> float:
        """Discounted return of an open-loop action sequence from one encoded state."""

    @abc.abstractmethod
    def params_dict(self) -> dict: ...

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.params_dict()})"
