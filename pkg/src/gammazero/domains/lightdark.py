"""One-dimensional LightDark localization."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from numbers import Real
from typing import NamedTuple

import numpy as np

from .. import _kernels as K
from ..errors import InvalidObservationError
from .base import PomdpModel

UP, DOWN, STOP = 0, 1, 2
ACTION_NAMES = ("Up", "Down", "Stop")


class LightDarkState(NamedTuple):
    y: float
    done: bool = False


@dataclass(frozen=True)
class LightDarkParams:
    light_y: float = 5.0
    sigma_min: float = 0.1
    goal_y: float = 0.0
    goal_tolerance: float = 1.0
    step_size: float = 1.0
    prior_mean: float = 2.0
    prior_std: float = 2.0
    goal_reward: float = 100.0
    miss_penalty: float = -100.0
    step_cost: float = -1.0

    def __post_init__(self):
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be positive")
        if self.goal_tolerance <= 0:
            raise ValueError("goal_tolerance must be positive")
        if self.prior_std <= 0:
            raise ValueError("prior_std must be positive")

    def noise(self, y):
        return np.abs(np.asarray(y, dtype=np.float64) - self.light_y) + self.sigma_min


class LightDark(PomdpModel):
    """Agent on the real line; observations are sharp near ``light_y``, blurry elsewhere.

    Encoded particle rows are ``[y, done]`` in float64.
    """

    name = "lightdark"
    continuous_observations = True

    def __init__(self, params: LightDarkParams | None = None, discount: float = 0.95, horizon: int = 50):
        super().__init__(discount, horizon)
        self.params = params or LightDarkParams()
        self.state_dim = 2

    @classmethod
    def create(cls, discount: float = 0.95, horizon: int = 50, **params) -> "LightDark":
        return cls(LightDarkParams(**params), discount=discount, horizon=horizon)

    def params_dict(self) -> dict:
        return {"domain": self.name, **asdict(self.params), "discount": self.discount, "horizon": self.horizon}

    @property
    def action_count(self) -> int:
        return 3

    def action_name(self, action: int) -> str:
        return ACTION_NAMES[self.check_action(action)]

    def encode(self, state: LightDarkState) -> np.ndarray:
        return np.array([float(state.y), float(state.done)])

    def decode(self, row) -> LightDarkState:
        return LightDarkState(float(row[0]), bool(row[1]))

    def initial_state(self, rng):
        return self.decode(self.sample_particles(1, rng)[0])

    def is_terminal(self, state) -> bool:
        return bool(state.done)

    def sample_particles(self, n, rng):
        out = np.zeros((n, 2))
        out[:, 0] = rng.normal(self.params.prior_mean, self.params.prior_std, size=n)
        return out

    def propagate(self, particles, action):
        p = self.params
        nxt = particles.copy()
        active = particles[:, 1] == 0
        rew = np.zeros(particles.shape[0])
        if action == STOP:
            at_goal = np.abs(particles[:, 0] - p.goal_y) <= p.goal_tolerance
            rew[active] = np.where(at_goal[active], p.goal_reward, p.miss_penalty)
            nxt[active, 1] = 1.0
        else:
            step = p.step_size if action == UP else -p.step_size
            nxt[active, 0] += step
            rew[active] = p.step_cost
        return nxt, rew

    def _check_obs(self, obs) -> float:
        if isinstance(obs, (bool, np.bool_)) or not isinstance(obs, Real) or not math.isfinite(obs):
            raise InvalidObservationError(f"LightDark observations are finite reals, got {obs!r}")
        return float(obs)

    def likelihoods(self, particles, action, obs):
        o = self._check_obs(obs)
        return K.gaussian_likelihood(
            np.ascontiguousarray(particles[:, 0]), o, self.params.light_y, self.params.sigma_min
        )

    def sample_observation_row(self, row, action, rng) -> float:
        y = float(row[0])
        return float(rng.normal(y, float(self.params.noise(y))))

    def terminal_mask(self, particles):
        return particles[:, 1] != 0

    def reinit_particles(self, particles, rng):
        out = particles.copy()
        out[:, 0] = rng.normal(self.params.prior_mean, self.params.prior_std, size=out.shape[0])
        return out

    def rollout(self, row, actions):
        p = self.params
        y, done = float(row[0]), bool(row[1])
        total, disc = 0.0, 1.0
        for a in actions:
            if done:
                break
            if a == STOP:
                total += disc * (p.goal_reward if abs(y - p.goal_y) <= p.goal_tolerance else p.miss_penalty)
                done = True
            else:
                y += p.step_size if a == UP else -p.step_size
                total += disc * p.step_cost
            disc *= self.discount
        return total
