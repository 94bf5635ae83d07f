"""RockSample(n, k): grid navigation with noisy rock-quality sensing."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from itertools import product
from typing import NamedTuple

import numpy as np

from .. import _kernels as K
from ..errors import InvalidObservationError
from .base import PomdpModel

NORTH, SOUTH, EAST, WEST, SAMPLE, CHECK0 = 0, 1, 2, 3, 4, 5
MOVE_NAMES = ("North", "South", "East", "West")
MOVE_DELTAS = ((0, 1), (0, -1), (1, 0), (-1, 0))


class RockObs(IntEnum):
    NONE = 0
    GOOD = 1
    BAD = 2


class RockState(NamedTuple):
    x: int
    y: int
    good: tuple[bool, ...]
    sampled: tuple[bool, ...]
    done: bool = False


@dataclass(frozen=True)
class RockRewards:
    good_sample: float = 10.0
    bad_sample: float = -10.0
    exit: float = 10.0
    illegal: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.good_sample, self.bad_sample, self.exit, self.illegal])


@dataclass(frozen=True)
class RockSampleParams:
    grid_n: int
    rock_positions: tuple[tuple[int, int], ...]
    sensor_halflife: float = 20.0
    rewards: RockRewards = field(default_factory=RockRewards)

    def __post_init__(self):
        n = self.grid_n
        if n < 1:
            raise ValueError("grid_n must be positive")
        cells = [tuple(int(c) for c in p) for p in self.rock_positions]
        object.__setattr__(self, "rock_positions", tuple(cells))
        if not cells:
            raise ValueError("RockSample needs at least one rock")
        if len(set(cells)) != len(cells):
            raise ValueError(f"rock positions must be distinct: {cells}")
        for x, y in cells:
            if not (0 <= x < n and 0 <= y < n):
                raise ValueError(f"rock ({x}, {y}) outside the {n}x{n} grid")
        if self.sensor_halflife <= 0:
            raise ValueError("sensor_halflife must be positive")

    @property
    def k(self) -> int:
        return len(self.rock_positions)


def random_rock_positions(grid_n: int, k: int, seed: int) -> tuple[tuple[int, int], ...]:
    if k > grid_n * grid_n:
        raise ValueError(f"cannot place {k} rocks on a {grid_n}x{grid_n} grid")
    cells = np.random.default_rng(seed).choice(grid_n * grid_n, size=k, replace=False)
    return tuple((int(c % grid_n), int(c // grid_n)) for c in cells)


def sensor_accuracy(dist: float, halflife: float) -> float:
    return 0.5 * (1.0 + 2.0 ** (-dist / halflife))


class RockSample(PomdpModel):
    """RockSample with the agent starting at ``(0, n // 2)`` and the exit east of the grid.

    Moves off the north, south or west edge are no-ops (reward ``illegal``);
    moving east from the last column exits the grid and ends the episode.
    """

    name = "rocksample"

    def __init__(self, params: RockSampleParams, discount: float = 0.95, horizon: int = 50):
        super().__init__(discount, horizon)
        self.params = params
        self.grid_n = params.grid_n
        self.k = params.k
        self.rock_x = np.array([p[0] for p in params.rock_positions], dtype=np.int64)
        self.rock_y = np.array([p[1] for p in params.rock_positions], dtype=np.int64)
        self.halflife = float(params.sensor_halflife)
        self._rewards = params.rewards.as_array()
        self.start = (0, params.grid_n // 2)
        self.state_dim = 3 + 2 * self.k
        self._rock_at = {p: i for i, p in enumerate(params.rock_positions)}

    @classmethod
    def create(
        cls,
        grid_n: int,
        k: int | None = None,
        rock_positions=None,
        placement_seed: int = 0,
        sensor_halflife: float = 20.0,
        rewards: dict | None = None,
        discount: float = 0.95,
        horizon: int = 50,
    ) -> "RockSample":
        if rock_positions is None:
            if k is None:
                raise ValueError("give either k or rock_positions")
            rock_positions = random_rock_positions(grid_n, k, placement_seed)
        elif k is not None and k != len(rock_positions):
            raise ValueError(f"k={k} disagrees with {len(rock_positions)} rock positions")
        params = RockSampleParams(
            grid_n=grid_n,
            rock_positions=tuple(tuple(p) for p in rock_positions),
            sensor_halflife=sensor_halflife,
            rewards=RockRewards(**(rewards or {})),
        )
        return cls(params, discount=discount, horizon=horizon)

    def params_dict(self) -> dict:
        return {
            "domain": self.name,
            "grid_n": self.grid_n,
            "k": self.k,
            "rock_positions": [list(p) for p in self.params.rock_positions],
            "sensor_halflife": self.halflife,
            "rewards": asdict(self.params.rewards),
            "discount": self.discount,
            "horizon": self.horizon,
        }

    @property
    def action_count(self) -> int:
        return 5 + self.k

    def action_name(self, action: int) -> str:
        action = self.check_action(action)
        if action < 4:
            return MOVE_NAMES[action]
        if action == SAMPLE:
            return "Sample"
        return f"Check({action - CHECK0})"

    def rock_at(self, x: int, y: int) -> int | None:
        return self._rock_at.get((int(x), int(y)))

    # --------------------------------------------------------- encoding
    def encode(self, state: RockState) -> np.ndarray:
        row = np.zeros(self.state_dim, dtype=np.int64)
        row[0], row[1], row[2] = state.x, state.y, int(state.done)
        row[3 : 3 + self.k] = state.good
        row[3 + self.k :] = state.sampled
        return row

    def decode(self, row: np.ndarray) -> RockState:
        k = self.k
        return RockState(
            int(row[0]),
            int(row[1]),
            tuple(bool(v) for v in row[3 : 3 + k]),
            tuple(bool(v) for v in row[3 + k : 3 + 2 * k]),
            bool(row[2]),
        )

    # --------------------------------------------------------- scalar API
    def initial_state(self, rng: np.random.Generator) -> RockState:
        return self.decode(self.sample_particles(1, rng)[0])

    def is_terminal(self, state: RockState) -> bool:
        return bool(state.done)

    def enumerate_initial_states(self) -> list[RockState]:
        x, y = self.start
        none = (False,) * self.k
        return [RockState(x, y, tuple(bits), none) for bits in product((False, True), repeat=self.k)]

    # ---------------------------------------------------------- batch API
    def sample_particles(self, n: int, rng: np.random.Generator) -> np.ndarray:
        out = np.zeros((n, self.state_dim), dtype=np.int64)
        out[:, 0], out[:, 1] = self.start
        out[:, 3 : 3 + self.k] = rng.integers(0, 2, size=(n, self.k))
        return out

    def propagate(self, particles, action):
        return K.rs_propagate(particles, action, self.grid_n, self.rock_x, self.rock_y, self._rewards)

    def _check_obs(self, action: int, obs) -> int:
        try:
            code = RockObs(obs)
        except (ValueError, TypeError):
            raise InvalidObservationError(f"{obs!r} is not a RockSample observation") from None
        if (action >= CHECK0) != (code != RockObs.NONE):
            raise InvalidObservationError(
                f"observation {code.name} cannot follow action {self.action_name(action)}"
            )
        return int(code)

    def likelihoods(self, particles, action, obs):
        code = self._check_obs(action, obs)
        return K.rs_likelihood(particles, action, code, self.rock_x, self.rock_y, self.halflife)

    def sample_observation_row(self, row, action, rng) -> RockObs:
        if action < CHECK0:
            return RockObs.NONE
        i = action - CHECK0
        dist = math.hypot(row[0] - self.rock_x[i], row[1] - self.rock_y[i])
        truthful = rng.random() < sensor_accuracy(dist, self.halflife)
        good = bool(row[3 + i])
        return RockObs.GOOD if good == truthful else RockObs.BAD

    def observation_branches(self, action: int):
        if action < CHECK0:
            return (RockObs.NONE,)
        return (RockObs.GOOD, RockObs.BAD)

    def terminal_mask(self, particles):
        return particles[:, 2] != 0

    def reinit_particles(self, particles, rng):
        out = particles.copy()
        k = self.k
        sampled = out[:, 3 + k :]
        fresh = rng.integers(0, 2, size=(out.shape[0], k))
        out[:, 3 : 3 + k] = np.where(sampled == 1, 0, fresh)
        return out

    def legal_actions(self, particles, weights):
        """Sample is legal only if some supported particle shares a cell with a rock."""
        mask = np.ones(self.action_count, dtype=bool)
        live = particles[weights > 0]
        at_rock = (live[:, 0:1] == self.rock_x[None, :]) & (live[:, 1:2] == self.rock_y[None, :])
        mask[SAMPLE] = bool(at_rock.any())
        return mask

    def rollout(self, row, actions):
        return float(
            K.rs_rollout(
                row, actions, self.grid_n, self.rock_x, self.rock_y, self._rewards, self.discount
            )
        )

    def relabeled(self, perm) -> "RockSample":
        """Same instance with rock ``i`` renamed to ``perm[i]``."""
        perm = list(perm)
        positions = [None] * self.k
        for i, j in enumerate(perm):
            positions[j] = self.params.rock_positions[i]
        params = RockSampleParams(
            self.grid_n, tuple(positions), self.halflife, self.params.rewards
        )
        return RockSample(params, self.discount, self.horizon)

    def relabel_particles(self, particles: np.ndarray, perm) -> np.ndarray:
        k = self.k
        out = particles.copy()
        for i, j in enumerate(perm):
            out[:, 3 + j] = particles[:, 3 + i]
            out[:, 3 + k + j] = particles[:, 3 + k + i]
        return out
