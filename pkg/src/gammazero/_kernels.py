"""Hot particle kernels with a numba path and a pure-numpy fallback.

Every kernel exists twice: a vectorized numpy implementation and an explicit
loop implementation that numba compiles. Randomness never happens inside a
kernel; callers pass pre-drawn uniforms or action sequences so both paths
return identical results for identical inputs.

Set ``GAMMAZERO_DISABLE_NUMBA=1`` to force the numpy path.

RockSample particle layout (int64 rows)::

    [x, y, done, good_0 .. good_{k-1}, sampled_0 .. sampled_{k-1}]
"""

from __future__ import annotations

import math
import os
from types import SimpleNamespace

import numpy as np

X, Y, DONE, ROCKS = 0, 1, 2, 3
NORTH, SOUTH, EAST, WEST, SAMPLE, CHECK0 = 0, 1, 2, 3, 4, 5
OBS_NONE, OBS_GOOD, OBS_BAD = 0, 1, 2

_MOVES = np.array([[0, 1], [0, -1], [1, 0], [-1, 0]], dtype=np.int64)


def _flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in {"1", "true", "yes", "on"}


# ---------------------------------------------------------------- numpy path


def _rs_propagate_numpy(states, action, grid_n, rock_x, rock_y, rewards):
    """Push every RockSample particle through ``action``.

    ``rewards`` is ``[good_sample, bad_sample, exit, illegal]``. Returns the
    successor particles and the per-particle reward.
    """
    k = rock_x.shape[0]
    nxt = states.copy()
    rew = np.zeros(states.shape[0])
    active = states[:, DONE] == 0
    x = states[:, X]
    y = states[:, Y]
    if action < 4:
        nx = x + _MOVES[action, 0]
        ny = y + _MOVES[action, 1]
        inside = active & (nx >= 0) & (nx < grid_n) & (ny >= 0) & (ny < grid_n)
        nxt[inside, X] = nx[inside]
        nxt[inside, Y] = ny[inside]
        blocked = active & ~inside
        if action == EAST:
            exiting = active & (nx >= grid_n)
            nxt[exiting, X] = grid_n
            nxt[exiting, DONE] = 1
            rew[exiting] = rewards[2]
            blocked &= ~exiting
        rew[blocked] = rewards[3]
    elif action == SAMPLE:
        rew[active] = rewards[1]
        for i in range(k):
            at = active & (x == rock_x[i]) & (y == rock_y[i])
            good = states[:, ROCKS + i] == 1
            rew[at & good] = rewards[0]
            nxt[at, ROCKS + i] = 0
            nxt[at, ROCKS + k + i] = 1
    return nxt, rew


def _sensor_accuracy(dist, d0):
    return 0.5 * (1.0 + np.power(2.0, -dist / d0))


def _rs_likelihood_numpy(states, action, obs, rock_x, rock_y, d0):
    n = states.shape[0]
    if action < CHECK0:
        return np.where(obs == OBS_NONE, 1.0, 0.0) * np.ones(n)
    i = action - CHECK0
    dx = (states[:, X] - rock_x[i]).astype(np.float64)
    dy = (states[:, Y] - rock_y[i]).astype(np.float64)
    acc = _sensor_accuracy(np.sqrt(dx * dx + dy * dy), d0)
    good = states[:, ROCKS + i] == 1
    says_good = obs == OBS_GOOD
    return np.where(good == says_good, acc, 1.0 - acc)


def _systematic_resample_numpy(weights, u, m):
    cum = np.cumsum(weights)
    positions = (u + np.arange(m)) / m * cum[-1]
    idx = np.searchsorted(cum, positions, side="right")
    return np.minimum(idx, weights.shape[0] - 1).astype(np.int64)


def _gaussian_likelihood_numpy(ys, obs, light_y, sigma_min):
    sigma = np.abs(ys - light_y) + sigma_min
    z = (obs - ys) / sigma
    return np.exp(-0.5 * z * z) / (sigma * math.sqrt(2.0 * math.pi))


# ----------------------------------------------------------------- loop path


def _rs_step_row(rows, j, action, grid_n, rock_x, rock_y, rewards):
    """Advance particle ``rows[j]`` in place and return its reward."""
    k = rock_x.shape[0]
    if rows[j, DONE] != 0:
        return 0.0
    if action < 4:
        dx = 0
        dy = 0
        if action == NORTH:
            dy = 1
        elif action == SOUTH:
            dy = -1
        elif action == EAST:
            dx = 1
        else:
            dx = -1
        nx = rows[j, X] + dx
        ny = rows[j, Y] + dy
        if nx >= 0 and nx < grid_n and ny >= 0 and ny < grid_n:
            rows[j, X] = nx
            rows[j, Y] = ny
            return 0.0
        if action == EAST and nx >= grid_n:
            rows[j, X] = grid_n
            rows[j, DONE] = 1
            return rewards[2]
        return rewards[3]
    if action == SAMPLE:
        for i in range(k):
            if rows[j, X] == rock_x[i] and rows[j, Y] == rock_y[i]:
                r = rewards[0] if rows[j, ROCKS + i] == 1 else rewards[1]
                rows[j, ROCKS + i] = 0
                rows[j, ROCKS + k + i] = 1
                return r
        return rewards[1]
    return 0.0


def _rs_propagate_loop(states, action, grid_n, rock_x, rock_y, rewards):
    # same rules as _rs_step_row, written out: calling the helper per row runs ~10x slower
    n = states.shape[0]
    k = rock_x.shape[0]
    nxt = states.copy()
    rew = np.zeros(n)
    dx = 0
    dy = 0
    if action == NORTH:
        dy = 1
    elif action == SOUTH:
        dy = -1
    elif action == EAST:
        dx = 1
    elif action == WEST:
        dx = -1
    for j in range(n):
        if nxt[j, DONE] != 0:
            continue
        if action < 4:
            nx = nxt[j, X] + dx
            ny = nxt[j, Y] + dy
            if nx >= 0 and nx < grid_n and ny >= 0 and ny < grid_n:
                nxt[j, X] = nx
                nxt[j, Y] = ny
            elif action == EAST and nx >= grid_n:
                nxt[j, X] = grid_n
                nxt[j, DONE] = 1
                rew[j] = rewards[2]
            else:
                rew[j] = rewards[3]
        elif action == SAMPLE:
            rew[j] = rewards[1]
            for i in range(k):
                if nxt[j, X] == rock_x[i] and nxt[j, Y] == rock_y[i]:
                    if nxt[j, ROCKS + i] == 1:
                        rew[j] = rewards[0]
                    nxt[j, ROCKS + i] = 0
                    nxt[j, ROCKS + k + i] = 1
                    break
    return nxt, rew


def _rs_likelihood_loop(states, action, obs, rock_x, rock_y, d0):
    n = states.shape[0]
    out = np.empty(n)
    if action < CHECK0:
        v = 1.0 if obs == OBS_NONE else 0.0
        for j in range(n):
            out[j] = v
        return out
    i = action - CHECK0
    for j in range(n):
        dx = float(states[j, X] - rock_x[i])
        dy = float(states[j, Y] - rock_y[i])
        acc = 0.5 * (1.0 + np.power(2.0, -np.sqrt(dx * dx + dy * dy) / d0))
        good = states[j, ROCKS + i] == 1
        if good == (obs == OBS_GOOD):
            out[j] = acc
        else:
            out[j] = 1.0 - acc
    return out


def _systematic_resample_loop(weights, u, m):
    n = weights.shape[0]
    cum = np.cumsum(weights)
    total = cum[n - 1]
    out = np.empty(m, dtype=np.int64)
    j = 0
    for i in range(m):
        pos = (u + i) / m * total
        while j < n - 1 and cum[j] <= pos:
            j += 1
        out[i] = j
    return out


def _gaussian_likelihood_loop(ys, obs, light_y, sigma_min):
    n = ys.shape[0]
    out = np.empty(n)
    norm = math.sqrt(2.0 * math.pi)
    for j in range(n):
        sigma = abs(ys[j] - light_y) + sigma_min
        z = (obs - ys[j]) / sigma
        out[j] = math.exp(-0.5 * z * z) / (sigma * norm)
    return out


def _rs_rollout_loop(row, actions, grid_n, rock_x, rock_y, rewards, gamma):
    """Discounted return of an open-loop action sequence from one state."""
    state = row.copy().reshape(1, row.shape[0])
    total = 0.0
    disc = 1.0
    for t in range(actions.shape[0]):
        if state[0, DONE] != 0:
            break
        total += disc * _rs_step_row(state, 0, actions[t], grid_n, rock_x, rock_y, rewards)
        disc *= gamma
    return total


numpy_kernels = SimpleNamespace(
    rs_propagate=_rs_propagate_numpy,
    rs_likelihood=_rs_likelihood_numpy,
    systematic_resample=_systematic_resample_numpy,
    gaussian_likelihood=_gaussian_likelihood_numpy,
    rs_rollout=_rs_rollout_loop,
)

numba_kernels = None
if not _flag("GAMMAZERO_DISABLE_NUMBA"):
    try:
        from numba import njit
    except ImportError:  # pragma: no cover - numba is a hard dependency in practice
        njit = None
    if njit is not None:
        _step_row_jit = njit(cache=True)(_rs_step_row)
        # the loop bodies call _rs_step_row by global name; rebind for numba
        _g = dict(globals(), _rs_step_row=_step_row_jit)
        _rollout_src = type(_rs_rollout_loop)(_rs_rollout_loop.__code__, _g)
        numba_kernels = SimpleNamespace(
            rs_propagate=njit(cache=True)(_rs_propagate_loop),
            rs_likelihood=njit(cache=True)(_rs_likelihood_loop),
            systematic_resample=njit(cache=True)(_systematic_resample_loop),
            gaussian_likelihood=njit(cache=True)(_gaussian_likelihood_loop),
            rs_rollout=njit(cache=True)(_rollout_src),
        )

USING_NUMBA = numba_kernels is not None
active = numba_kernels if USING_NUMBA else numpy_kernels

rs_propagate = active.rs_propagate
rs_likelihood = active.rs_likelihood
systematic_resample = active.systematic_resample
gaussian_likelihood = active.gaussian_likelihood
rs_rollout = active.rs_rollout
