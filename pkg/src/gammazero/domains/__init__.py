"""Benchmark POMDP domains and a config-driven factory."""

from __future__ import annotations

from .base import PomdpModel
from .lightdark import LightDark, LightDarkParams, LightDarkState
from .rocksample import (
    CHECK0,
    EAST,
    NORTH,
    SAMPLE,
    SOUTH,
    WEST,
    RockObs,
    RockRewards,
    RockSample,
    RockSampleParams,
    RockState,
    random_rock_positions,
    sensor_accuracy,
)

__all__ = [
    "PomdpModel", "LightDark", "LightDarkParams", "LightDarkState", "RockSample",
    "RockSampleParams", "RockState", "RockObs", "RockRewards", "make_model",
    "random_rock_positions", "sensor_accuracy",
    "NORTH", "SOUTH", "EAST", "WEST", "SAMPLE", "CHECK0",
]

_ROCKSAMPLE_KEYS = {
    "domain", "grid_n", "k", "rock_positions", "placement_seed", "sensor_halflife",
    "rewards", "discount", "horizon",
}


def make_model(spec: dict) -> PomdpModel:
    """Build a domain instance from a plain dict (as found in run configs).

    RockSample accepts ``grid_n`` with either ``k`` + ``placement_seed`` or explicit
    ``rock_positions``. A three-element ``size`` of the form ``[n, n, k]`` is read as
    ``grid_n=n, k=k``.
    """
    spec = dict(spec)
    domain = spec.pop("domain", "rocksample").lower()
    if domain == "rocksample":
        size = spec.pop("size", None)
        if size is not None:
            if len(size) == 3:
                spec.setdefault("grid_n", size[0])
                spec.setdefault("k", size[2])
            else:
                spec.setdefault("grid_n", size[0])
                spec.setdefault("k", size[1])
        unknown = set(spec) - _ROCKSAMPLE_KEYS
        if unknown:
            raise ValueError(f"unknown RockSample keys: {sorted(unknown)}")
        return RockSample.create(**spec)
    if domain == "lightdark":
        return LightDark.create(**spec)
    raise ValueError(f"unknown domain {domain!r}")
