"""Predicate schemas, groundings, and their vectorized evaluation on particle rows.

Node identifiers are small tuples so that canonical ordering is a plain sort:
``("agent",)``, ``("rock", i)``, ``("loc", x, y)``, ``("exit",)``, ``("bin", j)``.
"""

from __future__ import annotations

import math
from typing import NamedTuple

import numpy as np

from .domains import LightDark, PomdpModel, RockSample


class PredicateSchema(NamedTuple):
    name: str
    arg_sorts: tuple[str, ...]

    @property
    def arity(self) -> int:
        return len(self.arg_sorts)


AT_LOCATION = PredicateSchema("AtLocation", ("object", "location"))
ROCK_AT = PredicateSchema("RockAt", ("object", "location"))
ROCK_GOOD = PredicateSchema("RockGood", ("object",))
ROCK_SAMPLED = PredicateSchema("RockSampled", ("object",))
AT_BIN = PredicateSchema("AtBin", ("object", "location"))

SCHEMAS = {s.name: s for s in (AT_LOCATION, ROCK_AT, ROCK_GOOD, ROCK_SAMPLED, AT_BIN)}
# index into the predicate one-hot of node features
SCHEMA_INDEX = {"AtLocation": 0, "RockAt": 1, "RockGood": 2, "RockSampled": 3, "AtBin": 4}

ROCKSAMPLE_SCHEMAS = (AT_LOCATION, ROCK_AT, ROCK_GOOD, ROCK_SAMPLED)
LIGHTDARK_SCHEMAS = (AT_BIN,)

AGENT = ("agent",)
EXIT = ("exit",)


def rock_id(i: int) -> tuple:
    return ("rock", int(i))


def loc_id(x: int, y: int) -> tuple:
    return ("loc", int(x), int(y))


def bin_id(j: int) -> tuple:
    return ("bin", int(j))


def node_label(node_id: tuple) -> str:
    kind = node_id[0]
    if len(node_id) == 1:
        return kind
    return kind + "_" + "_".join(str(v) for v in node_id[1:])


_OBJECT_SORTS = {"agent", "rock"}
_LOCATION_SORTS = {"loc", "exit", "bin"}


class GroundedPredicate(NamedTuple):
    name: str
    args: tuple[tuple, ...]

    @property
    def schema(self) -> PredicateSchema:
        return SCHEMAS[self.name]

    def validate(self) -> "GroundedPredicate":
        schema = self.schema
        if len(self.args) != schema.arity:
            raise ValueError(f"{self.name} takes {schema.arity} arguments, got {len(self.args)}")
        for sort, arg in zip(schema.arg_sorts, self.args):
            allowed = _OBJECT_SORTS if sort == "object" else _LOCATION_SORTS
            if arg[0] not in allowed:
                raise ValueError(f"argument {arg} of {self.name} is not a {sort}")
        return self

    def label(self) -> str:
        return f"{self.name}({','.join(node_label(a) for a in self.args)})"

    def sort_key(self):
        return (self.name, self.args)


class LightDarkBins:
    """Unit-width bins over ``[-1, light_y + 5]``; out-of-range positions clip to the edges."""

    def __init__(self, model: LightDark):
        p = model.params
        self.lo = -1.0
        self.hi = float(p.light_y) + 5.0
        self.count = max(1, int(math.ceil(self.hi - self.lo)))

    def index(self, y):
        j = np.floor((np.asarray(y, dtype=np.float64) - self.lo)).astype(np.int64)
        return np.clip(j, 0, self.count - 1)

    def center(self, j: int) -> float:
        return self.lo + j + 0.5


def evaluate(model: PomdpModel, pred: GroundedPredicate, states: np.ndarray) -> np.ndarray:
    """Boolean mask of the particle rows in which ``pred`` holds."""
    n = states.shape[0]
    if isinstance(model, RockSample):
        k = model.k
        if pred.name == "AtLocation":
            loc = pred.args[1]
            if loc == EXIT:
                return states[:, 2] != 0
            return (states[:, 0] == loc[1]) & (states[:, 1] == loc[2]) & (states[:, 2] == 0)
        if pred.name == "RockAt":
            i = pred.args[0][1]
            loc = pred.args[1]
            holds = (int(model.rock_x[i]), int(model.rock_y[i])) == (loc[1], loc[2])
            return np.full(n, holds)
        if pred.name == "RockGood":
            return states[:, 3 + pred.args[0][1]] == 1
        if pred.name == "RockSampled":
            return states[:, 3 + k + pred.args[0][1]] == 1
    elif isinstance(model, LightDark):
        if pred.name == "AtBin":
            return LightDarkBins(model).index(states[:, 0]) == pred.args[1][1]
    raise ValueError(f"predicate {pred.name} is not defined for {model.name}")
