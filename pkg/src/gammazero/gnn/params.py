"""Network parameters and their versioned binary file format.

File layout: 8-byte magic, then five little-endian uint32 fields
(schema_version, d_node, d_edge, hidden, rounds), then every array in
:func:`param_shapes` order as little-endian float64.
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError, ParamFileError

MAGIC = b"GZGNN\x00\x01\x00"
FILE_VERSION = 1
_HEADER = struct.Struct("<5I")


def param_shapes(d_node: int, d_edge: int, hidden: int, rounds: int) -> list[tuple[str, tuple]]:
    """Declared parameter order; shapes depend only on the four dimensions."""
    H = hidden
    shapes = [
        ("enc_node_W", (d_node, H)), ("enc_node_b", (H,)),
        ("enc_edge_W", (d_edge, H)), ("enc_edge_b", (H,)),
    ]
    for l in range(rounds):
        shapes += [
            (f"edge{l}_W1", (4 * H, H)), (f"edge{l}_b1", (H,)),
            (f"edge{l}_W2", (H, H)), (f"edge{l}_b2", (H,)),
            (f"node{l}_W1", (3 * H, H)), (f"node{l}_b1", (H,)),
            (f"node{l}_W2", (H, H)), (f"node{l}_b2", (H,)),
            (f"glob{l}_W1", (3 * H, H)), (f"glob{l}_b1", (H,)),
            (f"glob{l}_W2", (H, H)), (f"glob{l}_b2", (H,)),
            (f"att{l}_node", (H,)), (f"att{l}_glob_node", (H,)), (f"att{l}_glob_edge", (H,)),
        ]
    shapes += [
        ("value_W1", (H, H)), ("value_b1", (H,)), ("value_W2", (H,)), ("value_b2", (1,)),
        ("policy_W1", (2 * H, H)), ("policy_b1", (H,)), ("policy_W2", (H,)), ("policy_b2", (1,)),
    ]
    return shapes


@dataclass
class GnnParameters:
    d_node: int
    d_edge: int
    hidden: int = 128
    rounds: int = 3
    arrays: dict = field(default_factory=dict)

    @classmethod
    def init(cls, d_node: int, d_edge: int, hidden: int = 128, rounds: int = 3, seed: int = 0) -> "GnnParameters":
        """Fan-in scaled uniform weights (unit-variance preserving), zero biases, zero value-head output layer."""
        rng = np.random.default_rng(seed)
        arrays = {}
        for name, shape in param_shapes(d_node, d_edge, hidden, rounds):
            if name in ("value_W2", "value_b2") or len(shape) == 1 and "att" not in name:
                arrays[name] = np.zeros(shape)
                continue
            bound = np.sqrt(3.0 / shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        return cls(d_node, d_edge, hidden, rounds, arrays)

    @property
    def dims(self) -> tuple[int, int, int, int]:
        return (self.d_node, self.d_edge, self.hidden, self.rounds)

    def shapes(self):
        return param_shapes(*self.dims)

    def names(self) -> list[str]:
        return [n for n, _ in self.shapes()]

    def copy(self) -> "GnnParameters":
        return GnnParameters(*self.dims, {k: v.copy() for k, v in self.arrays.items()})

    def zeros_like(self) -> dict:
        return {k: np.zeros_like(v) for k, v in self.arrays.items()}

    def size(self) -> int:
        return sum(int(np.prod(s)) for _, s in self.shapes())

    def check(self) -> "GnnParameters":
        for name, shape in self.shapes():
            arr = self.arrays.get(name)
            if arr is None or arr.shape != shape:
                raise ParamFileError(f"parameter {name} should have shape {shape}, got "
                                     f"{None if arr is None else arr.shape}")
            if not np.isfinite(arr).all():
                raise NumericError(f"parameter {name} holds non-finite values")
        return self

    def flat(self) -> np.ndarray:
        return np.concatenate([self.arrays[n].ravel() for n in self.names()])


def save_params(params: GnnParameters, path) -> None:
    params.check()
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(_HEADER.pack(FILE_VERSION, *params.dims))
        for name in params.names():
            fh.write(np.ascontiguousarray(params.arrays[name], dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_params(path, d_node: int | None = None, d_edge: int | None = None) -> GnnParameters:
    """Read a parameter file; optional ``d_node``/``d_edge`` are checked against the header."""
    with open(path, "rb") as fh:
        blob = fh.read()
    head = len(MAGIC) + _HEADER.size
    if len(blob) < head or blob[: len(MAGIC)] != MAGIC:
        raise ParamFileError(f"{path}: not a gammazero parameter file")
    version, fd_node, fd_edge, hidden, rounds = _HEADER.unpack_from(blob, len(MAGIC))
    if version != FILE_VERSION:
        raise ParamFileError(f"{path}: unsupported schema_version {version} (expected {FILE_VERSION})")
    if d_node is not None and fd_node != d_node:
        raise ParamFileError(f"{path}: dimension mismatch, file d_node={fd_node} but graphs have d_node={d_node}")
    if d_edge is not None and fd_edge != d_edge:
        raise ParamFileError(f"{path}: dimension mismatch, file d_edge={fd_edge} but graphs have d_edge={d_edge}")
    shapes = param_shapes(fd_node, fd_edge, hidden, rounds)
    expected = head + 8 * sum(int(np.prod(s)) for _, s in shapes)
    if len(blob) != expected:
        raise ParamFileError(f"{path}: expected {expected} bytes, found {len(blob)} (truncated or corrupt)")
    arrays = {}
    offset = head
    for name, shape in shapes:
        count = int(np.prod(shape))
        arrays[name] = np.frombuffer(blob, dtype="<f8", count=count, offset=offset).reshape(shape).astype(np.float64)
        offset += 8 * count
    return GnnParameters(fd_node, fd_edge, hidden, rounds, arrays).check()
