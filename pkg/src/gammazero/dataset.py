"""JSONL dataset files: one provenance header line, then one sample per line.

Each sample line is a graph record with ``target_action`` and ``target_value``
appended. Keys are sorted and floats use Python's shortest round-trip repr, so
a dataset written twice from the same samples is byte-identical and reading it
back reproduces every array exactly.
"""

from __future__ import annotations

import json
import os

from .errors import DataError
from .gnn.train import TrainingSample
from .graph import graph_from_record, graph_to_record
from .oracle import Dataset

FORMAT = "gammazero-dataset"
FORMAT_VERSION = 1


def _dump(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def sample_to_record(sample: TrainingSample) -> dict:
    rec = graph_to_record(sample.graph)
    rec["target_action"] = int(sample.target_action)
    rec["target_value"] = float(sample.target_value)
    return rec


def sample_from_record(rec: dict) -> TrainingSample:
    try:
        return TrainingSample(graph_from_record(rec), int(rec["target_action"]), float(rec["target_value"]))
    except KeyError as exc:
        raise DataError(f"sample record lacks {exc}") from exc


def write_dataset(dataset: Dataset, path) -> None:
    if not dataset.samples:
        raise DataError("refusing to write an empty dataset")
    dataset.check()
    header = {"format": FORMAT, "version": FORMAT_VERSION, "count": len(dataset.samples),
              "provenance": dataset.provenance}
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(_dump(header) + "\n")
        for s in dataset.samples:
            fh.write(_dump(sample_to_record(s)) + "\n")
    os.replace(tmp, path)


def read_dataset(path) -> Dataset:
    with open(path, encoding="utf-8") as fh:
        lines = [ln for ln in fh.read().split("\n") if ln]
    if not lines:
        raise DataError(f"{path}: empty file")
    try:
        header = json.loads(lines[0])
        records = [json.loads(ln) for ln in lines[1:]]
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON ({exc})") from exc
    if header.get("format") != FORMAT or header.get("version") != FORMAT_VERSION:
        raise DataError(f"{path}: not a version {FORMAT_VERSION} dataset file")
    if header.get("count") != len(records):
        raise DataError(f"{path}: header announces {header.get('count')} samples, found {len(records)}")
    return Dataset([sample_from_record(r) for r in records], header.get("provenance", {})).check()
