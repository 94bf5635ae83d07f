"""Supervised training: combined value/policy loss, its gradient, and Adam."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import DataError, InvalidArgumentError, NumericError, ShapeError
from ..graph import BeliefGraph
from .network import GraphBatch, backward, forward_batch, make_batch, masked_log_softmax
from .params import GnnParameters

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainingSample:
    graph: BeliefGraph
    target_action: int
    target_value: float

    def __post_init__(self):
        m = self.graph.action_nodes.shape[0]
        if not 0 <= self.target_action < m:
            raise DataError(f"target_action {self.target_action} outside [0, {m})")


@dataclass
class TrainingConfig:
    lambda_v: float = 1.0
    lambda_p: float = 1.0
    learning_rate: float = 1e-4
    epochs: int = 400
    batch_size: int = 32
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    seed: int = 0
    holdout: float = 0.1
    hidden: int = 128
    rounds: int = 3
    init_value_bias: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise InvalidArgumentError("learning_rate must be non-negative")
        if self.epochs < 1 or self.batch_size < 1:
            raise InvalidArgumentError("epochs and batch_size must be positive")
        if not 0.0 <= self.holdout < 1.0:
            raise InvalidArgumentError("holdout must lie in [0, 1)")


class LossBreakdown(NamedTuple):
    total: float
    value_mse: float
    cross_entropy: float


@dataclass
class PreparedBatch:
    batch: GraphBatch
    target_nodes: np.ndarray  # flat index into the batch's action nodes
    target_value: np.ndarray
    target_action: np.ndarray


def prepare(samples: Sequence[TrainingSample]) -> PreparedBatch:
    if not samples:
        raise DataError("empty batch")
    d = {(s.graph.x_node.shape[1], s.graph.x_edge.shape[1]) for s in samples}
    if len(d) != 1:
        raise ShapeError(f"samples disagree on feature dimensions: {sorted(d)}")
    batch = make_batch([s.graph for s in samples])
    ta = np.array([s.target_action for s in samples], dtype=np.int64)
    counts = batch.action_counts
    if (ta < 0).any() or (ta >= counts).any():
        raise DataError("target action index out of range")
    tnodes = batch.action_starts + ta
    if not batch.action_mask[tnodes].all():
        bad = int(np.flatnonzero(~batch.action_mask[tnodes])[0])
        raise DataError(f"sample {bad}: target action {ta[bad]} is masked as illegal")
    tv = np.array([s.target_value for s in samples], dtype=np.float64)
    return PreparedBatch(batch, tnodes, tv, ta)


def _loss_parts(values, logits, pb: PreparedBatch, cfg: TrainingConfig):
    b = pb.batch
    logp = masked_log_softmax(logits, b.action_mask, b.action_starts, b.action_graph)
    err = values - pb.target_value
    with np.errstate(over="ignore", invalid="ignore"):  # non-finite losses are caught by the caller
        mse = float(np.mean(err * err))
    ce = float(-np.mean(logp[pb.target_nodes]))
    return mse, ce, err, logp


def loss(params: GnnParameters, samples, cfg: TrainingConfig) -> LossBreakdown:
    """lambda_v * mean squared value error + lambda_p * mean cross-entropy."""
    pb = samples if isinstance(samples, PreparedBatch) else prepare(samples)
    values, logits, _ = forward_batch(params, pb.batch)
    mse, ce, _, _ = _loss_parts(values, logits, pb, cfg)
    return LossBreakdown(cfg.lambda_v * mse + cfg.lambda_p * ce, mse, ce)


def gradient(params: GnnParameters, samples, cfg: TrainingConfig) -> tuple[dict, LossBreakdown]:
    """Exact gradient of :func:`loss` with respect to every parameter array."""
    pb = samples if isinstance(samples, PreparedBatch) else prepare(samples)
    values, logits, cache = forward_batch(params, pb.batch, keep_cache=True)
    mse, ce, err, logp = _loss_parts(values, logits, pb, cfg)
    total = cfg.lambda_v * mse + cfg.lambda_p * ce
    if not math.isfinite(total):
        raise NumericError("loss is not finite")
    B = pb.batch.n_graphs
    d_values = (2.0 * cfg.lambda_v / B) * err
    d_logits = np.exp(logp)  # zero on masked actions
    d_logits[pb.target_nodes] -= 1.0
    d_logits *= cfg.lambda_p / B
    grads = backward(params, pb.batch, cache, d_values, d_logits)
    return grads, LossBreakdown(total, mse, ce)


class Adam:
    def __init__(self, params: GnnParameters, cfg: TrainingConfig):
        self.cfg = cfg
        self.m = params.zeros_like()
        self.v = params.zeros_like()
        self.t = 0

    def step(self, params: GnnParameters, grads: dict) -> None:
        c = self.cfg
        self.t += 1
        bc1 = 1.0 - c.beta1**self.t
        bc2 = 1.0 - c.beta2**self.t
        for name, g in grads.items():
            m = self.m[name]
            v = self.v[name]
            m *= c.beta1
            m += (1.0 - c.beta1) * g
            v *= c.beta2
            v += (1.0 - c.beta2) * g * g
            params.arrays[name] -= c.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + c.eps)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    val_loss: float
    val_accuracy: float
    val_value_mse: float


@dataclass
class TrainingResult:
    params: GnnParameters
    log: list = field(default_factory=list)
    best_epoch: int = 0
    diverged: bool = False
    train_indices: np.ndarray | None = None
    val_indices: np.ndarray | None = None
    initial: GnnParameters | None = None

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["epoch", "train_loss", "val_loss", "val_accuracy", "val_value_mse"])
            for r in self.log:
                w.writerow([r.epoch, repr(r.train_loss), repr(r.val_loss), repr(r.val_accuracy), repr(r.val_value_mse)])


def split_holdout(n: int, fraction: float, rng: np.random.Generator):
    """Shuffled train/validation indices; tiny datasets validate on the training set."""
    order = rng.permutation(n)
    n_val = int(round(fraction * n))
    if n < 10 or n_val == 0:
        return order, order
    return order[n_val:], order[:n_val]


def evaluate(params: GnnParameters, pb: PreparedBatch, cfg: TrainingConfig) -> tuple[float, float, float]:
    """(loss, top-1 accuracy on legal actions, value MSE)."""
    values, logits, _ = forward_batch(params, pb.batch)
    mse, ce, _, logp = _loss_parts(values, logits, pb, cfg)
    b = pb.batch
    # argmax per graph, ties to the lowest index
    best = np.maximum.reduceat(logp, b.action_starts)
    hit = (logp == best[b.action_graph]) & b.action_mask
    first = np.full(b.n_graphs, np.iinfo(np.int64).max)
    np.minimum.at(first, b.action_graph[hit], np.flatnonzero(hit))
    acc = float(np.mean(first == pb.target_nodes))
    return cfg.lambda_v * mse + cfg.lambda_p * ce, acc, mse


def train(
    dataset: Sequence[TrainingSample],
    cfg: TrainingConfig,
    init: GnnParameters | None = None,
    log_path=None,
) -> TrainingResult:
    if not dataset:
        raise DataError("cannot train on an empty dataset")
    rng = np.random.default_rng(cfg.seed)
    g0 = dataset[0].graph
    params = init.copy() if init is not None else GnnParameters.init(
        g0.x_node.shape[1], g0.x_edge.shape[1], cfg.hidden, cfg.rounds, seed=cfg.seed
    )
    train_idx, val_idx = split_holdout(len(dataset), cfg.holdout, rng)
    if init is None and cfg.init_value_bias:
        # start the value head at the mean target instead of walking there at step size lr
        params.arrays["value_b2"][0] = float(np.mean([dataset[i].target_value for i in train_idx]))
    val_pb = prepare([dataset[i] for i in val_idx])
    opt = Adam(params, cfg)
    result = TrainingResult(params.copy(), train_indices=train_idx, val_indices=val_idx, initial=params.copy())
    best_val = math.inf
    bs = cfg.batch_size
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(train_idx)
        losses, weights = [], []
        last_good = params.copy()
        try:
            for start in range(0, len(order), bs):
                chunk = order[start : start + bs]
                grads, lb = gradient(params, [dataset[i] for i in chunk], cfg)
                opt.step(params, grads)
                losses.append(lb.total)
                weights.append(len(chunk))
            val_loss, val_acc, val_mse = evaluate(params, val_pb, cfg)
            if not math.isfinite(val_loss):
                raise NumericError("validation loss is not finite")
        except NumericError as exc:
            log.error("training diverged at epoch %d (%s); keeping last finite parameters", epoch, exc)
            result.diverged = True
            if result.best_epoch == 0:
                result.params = last_good
            break
        rec = EpochRecord(epoch, float(np.average(losses, weights=weights)), val_loss, val_acc, val_mse)
        result.log.append(rec)
        if val_loss < best_val:
            best_val = val_loss
            result.params = params.copy()
            result.best_epoch = epoch
        if epoch % 50 == 0 or epoch == cfg.epochs:
            log.info("epoch %d train %.4f val %.4f acc %.3f mse %.4f", epoch, rec.train_loss, val_loss, val_acc, val_mse)
    if log_path is not None:
        result.write_csv(log_path)
    return result


def config_dict(cfg: TrainingConfig) -> dict:
    return asdict(cfg)
