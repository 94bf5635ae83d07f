"""Message-passing network: forward pass and exact reverse-mode gradient.

Graphs are batched by concatenation. Edges are kept sorted by destination
within each graph, so every per-node and per-graph reduction is a single
``np.add.reduceat`` over contiguous segments. Every node owns at least one
incoming and one outgoing edge (the global links), so no segment is empty.

The first layer of each edge update is split into blocks,
``[e, v_src, v_dst, g] @ W1 == e@W1e + (v@W1s)[src] + (v@W1d)[dst] + (g@W1g)[graph]``,
which projects nodes once instead of once per incident edge.

Each round updates embeddings residually (``x + tanh(mlp(...))``); without the
skip the spread between graphs shrinks round over round and the global
embedding that feeds the value head becomes nearly constant.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from ..errors import NumericError, ShapeError
from ..graph import BeliefGraph
from .params import GnnParameters


@dataclass
class GraphBatch:
    x_node: np.ndarray
    x_edge: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    node_graph: np.ndarray
    edge_graph: np.ndarray
    node_starts: np.ndarray
    edge_starts: np.ndarray
    dst_starts: np.ndarray
    src_order: np.ndarray
    src_starts: np.ndarray
    global_idx: np.ndarray
    action_idx: np.ndarray
    action_graph: np.ndarray
    action_starts: np.ndarray
    action_mask: np.ndarray
    n_graphs: int

    @property
    def action_counts(self) -> np.ndarray:
        return np.diff(np.append(self.action_starts, self.action_idx.shape[0]))


def make_batch(graphs: Sequence[BeliefGraph]) -> GraphBatch:
    if not graphs:
        raise ShapeError("cannot batch zero graphs")
    n_nodes = np.array([g.num_nodes for g in graphs])
    n_edges = np.array([g.num_edges for g in graphs])
    n_act = np.array([g.action_nodes.shape[0] for g in graphs])
    node_off = np.concatenate([[0], np.cumsum(n_nodes)[:-1]])
    edge_off = np.concatenate([[0], np.cumsum(n_edges)[:-1]])
    act_off = np.concatenate([[0], np.cumsum(n_act)[:-1]])
    B = len(graphs)
    if B == 1:
        g = graphs[0]
        x_node, x_edge, src, dst = g.x_node, g.x_edge, g.src, g.dst
        action_idx, mask = g.action_nodes, g.action_mask
        gidx = np.flatnonzero(g.node_type == 4)[:1]
    else:
        x_node = np.concatenate([g.x_node for g in graphs])
        x_edge = np.concatenate([g.x_edge for g in graphs])
        src = np.concatenate([g.src + o for g, o in zip(graphs, node_off)])
        dst = np.concatenate([g.dst + o for g, o in zip(graphs, node_off)])
        action_idx = np.concatenate([g.action_nodes + o for g, o in zip(graphs, node_off)])
        mask = np.concatenate([g.action_mask for g in graphs])
        gidx = np.array([np.flatnonzero(g.node_type == 4)[0] + o for g, o in zip(graphs, node_off)])
    if gidx.shape[0] != B:
        raise ShapeError("every graph needs exactly one global node")
    Nn = x_node.shape[0]
    if np.any(np.diff(dst) < 0):
        order = np.argsort(dst, kind="stable")
        src, dst, x_edge = src[order], dst[order], x_edge[order]
    dst_starts = np.searchsorted(dst, np.arange(Nn))
    src_order = np.argsort(src, kind="stable")
    src_starts = np.searchsorted(src[src_order], np.arange(Nn))
    in_count = np.diff(np.append(dst_starts, dst.shape[0]))
    out_count = np.diff(np.append(src_starts, src.shape[0]))
    if (in_count == 0).any() or (out_count == 0).any():
        raise ShapeError("every node must have incoming and outgoing edges (missing global links?)")
    return GraphBatch(
        x_node=x_node, x_edge=x_edge, src=src, dst=dst,
        node_graph=np.repeat(np.arange(B), n_nodes),
        edge_graph=np.repeat(np.arange(B), n_edges),
        node_starts=node_off, edge_starts=edge_off,
        dst_starts=dst_starts, src_order=src_order, src_starts=src_starts,
        global_idx=gidx, action_idx=action_idx,
        action_graph=np.repeat(np.arange(B), n_act), action_starts=act_off,
        action_mask=mask.astype(bool), n_graphs=B,
    )


class NetworkOutput(NamedTuple):
    value: float
    policy: np.ndarray
    logits: np.ndarray


# ----------------------------------------------------------------- helpers


def _seg_softmax(s, starts, seg):
    m = np.maximum.reduceat(s, starts)
    ex = np.exp(s - m[seg])
    return ex / np.add.reduceat(ex, starts)[seg]


def _attend(x, att, starts, seg):
    """Attention-weighted sum of rows of ``x`` within each segment."""
    alpha = _seg_softmax(x @ att, starts, seg)
    return np.add.reduceat(alpha[:, None] * x, starts), alpha


def _attend_backward(x, att, alpha, starts, seg, d_out):
    """Gradients of :func:`_attend` w.r.t. ``x`` and ``att``."""
    d_rows = d_out[seg]
    dx = alpha[:, None] * d_rows
    d_alpha = np.einsum("ij,ij->i", x, d_rows)
    ds = alpha * (d_alpha - np.add.reduceat(alpha * d_alpha, starts)[seg])
    dx += ds[:, None] * att[None, :]
    return dx, x.T @ ds


def masked_log_softmax(logits, mask, starts, seg):
    z = np.where(mask, logits, -np.inf)
    m = np.maximum.reduceat(z, starts)
    shifted = z - m[seg]
    lse = np.log(np.add.reduceat(np.exp(shifted), starts))
    return shifted - lse[seg]


def _finite(name, arr):
    if not np.isfinite(arr).all():
        raise NumericError(f"non-finite values in {name}")


def _check_dims(params: GnnParameters, batch: GraphBatch):
    if batch.x_node.shape[1] != params.d_node:
        raise ShapeError(f"node features: graph has dim {batch.x_node.shape[1]}, parameters expect d_node={params.d_node}")
    if batch.x_edge.shape[1] != params.d_edge:
        raise ShapeError(f"edge features: graph has dim {batch.x_edge.shape[1]}, parameters expect d_edge={params.d_edge}")


# ----------------------------------------------------------------- forward


def forward_batch(params: GnnParameters, batch: GraphBatch, keep_cache: bool = False):
    """Values (one per graph) and raw action logits (one per action node).

    Returns ``(values, logits, cache)``; ``cache`` is None unless requested.
    """
    _check_dims(params, batch)
    A = params.arrays
    H = params.hidden
    b = batch
    v = np.tanh(b.x_node @ A["enc_node_W"] + A["enc_node_b"])
    e = np.tanh(b.x_edge @ A["enc_edge_W"] + A["enc_edge_b"])
    g = v[b.global_idx]
    cache = {"v0": v, "e0": e, "layers": []} if keep_cache else None
    for l in range(params.rounds):
        W1 = A[f"edge{l}_W1"]
        z = (e @ W1[:H] + (v @ W1[H : 2 * H])[b.src] + (v @ W1[2 * H : 3 * H])[b.dst]
             + (g @ W1[3 * H :])[b.edge_graph] + A[f"edge{l}_b1"])
        h = np.tanh(z)
        te = np.tanh(h @ A[f"edge{l}_W2"] + A[f"edge{l}_b2"])
        e_new = e + te
        agg, alpha = _attend(e_new, A[f"att{l}_node"], b.dst_starts, b.dst)

        Wv = A[f"node{l}_W1"]
        zv = v @ Wv[:H] + agg @ Wv[H : 2 * H] + (g @ Wv[2 * H :])[b.node_graph] + A[f"node{l}_b1"]
        hv = np.tanh(zv)
        tv = np.tanh(hv @ A[f"node{l}_W2"] + A[f"node{l}_b2"])
        v_new = v + tv

        agg_n, beta = _attend(v_new, A[f"att{l}_glob_node"], b.node_starts, b.node_graph)
        agg_e, gamma = _attend(e_new, A[f"att{l}_glob_edge"], b.edge_starts, b.edge_graph)
        Wg = A[f"glob{l}_W1"]
        zg = g @ Wg[:H] + agg_n @ Wg[H : 2 * H] + agg_e @ Wg[2 * H :] + A[f"glob{l}_b1"]
        hg = np.tanh(zg)
        tg = np.tanh(hg @ A[f"glob{l}_W2"] + A[f"glob{l}_b2"])
        g_new = g + tg
        if keep_cache:
            cache["layers"].append(dict(
                v=v, e=e, g=g, h=h, te=te, e_new=e_new, agg=agg, alpha=alpha, hv=hv, tv=tv, v_new=v_new,
                agg_n=agg_n, beta=beta, agg_e=agg_e, gamma=gamma, hg=hg, tg=tg,
            ))
        v, e, g = v_new, e_new, g_new

    u = np.tanh(g @ A["value_W1"] + A["value_b1"])
    values = u @ A["value_W2"] + A["value_b2"][0]
    Wp = A["policy_W1"]
    pa = np.tanh((g @ Wp[:H])[b.action_graph] + v[b.action_idx] @ Wp[H:] + A["policy_b1"])
    logits = pa @ A["policy_W2"] + A["policy_b2"][0]
    _finite("value head", values)
    _finite("policy head", logits)
    if keep_cache:
        cache.update(v_L=v, g_L=g, u=u, pa=pa)
    return values, logits, cache


def policy_from_logits(logits, batch: GraphBatch) -> np.ndarray:
    return np.exp(masked_log_softmax(logits, batch.action_mask, batch.action_starts, batch.action_graph))


def forward(params: GnnParameters, graph: BeliefGraph) -> NetworkOutput:
    """Value estimate and masked action distribution for one graph."""
    batch = make_batch([graph])
    values, logits, _ = forward_batch(params, batch)
    return NetworkOutput(float(values[0]), policy_from_logits(logits, batch), logits)


# ---------------------------------------------------------------- backward


def backward(params: GnnParameters, batch: GraphBatch, cache: dict, d_values, d_logits) -> dict:
    """Gradient of a scalar objective given its derivatives w.r.t. values and logits."""
    A = params.arrays
    H = params.hidden
    b = batch
    grads = {}
    v_L, g_L, u, pa = cache["v_L"], cache["g_L"], cache["u"], cache["pa"]

    # value head
    grads["value_W2"] = u.T @ d_values
    grads["value_b2"] = np.array([d_values.sum()])
    dz = np.outer(d_values, A["value_W2"]) * (1.0 - u * u)
    grads["value_W1"] = g_L.T @ dz
    grads["value_b1"] = dz.sum(0)
    dg = dz @ A["value_W1"].T

    # policy head
    Wp = A["policy_W1"]
    grads["policy_W2"] = pa.T @ d_logits
    grads["policy_b2"] = np.array([d_logits.sum()])
    dz = np.outer(d_logits, A["policy_W2"]) * (1.0 - pa * pa)
    dz_graph = np.add.reduceat(dz, b.action_starts)
    grads["policy_W1"] = np.concatenate([g_L.T @ dz_graph, v_L[b.action_idx].T @ dz])
    grads["policy_b1"] = dz.sum(0)
    dg += dz_graph @ Wp[:H].T
    dv = np.zeros_like(v_L)
    dv[b.action_idx] += dz @ Wp[H:].T
    de = np.zeros((b.x_edge.shape[0], H))

    for l in reversed(range(params.rounds)):
        c = cache["layers"][l]
        v, e, g = c["v"], c["e"], c["g"]
        e_new, v_new = c["e_new"], c["v_new"]

        # global update (residual: g_new = g + tanh(...))
        d = dg * (1.0 - c["tg"] ** 2)
        grads[f"glob{l}_W2"] = c["hg"].T @ d
        grads[f"glob{l}_b2"] = d.sum(0)
        dzg = (d @ A[f"glob{l}_W2"].T) * (1.0 - c["hg"] ** 2)
        Wg = A[f"glob{l}_W1"]
        grads[f"glob{l}_W1"] = np.concatenate([g.T @ dzg, c["agg_n"].T @ dzg, c["agg_e"].T @ dzg])
        grads[f"glob{l}_b1"] = dzg.sum(0)
        dg_prev = dg + dzg @ Wg[:H].T
        dx, grads[f"att{l}_glob_node"] = _attend_backward(
            v_new, A[f"att{l}_glob_node"], c["beta"], b.node_starts, b.node_graph, dzg @ Wg[H : 2 * H].T)
        dv += dx
        dx, grads[f"att{l}_glob_edge"] = _attend_backward(
            e_new, A[f"att{l}_glob_edge"], c["gamma"], b.edge_starts, b.edge_graph, dzg @ Wg[2 * H :].T)
        de += dx

        # node update
        d = dv * (1.0 - c["tv"] ** 2)
        grads[f"node{l}_W2"] = c["hv"].T @ d
        grads[f"node{l}_b2"] = d.sum(0)
        dzv = (d @ A[f"node{l}_W2"].T) * (1.0 - c["hv"] ** 2)
        Wv = A[f"node{l}_W1"]
        dzv_graph = np.add.reduceat(dzv, b.node_starts)
        grads[f"node{l}_W1"] = np.concatenate([v.T @ dzv, c["agg"].T @ dzv, g.T @ dzv_graph])
        grads[f"node{l}_b1"] = dzv.sum(0)
        dv_prev = dv + dzv @ Wv[:H].T
        dg_prev += dzv_graph @ Wv[2 * H :].T
        dx, grads[f"att{l}_node"] = _attend_backward(
            e_new, A[f"att{l}_node"], c["alpha"], b.dst_starts, b.dst, dzv @ Wv[H : 2 * H].T)
        de += dx

        # edge update
        d = de * (1.0 - c["te"] ** 2)
        grads[f"edge{l}_W2"] = c["h"].T @ d
        grads[f"edge{l}_b2"] = d.sum(0)
        dz = (d @ A[f"edge{l}_W2"].T) * (1.0 - c["h"] ** 2)
        W1 = A[f"edge{l}_W1"]
        dz_src = np.add.reduceat(dz[b.src_order], b.src_starts)
        dz_dst = np.add.reduceat(dz, b.dst_starts)
        dz_graph = np.add.reduceat(dz, b.edge_starts)
        grads[f"edge{l}_W1"] = np.concatenate([e.T @ dz, v.T @ dz_src, v.T @ dz_dst, g.T @ dz_graph])
        grads[f"edge{l}_b1"] = dz.sum(0)
        de = de + dz @ W1[:H].T
        dv_prev += dz_src @ W1[H : 2 * H].T + dz_dst @ W1[2 * H : 3 * H].T
        dg_prev += dz_graph @ W1[3 * H :].T

        dv, dg = dv_prev, dg_prev
        for name in (f"glob{l}_W1", f"node{l}_W1", f"edge{l}_W1"):
            _finite(f"gradient of {name}", grads[name])

    # encoders; g0 is the global node's encoding
    dv[b.global_idx] += dg
    v0, e0 = cache["v0"], cache["e0"]
    dz = dv * (1.0 - v0 * v0)
    grads["enc_node_W"] = b.x_node.T @ dz
    grads["enc_node_b"] = dz.sum(0)
    dz = de * (1.0 - e0 * e0)
    grads["enc_edge_W"] = b.x_edge.T @ dz
    grads["enc_edge_b"] = dz.sum(0)
    return grads
