"""Single-graph inference for use inside tree search.

Same arithmetic as :func:`gammazero.gnn.network.forward_batch` on a batch of
one. Search evaluates one small graph at a time, thousands of times per
decision, so this path trims per-call overhead: weights are pre-split per
round, the source and destination projections share one matmul, and the glue
between nonlinearities (gathers, bias adds, attention pooling, residuals) runs
in compiled kernels. The large ``tanh`` calls stay in numpy, whose SIMD
implementation is several times faster than a scalar loop calling libm.
"""

from __future__ import annotations

import math

import numpy as np

from .. import _kernels as K
from ..graph import BeliefGraph
from .network import NetworkOutput
from .params import GnnParameters


def _attend_loop(x, att, starts, out):
    m, h = x.shape
    n = starts.shape[0]
    s = np.empty(m)
    for j in range(m):
        acc = 0.0
        for c in range(h):
            acc += x[j, c] * att[c]
        s[j] = acc
    for k in range(n):
        lo = starts[k]
        hi = starts[k + 1] if k + 1 < n else m
        mx = s[lo]
        for j in range(lo + 1, hi):
            if s[j] > mx:
                mx = s[j]
        tot = 0.0
        for j in range(lo, hi):
            w = np.exp(s[j] - mx)
            s[j] = w
            tot += w
        for c in range(h):
            out[k, c] = 0.0
        for j in range(lo, hi):
            w = s[j] / tot
            for c in range(h):
                out[k, c] += w * x[j, c]


def _attend_numpy(x, att, starts, out):
    s = x @ att
    seg = np.repeat(np.arange(starts.shape[0]), np.diff(np.append(starts, x.shape[0])))
    mx = np.maximum.reduceat(s, starts)
    w = np.exp(s - mx[seg])
    tot = np.add.reduceat(w, starts)
    out[:] = np.add.reduceat(w[:, None] * x, starts, axis=0) / tot[:, None]


def _tanh(x):
    u = math.expm1(2.0 * x) if x < 20.0 else math.inf
    return 1.0 if u == math.inf else u / (u + 2.0)


def _affine_loop(x, W, b):
    z = np.dot(x, W)
    for j in range(z.shape[0]):
        for c in range(z.shape[1]):
            z[j, c] += b[c]
    return z


def _edge_pre_loop(e, v, g, W1e, W1sd, W1g, b1, src, dst):
    H = W1e.shape[1]
    P = np.dot(v, W1sd)
    c0 = np.dot(g, W1g) + b1
    z = np.dot(e, W1e)
    for j in range(z.shape[0]):
        a = src[j]
        b = dst[j]
        for c in range(H):
            z[j, c] += P[a, c] + P[b, H + c] + c0[c]
    return z


def _node_pre_loop(e, t, v, g, att, Wvv, Wva, Wvg, b, dst_starts):
    e += t
    agg = np.empty(v.shape)
    attend(e, att, dst_starts, agg)
    hv = np.dot(v, Wvv) + np.dot(agg, Wva)
    c0 = np.dot(g, Wvg) + b
    for j in range(hv.shape[0]):
        for c in range(hv.shape[1]):
            hv[j, c] += c0[c]
    return hv


def _global_loop(v, t, e, g, att_gn, att_ge, Wgg, Wgn, Wge, gb1, gW2, gb2):
    v += t
    zero = np.zeros(1, dtype=np.int64)
    pn = np.empty((1, v.shape[1]))
    pe = np.empty((1, v.shape[1]))
    attend(v, att_gn, zero, pn)
    attend(e, att_ge, zero, pe)
    hg = np.dot(g, Wgg) + np.dot(pn[0], Wgn) + np.dot(pe[0], Wge) + gb1
    for c in range(hg.shape[0]):
        hg[c] = _tanh(hg[c])
    u = np.dot(hg, gW2) + gb2
    out = g.copy()
    for c in range(u.shape[0]):
        out[c] += _tanh(u[c])
    return out


def _heads_loop(g, v, action_nodes, vW1, vb1, vW2, vb2, pW1g, pW1v, pb1, pW2, pb2):
    hv = np.dot(g, vW1) + vb1
    value = vb2
    for c in range(hv.shape[0]):
        value += _tanh(hv[c]) * vW2[c]
    cg = np.dot(g, pW1g) + pb1
    m = action_nodes.shape[0]
    logits = np.empty(m)
    for i in range(m):
        hp = np.dot(v[action_nodes[i]], pW1v)
        acc = pb2
        for c in range(hp.shape[0]):
            acc += _tanh(hp[c] + cg[c]) * pW2[c]
        logits[i] = acc
    return value, logits


def _affine_np(x, W, b):
    return x @ W + b


def _edge_pre_np(e, v, g, W1e, W1sd, W1g, b1, src, dst):
    H = W1e.shape[1]
    P = v @ W1sd
    z = e @ W1e
    z += P[src, :H]
    z += P[dst, H:]
    z += g @ W1g + b1
    return z


def _node_pre_np(e, t, v, g, att, Wvv, Wva, Wvg, b, dst_starts):
    e += t
    agg = np.empty(v.shape)
    attend(e, att, dst_starts, agg)
    return v @ Wvv + agg @ Wva + (g @ Wvg + b)


def _global_np(v, t, e, g, att_gn, att_ge, Wgg, Wgn, Wge, gb1, gW2, gb2):
    v += t
    zero = np.zeros(1, dtype=np.int64)
    pn = np.empty((1, v.shape[1]))
    pe = np.empty((1, v.shape[1]))
    attend(v, att_gn, zero, pn)
    attend(e, att_ge, zero, pe)
    hg = np.tanh(g @ Wgg + pn[0] @ Wgn + pe[0] @ Wge + gb1)
    return g + np.tanh(hg @ gW2 + gb2)


def _heads_np(g, v, action_nodes, vW1, vb1, vW2, vb2, pW1g, pW1v, pb1, pW2, pb2):
    value = float(np.tanh(g @ vW1 + vb1) @ vW2) + vb2
    logits = np.tanh(v[action_nodes] @ pW1v + (g @ pW1g + pb1)) @ pW2 + pb2
    return value, logits


attend = _attend_numpy
affine, edge_pre, node_pre, global_update, heads = _affine_np, _edge_pre_np, _node_pre_np, _global_np, _heads_np
if K.USING_NUMBA:
    from numba import njit

    attend = njit(cache=True)(_attend_loop)
    _tanh = njit(cache=True)(_tanh)
    affine = njit(cache=True)(_affine_loop)
    edge_pre = njit(cache=True)(_edge_pre_loop)
    node_pre = njit(cache=True)(_node_pre_loop)
    global_update = njit(cache=True)(_global_loop)
    heads = njit(cache=True)(_heads_loop)


def pack(params: GnnParameters) -> list:
    """Per-round weight tuples in the order :meth:`FastNetwork.run` consumes them."""
    A = params.arrays
    H = params.hidden
    c = np.ascontiguousarray
    rounds = []
    for l in range(params.rounds):
        W1, Wv, Wg = A[f"edge{l}_W1"], A[f"node{l}_W1"], A[f"glob{l}_W1"]
        rounds.append((
            c(W1[:H]), c(np.hstack([W1[H : 2 * H], W1[2 * H : 3 * H]])), c(W1[3 * H :]),
            A[f"edge{l}_b1"], A[f"edge{l}_W2"], A[f"edge{l}_b2"], A[f"att{l}_node"],
            c(Wv[:H]), c(Wv[H : 2 * H]), c(Wv[2 * H :]), A[f"node{l}_b1"], A[f"node{l}_W2"], A[f"node{l}_b2"],
            A[f"att{l}_glob_node"], A[f"att{l}_glob_edge"],
            c(Wg[:H]), c(Wg[H : 2 * H]), c(Wg[2 * H :]), A[f"glob{l}_b1"], A[f"glob{l}_W2"], A[f"glob{l}_b2"],
        ))
    return rounds


class FastNetwork:
    """Packed parameters plus a lean single-graph forward."""

    def __init__(self, params: GnnParameters):
        self.params = params
        self.rounds = pack(params)
        A = params.arrays
        H = params.hidden
        self.enc = (A["enc_node_W"], A["enc_node_b"], A["enc_edge_W"], A["enc_edge_b"])
        self.head = (
            A["value_W1"], A["value_b1"], A["value_W2"], float(A["value_b2"][0]),
            np.ascontiguousarray(A["policy_W1"][:H]), np.ascontiguousarray(A["policy_W1"][H:]),
            A["policy_b1"], A["policy_W2"], float(A["policy_b2"][0]),
        )

    def run(self, x_node, x_edge, src, dst, gidx, action_nodes, dst_starts=None):
        """(value, logits) for one graph whose edges are sorted by destination."""
        enW, enb, eeW, eeb = self.enc
        if dst_starts is None:
            dst_starts = np.searchsorted(dst, np.arange(x_node.shape[0]))
        v = np.tanh(affine(x_node, enW, enb))
        e = np.tanh(affine(x_edge, eeW, eeb))
        g = v[gidx].copy()
        for (W1e, W1sd, W1g, b1, W2, b2, att, Wvv, Wva, Wvg, nb1, nW2, nb2,
             att_gn, att_ge, Wgg, Wgn, Wge, gb1, gW2, gb2) in self.rounds:
            z = edge_pre(e, v, g, W1e, W1sd, W1g, b1, src, dst)
            np.tanh(z, out=z)
            t = affine(z, W2, b2)
            np.tanh(t, out=t)
            hv = node_pre(e, t, v, g, att, Wvv, Wva, Wvg, nb1, dst_starts)  # e += t
            np.tanh(hv, out=hv)
            t = affine(hv, nW2, nb2)
            np.tanh(t, out=t)
            g = global_update(v, t, e, g, att_gn, att_ge, Wgg, Wgn, Wge, gb1, gW2, gb2)  # v += t
        return heads(g, v, action_nodes, *self.head)

    def __call__(self, graph: BeliefGraph) -> NetworkOutput:
        gidx = int(np.flatnonzero(graph.node_type == 4)[0])
        value, logits = self.run(graph.x_node, graph.x_edge, graph.src, graph.dst, gidx, graph.action_nodes)
        return NetworkOutput(value, masked_softmax(logits, graph.action_mask), logits)


def _masked_softmax_loop(logits, mask):
    m = logits.shape[0]
    mx = -np.inf
    for i in range(m):
        if mask[i] and logits[i] > mx:
            mx = logits[i]
    p = np.zeros(m)
    tot = 0.0
    for i in range(m):
        if mask[i]:
            p[i] = np.exp(logits[i] - mx)
            tot += p[i]
    for i in range(m):
        p[i] /= tot
    return p


def _masked_softmax_np(logits, mask):
    z = np.where(mask, logits, -np.inf)
    p = np.exp(z - z.max())
    return p / p.sum()


masked_softmax = _masked_softmax_np
if K.USING_NUMBA:
    masked_softmax = njit(cache=True)(_masked_softmax_loop)
