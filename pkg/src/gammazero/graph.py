"""Action-centric graph encoding of particle beliefs.

Node feature layout (``D_NODE`` = 27)::

    [0:5]   node type one-hot: object, location, predicate, action, global
    [5:8]   object payload: is_agent, is_rock, P(good)
    [8:12]  location payload: x / n, y / n, is_exit_or_goal, is_light
    [12:17] predicate schema one-hot: AtLocation, RockAt, RockGood, RockSampled, AtBin
    [17]    predicate support
    [18:27] action schema one-hot: North, South, East, West, Sample, Check, Up, Down, Stop

Edge feature layout (``D_EDGE`` = 20)::

    [0:10]  edge type one-hot (see EDGE_TYPES; the two directions of a relation differ)
    [10:12] argument slot one-hot (predicate-argument edges only)
    [12]    belief strength in [0, 1]
    [13:17] support band one-hot: unanimous, strong, weak, split
    [17:20] relation scalars: distance, accuracy / auxiliary flag, distance change
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import predicates as P
from .belief import ParticleBelief
from .domains import LightDark, PomdpModel, RockSample, sensor_accuracy
from .domains.lightdark import STOP, UP
from .domains.rocksample import CHECK0, EAST, MOVE_DELTAS, SAMPLE
from .errors import DataError, InvalidArgumentError

SCHEMA_VERSION = 1
D_NODE = 27
D_EDGE = 20

NODE_TYPES = ("object", "location", "predicate", "action", "global")
OBJECT, LOCATION, PREDICATE, ACTION, GLOBAL = range(5)

EDGE_TYPES = (
    "pred-obj", "obj-pred", "pred-loc", "loc-pred", "act-obj",
    "obj-act", "pred-act", "act-pred", "global-node", "node-global",
)
PRED_OBJ, OBJ_PRED, PRED_LOC, LOC_PRED, ACT_OBJ, OBJ_ACT, PRED_ACT, ACT_PRED, GLOBAL_NODE, NODE_GLOBAL = range(10)

SUPPORT_BANDS = ("unanimous", "strong", "weak", "split")

_OBJ0, _LOC0, _PRED0, _SUPPORT, _ACT0 = 5, 8, 12, 17, 18
_ACTION_SCHEMA = {"North": 0, "South": 1, "East": 2, "West": 3, "Sample": 4, "Check": 5, "Up": 6, "Down": 7, "Stop": 8}
_E_SLOT, _E_BELIEF, _E_BAND, _E_EXTRA = 10, 12, 13, 17

DEFAULT_TAU = 0.05


def support_band(p) -> np.ndarray:
    """Band index per value: 0 unanimous (>0.95), 1 strong (0.70-0.95), 2 weak (0.30-0.70), 3 split (<0.30)."""
    p = np.asarray(p, dtype=np.float64)
    return np.select([p > 0.95, p >= 0.70, p >= 0.30], [0, 1, 2], default=3)


@dataclass(frozen=True, eq=False)
class BeliefGraph:
    """A typed graph with canonical node order and edges sorted by (dst, src, type)."""

    node_ids: tuple
    node_type: np.ndarray
    x_node: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    x_edge: np.ndarray
    action_nodes: np.ndarray
    actions: np.ndarray
    action_mask: np.ndarray
    action_names: tuple
    domain: str = ""
    instance_params: dict = field(default_factory=dict)

    @property
    def num_nodes(self) -> int:
        return self.x_node.shape[0]

    @property
    def num_edges(self) -> int:
        return self.x_edge.shape[0]

    def edge_types(self) -> np.ndarray:
        return np.argmax(self.x_edge[:, :10], axis=1)

    def count(self, node_type: int) -> int:
        return int((self.node_type == node_type).sum())

    def labels(self) -> list[str]:
        return [_label(n) for n in self.node_ids]


def _label(node_id) -> str:
    if isinstance(node_id, P.GroundedPredicate):
        return node_id.label()
    if node_id[0] == "action":
        return f"action_{node_id[1]}"
    return P.node_label(node_id)


# ------------------------------------------------------------ aggregation


def _agent_cells(model: RockSample, belief: ParticleBelief):
    """Agent positions with their mass; index ``n*n`` is the exit."""
    n = model.grid_n
    s = belief.states
    keys = np.where(s[:, 2] != 0, n * n, s[:, 1] * n + s[:, 0])
    mass = np.bincount(keys, weights=belief.weights, minlength=n * n + 1)
    cells = np.nonzero(mass > 0)[0]
    return cells, mass[cells]


def flag_marginals(weights: np.ndarray, flags: np.ndarray) -> np.ndarray:
    """Weighted mass of each 0/1 column, accumulated particle by particle.

    Summing in particle order (rather than through a BLAS product) makes the
    result independent of vector width, so threshold tests against tau agree
    with the compiled graph builder even at exact ties.
    """
    n, k = flags.shape
    keys = np.arange(k)[None, :] + k * (flags != 0)
    return np.bincount(keys.ravel(), weights=np.repeat(weights, k), minlength=2 * k)[k:]


def aggregate_predicates(belief: ParticleBelief, model: PomdpModel) -> dict:
    """Every grounding with positive particle support, mapped to that support."""
    out: dict = {}
    if isinstance(model, RockSample):
        n = model.grid_n
        cells, mass = _agent_cells(model, belief)
        for c, m in zip(cells, mass):
            loc = P.EXIT if c == n * n else P.loc_id(c % n, c // n)
            out[P.GroundedPredicate("AtLocation", (P.AGENT, loc))] = float(min(m, 1.0))
        k = model.k
        good = flag_marginals(belief.weights, belief.states[:, 3 : 3 + k])
        sampled = flag_marginals(belief.weights, belief.states[:, 3 + k :])
        for i in range(k):
            rock = P.rock_id(i)
            out[P.GroundedPredicate("RockAt", (rock, P.loc_id(model.rock_x[i], model.rock_y[i])))] = 1.0
            if good[i] > 0:
                out[P.GroundedPredicate("RockGood", (rock,))] = float(min(good[i], 1.0))
            if sampled[i] > 0:
                out[P.GroundedPredicate("RockSampled", (rock,))] = float(min(sampled[i], 1.0))
        return out
    if isinstance(model, LightDark):
        bins = P.LightDarkBins(model)
        mass = np.bincount(bins.index(belief.states[:, 0]), weights=belief.weights, minlength=bins.count)
        for j in np.nonzero(mass > 0)[0]:
            out[P.GroundedPredicate("AtBin", (P.AGENT, P.bin_id(j)))] = float(min(mass[j], 1.0))
        return out
    raise InvalidArgumentError(f"no predicate schemas for domain {model.name}")


# ------------------------------------------------------------ construction


def _seq(v, m: int) -> list:
    if isinstance(v, np.ndarray):
        return v.tolist() if v.ndim else [v.item()] * m
    if isinstance(v, (list, tuple)):
        return list(v)
    return [v] * m


class _Edges:
    """Accumulates edges in flat lists; each relation is added in both directions."""

    def __init__(self):
        self.a: list = []
        self.b: list = []
        self.fwd: list = []
        self.rev: list = []
        self.slot: list = []
        self.vals: list = [[], [], [], []]

    def add(self, a, b, fwd, rev, slot=-1, belief=1.0, dist=0.0, acc=0.0, delta=0.0):
        m = max(len(v) if isinstance(v, (list, tuple, np.ndarray)) and np.ndim(v) else 1 for v in (a, b))
        self.a += _seq(a, m)
        self.b += _seq(b, m)
        self.fwd += [fwd] * m
        self.rev += [rev] * m
        self.slot += _seq(slot, m)
        for col, v in zip(self.vals, (belief, dist, acc, delta)):
            col += _seq(v, m)

    def build(self):
        a = np.array(self.a, dtype=np.int64)
        b = np.array(self.b, dtype=np.int64)
        src = np.concatenate([a, b])
        dst = np.concatenate([b, a])
        etype = np.array(self.fwd + self.rev, dtype=np.int64)
        slot = np.array(self.slot * 2, dtype=np.int64)
        vals = np.array(self.vals, dtype=np.float64)
        vals = np.concatenate([vals, vals], axis=1)
        order = np.lexsort((etype, src, dst))
        src, dst, etype, slot, vals = src[order], dst[order], etype[order], slot[order], vals[:, order]
        x = np.zeros((src.shape[0], D_EDGE))
        rows = np.arange(src.shape[0])
        x[rows, etype] = 1.0
        has_slot = slot >= 0
        x[rows[has_slot], _E_SLOT + slot[has_slot]] = 1.0
        x[:, _E_BELIEF] = vals[0]
        x[rows, _E_BAND + support_band(vals[0])] = 1.0
        x[:, _E_EXTRA : _E_EXTRA + 3] = vals[1:].T
        return src, dst, x


def _params_of(model) -> dict:
    cached = getattr(model, "_graph_params", None)
    if cached is None:
        cached = model.params_dict()
        model._graph_params = cached
    return cached


def _names_of(model) -> tuple:
    cached = getattr(model, "_graph_action_names", None)
    if cached is None:
        cached = tuple(model.action_name(a) for a in range(model.action_count))
        model._graph_action_names = cached
    return cached


def _finish(model, belief, objects, locations, preds, obj_feat, loc_feat, action_schema, edges_fn):
    """Assemble nodes in canonical order, then let ``edges_fn`` add relations."""
    pred_items = sorted(preds.items(), key=lambda kv: kv[0].sort_key())
    actions = list(range(model.action_count))
    ids = [("global",)] + objects + locations + [p for p, _ in pred_items] + [("action", a) for a in actions]
    index = {nid: i for i, nid in enumerate(ids)}
    N = len(ids)
    node_type = np.empty(N, dtype=np.int64)
    x = np.zeros((N, D_NODE))

    node_type[0] = GLOBAL
    o0 = 1
    l0 = o0 + len(objects)
    p0 = l0 + len(locations)
    a0 = p0 + len(pred_items)
    node_type[o0:l0] = OBJECT
    node_type[l0:p0] = LOCATION
    node_type[p0:a0] = PREDICATE
    node_type[a0:] = ACTION
    x[np.arange(N), node_type] = 1.0
    x[o0:l0, _OBJ0 : _OBJ0 + 3] = obj_feat
    if locations:
        x[l0:p0, _LOC0 : _LOC0 + 4] = loc_feat
    for j, (pred, support) in enumerate(pred_items):
        x[p0 + j, _PRED0 + P.SCHEMA_INDEX[pred.name]] = 1.0
        x[p0 + j, _SUPPORT] = support
    for j, a in enumerate(actions):
        x[a0 + j, _ACT0 + action_schema(a)] = 1.0

    edges = _Edges()
    edges.add(0, list(range(1, N)), GLOBAL_NODE, NODE_GLOBAL)
    for want_obj, fwd, rev in ((True, PRED_OBJ, OBJ_PRED), (False, PRED_LOC, LOC_PRED)):
        pa, args, slots, sup = [], [], [], []
        for j, (pred, support) in enumerate(pred_items):
            for slot, arg in enumerate(pred.args):
                if (arg[0] in ("agent", "rock")) == want_obj:
                    pa.append(p0 + j)
                    args.append(index[arg])
                    slots.append(slot)
                    sup.append(support)
        if pa:
            edges.add(pa, args, fwd, rev, slot=slots, belief=sup)
    edges_fn(edges, index, a0, dict(pred_items))
    src, dst, x_edge = edges.build()

    return BeliefGraph(
        node_ids=tuple(ids),
        node_type=node_type,
        x_node=x,
        src=src,
        dst=dst,
        x_edge=x_edge,
        action_nodes=np.arange(a0, N, dtype=np.int64),
        actions=np.array(actions, dtype=np.int64),
        action_mask=model.legal_actions(belief.states, belief.weights),
        action_names=_names_of(model),
        domain=model.name,
        instance_params=_params_of(model),
    )


def _rocksample_graph(belief: ParticleBelief, model: RockSample, tau: float) -> BeliefGraph:
    n, k = model.grid_n, model.k
    rx, ry = model.rock_x, model.rock_y
    support = aggregate_predicates(belief, model)
    preds = {p: s for p, s in support.items() if s >= tau}

    cells, mass = _agent_cells(model, belief)
    live = cells < n * n
    ax, ay = cells[live] % n, cells[live] // n
    amass = mass[live]
    live_total = float(amass.sum())

    cell_set = {(int(x), int(y)) for x, y in zip(ax, ay)} | {(int(x), int(y)) for x, y in zip(rx, ry)}
    locations = [P.loc_id(x, y) for x, y in sorted(cell_set, key=lambda c: (c[1], c[0]))] + [P.EXIT]
    loc_feat = np.array([[x / n, y / n, 0.0, 0.0] for _, x, y in locations[:-1]] + [[1.0, 0.5, 1.0, 0.0]])

    good = flag_marginals(belief.weights, belief.states[:, 3 : 3 + k])
    objects = [P.AGENT] + [P.rock_id(i) for i in range(k)]
    obj_feat = np.zeros((k + 1, 3))
    obj_feat[0, 0] = 1.0
    obj_feat[1:, 1] = 1.0
    obj_feat[1:, 2] = good

    # expectations over the (usually single) live agent position
    if live_total > 0:
        pw = amass / live_total
        ddx = ax[:, None] - rx[None, :]
        ddy = ay[:, None] - ry[None, :]
        eucl = np.hypot(ddx, ddy)
        e_dist = pw @ eucl / n
        e_acc = pw @ sensor_accuracy(eucl, model.halflife)
        colocated = pw @ ((ddx == 0) & (ddy == 0))
        manh = np.abs(ddx) + np.abs(ddy)
        e_manh = pw @ manh / n
        move_delta = []
        for dx, dy in MOVE_DELTAS:
            mx = ax + dx
            my = ay + dy
            ok = (mx >= 0) & (mx < n) & (my >= 0) & (my < n)
            mx = np.where(ok, mx, ax)
            my = np.where(ok, my, ay)
            after = np.abs(mx[:, None] - rx[None, :]) + np.abs(my[:, None] - ry[None, :])
            move_delta.append(pw @ (after - manh))
        colocated_mass = colocated * live_total
    else:
        e_dist = e_acc = e_manh = colocated_mass = np.zeros(k)
        move_delta = [np.zeros(k)] * 4

    def action_schema(a):
        return a if a < CHECK0 else 5

    def edges_fn(edges: _Edges, index, a0, pmap):
        agent = index[P.AGENT]
        rocks = [index[P.rock_id(i)] for i in range(k)]
        checks = [a0 + CHECK0 + i for i in range(k)]
        edges.add(list(range(a0, a0 + 5)), agent, ACT_OBJ, OBJ_ACT)
        edges.add(checks, rocks, ACT_OBJ, OBJ_ACT, dist=e_dist, acc=e_acc)
        rock_at, good, sampled = [], [], []
        for pred, s in pmap.items():
            if pred.name == "AtLocation":
                loc = pred.args[1]
                if loc == P.EXIT:
                    continue
                pi = index[pred]
                x, y = loc[1], loc[2]
                blocked, delta = [], []
                for m, (dx, dy) in enumerate(MOVE_DELTAS):
                    moves = m == EAST or (0 <= x + dx < n and 0 <= y + dy < n)
                    blocked.append(0.0 if moves else 1.0)
                    delta.append(float(-dx) if moves else 0.0)
                edges.add(pi, [a0, a0 + 1, a0 + 2, a0 + 3], PRED_ACT, ACT_PRED, belief=s,
                          dist=(n - x) / n, acc=blocked, delta=delta)
                on_rock = 1.0 if model.rock_at(x, y) is not None else 0.0
                edges.add(pi, a0 + SAMPLE, PRED_ACT, ACT_PRED, belief=s, acc=on_rock)
            elif pred.name == "RockAt":
                rock_at.append((pred.args[0][1], index[pred], s))
            elif pred.name == "RockGood":
                good.append((pred.args[0][1], index[pred], s))
            elif pred.name == "RockSampled":
                sampled.append((pred.args[0][1], index[pred], s))
        if rock_at:
            ri, pi, s = (np.array(c) for c in zip(*rock_at))
            deltas = np.stack([md[ri] for md in move_delta], axis=1)
            edges.add(np.repeat(pi, 4), np.tile(a0 + np.arange(4), len(pi)), PRED_ACT, ACT_PRED,
                      belief=np.repeat(s, 4), dist=np.repeat(e_manh[ri], 4), delta=deltas.ravel())
        if good:
            ri, pi, s = (np.array(c) for c in zip(*good))
            edges.add(pi, a0 + SAMPLE, PRED_ACT, ACT_PRED, belief=s, dist=e_dist[ri], acc=colocated_mass[ri])
            edges.add(pi, a0 + CHECK0 + ri, PRED_ACT, ACT_PRED, belief=s, dist=e_dist[ri], acc=e_acc[ri])
        if sampled:
            ri, pi, s = (np.array(c) for c in zip(*sampled))
            edges.add(pi, a0 + SAMPLE, PRED_ACT, ACT_PRED, belief=s, dist=e_dist[ri], acc=colocated_mass[ri])

    return _finish(model, belief, objects, locations, preds, obj_feat, loc_feat, action_schema, edges_fn)


def _lightdark_graph(belief: ParticleBelief, model: LightDark, tau: float) -> BeliefGraph:
    p = model.params
    bins = P.LightDarkBins(model)
    span = bins.hi - bins.lo
    support = aggregate_predicates(belief, model)
    preds = {q: s for q, s in support.items() if s >= tau}

    goal_bin = int(bins.index(p.goal_y))
    light_bin = int(bins.index(p.light_y))
    occupied = {q.args[1][1] for q in support}
    js = sorted(occupied | {goal_bin, light_bin})
    locations = [P.bin_id(j) for j in js]
    loc_feat = np.array(
        [[0.0, (bins.center(j) - bins.lo) / span, float(j == goal_bin), float(j == light_bin)] for j in js]
    )
    objects = [P.AGENT]
    obj_feat = np.array([[1.0, 0.0, 0.0]])

    def action_schema(a):
        return 6 + a

    def edges_fn(edges: _Edges, index, a0, pmap):
        agent = index[P.AGENT]
        edges.add([a0, a0 + 1, a0 + 2], agent, ACT_OBJ, OBJ_ACT)
        for pred, s in pmap.items():
            pi = index[pred]
            y = bins.center(pred.args[1][1])
            gap = abs(y - p.goal_y)
            quality = 1.0 / (1.0 + float(p.noise(y)))
            for a in range(3):
                if a == STOP:
                    edges.add(pi, a0 + a, PRED_ACT, ACT_PRED, belief=s, dist=gap / span,
                              acc=float(gap <= p.goal_tolerance + 0.5))
                else:
                    step = p.step_size if a == UP else -p.step_size
                    edges.add(pi, a0 + a, PRED_ACT, ACT_PRED, belief=s, dist=gap / span, acc=quality,
                              delta=abs(y + step - p.goal_y) - gap)

    return _finish(model, belief, objects, locations, preds, obj_feat, loc_feat, action_schema, edges_fn)


def build_graph(belief: ParticleBelief, model: PomdpModel, tau: float = DEFAULT_TAU) -> BeliefGraph:
    """Encode ``belief`` as an action-centric graph; predicates need support >= ``tau``."""
    if not 0.0 < tau < 1.0:
        raise InvalidArgumentError(f"tau must lie in (0, 1), got {tau}")
    if isinstance(model, RockSample):
        return _rocksample_graph(belief, model, tau)
    if isinstance(model, LightDark):
        return _lightdark_graph(belief, model, tau)
    raise InvalidArgumentError(f"cannot encode beliefs of domain {model.name}")


def node_features(graph: BeliefGraph, node: int) -> np.ndarray:
    return graph.x_node[node].copy()


# ----------------------------------------------------------- serialization


def graph_to_record(graph: BeliefGraph) -> dict:
    return {
        "schema_version": SCHEMA_VERSION,
        "domain": graph.domain,
        "instance_params": graph.instance_params,
        "nodes": [
            {"id": lab, "type": NODE_TYPES[t], "features": f.tolist()}
            for lab, t, f in zip(graph.labels(), graph.node_type.tolist(), graph.x_node)
        ],
        "edges": [
            {"src": s, "dst": d, "features": f.tolist()}
            for s, d, f in zip(graph.src.tolist(), graph.dst.tolist(), graph.x_edge)
        ],
        "action_map": [
            {"node": int(nd), "action": int(a), "name": name, "legal": bool(ok)}
            for nd, a, name, ok in zip(graph.action_nodes, graph.actions, graph.action_names, graph.action_mask)
        ],
    }


def graph_from_record(rec: dict) -> BeliefGraph:
    if rec.get("schema_version") != SCHEMA_VERSION:
        raise DataError(f"unsupported graph schema_version {rec.get('schema_version')!r}")
    try:
        x_node = np.array([n["features"] for n in rec["nodes"]], dtype=np.float64).reshape(-1, D_NODE)
        x_edge = np.array([e["features"] for e in rec["edges"]], dtype=np.float64).reshape(-1, D_EDGE)
        amap = rec["action_map"]
        return BeliefGraph(
            node_ids=tuple(n["id"] for n in rec["nodes"]),
            node_type=np.array([NODE_TYPES.index(n["type"]) for n in rec["nodes"]], dtype=np.int64),
            x_node=x_node,
            src=np.array([e["src"] for e in rec["edges"]], dtype=np.int64),
            dst=np.array([e["dst"] for e in rec["edges"]], dtype=np.int64),
            x_edge=x_edge,
            action_nodes=np.array([a["node"] for a in amap], dtype=np.int64),
            actions=np.array([a["action"] for a in amap], dtype=np.int64),
            action_mask=np.array([a["legal"] for a in amap], dtype=bool),
            action_names=tuple(a["name"] for a in amap),
            domain=rec.get("domain", ""),
            instance_params=rec.get("instance_params", {}),
        )
    except (KeyError, ValueError, TypeError) as exc:
        raise DataError(f"malformed graph record: {exc}") from exc


def graph_to_json(graph: BeliefGraph) -> str:
    return json.dumps(graph_to_record(graph))


def edge_feature_names() -> list[str]:
    return (
        [f"type:{t}" for t in EDGE_TYPES]
        + ["slot:first", "slot:second", "belief"]
        + [f"band:{b}" for b in SUPPORT_BANDS]
        + ["distance", "accuracy", "delta"]
    )


assert len(edge_feature_names()) == D_EDGE
assert D_NODE == _ACT0 + len(_ACTION_SCHEMA)
