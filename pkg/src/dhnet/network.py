"""Directed-graph model of a district heating network.

Arcs are pipes (foreflow or backflow), consumers (foreflow node to backflow
node) and a single depot arc (backflow node to foreflow node).  Arc order in
the file defines the arc index; the order of pipe arcs defines the pipe index
used by the finite-volume mesh.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import jsonschema
import numpy as np
from scipy.linalg import null_space
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .materials import WATER, FrictionMode, FrictionModel, MaterialModel


class NetworkError(ValueError):
    """Invalid network description; ``code`` names the failed rule."""

    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


class Part(str, Enum):
    FOREFLOW = "foreflow"
    BACKFLOW = "backflow"


class ArcKind(str, Enum):
    PIPE_FF = "pipe_ff"
    PIPE_BF = "pipe_bf"
    CONSUMER = "consumer"
    DEPOT = "depot"

    @property
    def is_pipe(self):
        return self in (ArcKind.PIPE_FF, ArcKind.PIPE_BF)


@dataclass(frozen=True)
class Node:
    id: str
    part: Part


@dataclass(frozen=True)
class PipeAttributes:
    length: float
    diameter: float
    slope: float = 0.0
    roughness: float = 1e-4
    heat_transmission: float = 0.0

    def __post_init__(self):
        if not (self.length > 0 and self.diameter > 0):
            raise NetworkError("pipe_geometry", "pipe length and diameter must be positive")
        if self.roughness < 0 or self.heat_transmission < 0:
            raise NetworkError("pipe_geometry", "roughness and heat transmission must be >= 0")

    @property
    def cross_section(self):
        return self.diameter**2 * math.pi / 4.0


@dataclass(frozen=True)
class Arc:
    id: str
    tail: str
    head: str
    kind: ArcKind
    pipe: PipeAttributes | None = None


@dataclass(frozen=True)
class OperationalBounds:
    """Operational limits; ``None`` leaves a bound open.  Temperatures in
    degC, pressures in Pa."""

    T_bf: float = 60.0
    T_ff_min: float | None = None
    T_ff_max: float | None = None
    dT_c_max: float | None = None
    p_bf_min: float | None = None
    p_bf_max: float | None = None
    p_ff_min: float | None = None
    p_ff_max: float | None = None
    dp_c_min: float | None = None
    dp_c_max: float | None = None
    T_net: float | None = None
    p_net: float | None = None

    def __post_init__(self):
        pairs = [
            (self.T_ff_min, self.T_ff_max),
            (self.p_bf_min, self.p_bf_max),
            (self.p_ff_min, self.p_ff_max),
            (self.dp_c_min, self.dp_c_max),
        ]
        for lo, hi in pairs:
            if lo is not None and hi is not None and lo > hi:
                raise ValueError(f"lower bound {lo} exceeds upper bound {hi}")

    @classmethod
    def from_dict(cls, data):
        return cls(**{k: (None if v is None else float(v)) for k, v in data.items()})


class Network:
    """Immutable network: nodes, arcs, per-pipe geometry and constants."""

    def __init__(
        self,
        nodes,
        arcs,
        g=9.81,
        theta=10.0,
        material: MaterialModel = WATER,
        friction_mode=FrictionMode.COLEBROOK_WHITE,
        friction_value=None,
    ):
        self.nodes = tuple(nodes)
        self.arcs = tuple(arcs)
        self.g = float(g)
        self.theta = float(theta)
        self.material = material
        self.friction_mode = FrictionMode(friction_mode)
        self.friction_value = friction_value
        _validate(self)

        self.node_index = {n.id: i for i, n in enumerate(self.nodes)}
        self.arc_index = {a.id: i for i, a in enumerate(self.arcs)}
        self.tail = _ro(np.array([self.node_index[a.tail] for a in self.arcs], dtype=np.int64))
        self.head = _ro(np.array([self.node_index[a.head] for a in self.arcs], dtype=np.int64))
        kinds = [a.kind for a in self.arcs]
        self.pipe_arcs = _ro(np.array([i for i, k in enumerate(kinds) if k.is_pipe], dtype=np.int64))
        self.consumer_arcs = _ro(np.array([i for i, k in enumerate(kinds) if k is ArcKind.CONSUMER], dtype=np.int64))
        self.depot_arc = kinds.index(ArcKind.DEPOT)
        self.is_foreflow = _ro(np.array([n.part is Part.FOREFLOW for n in self.nodes]))

        pipes = [self.arcs[i].pipe for i in self.pipe_arcs]
        self.length = _ro(np.array([p.length for p in pipes]))
        self.diameter = _ro(np.array([p.diameter for p in pipes]))
        self.slope = _ro(np.array([p.slope for p in pipes]))
        self.roughness = _ro(np.array([p.roughness for p in pipes]))
        self.heat_transmission = _ro(np.array([p.heat_transmission for p in pipes]))
        self.cross_section = _ro(np.array([p.cross_section for p in pipes]))
        self.pipe_of_arc = np.full(len(self.arcs), -1, dtype=np.int64)
        self.pipe_of_arc[self.pipe_arcs] = np.arange(len(self.pipe_arcs))
        _ro(self.pipe_of_arc)

    # sizes
    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_arcs(self):
        return len(self.arcs)

    @property
    def n_pipes(self):
        return len(self.pipe_arcs)

    @property
    def n_consumers(self):
        return len(self.consumer_arcs)

    def friction_model(self, pipe):
        return FrictionModel(
            self.friction_mode, self.roughness[pipe], self.diameter[pipe], self.friction_value
        )

    def incidence(self):
        """Node-arc incidence matrix, +1 at the head and -1 at the tail."""
        m = self.n_arcs
        rows = np.concatenate([self.head, self.tail])
        cols = np.concatenate([np.arange(m), np.arange(m)])
        vals = np.concatenate([np.ones(m), -np.ones(m)])
        return coo_matrix((vals, (rows, cols)), shape=(self.n_nodes, m)).tocsr()

    def delta_in(self, node):
        return np.flatnonzero(self.head == node)

    def delta_out(self, node):
        return np.flatnonzero(self.tail == node)

    def volume_residual(self, qhat):
        """Per-node inflow minus outflow of a per-arc volumetric flow."""
        return self.incidence() @ np.asarray(qhat, dtype=float)

    def summary(self):
        """Counts in the layout of the street-network outline table.

        ``loops`` is the cycle-space dimension of the pipe subgraph,
        ``|A_p| - |N| + components``.
        """
        adj = coo_matrix(
            (np.ones(self.n_pipes), (self.tail[self.pipe_arcs], self.head[self.pipe_arcs])),
            shape=(self.n_nodes, self.n_nodes),
        )
        ncomp, _ = connected_components(adj, directed=False)
        return {
            "pipes": self.n_pipes,
            "consumers": self.n_consumers,
            "depot": 1,
            "arcs": self.n_arcs,
            "nodes": self.n_nodes,
            "loops": self.n_pipes - self.n_nodes + ncomp,
        }

    def to_dict(self):
        arcs = []
        for a in self.arcs:
            d = {"id": a.id, "tail": a.tail, "head": a.head, "kind": a.kind.value}
            if a.pipe is not None:
                d["pipe"] = {
                    "length": a.pipe.length,
                    "diameter": a.pipe.diameter,
                    "slope": a.pipe.slope,
                    "roughness": a.pipe.roughness,
                    "heat_transmission": a.pipe.heat_transmission,
                }
            arcs.append(d)
        friction = {"mode": self.friction_mode.value}
        if self.friction_value is not None:
            friction["value"] = self.friction_value
        return {
            "constants": {"g": self.g, "theta": self.theta, "friction": friction},
            "nodes": [{"id": n.id, "part": n.part.value} for n in self.nodes],
            "arcs": arcs,
        }


def _ro(a):
    a.flags.writeable = False
    return a


NETWORK_SCHEMA = {
    "type": "object",
    "required": ["nodes", "arcs"],
    "properties": {
        "constants": {
            "type": "object",
            "properties": {
                "g": {"type": "number"},
                "theta": {"type": "number"},
                "material": {"type": "object"},
                "friction": {
                    "type": "object",
                    "required": ["mode"],
                    "properties": {
                        "mode": {"enum": [m.value for m in FrictionMode]},
                        "value": {"type": "number", "exclusiveMinimum": 0},
                    },
                },
            },
        },
        "nodes": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "part"],
                "properties": {
                    "id": {"type": "string"},
                    "part": {"enum": [p.value for p in Part]},
                },
            },
        },
        "arcs": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["id", "tail", "head", "kind"],
                "properties": {
                    "id": {"type": "string"},
                    "tail": {"type": "string"},
                    "head": {"type": "string"},
                    "kind": {"enum": [k.value for k in ArcKind]},
                    "pipe": {
                        "type": "object",
                        "required": ["length", "diameter"],
                        "properties": {
                            "length": {"type": "number", "exclusiveMinimum": 0},
                            "diameter": {"type": "number", "exclusiveMinimum": 0},
                            "slope": {"type": "number"},
                            "roughness": {"type": "number", "minimum": 0},
                            "heat_transmission": {"type": "number", "minimum": 0},
                        },
                    },
                },
            },
        },
    },
}


def network_from_dict(data) -> Network:
    try:
        jsonschema.validate(data, NETWORK_SCHEMA)
    except jsonschema.ValidationError as exc:
        raise NetworkError("schema", f"schema violation: {exc.message}") from None
    const = data.get("constants", {})
    nodes = [Node(n["id"], Part(n["part"])) for n in data["nodes"]]
    arcs = []
    for a in data["arcs"]:
        kind = ArcKind(a["kind"])
        pipe = PipeAttributes(**a["pipe"]) if "pipe" in a else None
        if kind.is_pipe and pipe is None:
            raise NetworkError("schema", f"schema violation: pipe arc {a['id']!r} lacks pipe attributes")
        arcs.append(Arc(a["id"], a["tail"], a["head"], kind, pipe if kind.is_pipe else None))
    friction = const.get("friction", {"mode": "colebrook_white"})
    material = MaterialModel.from_dict(const["material"]) if "material" in const else WATER
    return Network(
        nodes,
        arcs,
        g=const.get("g", 9.81),
        theta=const.get("theta", 10.0),
        material=material,
        friction_mode=friction["mode"],
        friction_value=friction.get("value"),
    )


def load_network(path) -> Network:
    with open(path) as fh:
        try:
            data = json.load(fh)
        except json.JSONDecodeError as exc:
            raise NetworkError("schema", f"schema violation: invalid JSON ({exc})") from None
    return network_from_dict(data)


def save_network(net: Network, path):
    Path(path).write_text(json.dumps(net.to_dict(), indent=2))


def write_summary_csv(net: Network, path):
    s = net.summary()
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(s))
        w.writeheader()
        w.writerow(s)


def _validate(net: Network):
    ids = [n.id for n in net.nodes]
    if len(set(ids)) != len(ids):
        dup = sorted({i for i in ids if ids.count(i) > 1})
        raise NetworkError("duplicate_id", f"duplicate node ids: {dup}")
    aids = [a.id for a in net.arcs]
    if len(set(aids)) != len(aids):
        dup = sorted({i for i in aids if aids.count(i) > 1})
        raise NetworkError("duplicate_id", f"duplicate arc ids: {dup}")
    part = {n.id: n.part for n in net.nodes}
    for a in net.arcs:
        for end in (a.tail, a.head):
            if end not in part:
                raise NetworkError("unknown_node", f"arc {a.id!r} references unknown node {end!r}")
        if a.tail == a.head:
            raise NetworkError("arc_kind", f"arc {a.id!r} is a self-loop")
        want = {
            ArcKind.PIPE_FF: (Part.FOREFLOW, Part.FOREFLOW),
            ArcKind.PIPE_BF: (Part.BACKFLOW, Part.BACKFLOW),
            ArcKind.CONSUMER: (Part.FOREFLOW, Part.BACKFLOW),
            ArcKind.DEPOT: (Part.BACKFLOW, Part.FOREFLOW),
        }[a.kind]
        if (part[a.tail], part[a.head]) != want:
            raise NetworkError(
                "arc_kind",
                f"{a.kind.value} arc {a.id!r} must run {want[0].value} -> {want[1].value}",
            )
    ndepot = sum(a.kind is ArcKind.DEPOT for a in net.arcs)
    if ndepot == 0:
        raise NetworkError("missing_depot", "no depot arc")
    if ndepot > 1:
        raise NetworkError("multiple_depots", "multiple depot arcs")
    idx = {i: k for k, i in enumerate(ids)}
    n = len(ids)
    adj = coo_matrix(
        (np.ones(len(net.arcs)), ([idx[a.tail] for a in net.arcs], [idx[a.head] for a in net.arcs])),
        shape=(n, n),
    )
    ncomp, _ = connected_components(adj, directed=False)
    if ncomp != 1:
        raise NetworkError("disconnected", f"disconnected graph ({ncomp} components)")


# -- flow-specific incidence -------------------------------------------------


@dataclass(frozen=True)
class FlowPartition:
    """Flow-specific in/out arc sets per node (tuples of arc indices)."""

    inflow: tuple
    outflow: tuple

    def signature(self):
        return tuple(map(tuple, self.inflow))


def flow_partition(net: Network, qhat) -> FlowPartition:
    """Split the arcs at each node by the sign of the current flow.

    Zero flow counts as inflow at both ends of the arc.
    """
    qhat = np.asarray(qhat, dtype=float)
    inflow = [[] for _ in range(net.n_nodes)]
    outflow = [[] for _ in range(net.n_nodes)]
    for a in range(net.n_arcs):
        h, t = net.head[a], net.tail[a]
        if qhat[a] >= 0:
            inflow[h].append(a)
        else:
            outflow[h].append(a)
        if qhat[a] <= 0:
            inflow[t].append(a)
        else:
            outflow[t].append(a)
    return FlowPartition(tuple(map(tuple, inflow)), tuple(map(tuple, outflow)))


def cycle_basis(net: Network):
    """Orthonormal basis of the volume-preserving arc flows (kernel of the
    incidence matrix)."""
    return null_space(net.incidence().toarray())


def random_solenoidal_flow(net: Network, rng, scale=1e-3, basis=None):
    """Random per-arc flow with zero nodal volume residual."""
    Z = cycle_basis(net) if basis is None else basis
    return Z @ rng.normal(size=Z.shape[1]) * scale


# -- synthetic generators ----------------------------------------------------


class _Builder:
    def __init__(self, seed, length, diameter, roughness, heat_transmission):
        self.rng = np.random.default_rng(seed)
        self.length = length
        self.diameter = diameter
        self.roughness = roughness
        self.k_w = heat_transmission
        self.nodes = []
        self.arcs = []

    def node(self, nid, part):
        self.nodes.append(Node(nid, part))
        return nid

    def _geom(self, length=None, diameter=None):
        if length is None:
            lo, hi = self.length if isinstance(self.length, tuple) else (self.length, self.length)
            length = float(np.round(self.rng.uniform(lo, hi), 1))
        d = self.diameter if diameter is None else diameter
        return PipeAttributes(length, d, 0.0, self.roughness, self.k_w)

    def pipe(self, tail, head, part, length=None, diameter=None):
        kind = ArcKind.PIPE_FF if part is Part.FOREFLOW else ArcKind.PIPE_BF
        aid = f"{'ff' if part is Part.FOREFLOW else 'bf'}_{tail}_{head}"
        taken = {a.id for a in self.arcs}
        base, k = aid, 1
        while aid in taken:
            k += 1
            aid = f"{base}_{k}"
        self.arcs.append(Arc(aid, tail, head, kind, self._geom(length, diameter)))

    def mirrored_pipe(self, ftail, fhead, length=None, diameter=None):
        g = self._geom(length, diameter)
        self.pipe(ftail, fhead, Part.FOREFLOW, g.length, g.diameter)
        self.pipe("b" + fhead[1:], "b" + ftail[1:], Part.BACKFLOW, g.length, g.diameter)

    def consumer(self, tail, head):
        self.arcs.append(Arc(f"c_{tail}", tail, head, ArcKind.CONSUMER))

    def depot(self, tail, head):
        self.arcs.append(Arc("depot", tail, head, ArcKind.DEPOT))

    def build(self, **kw):
        return Network(self.nodes, self.arcs, **kw)


def path_network(
    consumers=3,
    pipes=None,
    seed=0,
    length=(20.0, 60.0),
    diameter=0.1,
    roughness=1e-4,
    heat_transmission=0.0,
    **kw,
) -> Network:
    """Foreflow and backflow chains joined by consumers.

    With ``pipes`` unset both chains have ``consumers`` pipes; otherwise the
    foreflow chain gets ``ceil(pipes/2)`` pipes and the backflow chain the rest.
    """
    if pipes is None:
        nf = nb = consumers
    else:
        nf = math.ceil(pipes / 2)
        nb = pipes - nf
    if nb < 1 or not (1 <= consumers <= nf):
        raise ValueError("need at least one backflow pipe and 1 <= consumers <= foreflow pipes")
    b = _Builder(seed, length, diameter, roughness, heat_transmission)
    for i in range(nf + 1):
        b.node(f"f{i}", Part.FOREFLOW)
    for i in range(nb + 1):
        b.node(f"b{i}", Part.BACKFLOW)
    b.depot("b0", "f0")
    for i in range(1, nf + 1):
        b.pipe(f"f{i-1}", f"f{i}", Part.FOREFLOW)
    for i in range(nb, 0, -1):
        b.pipe(f"b{i}", f"b{i-1}", Part.BACKFLOW)
    for j in range(nf, nf - consumers, -1):
        b.consumer(f"f{j}", f"b{min(j, nb)}")
    return b.build(**kw)


def star_network(
    consumers=3,
    arm_pipes=1,
    trunk_pipes=2,
    seed=0,
    length=(20.0, 60.0),
    trunk_length=None,
    diameter=0.1,
    trunk_diameter=None,
    roughness=1e-4,
    heat_transmission=0.0,
    **kw,
) -> Network:
    """Trunk from the depot to a hub, then one arm per consumer."""
    b = _Builder(seed, length, diameter, roughness, heat_transmission)
    b.node("f0", Part.FOREFLOW)
    b.node("b0", Part.BACKFLOW)
    b.depot("b0", "f0")
    prev = "f0"
    for i in range(1, trunk_pipes + 1):
        nid = f"f{i}"
        b.node(nid, Part.FOREFLOW)
        b.node("b" + nid[1:], Part.BACKFLOW)
        b.mirrored_pipe(prev, nid, trunk_length, trunk_diameter)
        prev = nid
    hub = prev
    for k in range(consumers):
        last = hub
        for j in range(1, arm_pipes + 1):
            nid = f"f{trunk_pipes}a{k}s{j}"
            b.node(nid, Part.FOREFLOW)
            b.node("b" + nid[1:], Part.BACKFLOW)
            b.mirrored_pipe(last, nid)
            last = nid
        b.consumer(last, "b" + last[1:])
    return b.build(**kw)


def two_loop_network(
    consumers=8,
    seed=0,
    length=(20.0, 60.0),
    diameter=0.1,
    roughness=1e-4,
    heat_transmission=0.0,
    **kw,
) -> Network:
    """A ring in the foreflow part and its mirror in the backflow part.

    Cycle-space dimension is 2, pipe count ``2 * (consumers + 2)``.
    """
    if consumers < 1:
        raise ValueError("need at least one consumer")
    m = consumers + 1
    b = _Builder(seed, length, diameter, roughness, heat_transmission)
    b.node("f0", Part.FOREFLOW)
    b.node("b0", Part.BACKFLOW)
    b.depot("b0", "f0")
    for i in range(1, m + 1):
        b.node(f"f{i}", Part.FOREFLOW)
        b.node(f"b{i}", Part.BACKFLOW)
    b.mirrored_pipe("f0", "f1")
    for i in range(1, m):
        b.mirrored_pipe(f"f{i}", f"f{i+1}")
    b.mirrored_pipe("f1", f"f{m}")
    for i in range(2, m + 1):
        b.consumer(f"f{i}", f"b{i}")
    return b.build(**kw)


GENERATORS = {"path": path_network, "star": star_network, "two-loop": two_loop_network}
