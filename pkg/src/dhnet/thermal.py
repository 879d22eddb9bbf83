"""Upwind finite-volume semi-discretisation of energy advection on the network.

The semi-discrete model is ``de/dt = A(w) e + B(w) u`` with
``u = (u_e, e_bf)``: the energy density injected at the depot and the one
returned by every consumer.  ``w`` is the (volume-preserving) flow field; it
is passed as the per-arc volumetric flow, because the mixing weights at the
depot and consumer nodes need the non-pipe arc flows as well.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.io import mmwrite

from . import _accel
from .materials import temperature_of_energy
from .network import ArcKind, FlowPartition, Network, flow_partition

log = logging.getLogger(__name__)

U_DEPOT, U_RETURN = 0, 1


class NonConservativeFlowError(ValueError):
    pass


@dataclass(frozen=True)
class Mesh:
    n_cells: np.ndarray
    dx: np.ndarray
    offset: np.ndarray

    @property
    def kappa(self):
        return int(self.n_cells.sum())

    @property
    def n_pipes(self):
        return len(self.n_cells)

    def cell_index(self, pipe, cell):
        """Global 0-based index of local cell ``cell`` of pipe ``pipe``."""
        if not 0 <= cell < self.n_cells[pipe]:
            raise IndexError(f"pipe {pipe} has {self.n_cells[pipe]} cells")
        return int(self.offset[pipe] + cell)

    def pipe_of_cell(self):
        return np.repeat(np.arange(self.n_pipes), self.n_cells)

    def first_cells(self):
        return self.offset.copy()

    def last_cells(self):
        return self.offset + self.n_cells - 1


def build_mesh(net: Network, target_dx) -> Mesh:
    if target_dx <= 0:
        raise ValueError("target_dx must be positive")
    n = np.maximum(1, np.round(net.length / target_dx)).astype(np.int64)
    dx = net.length / n
    off = np.concatenate([[0], np.cumsum(n)[:-1]]).astype(np.int64)
    return Mesh(n, dx, off)


@dataclass
class ThermalState:
    e: np.ndarray
    e_node: np.ndarray


def _arriving_cell(net, mesh, arc, node):
    """Cell of pipe ``arc`` adjacent to ``node``."""
    p = net.pipe_of_arc[arc]
    return mesh.offset[p] + (mesh.n_cells[p] - 1 if net.head[arc] == node else 0)


def _supply_value(net, mesh, e, arc, node, u_e, e_bf):
    kind = net.arcs[arc].kind
    if kind is ArcKind.DEPOT:
        return u_e
    if kind is ArcKind.CONSUMER:
        return e_bf
    return e[_arriving_cell(net, mesh, arc, node)]


def node_mixing(
    net: Network,
    mesh: Mesh,
    e,
    qhat,
    partition: FlowPartition,
    u_e,
    e_bf,
    previous=None,
):
    """Perfect-mixing energy density at every node.

    Consumer arcs deliver ``e_bf`` at their backflow node and the depot
    delivers ``u_e`` at its foreflow node.  At a stagnant node (no outflow)
    the previous value is held; without one, the mean of the values that
    could flow in is used.
    """
    e = np.asarray(e, dtype=float)
    q = np.abs(np.asarray(qhat, dtype=float))
    out = np.empty(net.n_nodes)
    for n in range(net.n_nodes):
        den = sum(q[a] for a in partition.outflow[n])
        if den > 0:
            num = sum(q[a] * _supply_value(net, mesh, e, a, n, u_e, e_bf) for a in partition.inflow[n])
            out[n] = num / den
            continue
        if previous is not None:
            out[n] = previous[n]
        else:
            vals = [
                _supply_value(net, mesh, e, a, n, u_e, e_bf)
                for a in np.concatenate([net.delta_in(n), net.delta_out(n)])
                if net.arcs[a].kind.is_pipe or net.head[a] == n
            ]
            out[n] = np.mean(vals) if vals else np.nan
        log.debug("stagnant node %s", net.nodes[n].id)
    return out


@dataclass(frozen=True)
class SystemMatrices:
    A: sparse.csr_matrix
    B: np.ndarray
    C: sparse.csr_matrix
    qhat: np.ndarray
    w: np.ndarray
    partition: FlowPartition


def output_cells(net: Network, mesh: Mesh):
    """Cells feeding each consumer's foreflow node, de-duplicated in consumer
    order.  Uses the first topological inflow pipe of the node, or the first
    cell of an outgoing pipe if the node has none."""
    cells = []
    for a in net.consumer_arcs:
        m = net.tail[a]
        cand = [b for b in net.delta_in(m) if net.arcs[b].kind.is_pipe]
        if cand:
            c = _arriving_cell(net, mesh, cand[0], m)
        else:
            cand = [b for b in net.delta_out(m) if net.arcs[b].kind.is_pipe]
            if not cand:
                continue
            c = _arriving_cell(net, mesh, cand[0], m)
        if c not in cells:
            cells.append(int(c))
    return np.array(cells, dtype=np.int64)


def output_matrix(net: Network, mesh: Mesh):
    cells = output_cells(net, mesh)
    return sparse.csr_matrix(
        (np.ones(len(cells)), (np.arange(len(cells)), cells)), shape=(len(cells), mesh.kappa)
    )


def check_volume_preserving(net: Network, qhat, tol=1e-10):
    qhat = np.asarray(qhat, dtype=float)
    res = net.volume_residual(qhat)
    scale = max(np.abs(qhat).max(initial=0.0), np.finfo(float).tiny)
    worst = np.abs(res).max(initial=0.0) / scale
    if worst >= tol:
        n = int(np.argmax(np.abs(res)))
        raise NonConservativeFlowError(
            f"flow is not volume preserving at node {net.nodes[n].id!r} (relative residual {worst:.2e})"
        )
    return worst


def _node_inflow_csr(net, mesh, qhat, partition):
    q = np.abs(qhat)
    ptr = [0]
    in_cell, in_w = [], []
    bw = np.zeros((net.n_nodes, 2))
    for n in range(net.n_nodes):
        den = sum(q[a] for a in partition.outflow[n])
        for a in partition.inflow[n]:
            if den <= 0 or q[a] == 0:
                continue
            kind = net.arcs[a].kind
            if kind is ArcKind.DEPOT:
                bw[n, U_DEPOT] += q[a] / den
            elif kind is ArcKind.CONSUMER:
                bw[n, U_RETURN] += q[a] / den
            else:
                in_cell.append(_arriving_cell(net, mesh, a, n))
                in_w.append(q[a] / den)
        ptr.append(len(in_cell))
    return (
        np.array(ptr, dtype=np.int64),
        np.array(in_cell, dtype=np.int64),
        np.array(in_w, dtype=float),
        bw,
    )


def assemble_system(
    net: Network,
    mesh: Mesh,
    qhat,
    partition: FlowPartition | None = None,
    check=True,
    C=None,
) -> SystemMatrices:
    """Assemble ``A(w)``, ``B(w)`` and ``C`` for a per-arc volumetric flow.

    ``check=False`` skips the volume-preservation test (negative controls).
    """
    qhat = np.asarray(qhat, dtype=float)
    if check:
        check_volume_preserving(net, qhat)
    if partition is None:
        partition = flow_partition(net, qhat)
    qp = qhat[net.pipe_arcs]
    w = qp / net.cross_section
    rate = np.abs(w) / mesh.dx
    fwd = qp >= 0
    up_node = np.where(fwd, net.tail[net.pipe_arcs], net.head[net.pipe_arcs])
    ptr, in_cell, in_w, bw = _node_inflow_csr(net, mesh, qhat, partition)
    rows, cols, vals, B = _accel.upwind_triplets(
        mesh.offset, mesh.n_cells, rate, fwd, up_node, ptr, in_cell, in_w, bw
    )
    k = mesh.kappa
    A = sparse.csr_matrix((vals, (rows, cols)), shape=(k, k))
    A.eliminate_zeros()
    if C is None:
        C = output_matrix(net, mesh)
    dump = os.environ.get("DHNET_DUMP_MATRICES")
    if dump:
        _dump(Path(dump), A, B, C)
    return SystemMatrices(A, B, C, qhat, w, partition)


_dump_count = 0


def _dump(folder, A, B, C):
    """Write A, B, C in Matrix Market coordinate format (debugging aid)."""
    global _dump_count
    folder.mkdir(parents=True, exist_ok=True)
    k = _dump_count
    _dump_count += 1
    for name, M in (("A", A), ("B", sparse.coo_matrix(B)), ("C", C)):
        mmwrite(str(folder / f"{name}_{k:05d}.mtx"), sparse.coo_matrix(M))


def cooling_rhs(e, mesh: Mesh, net: Network):
    """Wall heat-loss source ``-(4 k_w / d)(T(e) - theta)`` per cell [W/m^3].

    Not part of the port-Hamiltonian embedding; used only when cooling is
    switched on in the integrator.
    """
    pipe = mesh.pipe_of_cell()
    kw = net.heat_transmission[pipe]
    if not np.any(kw):
        return np.zeros(mesh.kappa)
    T = temperature_of_energy(np.asarray(e, dtype=float), net.material)
    return -(4.0 * kw / net.diameter[pipe]) * (T - net.theta)
