"""Implicit midpoint time stepping of the thermal state with quasi-static
hydraulics."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .hydraulics import (
    BoundReport,
    HydraulicsError,
    HydraulicState,
    check_operational_bounds,
    solve_hydraulics,
)
from .materials import temperature_of_energy
from .network import Network, Part, flow_partition
from .ph import build_ph, dissipation_margin
from .scenario import Scenario
from .thermal import Mesh, SystemMatrices, assemble_system, cooling_rhs, node_mixing

log = logging.getLogger(__name__)

SOLVE_TOL = 1e-12
MAX_SWEEPS = 3


class SimulationError(RuntimeError):
    def __init__(self, message, step, time):
        super().__init__(f"step {step} (t = {time:g} s): {message}")
        self.step = step
        self.time = time


@dataclass(frozen=True)
class TimeGrid:
    t0: float
    t_end: float
    dt: float

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        n = (self.t_end - self.t0) / self.dt
        if n < 1 or abs(n - round(n)) > 1e-9 * max(1.0, n):
            raise ValueError(
                f"(t_end - t0)/dt = {n:g} is not a positive integer; adjust t_end"
            )

    @property
    def n_steps(self):
        return int(round((self.t_end - self.t0) / self.dt))

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def midpoint(self, k):
        return self.t0 + (k + 0.5) * self.dt


@dataclass
class TrajectoryRecord:
    grid: TimeGrid
    e: list = field(default_factory=list)  # n_steps + 1 states
    e_node: list = field(default_factory=list)
    u: list = field(default_factory=list)  # (u_e, e_bf) per step
    y: list = field(default_factory=list)  # C e_{k+1}
    qhat: list = field(default_factory=list)
    hydraulics: list = field(default_factory=list)
    P_in: list = field(default_factory=list)
    P_demand: list = field(default_factory=list)
    P_delivered: list = field(default_factory=list)
    depot_flow: list = field(default_factory=list)
    e_return: list = field(default_factory=list)
    bounds: list = field(default_factory=list)
    reversals: list = field(default_factory=list)  # (step, time, arc ids)
    dissipation: list = field(default_factory=list)
    storage: list = field(default_factory=list)  # sum of Q e per state [J]
    max_principle: list = field(default_factory=list)  # relative overshoot per step

    def as_arrays(self, name):
        return np.asarray(getattr(self, name))

    @property
    def n_violations(self):
        return sum(len(b) for b in self.bounds)


def midpoint_operators(A, dt):
    n = A.shape[0]
    I = sparse.identity(n, format="csc")
    A = A.tocsc()
    return (I - 0.5 * dt * A).tocsc(), (I + 0.5 * dt * A).tocsc()


def step_midpoint(e_k, sys: SystemMatrices | sparse.spmatrix, u_half, dt, B=None, source=None):
    """One implicit midpoint step of ``de/dt = A e + B u (+ source)``.

    ``sys`` is either assembled system matrices or a bare ``A``; in the
    latter case ``B`` must be given when ``u_half`` is non-empty.
    """
    if isinstance(sys, SystemMatrices):
        A, B = sys.A, sys.B
    else:
        A = sparse.csc_matrix(sys)
    e_k = np.asarray(e_k, dtype=float)
    lhs, rhs_op = midpoint_operators(A, dt)
    rhs = rhs_op @ e_k
    if B is not None and u_half is not None and len(u_half):
        rhs = rhs + dt * (np.asarray(B) @ np.asarray(u_half, dtype=float)[: np.shape(B)[1]])
    if source is not None:
        rhs = rhs + dt * source
    lu = splu(lhs)
    e1 = lu.solve(rhs)
    res = np.abs(lhs @ e1 - rhs).max(initial=0.0)
    scale = max(np.abs(rhs).max(initial=0.0), np.finfo(float).tiny)
    if not np.all(np.isfinite(e1)) or res > SOLVE_TOL * scale:
        raise ArithmeticError(f"midpoint linear solve residual {res / scale:.2e}")
    return e1


def max_principle_violation(e_k, e1, inputs, tol=1e-9):
    """How far ``e1`` leaves the hull of ``e_k`` and the inputs (0 if inside)."""
    lo = min(np.min(e_k), np.min(inputs))
    hi = max(np.max(e_k), np.max(inputs))
    scale = max(abs(lo), abs(hi), np.finfo(float).tiny)
    over = max(np.max(e1) - hi, lo - np.min(e1), 0.0) / scale
    return 0.0 if over <= tol else over


def flushed_state(net: Network, mesh: Mesh, u_e, e_bf):
    """Foreflow pipes filled with ``u_e``, backflow pipes with ``e_bf``."""
    pipe = mesh.pipe_of_cell()
    ff = net.is_foreflow[net.tail[net.pipe_arcs]][pipe]
    e = np.where(ff, u_e, e_bf).astype(float)
    e_node = np.array([u_e if n.part is Part.FOREFLOW else e_bf for n in net.nodes], dtype=float)
    return e, e_node


def _reversed_arcs(net, prev_q, q):
    if prev_q is None:
        return []
    flip = np.sign(prev_q) * np.sign(q) < 0
    return [net.arcs[a].id for a in np.flatnonzero(flip)]


def simulate(
    net: Network,
    mesh: Mesh,
    scenario: Scenario,
    grid: TimeGrid,
    e0=None,
    e_node0=None,
    policy=None,
    fixed_point_sweeps=1,
    cooling=False,
    audit=False,
    keep_states=True,
) -> TrajectoryRecord:
    """Advance the coupled model over ``grid``.

    Each step solves the hydraulics from the current thermal state with the
    closures at the step midpoint, freezes the flow partition, assembles the
    advection system and takes one midpoint step.  ``policy(k, t, e_return,
    Q_consumers)`` may override the injected energy density per step.
    """
    if not 1 <= fixed_point_sweeps <= MAX_SWEEPS:
        raise ValueError(f"fixed_point_sweeps must lie in [1, {MAX_SWEEPS}]")
    scenario.validate(net, grid.t0, grid.t_end)
    e_bf = scenario.e_bf
    if e0 is None:
        e, e_node = flushed_state(net, mesh, scenario.u_e(grid.t0), e_bf)
    else:
        e = np.asarray(e0, dtype=float).copy()
        e_node = np.asarray(e_node0, dtype=float).copy() if e_node0 is not None else None
        if e_node is None:
            raise ValueError("e_node0 is required with e0")
    vol = np.repeat(net.cross_section * mesh.dx, mesh.n_cells)
    first, last = mesh.first_cells(), mesh.last_cells()
    rec = TrajectoryRecord(grid)
    rec.e.append(e.copy())
    rec.e_node.append(e_node.copy())
    rec.storage.append(float(vol @ e))
    d_tail = net.tail[net.depot_arc]
    guess = None
    prev_q = None
    C = None

    for k in range(grid.n_steps):
        t_k = grid.t0 + k * grid.dt
        t_h = grid.midpoint(k)
        closure = scenario.closure(t_h)
        e_mid, node_mid = e, e_node
        for sweep in range(fixed_point_sweeps):
            try:
                hs: HydraulicState = solve_hydraulics(
                    net, node_mid, e_mid[first], e_mid[last], closure, guess=guess
                )
            except HydraulicsError as exc:
                raise SimulationError(str(exc), k, t_k) from exc
            part = flow_partition(net, hs.qhat)
            sys = assemble_system(net, mesh, hs.qhat, part, C=C)
            C = sys.C
            q_cons = float(hs.qhat[net.consumer_arcs].sum())
            e_ret = float(e_node[d_tail])
            u_e = scenario.u_e(t_h) if policy is None else float(policy(k, t_h, e_ret, q_cons))
            u = np.array([u_e, e_bf])
            src = cooling_rhs(e, mesh, net) if cooling else None
            try:
                e1 = step_midpoint(e, sys, u, grid.dt, source=src)
            except ArithmeticError as exc:
                raise SimulationError(str(exc), k, t_k) from exc
            node1 = node_mixing(net, mesh, e1, hs.qhat, part, u_e, e_bf, previous=e_node)
            if sweep + 1 < fixed_point_sweeps:
                e_mid = 0.5 * (e + e1)
                node_mid = 0.5 * (e_node + node1)
                guess = hs
        guess = hs

        flipped = _reversed_arcs(net, prev_q, hs.qhat)
        if flipped:
            log.info("flow reversal at step %d (t = %g s) on %s", k, t_h, ", ".join(flipped))
            rec.reversals.append((k, t_h, flipped))
        prev_q = hs.qhat

        if audit:
            ph = build_ph(sys, mesh, net, verify=False)
            m = dissipation_margin(ph, e, e1, ph.pad_input(u), grid.dt)
            rec.dissipation.append(m / max(ph.hamiltonian(e), ph.hamiltonian(e1), np.finfo(float).tiny))

        rec.u.append(u)
        if not cooling:
            rec.max_principle.append(max_principle_violation(e, e1, u))
        rec.y.append(np.asarray(sys.C @ e1))
        rec.qhat.append(hs.qhat.copy())
        rec.hydraulics.append(hs if keep_states else None)
        rec.P_in.append((u_e - e_ret) * q_cons)
        rec.P_demand.append(float(np.sum(closure.power)))
        # heat actually drawn from the foreflow over the step, at midpoint
        em_node = 0.5 * (e_node + node1)
        tails = net.tail[net.consumer_arcs]
        rec.P_delivered.append(float(hs.qhat[net.consumer_arcs] @ (em_node[tails] - e_bf)))
        rec.depot_flow.append(float(hs.qhat[net.depot_arc]))
        rec.e_return.append(e_ret)
        rec.bounds.append(check_operational_bounds(net, hs, e_node, scenario.bounds, t_h))

        e, e_node = e1, node1
        if keep_states:
            rec.e.append(e.copy())
            rec.e_node.append(e_node.copy())
        else:
            rec.e[-1] = e.copy()
            rec.e_node[-1] = e_node.copy()
        rec.storage.append(float(vol @ e))
    return rec


def write_trajectory_csv(rec: TrajectoryRecord, path, material=None):
    """One row per step (values at the step end, powers over the step)."""
    from .materials import WATER

    material = material or WATER
    y = np.asarray(rec.y)
    n_out = y.shape[1] if y.ndim == 2 else 0
    header = ["t"]
    header += [f"e_out{j}" for j in range(n_out)] + [f"T_out{j}" for j in range(n_out)]
    header += ["u_e", "T_in", "P_in", "P_demand", "depot_flow", "violations"]
    times = rec.grid.times
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for k in range(len(rec.P_in)):
            T_out = temperature_of_energy(np.clip(y[k], 0, None), material) if n_out else []
            row = [f"{times[k + 1]:.6g}"]
            row += [f"{v:.10e}" for v in y[k]] + [f"{v:.6f}" for v in np.atleast_1d(T_out)]
            row += [
                f"{rec.u[k][0]:.10e}",
                f"{temperature_of_energy(max(rec.u[k][0], 0.0), material):.6f}",
                f"{rec.P_in[k]:.6f}",
                f"{rec.P_demand[k]:.6f}",
                f"{rec.depot_flow[k]:.10e}",
                len(rec.bounds[k]),
            ]
            w.writerow(row)
