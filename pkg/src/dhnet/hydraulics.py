"""Stationary incompressible hydraulics of the network.

Unknowns are the volumetric flow on every arc and the pressure at every node.
Equations:

* pipes: ``p_head - p_tail + l * rho * (lam/(2d) |v| v + g dh/dx) = 0``
* nodes: volume balance (one redundant row dropped)
* consumers: ``P_a = q_a * (e_{a:m} - e_bf)``
* depot: ``p_tail = u_p`` and ``p_head = u_p + u_dp``

Consumer and depot arcs carry no momentum law.  The friction factor is lagged
(outer fixed-point loop) and ``|v| v`` is regularised with ``v sqrt(v^2+eps^2)``
inside Newton only; the reported residual uses the exact term.
"""

from __future__ import annotations

import csv
import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve

from .materials import FrictionMode, colebrook_lambda, density_of_energy, rough_limit, viscosity_of_energy
from .network import ArcKind, Network, OperationalBounds
from .materials import temperature_of_energy

log = logging.getLogger(__name__)

EPS_V = 1e-8
RESIDUAL_TOL = 1e-8


class HydraulicsError(RuntimeError):
    def __init__(self, message, history=()):
        super().__init__(message)
        self.history = list(history)


class InfeasibleClosureError(HydraulicsError):
    pass


@dataclass(frozen=True)
class HydraulicClosure:
    """Consumer powers [W] (one per consumer arc), depot pressures [Pa] and
    the consumer return energy density [J/m^3]."""

    power: np.ndarray
    u_p: float
    u_dp: float
    e_bf: float

    def __post_init__(self):
        if np.any(np.asarray(self.power) < 0):
            raise ValueError("consumer powers must be non-negative")


@dataclass
class HydraulicState:
    qhat: np.ndarray
    p_node: np.ndarray
    v: np.ndarray
    q: np.ndarray
    lam: np.ndarray
    iterations: int = 0
    residual: float = 0.0
    history: list = field(default_factory=list)


def _pipe_energy(net, e_first, e_last, qp):
    return np.where(qp >= 0, e_first, e_last)


def _friction(net, v, e_pipe):
    mode = net.friction_mode
    if mode is FrictionMode.FIXED_LAMBDA:
        return np.full(net.n_pipes, float(net.friction_value))
    rel = net.roughness / net.diameter
    if mode is FrictionMode.FIXED_REYNOLDS:
        return np.asarray(colebrook_lambda(np.full(net.n_pipes, float(net.friction_value)), rel))
    re = np.abs(v) * net.diameter / viscosity_of_energy(e_pipe, net.material)
    lam = np.empty(net.n_pipes)
    moving = re > 0
    lam[~moving] = [rough_limit(r) if r > 0 else 0.0 for r in rel[~moving]]
    if moving.any():
        lam[moving] = colebrook_lambda(re[moving], rel[moving])
    return lam


def momentum_residual(net: Network, qhat, p_node, lam, rho, eps=0.0):
    qp = qhat[net.pipe_arcs]
    v = qp / net.cross_section
    vv = v * np.sqrt(v * v + eps * eps) if eps else np.abs(v) * v
    drop = net.length * rho * (lam / (2 * net.diameter) * vv + net.g * net.slope)
    return p_node[net.head[net.pipe_arcs]] - p_node[net.tail[net.pipe_arcs]] + drop


def consumer_flows(net: Network, closure: HydraulicClosure, e_node):
    """Consumer flows from the power closure ``P = q * (e_m - e_bf)``."""
    tails = net.tail[net.consumer_arcs]
    de = e_node[tails] - closure.e_bf
    power = np.asarray(closure.power, dtype=float)
    bad = (power > 0) & ~(de > 0)
    if bad.any():
        a = net.consumer_arcs[np.flatnonzero(bad)[0]]
        raise InfeasibleClosureError(
            f"power demanded but no energy-density drop available at consumer {net.arcs[a].id!r}"
        )
    return np.where(power > 0, power / np.where(de > 0, de, 1.0), 0.0)


class _System:
    """Index bookkeeping for the Newton system."""

    def __init__(self, net: Network):
        self.net = net
        na, nn = net.n_arcs, net.n_nodes
        self.n = na + nn
        inc = net.incidence().tocsr()
        self.drop_node = int(net.tail[net.depot_arc])
        keep = np.array([k for k in range(nn) if k != self.drop_node])
        self.keep = keep
        self.inc_keep = inc[keep]


def _assemble(sysd: _System, x, lam, rho, qc, closure, pin_gauge=True):
    net = sysd.net
    na, nn = net.n_arcs, net.n_nodes
    qhat, p = x[:na], x[na:]
    pa = net.pipe_arcs
    qp = qhat[pa]
    v = qp / net.cross_section
    s = np.sqrt(v * v + EPS_V * EPS_V)
    k = net.length * rho * lam / (2 * net.diameter)
    F_mom = momentum_residual(net, qhat, p, lam, rho, EPS_V)
    dmom_dq = k * (s + v * v / s) / net.cross_section

    F_vol = sysd.inc_keep @ qhat
    F_con = qhat[net.consumer_arcs] - qc
    d = net.depot_arc
    if pin_gauge:
        F_dep = np.array(
            [p[net.tail[d]] - closure.u_p, p[net.head[d]] - closure.u_p - closure.u_dp]
        )
    else:
        F_dep = np.array([p[net.head[d]] - p[net.tail[d]] - closure.u_dp])
    F = np.concatenate([F_mom, F_vol, F_con, F_dep])

    rows, cols, vals = [], [], []
    r0 = 0
    npipe = len(pa)
    ar = np.arange(npipe)
    rows += [r0 + ar, r0 + ar, r0 + ar]
    cols += [pa, na + net.head[pa], na + net.tail[pa]]
    vals += [dmom_dq, np.ones(npipe), -np.ones(npipe)]
    r0 += npipe
    vol = sysd.inc_keep.tocoo()
    rows.append(r0 + vol.row)
    cols.append(vol.col)
    vals.append(vol.data)
    r0 += vol.shape[0]
    nc = len(net.consumer_arcs)
    rows.append(r0 + np.arange(nc))
    cols.append(net.consumer_arcs)
    vals.append(np.ones(nc))
    r0 += nc
    if pin_gauge:
        rows.append(np.array([r0, r0 + 1]))
        cols.append(np.array([na + net.tail[d], na + net.head[d]]))
        vals.append(np.ones(2))
        r0 += 2
    else:
        # head pressure relative to tail: p_head - p_tail = u_dp
        rows.append(np.array([r0, r0]))
        cols.append(np.array([na + net.head[d], na + net.tail[d]]))
        vals.append(np.array([1.0, -1.0]))
        r0 += 1
    Jm = sparse.csr_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(r0, sysd.n)
    )
    return F, Jm


def hydraulic_jacobian(net: Network, state: HydraulicState, e_pipe, closure, pin_gauge=True):
    """Jacobian of the hydraulic system at ``state``.  With ``pin_gauge=False``
    the depot stagnation-pressure row is replaced by the pressure-increase
    relation alone, leaving the pressure level free."""
    rho = density_of_energy(e_pipe, net.material)
    x = np.concatenate([state.qhat, state.p_node])
    qc = state.qhat[net.consumer_arcs]
    _, Jm = _assemble(_System(net), x, state.lam, rho, qc, closure, pin_gauge)
    return Jm


def _initial_guess(net, closure, rho_node):
    """Zero flow with pressures hydrostatic from the depot."""
    na, nn = net.n_arcs, net.n_nodes
    q = np.zeros(na)
    p = np.full(nn, np.nan)
    d = net.depot_arc
    p[net.tail[d]] = closure.u_p
    p[net.head[d]] = closure.u_p + closure.u_dp
    # propagate along pipes from the two depot nodes
    pa = net.pipe_arcs
    changed = True
    while changed:
        changed = False
        for j, a in enumerate(pa):
            t, h = net.tail[a], net.head[a]
            drop = net.length[j] * rho_node * net.g * net.slope[j]
            if np.isnan(p[h]) and not np.isnan(p[t]):
                p[h] = p[t] - drop
                changed = True
            elif np.isnan(p[t]) and not np.isnan(p[h]):
                p[t] = p[h] + drop
                changed = True
    p[np.isnan(p)] = closure.u_p
    return q, p


def _scales(closure, qhat):
    p_scale = max(abs(closure.u_p), abs(closure.u_dp), 1e5)
    q_scale = max(np.abs(qhat).max(initial=0.0), 1e-12)
    return p_scale, q_scale


def _debug_writer(path):
    if path is None:
        path = os.environ.get("DHNET_HYDRAULICS_LOG")
    if not path:
        return None, None
    fh = open(path, "a", newline="")
    w = csv.writer(fh)
    if fh.tell() == 0:
        w.writerow(["outer", "inner", "residual_scaled", "lambda_change"])
    return fh, w


def solve_hydraulics(
    net: Network,
    e_node,
    e_first,
    e_last,
    closure: HydraulicClosure,
    guess: HydraulicState | None = None,
    max_outer=50,
    max_newton=30,
    tol=RESIDUAL_TOL,
    debug_csv=None,
) -> HydraulicState:
    """Solve the hydraulic network for the current thermal state.

    ``e_node`` gives the energy density at every node (consumer closures);
    ``e_first``/``e_last`` the first and last cell value of every pipe, of
    which the upwind one sets density and viscosity along the pipe.
    """
    e_node = np.asarray(e_node, dtype=float)
    qc = consumer_flows(net, closure, e_node)
    sysd = _System(net)
    na = net.n_arcs
    if guess is None:
        q0, p0 = _initial_guess(net, closure, float(density_of_energy(np.mean(e_first))))
    else:
        q0, p0 = guess.qhat.copy(), guess.p_node.copy()
    x = np.concatenate([q0, p0])
    fh, writer = _debug_writer(debug_csv)
    history = []
    lam = None
    try:
        for outer in range(max_outer):
            qp = x[:na][net.pipe_arcs]
            e_pipe = _pipe_energy(net, e_first, e_last, qp)
            rho = density_of_energy(e_pipe, net.material)
            lam_new = _friction(net, qp / net.cross_section, e_pipe)
            dlam = np.inf if lam is None else np.max(np.abs(lam_new - lam) / np.maximum(lam, 1e-300))
            lam = lam_new
            for inner in range(max_newton):
                F, Jm = _assemble(sysd, x, lam, rho, qc, closure)
                p_scale, q_scale = _scales(closure, x[:na])
                nm = len(net.pipe_arcs)
                scaled = np.concatenate([F[:nm] / p_scale, F[nm:-2] / q_scale, F[-2:] / p_scale])
                res = np.abs(scaled).max(initial=0.0)
                history.append(res)
                if writer:
                    writer.writerow([outer, inner, f"{res:.6e}", f"{dlam:.6e}"])
                if res < 1e-13:
                    break
                dx = spsolve(Jm.tocsc(), -F)
                if not np.all(np.isfinite(dx)):
                    raise HydraulicsError("singular hydraulic Jacobian", history)
                x = x + dx
            if dlam < 1e-12:
                break
        else:
            log.debug("friction fixed point hit the outer iteration cap")
    finally:
        if fh:
            fh.close()

    qhat, p = x[:na], x[na:]
    qp = qhat[net.pipe_arcs]
    e_pipe = _pipe_energy(net, e_first, e_last, qp)
    rho = density_of_energy(e_pipe, net.material)
    lam = _friction(net, qp / net.cross_section, e_pipe)
    F, _ = _assemble(sysd, x, lam, rho, qc, closure)
    F[: len(net.pipe_arcs)] = momentum_residual(net, qhat, p, lam, rho)
    p_scale, q_scale = _scales(closure, qhat)
    nm = len(net.pipe_arcs)
    final = max(
        np.abs(F[:nm]).max(initial=0.0) / p_scale,
        np.abs(F[nm:-2]).max(initial=0.0) / q_scale,
        np.abs(F[-2:]).max(initial=0.0) / p_scale,
    )
    if not final < tol:
        raise HydraulicsError(f"hydraulic solve did not converge (residual {final:.3e})", history)
    if np.any(qhat[net.consumer_arcs] < 0) or qhat[net.depot_arc] < -1e-12 * q_scale:
        raise InfeasibleClosureError("negative flow on a consumer or depot arc", history)

    v = qp / net.cross_section
    return HydraulicState(
        qhat=qhat.copy(),
        p_node=p.copy(),
        v=v,
        q=rho * qp,
        lam=lam,
        iterations=len(history),
        residual=final,
        history=history,
    )


# -- operational bounds ------------------------------------------------------


@dataclass(frozen=True)
class Violation:
    constraint: str
    location: str
    time: float | None
    magnitude: float


@dataclass
class BoundReport:
    violations: list = field(default_factory=list)

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)


def check_operational_bounds(
    net: Network,
    state: HydraulicState,
    e_node,
    bounds: OperationalBounds,
    t=None,
) -> BoundReport:
    """Report every violated operational limit; never modifies the state."""
    report = BoundReport()
    T_node = temperature_of_energy(np.clip(np.asarray(e_node, dtype=float), 0, None), net.material)
    p = state.p_node

    def add(name, loc, mag):
        if mag > 0:
            report.violations.append(Violation(name, loc, t, float(mag)))

    def above(x, hi):
        return 0.0 if hi is None else x - hi

    def below(x, lo):
        return 0.0 if lo is None else lo - x

    for a in net.consumer_arcs:
        arc = net.arcs[a]
        m, n = net.tail[a], net.head[a]
        Tm = T_node[m]
        add("consumer_flow_sign", arc.id, -state.qhat[a])
        add("T_ff_min", arc.id, below(Tm, bounds.T_ff_min))
        add("T_ff_max", arc.id, above(Tm, bounds.T_ff_max))
        add("dT_c_max", arc.id, above(Tm - bounds.T_bf, bounds.dT_c_max))
        add("p_bf_min", arc.id, below(p[n], bounds.p_bf_min))
        add("p_bf_max", arc.id, above(p[n], bounds.p_bf_max))
        add("p_ff_min", arc.id, below(p[m], bounds.p_ff_min))
        add("p_ff_max", arc.id, above(p[m], bounds.p_ff_max))
        add("dp_c_min", arc.id, below(p[m] - p[n], bounds.dp_c_min))
        add("dp_c_max", arc.id, above(p[m] - p[n], bounds.dp_c_max))
    d = net.depot_arc
    add("depot_flow_sign", net.arcs[d].id, -state.qhat[d])
    add("T_net_depot", net.arcs[d].id, above(T_node[net.head[d]], bounds.T_net))
    for k, node in enumerate(net.nodes):
        if k != net.head[d]:  # already reported as T_net_depot
            add("T_net", node.id, above(T_node[k], bounds.T_net))
        add("p_net", node.id, above(p[k], bounds.p_net))
    return report
