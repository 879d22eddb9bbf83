import math

import numpy as np
import pytest

from dhnet.hydraulics import (
    HydraulicClosure,
    InfeasibleClosureError,
    check_operational_bounds,
    hydraulic_jacobian,
    momentum_residual,
    solve_hydraulics,
)
from dhnet.materials import density_of_energy, energy_of_temperature, viscosity_of_energy
from dhnet.network import (
    Arc,
    ArcKind,
    Network,
    Node,
    OperationalBounds,
    Part,
    PipeAttributes,
    path_network,
    star_network,
    two_loop_network,
)

from conftest import loop4, parallel

E_BF = energy_of_temperature(60.0)
E_FF = E_BF + 1e8


def solve_uniform(net, power, e_ff=E_FF, u_p=5e5, u_dp=3e5, **kw):
    """Foreflow at ``e_ff``, backflow at ``E_BF``."""
    e_node = np.where(net.is_foreflow, e_ff, E_BF)
    e_pipe = e_node[net.tail[net.pipe_arcs]]
    closure = HydraulicClosure(np.atleast_1d(np.asarray(power, float)), u_p, u_dp, E_BF)
    return solve_hydraulics(net, e_node, e_pipe, e_pipe, closure, **kw), closure, e_pipe


def test_single_consumer_flow(backend):
    net = loop4()
    hs, _, _ = solve_uniform(net, 1e4)
    c = net.consumer_arcs[0]
    assert hs.qhat[c] == pytest.approx(1e-4, rel=1e-10)
    assert np.abs(net.volume_residual(hs.qhat)).max() < 1e-10 * 1e-4


def test_darcy_drop_example():
    net = loop4(friction_mode="fixed_lambda", friction_value=0.02)
    area = net.cross_section[0]
    q = np.zeros(net.n_arcs)
    q[net.pipe_arcs[0]] = area * 1.0
    r = momentum_residual(net, q, np.zeros(net.n_nodes), np.array([0.02, 0.02]), np.array([1000.0, 1000.0]))
    # 0.02 / (2 * 0.1) * 1000 * 1 * 100
    assert r[0] == pytest.approx(10000.0, rel=1e-14)


def test_zero_demand_is_hydrostatic():
    nodes = [Node("f0", Part.FOREFLOW), Node("f1", Part.FOREFLOW), Node("b1", Part.BACKFLOW), Node("b0", Part.BACKFLOW)]
    arcs = [
        Arc("depot", "b0", "f0", ArcKind.DEPOT),
        Arc("pf", "f0", "f1", ArcKind.PIPE_FF, PipeAttributes(100.0, 0.1, slope=0.05)),
        Arc("c", "f1", "b1", ArcKind.CONSUMER),
        Arc("pb", "b1", "b0", ArcKind.PIPE_BF, PipeAttributes(100.0, 0.1, slope=-0.05)),
    ]
    net = Network(nodes, arcs)
    hs, cl, e_pipe = solve_uniform(net, 0.0)
    assert np.abs(hs.qhat).max() < 1e-12
    rho = density_of_energy(e_pipe)
    p = hs.p_node
    i = net.node_index
    assert p[i["f1"]] == pytest.approx(cl.u_p + cl.u_dp - rho[0] * 9.81 * 5.0, rel=1e-10)
    assert p[i["b1"]] == pytest.approx(cl.u_p - rho[1] * 9.81 * 5.0, rel=1e-10)


def test_parallel_pipes_split_equally(backend):
    net = parallel(2)
    hs, _, _ = solve_uniform(net, 2e4)
    q = hs.qhat[net.pipe_arcs[:2]]
    assert q[0] == pytest.approx(q[1], rel=1e-10)


def test_gauge_rank_deficiency():
    net = two_loop_network(3)
    hs, cl, e_pipe = solve_uniform(net, np.full(net.n_consumers, 1e4))
    Jp = hydraulic_jacobian(net, hs, e_pipe, cl).toarray()
    Ju = hydraulic_jacobian(net, hs, e_pipe, cl, pin_gauge=False).toarray()
    n = Jp.shape[1]
    assert np.linalg.matrix_rank(Jp) == n
    assert np.linalg.matrix_rank(Ju) == n - 1
    shift = np.concatenate([np.zeros(net.n_arcs), np.ones(net.n_nodes)])
    assert np.abs(Ju @ shift).max() < 1e-12


def test_doubling_powers_doubles_flows(backend):
    net = star_network(3, seed=1)
    P = np.array([1e4, 2e4, 1.5e4])
    a, _, _ = solve_uniform(net, P)
    b, _, _ = solve_uniform(net, 2 * P)
    assert np.allclose(b.qhat, 2 * a.qhat, rtol=1e-10, atol=1e-15)


def test_volume_conservation_on_generators(backend):
    for net in (path_network(3), star_network(5, seed=2), two_loop_network(6)):
        hs, _, _ = solve_uniform(net, np.full(net.n_consumers, 1e4))
        scale = np.abs(hs.qhat).max()
        assert np.abs(net.volume_residual(hs.qhat)).max() < 1e-10 * scale


def test_infeasible_closure():
    net = loop4()
    with pytest.raises(InfeasibleClosureError, match="no energy-density drop"):
        solve_uniform(net, 1e4, e_ff=E_BF)


# -- grid-search oracle on a three-pipe loop ---------------------------------


def _colebrook_bisect(re, r):
    f = lambda x: x + 2 * math.log10(2.52 * x / re + r / 3.71)
    lo, hi = 0.5, 50.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if f(mid) > 0:
            hi = mid
        else:
            lo = mid
    return 1 / (0.5 * (lo + hi)) ** 2


def _oracle_split(L, d, k_r, Q, e):
    """Flow in pipe 0 of two parallel pipes carrying ``Q`` in total; zoomed
    grid search on the mismatch of the two pressure drops."""
    rho = density_of_energy(e)
    nu = viscosity_of_energy(e)

    def drop(j, q):
        if q == 0:
            return 0.0
        A = math.pi * d[j] ** 2 / 4
        v = q / A
        lam = _colebrook_bisect(abs(v) * d[j] / nu, k_r / d[j])
        return L[j] * rho * lam / (2 * d[j]) * v * abs(v)

    lo, hi = 0.0, Q
    for _ in range(12):
        grid = np.linspace(lo, hi, 41)
        mis = [abs(drop(0, q) - drop(1, Q - q)) for q in grid]
        k = int(np.argmin(mis))
        lo, hi = grid[max(k - 1, 0)], grid[min(k + 1, 40)]
    return 0.5 * (lo + hi), drop


def test_three_pipe_loop_matches_grid_search(backend):
    L, d = (80.0, 140.0), (0.1, 0.08)
    nodes = [Node("f0", Part.FOREFLOW), Node("f1", Part.FOREFLOW), Node("b1", Part.BACKFLOW), Node("b0", Part.BACKFLOW)]
    arcs = [Arc("depot", "b0", "f0", ArcKind.DEPOT)]
    arcs += [Arc(f"pf{j}", "f0", "f1", ArcKind.PIPE_FF, PipeAttributes(L[j], d[j])) for j in range(2)]
    arcs += [Arc("c", "f1", "b1", ArcKind.CONSUMER), Arc("pb", "b1", "b0", ArcKind.PIPE_BF, PipeAttributes(60.0, 0.1))]
    net = Network(nodes, arcs)
    hs, cl, _ = solve_uniform(net, 2e5)
    Q = 2e5 / 1e8
    q0, drop = _oracle_split(L, d, 1e-4, Q, E_FF)
    assert hs.qhat[net.pipe_arcs[0]] == pytest.approx(q0, rel=1e-4)
    dp = hs.p_node[net.node_index["f0"]] - hs.p_node[net.node_index["f1"]]
    assert dp == pytest.approx(drop(0, q0), rel=1e-4)


# -- operational bounds ----------------------------------------------------------


def test_bounds_report():
    net = loop4()
    hs, _, _ = solve_uniform(net, 1e4)
    e_node = np.where(net.is_foreflow, E_FF, E_BF)
    assert not check_operational_bounds(net, hs, e_node, OperationalBounds())

    e_hot = e_node.copy()
    e_hot[net.head[net.depot_arc]] = energy_of_temperature(120.0)
    rep = check_operational_bounds(net, hs, e_hot, OperationalBounds(T_net=110.0))
    assert [v.constraint for v in rep.violations] == ["T_net_depot"]
    assert rep.violations[0].magnitude == pytest.approx(10.0)

    p_max = float(hs.p_node.max())
    assert not check_operational_bounds(net, hs, e_node, OperationalBounds(p_net=p_max))
    assert len(check_operational_bounds(net, hs, e_node, OperationalBounds(p_net=p_max - 1.0))) >= 1
