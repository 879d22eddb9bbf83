import numpy as np
import pytest

from dhnet import _accel
from dhnet.network import Arc, ArcKind, Network, Node, Part, PipeAttributes

BACKENDS = ["numpy"] + (["numba"] if _accel.HAVE_NUMBA else [])


@pytest.fixture(params=BACKENDS)
def backend(request, monkeypatch):
    """Route the hot kernels through one implementation for the test."""
    name = request.param
    monkeypatch.setattr(_accel, "colebrook", getattr(_accel, f"colebrook_{name}"))
    monkeypatch.setattr(_accel, "upwind_triplets", getattr(_accel, f"upwind_triplets_{name}"))
    return name


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def loop4(length_ff=100.0, length_bf=100.0, diameter=0.1, **kw):
    """Depot, one foreflow pipe, one consumer, one backflow pipe."""
    nodes = [Node("f0", Part.FOREFLOW), Node("f1", Part.FOREFLOW), Node("b1", Part.BACKFLOW), Node("b0", Part.BACKFLOW)]
    arcs = [
        Arc("depot", "b0", "f0", ArcKind.DEPOT),
        Arc("pf", "f0", "f1", ArcKind.PIPE_FF, PipeAttributes(length_ff, diameter)),
        Arc("c", "f1", "b1", ArcKind.CONSUMER),
        Arc("pb", "b1", "b0", ArcKind.PIPE_BF, PipeAttributes(length_bf, diameter)),
    ]
    return Network(nodes, arcs, **kw)


def parallel(n_par=2, length=100.0, diameter=0.1, **kw):
    """``n_par`` identical foreflow pipes between the depot head and one consumer."""
    nodes = [Node("f0", Part.FOREFLOW), Node("f1", Part.FOREFLOW), Node("b1", Part.BACKFLOW), Node("b0", Part.BACKFLOW)]
    arcs = [Arc("depot", "b0", "f0", ArcKind.DEPOT)]
    arcs += [Arc(f"pf{i}", "f0", "f1", ArcKind.PIPE_FF, PipeAttributes(length, diameter)) for i in range(n_par)]
    arcs += [Arc("c", "f1", "b1", ArcKind.CONSUMER), Arc("pb", "b1", "b0", ArcKind.PIPE_BF, PipeAttributes(length, diameter))]
    return Network(nodes, arcs, **kw)


def step_front(dx, cfl=0.5, length=400.0, Q=2.5e-4, t_end_factor=2.0):
    """Step input through a single foreflow pipe at a frozen flow.

    Returns ``(t, y, v, length)``: times, normalised outlet response of the
    pipe (0 before, 1 after the front) and the flow speed.
    """
    from dhnet.integrator import step_midpoint
    from dhnet.materials import energy_of_temperature
    from dhnet.network import path_network
    from dhnet.thermal import assemble_system, build_mesh

    net = path_network(1, pipes=2, length=(length, length), friction_mode="fixed_lambda", friction_value=0.02)
    mesh = build_mesh(net, dx)
    q = np.full(net.n_arcs, Q)
    sys = assemble_system(net, mesh, q)
    v = Q / net.cross_section[0]
    dt = cfl * mesh.dx[0] / v
    n = int(np.ceil(t_end_factor * length / v / dt))
    lo, hi = energy_of_temperature(80.0), energy_of_temperature(90.0)
    e = np.full(mesh.kappa, lo)
    out = mesh.last_cells()[0]
    t, y = [0.0], [0.0]
    for k in range(n):
        e = step_midpoint(e, sys, np.array([hi, lo]), dt)
        t.append((k + 1) * dt)
        y.append((e[out] - lo) / (hi - lo))
    return np.array(t), np.array(y), v, length, mesh.dx[0]


def crossing(t, y, level):
    """First time the sampled response reaches ``level`` (linear interpolation)."""
    k = int(np.argmax(y >= level))
    if k == 0:
        return t[0]
    return t[k - 1] + (level - y[k - 1]) * (t[k] - t[k - 1]) / (y[k] - y[k - 1])


# -- acceptance report ----------------------------------------------------------

ACCEPTANCE = {}


def record(number, title, checks):
    """Store ``{name: (ok, detail)}`` for a criterion and print its line."""
    ok = all(v[0] for v in checks.values())
    failed = [f"{k} ({d})" for k, (v, d) in checks.items() if not v]
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}"
    if failed:
        line += " -- failed: " + "; ".join(failed)
    else:
        line += " [" + "; ".join(f"{k}: {d}" for k, (_, d) in checks.items() if d) + "]"
    ACCEPTANCE[number] = line
    print(line)
    return ok, failed


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[k])
