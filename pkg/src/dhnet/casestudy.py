"""Feed-in power at the depot and a peak-shaving search over the injection
profile."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .integrator import SimulationError, TimeGrid, TrajectoryRecord, flushed_state, simulate
from .materials import temperature_of_energy
from .network import Network
from .scenario import Scenario, TimeTable
from .thermal import Mesh

log = logging.getLogger(__name__)


@dataclass
class FeedInSeries:
    t: np.ndarray  # step midpoints [s]
    P_in: np.ndarray  # [W]
    u_e: np.ndarray  # injected energy density per step [J/m^3]
    threshold: float | None = None

    @property
    def mean(self):
        return float(self.P_in.mean())

    @property
    def max(self):
        return float(self.P_in.max())


def feed_in_power(rec: TrajectoryRecord, scenario: Scenario, check_flushed=False, tol=1e-9):
    """``P_in = (u_e - e_return) * sum of consumer flows`` per step.

    With ``check_flushed`` the return value at the depot must equal the
    consumer return density (uncooled network with flushed backflow).
    """
    P = np.asarray(rec.P_in, dtype=float)
    u = np.asarray(rec.u, dtype=float)
    if check_flushed:
        er = np.asarray(rec.e_return)
        dev = np.abs(er - scenario.e_bf).max(initial=0.0) / scenario.e_bf
        if dev > tol:
            raise AssertionError(f"depot return deviates from e_bf by {dev:.2e} (relative)")
    t = np.array([rec.grid.midpoint(k) for k in range(len(P))])
    return FeedInSeries(t, P, u[:, 0] if len(u) else np.zeros(0))


@dataclass
class EnergyAccount:
    feed_in: float  # integral of P_in [J]
    demand: float  # integral of the demanded consumer power [J]
    delivered: float  # integral of the advected heat drawn by consumers [J]
    storage_change: float  # change of sum(Q e) over the horizon [J]

    @property
    def residual(self):
        """Relative imbalance ``(feed_in - demand - storage) / feed_in``."""
        return (self.feed_in - self.demand - self.storage_change) / max(abs(self.feed_in), 1e-300)

    @property
    def advective_residual(self):
        return (self.feed_in - self.delivered - self.storage_change) / max(abs(self.feed_in), 1e-300)


def energy_account(rec: TrajectoryRecord):
    """Integrated feed-in, demand and delivered heat against the change of
    thermal energy stored in the pipes."""
    dt = rec.grid.dt
    s0, s1 = rec.storage[0], rec.storage[-1]
    return EnergyAccount(
        float(np.sum(rec.P_in) * dt),
        float(np.sum(rec.P_demand) * dt),
        float(np.sum(rec.P_delivered) * dt),
        float(s1 - s0),
    )


# -- peak shaving ------------------------------------------------------------


class InfeasibleInjection(RuntimeError):
    def __init__(self, message, binding):
        super().__init__(message)
        self.binding = binding


@dataclass
class PeakResult:
    profile: TimeTable
    peak: float
    baseline_peak: float
    cap: float | None
    evaluations: int
    trajectory: TrajectoryRecord
    baseline: TrajectoryRecord
    initial: tuple
    history: list = field(default_factory=list)  # (cap, feasible, peak or binding)

    @property
    def reduction(self):
        return 1.0 - self.peak / self.baseline_peak


def _profile_table(grid: TimeGrid, u):
    t = grid.t0 + grid.dt * np.arange(len(u))
    return TimeTable(t, np.asarray(u, dtype=float), "previous")


def _greedy_policy(cap, e_min, e_max):
    """Inject as hot as allowed unless the cap binds; the cap fixes
    ``u_e = e_return + cap / Q``."""

    def policy(k, t, e_ret, q):
        u = e_max if q <= 0 else min(e_max, e_ret + cap / q)
        if u < e_min:
            raise InfeasibleInjection(
                f"cap {cap:.1f} W needs u_e below the lower bound at t = {t:g} s", "u_min"
            )
        return u

    return policy


def _run(net, mesh, scenario, grid, policy=None, initial=None):
    e0, n0 = initial if initial is not None else (None, None)
    return simulate(net, mesh, scenario, grid, e0=e0, e_node0=n0, policy=policy, keep_states=False)


def initial_state(net, mesh, scenario, grid):
    """Flushed state of the constant-injection baseline; shared by every
    candidate so that profiles are compared from the same start."""
    return flushed_state(net, mesh, scenario.u_e(grid.t0), scenario.e_bf)


def optimize_peak(
    net: Network,
    mesh: Mesh,
    scenario: Scenario,
    grid: TimeGrid,
    u_bounds,
    budget=12,
    respect_bounds=True,
    rel_tol=1e-3,
) -> PeakResult:
    """Minimise the peak feed-in power over piecewise-constant injections.

    Bisection on a cap ``P_bar`` between the mean demand and the
    constant-injection peak; each candidate is tested by a greedy
    simulation.  ``budget`` counts candidate simulations; ``budget = 0``
    returns the scenario's own injection profile.  The result is never
    worse than that baseline.
    """
    e_min, e_max = map(float, u_bounds)
    if not e_min < e_max:
        raise ValueError("u_bounds must be increasing")
    init = initial_state(net, mesh, scenario, grid)
    base = _run(net, mesh, scenario, grid, initial=init)
    base_peak = float(np.max(base.P_in))
    base_profile = _profile_table(grid, np.asarray(base.u)[:, 0])
    result = PeakResult(base_profile, base_peak, base_peak, None, 0, base, base, init)
    if budget <= 0:
        return result

    lo = float(np.mean(base.P_demand))
    hi = base_peak
    best = None
    for it in range(budget):
        if hi - lo <= rel_tol * hi:
            break
        cap = 0.5 * (lo + hi)
        result.evaluations += 1
        try:
            rec = _run(net, mesh, scenario, grid, _greedy_policy(cap, e_min, e_max), init)
        except InfeasibleInjection as exc:
            result.history.append((cap, False, exc.binding))
            lo = cap
            continue
        except SimulationError as exc:
            result.history.append((cap, False, "hydraulics"))
            log.debug("cap %.1f infeasible: %s", cap, exc)
            lo = cap
            continue
        peak = float(np.max(rec.P_in))
        viol = rec.n_violations if respect_bounds else 0
        if viol > (base.n_violations if respect_bounds else 0):
            result.history.append((cap, False, "operational_bounds"))
            lo = cap
            continue
        result.history.append((cap, True, peak))
        hi = cap
        if best is None or peak < best[1]:
            best = (rec, peak, cap)
    if best is not None and best[1] <= base_peak:
        rec, peak, cap = best
        result.profile = _profile_table(grid, np.asarray(rec.u)[:, 0])
        result.peak, result.cap, result.trajectory = peak, cap, rec
    return result


def check_bounds_feasible(net, mesh, scenario, grid, u_bounds):
    """Raise ``InfeasibleInjection`` if neither bound injection is simulable."""
    init = initial_state(net, mesh, scenario, grid)
    for e in u_bounds:
        try:
            _run(net, mesh, scenario.with_injection(TimeTable.constant(e)), grid, initial=init)
            return
        except SimulationError as exc:
            last = exc
    raise InfeasibleInjection(f"no bound injection is feasible: {last}", "hydraulics")


# -- reporting ---------------------------------------------------------------


@dataclass
class CaseStudyReport:
    baseline: FeedInSeries
    improved: FeedInSeries
    baseline_energy: EnergyAccount
    improved_energy: EnergyAccount
    demand_mean: float
    demand_max: float

    @property
    def reduction(self):
        return 1.0 - self.improved.max / self.baseline.max

    def lines(self):
        return [
            f"demand mean / max      : {self.demand_mean / 1e3:9.2f} / {self.demand_max / 1e3:9.2f} kW",
            f"constant injection peak: {self.baseline.max / 1e3:9.2f} kW (mean {self.baseline.mean / 1e3:.2f} kW)",
            f"improved injection peak: {self.improved.max / 1e3:9.2f} kW (mean {self.improved.mean / 1e3:.2f} kW)",
            f"peak reduction         : {100 * self.reduction:9.2f} %",
            f"energy residual        : {self.baseline_energy.residual:.2e} / {self.improved_energy.residual:.2e}",
        ]


def write_case_csv(path, report: CaseStudyReport, material):
    b, m = report.baseline, report.improved
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_h", "T_in_const", "P_in_const", "T_in_opt", "P_in_opt", "P_cap", "P_mean"])
        cap = m.threshold if m.threshold is not None else m.max
        for k in range(len(b.t)):
            w.writerow([
                f"{b.t[k] / 3600.0:.6f}",
                f"{temperature_of_energy(b.u_e[k], material):.6f}",
                f"{b.P_in[k]:.6f}",
                f"{temperature_of_energy(m.u_e[k], material):.6f}",
                f"{m.P_in[k]:.6f}",
                f"{cap:.6f}",
                f"{report.demand_mean:.6f}",
            ])


GNUPLOT = """\
set datafile separator ','
set key autotitle columnhead outside
set multiplot layout 2,1
set ylabel 'injection temperature [degC]'
plot '{csv}' using 1:2 with lines, '' using 1:4 with lines
set xlabel 'time [h]'
set ylabel 'feed-in power [W]'
plot '{csv}' using 1:3 with lines, '' using 1:5 with lines, \\
     '' using 1:6 with lines dt 2, '' using 1:7 with lines dt 3
unset multiplot
"""


def run_case_study(net, mesh, scenario_const, scenario_shifted, grid, out_dir=None, threshold=None):
    """Simulate both injections on the same demand and from the same
    initial state, and compare feed-in power."""
    init = initial_state(net, mesh, scenario_const, grid)
    rc = _run(net, mesh, scenario_const, grid, initial=init)
    rs = _run(net, mesh, scenario_shifted, grid, initial=init)
    fb = feed_in_power(rc, scenario_const)
    fm = feed_in_power(rs, scenario_shifted)
    fm.threshold = threshold if threshold is not None else fm.max
    D = np.asarray(rc.P_demand)
    report = CaseStudyReport(
        fb, fm, energy_account(rc), energy_account(rs), float(D.mean()), float(D.max())
    )
    if out_dir is not None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_case_csv(out / "feed_in.csv", report, net.material)
        (out / "feed_in.gp").write_text(GNUPLOT.format(csv="feed_in.csv"))
    return report
