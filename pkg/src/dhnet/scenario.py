"""Time-dependent boundary data: injection, depot pressures and demand."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hydraulics import HydraulicClosure
from .materials import WATER, MaterialModel, energy_of_temperature, temperature_of_energy
from .network import Network, OperationalBounds


class ScenarioError(ValueError):
    pass


@dataclass(frozen=True)
class TimeTable:
    """Piecewise-linear (or piecewise-constant) table ``t -> value``.

    ``values`` has shape ``(n,)`` or ``(n, k)``.  With ``kind="previous"``
    the value at ``t`` is the one at the last breakpoint ``<= t``.
    """

    times: np.ndarray
    values: np.ndarray
    kind: str = "linear"

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or len(t) == 0 or len(v) != len(t):
            raise ScenarioError("time table needs matching, non-empty times and values")
        if np.any(np.diff(t) <= 0):
            raise ScenarioError("time table breakpoints must be strictly increasing")
        if self.kind not in ("linear", "previous"):
            raise ScenarioError(f"unknown interpolation {self.kind!r}")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, value):
        v = np.asarray(value, dtype=float)
        return cls(np.array([-math.inf]), v[None, ...], "previous")

    @property
    def t_min(self):
        return float(self.times[0])

    @property
    def t_max(self):
        # a single breakpoint in "previous" mode holds forever
        if self.kind == "previous":
            return math.inf
        return float(self.times[-1])

    def covers(self, t0, t_end):
        return self.t_min <= t0 and t_end <= self.t_max

    def __call__(self, t):
        if t < self.t_min or t > self.t_max:
            raise ScenarioError(f"time {t} outside table range [{self.t_min}, {self.t_max}]")
        if self.kind == "previous":
            k = int(np.searchsorted(self.times, t, side="right")) - 1
            return self.values[k].copy() if self.values.ndim > 1 else float(self.values[k])
        if self.values.ndim == 1:
            return float(np.interp(t, self.times, self.values))
        return np.array([np.interp(t, self.times, col) for col in self.values.T])

    def map(self, fn):
        return TimeTable(self.times, fn(self.values), self.kind)


def read_csv_table(path, columns, time_column="t", kind="linear"):
    """Load ``columns`` of a CSV file against ``time_column``."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ScenarioError(f"{path}: empty table")
    missing = [c for c in [time_column, *columns] if c not in rows[0]]
    if missing:
        raise ScenarioError(f"{path}: missing columns {missing}")
    t = np.array([float(r[time_column]) for r in rows])
    v = np.array([[float(r[c]) for c in columns] for r in rows])
    return TimeTable(t, v[:, 0] if len(columns) == 1 else v, kind)


# -- synthetic demand ----------------------------------------------------------


def two_peak_shape(hours):
    """Dimensionless diurnal heat-demand shape with a morning and an evening
    peak and a night trough."""
    h = np.mod(np.asarray(hours, dtype=float), 24.0)

    def bump(c, w):
        # periodic Gaussian on the 24 h circle
        d = np.minimum(np.abs(h - c), 24.0 - np.abs(h - c))
        return np.exp(-0.5 * (d / w) ** 2)

    return 1.0 + 0.9 * bump(7.0, 1.5) + 0.6 * bump(19.0, 2.0) - 0.35 * bump(2.5, 2.5)


def demand_profile(times, mean, peak, shape=two_peak_shape):
    """Affinely rescale ``shape`` so its sample mean and maximum over
    ``times`` are ``mean`` and ``peak`` [W]."""
    f = shape(np.asarray(times, dtype=float) / 3600.0)
    fm, fx = f.mean(), f.max()
    if peak < mean:
        raise ScenarioError("peak demand below mean demand")
    if fx == fm:
        return np.full_like(f, mean)
    a = (peak - mean) / (fx - fm)
    p = a * (f - fm) + mean
    if p.min() < 0:
        raise ScenarioError("rescaled profile becomes negative; lower the peak-to-mean ratio")
    return p


def demand_table(t0, t_end, mean, peak, n_consumers, step=300.0, weights=None):
    """Per-consumer demand table whose total follows :func:`demand_profile`."""
    n = int(round((t_end - t0) / step))
    # sample at step midpoints so the integrator's evaluation points see the
    # exact mean and maximum
    tm = t0 + (np.arange(n) + 0.5) * step
    total = demand_profile(tm, mean, peak)
    t = np.concatenate([[t0], tm, [t_end]])
    total = np.concatenate([[total[0]], total, [total[-1]]])
    w = np.full(n_consumers, 1.0 / n_consumers) if weights is None else np.asarray(weights, float)
    w = w / w.sum()
    return TimeTable(t, total[:, None] * w[None, :], "linear")


# -- scenario ------------------------------------------------------------------


@dataclass
class Scenario:
    """Boundary data of a simulation run.

    ``injection`` is in J/m^3, pressures in Pa, ``demand`` one column per
    consumer arc in W.
    """

    injection: TimeTable
    demand: TimeTable
    u_p: TimeTable = field(default_factory=lambda: TimeTable.constant(5e5))
    u_dp: TimeTable = field(default_factory=lambda: TimeTable.constant(3e5))
    T_bf: float = 60.0
    bounds: OperationalBounds = field(default_factory=OperationalBounds)
    material: MaterialModel = WATER

    @property
    def e_bf(self):
        return float(energy_of_temperature(self.T_bf, self.material))

    def u_e(self, t):
        return float(self.injection(t))

    def power(self, t):
        return np.atleast_1d(np.asarray(self.demand(t), dtype=float))

    def closure(self, t, e_bf=None):
        return HydraulicClosure(
            power=self.power(t),
            u_p=float(self.u_p(t)),
            u_dp=float(self.u_dp(t)),
            e_bf=self.e_bf if e_bf is None else e_bf,
        )

    def with_injection(self, table):
        return Scenario(table, self.demand, self.u_p, self.u_dp, self.T_bf, self.bounds, self.material)

    def validate(self, net: Network, t0, t_end):
        for name in ("injection", "demand", "u_p", "u_dp"):
            tab = getattr(self, name)
            if not tab.covers(t0, t_end):
                raise ScenarioError(f"{name} table does not cover [{t0}, {t_end}]")
        if self.power(t0).shape != (net.n_consumers,):
            raise ScenarioError(
                f"demand has {self.power(t0).size} columns, network has {net.n_consumers} consumers"
            )
        if np.any(self.demand.values < 0):
            raise ScenarioError("negative demand")
        e = self.injection.values
        if np.any(e < 0):
            raise ScenarioError("negative injected energy density")
        if self.bounds.T_net is not None:
            T = temperature_of_energy(np.clip(e, 0, None), self.material)
            if np.any(T > self.bounds.T_net + 1e-9):
                raise ScenarioError("injection temperature exceeds T_net")


def _table_from_spec(spec, base, n_cols=None, material=WATER):
    """Build a table from a JSON entry.

    Accepted forms: a number; ``{"value": x}``; ``{"csv": f, "column": c}``;
    ``{"csv": f, "columns": [...]}``; each with optional ``"unit"`` (``"degC"``
    converts temperatures to energy densities) and ``"interp"``.
    """
    if isinstance(spec, (int, float)):
        spec = {"value": spec}
    kind = spec.get("interp", "linear")
    if "value" in spec:
        tab = TimeTable.constant(spec["value"])
    elif "csv" in spec:
        cols = spec.get("columns") or [spec["column"]]
        tab = read_csv_table(base / spec["csv"], cols, spec.get("time_column", "t"), kind)
    else:
        raise ScenarioError(f"cannot read table spec {spec!r}")
    if spec.get("unit") == "degC":
        tab = tab.map(lambda v: np.asarray(energy_of_temperature(v, material), dtype=float))
    return tab


def scenario_from_dict(data, net: Network, base=Path(".")):
    base = Path(base)
    dem = data["demand"]
    if isinstance(dem, dict) and dem.get("profile") == "two-peak":
        demand = demand_table(
            float(data.get("t0", 0.0)),
            float(data["t_end"]),
            float(dem["mean"]),
            float(dem["max"]),
            net.n_consumers,
            float(dem.get("step", 300.0)),
            dem.get("weights"),
        )
    else:
        demand = _table_from_spec(dem, base)
        if demand.values.ndim == 1 and net.n_consumers > 1:
            # a single column is a total, split evenly
            demand = demand.map(lambda v: np.repeat(v[:, None] / net.n_consumers, net.n_consumers, 1))
        elif demand.values.ndim == 1:
            demand = demand.map(lambda v: v[:, None])
    bounds = OperationalBounds.from_dict(data.get("bounds", {}))
    return Scenario(
        injection=_table_from_spec(data["injection"], base, material=net.material),
        demand=demand,
        u_p=_table_from_spec(data.get("depot_pressure", 5e5), base),
        u_dp=_table_from_spec(data.get("pressure_increase", 3e5), base),
        T_bf=float(data.get("T_bf", bounds.T_bf)),
        bounds=bounds,
        material=net.material,
    )


def load_scenario(path, net: Network):
    path = Path(path)
    with open(path) as fh:
        data = json.load(fh)
    return scenario_from_dict(data, net, path.parent), data
