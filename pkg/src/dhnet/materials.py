"""Water properties as polynomials of the internal energy density, and pipe
friction factors.

All polynomials act on scaled variables ``e* = e / e0``; the public functions
take and return SI units (temperatures in degrees Celsius).
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np

from . import _accel

log = logging.getLogger(__name__)

VALID_E = (0.2e9, 0.5e9)
VALID_T = (50.0, 130.0)
TURBULENT_RE = 1e3


class DomainError(ValueError):
    """Argument outside the mathematical domain of a material law."""


class FrictionConvergenceError(ArithmeticError):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class MaterialRangeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class MaterialModel:
    """Coefficients of the scaled water polynomials, lowest order first."""

    T_coeffs: tuple = (1.93729, 220.536, 59.2453)
    rho_coeffs: tuple = (1.00280, -0.025576, -0.208084)
    nu_coeffs: tuple = (1.42624, -7.00355, 17.6559, -22.8079, 11.9285)
    e0: float = 1e9
    T0_ref: float = 1.0
    rho0_ref: float = 1e3
    nu0_ref: float = 1e-6

    def __post_init__(self):
        T0, T1, T2 = self.T_coeffs
        if not (T1 > 0 and T2 > 0):
            raise ValueError("temperature polynomial must have positive T1, T2")

    @classmethod
    def from_dict(cls, data):
        kw = {k: (tuple(v) if isinstance(v, (list, tuple)) else float(v)) for k, v in data.items()}
        return cls(**kw)


WATER = MaterialModel()


def _horner(coeffs, x):
    acc = np.zeros_like(x) + coeffs[-1]
    for c in coeffs[-2::-1]:
        acc = acc * x + c
    return acc


def _check_energy(e, model):
    e = np.asarray(e, dtype=float)
    if np.any(e < 0):
        raise DomainError("internal energy density must be non-negative")
    if np.any((e < VALID_E[0]) | (e > VALID_E[1])):
        warnings.warn(
            "energy density outside the fitted regime [0.2, 0.5] GJ/m^3",
            MaterialRangeWarning,
            stacklevel=3,
        )
    return e / model.e0


def _out(x):
    return float(x) if np.ndim(x) == 0 else x


def temperature_of_energy(e, model: MaterialModel = WATER):
    """Temperature [degC] for internal energy density ``e`` [J/m^3]."""
    es = _check_energy(e, model)
    return _out(model.T0_ref * _horner(model.T_coeffs, es))


def energy_of_temperature(T, model: MaterialModel = WATER):
    """Exact inverse of :func:`temperature_of_energy` on ``e >= 0``."""
    T0, T1, T2 = model.T_coeffs
    Ts = np.asarray(T, dtype=float) / model.T0_ref
    disc = T1 * T1 - 4.0 * T2 * (T0 - Ts)
    if np.any(disc < 0):
        raise DomainError("no real energy density for this temperature")
    # Rationalised root avoids cancellation near T = T(0).
    es = 2.0 * (Ts - T0) / (T1 + np.sqrt(disc))
    if np.any(es < 0):
        raise DomainError("temperature below T(e=0)")
    return _out(model.e0 * es)


def density_of_energy(e, model: MaterialModel = WATER):
    """Mass density [kg/m^3]."""
    return _out(model.rho0_ref * _horner(model.rho_coeffs, _check_energy(e, model)))


def viscosity_of_energy(e, model: MaterialModel = WATER):
    """Kinematic viscosity [m^2/s]."""
    return _out(model.nu0_ref * _horner(model.nu_coeffs, _check_energy(e, model)))


# -- friction ----------------------------------------------------------------


class FrictionMode(str, Enum):
    COLEBROOK_WHITE = "colebrook_white"
    FIXED_LAMBDA = "fixed_lambda"
    FIXED_REYNOLDS = "fixed_reynolds"


@dataclass(frozen=True)
class FrictionModel:
    mode: FrictionMode = FrictionMode.COLEBROOK_WHITE
    k_r: float = 1e-4
    d: float = 0.1
    fixed_value: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "mode", FrictionMode(self.mode))
        if self.k_r < 0 or self.d <= 0:
            raise ValueError("need k_r >= 0 and d > 0")
        if self.mode is not FrictionMode.COLEBROOK_WHITE and self.fixed_value is None:
            raise ValueError(f"{self.mode.value} needs fixed_value")

    @property
    def relative_roughness(self):
        return self.k_r / self.d

    def with_pipe(self, k_r, d):
        return replace(self, k_r=k_r, d=d)


def rough_limit(rel_rough):
    """Fully rough limit ``1/sqrt(lam) = 1.14 - 2 log10(k_r/d)``."""
    x = 1.14 - 2.0 * math.log10(rel_rough) if rel_rough > 0 else math.inf
    return 1.0 / (x * x)


def colebrook_residual(lam, re, rel_rough):
    s = np.sqrt(lam)
    return 1.0 / s + 2.0 * np.log10(_accel.COLEBROOK_A / (re * s) + rel_rough / _accel.COLEBROOK_B)


def colebrook_lambda(re, rel_rough, tol=1e-10):
    """Solve Colebrook-White for an array of Reynolds numbers."""
    re = np.asarray(re, dtype=float)
    if np.any(re <= 0):
        raise DomainError("Reynolds number must be positive")
    lam, res, _ = _accel.colebrook(re, rel_rough)
    if np.any(~(res < tol)):
        raise FrictionConvergenceError(
            "Colebrook-White solve did not converge", float(np.nanmax(res))
        )
    return _out(lam)


def reynolds(v, e, d, material: MaterialModel = WATER):
    return np.abs(v) * d / viscosity_of_energy(e, material)


def friction_factor(v, e, model: FrictionModel, material: MaterialModel = WATER):
    """Darcy friction factor for velocity ``v`` [m/s] at energy density ``e``.

    ``v = 0`` in Colebrook mode returns the fully rough limit; the friction
    force vanishes there anyway.
    """
    if model.mode is FrictionMode.FIXED_LAMBDA:
        return _out(np.full(np.shape(v), float(model.fixed_value)))
    r = model.relative_roughness
    if model.mode is FrictionMode.FIXED_REYNOLDS:
        return _out(np.full(np.shape(v), colebrook_lambda(np.array([model.fixed_value]), r)[0]))
    v = np.asarray(v, dtype=float)
    re = np.atleast_1d(reynolds(v, e, model.d, material)).astype(float)
    lam = np.empty_like(re)
    still = re == 0
    if np.any(still):
        log.debug("zero velocity in Colebrook mode; using rough-pipe limit")
        lam[still] = rough_limit(r) if r > 0 else 0.0
    if np.any((re > 0) & (re < TURBULENT_RE)):
        log.debug("Reynolds number below turbulent threshold %.0f", TURBULENT_RE)
    if np.any(~still):
        lam[~still] = colebrook_lambda(re[~still], r)
    return _out(lam.reshape(v.shape))
