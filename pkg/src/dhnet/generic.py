"""Discrete weak-form operators of the thermodynamic pipe model in GENERIC
form, ``dz/dt = (J(z) - R(z)) dE/dz + B(z) u``, for ``z = (rho, M, e)``.

States are cell averages on ``m`` uniform cells of ``(0, l)``; test functions
live in the same space and are paired by ``<phi, psi> = dx * sum(phi * psi)``.
All operators are returned as bilinear-form matrices ``K`` with
``<phi, K psi> = phi @ K @ psi``, so skewness and symmetry are exact matrix
properties.  Derivatives act on test functions through a difference matrix
``D``; see :class:`GenericMesh`.

Only the ideal-gas closure is provided.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.linalg import eigvalsh

from .materials import DomainError

SCHEMES = ("forward", "central", "periodic")


@dataclass(frozen=True)
class StateLaw:
    """Ideal gas: ``s = (R/2) rho ln(c_p e^3 / rho^5)``, ``T = 2e/(3 R rho)``,
    ``p = 2e/3``."""

    R_gas: float = 287.0
    c_p: float = 1005.0
    theta: float = 283.15
    mode: str = "ideal_gas"

    def __post_init__(self):
        if self.mode != "ideal_gas":
            raise ValueError(f"unsupported state law {self.mode!r}")
        if not (self.R_gas > 0 and self.c_p > 0 and self.theta > 0):
            raise ValueError("R_gas, c_p and theta must be positive")

    def s(self, rho, e):
        return 0.5 * self.R_gas * rho * np.log(self.c_p * e**3 / rho**5)

    def T(self, rho, e):
        return 2.0 * e / (3.0 * self.R_gas * rho)

    def p(self, rho, e):
        return 2.0 * e / 3.0

    def s_rho(self, rho, e):
        return self.s(rho, e) / rho - 2.5 * self.R_gas

    def s_e(self, rho, e):
        return 1.0 / self.T(rho, e)

    def gibbs_s_rho(self, rho, e):
        """``-(rho T)^-1 (e + p - T s)``; must equal :meth:`s_rho`."""
        T = self.T(rho, e)
        return -(e + self.p(rho, e) - T * self.s(rho, e)) / (rho * T)

    def H_ball(self, rho, e):
        """Ballistic free energy ``e - theta s``."""
        return e - self.theta * self.s(rho, e)

    def H_rho(self, rho, e):
        return -self.theta * self.s_rho(rho, e)

    def H_e(self, rho, e):
        return 1.0 - self.theta * self.s_e(rho, e)


@dataclass(frozen=True)
class PipeParams:
    d: float = 0.5
    lam: float = 0.02
    k_w: float = 0.0
    slope: float = 0.0
    g: float = 9.81


@dataclass(frozen=True)
class GenericMesh:
    """``m`` cells on ``(0, length)``.

    ``forward``: ``(D phi)_i = (phi_{i+1} - phi_i)/dx`` with a backward
    difference in the last cell; ``central``: centred interior rows with
    one-sided end rows; ``periodic``: centred circulant differences.
    """

    m: int
    length: float = 1.0
    scheme: str = "forward"

    def __post_init__(self):
        if self.m < 2:
            raise ValueError("need at least two cells")
        if self.scheme not in SCHEMES:
            raise ValueError(f"scheme must be one of {SCHEMES}")

    @property
    def dx(self):
        return self.length / self.m

    @property
    def x(self):
        return (np.arange(self.m) + 0.5) * self.dx

    def D(self):
        m, h = self.m, self.dx
        if self.scheme == "forward":
            D = sparse.diags([-np.ones(m), np.ones(m - 1)], [0, 1], shape=(m, m), format="lil")
            D[m - 1, m - 2], D[m - 1, m - 1] = -1.0, 1.0
            return D.tocsr() / h
        if self.scheme == "central":
            D = sparse.diags([-0.5 * np.ones(m - 1), 0.5 * np.ones(m - 1)], [-1, 1], shape=(m, m), format="lil")
            D[0, 0], D[0, 1] = -1.0, 1.0
            D[m - 1, m - 2], D[m - 1, m - 1] = -1.0, 1.0
            return D.tocsr() / h
        idx = np.arange(m)
        rows = np.concatenate([idx, idx])
        cols = np.concatenate([(idx + 1) % m, (idx - 1) % m])
        vals = np.concatenate([0.5 * np.ones(m), -0.5 * np.ones(m)])
        return sparse.csr_matrix((vals, (rows, cols)), shape=(m, m)) / h


@dataclass
class PipeStateZ:
    rho: np.ndarray
    M: np.ndarray
    e: np.ndarray
    delta: float = 1e-3

    def __post_init__(self):
        self.rho = np.asarray(self.rho, dtype=float)
        self.M = np.asarray(self.M, dtype=float)
        self.e = np.asarray(self.e, dtype=float)
        if not (self.rho.shape == self.M.shape == self.e.shape and self.rho.ndim == 1):
            raise ValueError("rho, M, e must be 1-d arrays of equal length")
        if not np.all(np.isfinite(np.concatenate([self.rho, self.M, self.e]))):
            raise DomainError("non-finite state entries")
        if np.any(self.rho < self.delta):
            raise DomainError(f"density below delta = {self.delta}")

    @property
    def v(self):
        return self.M / self.rho

    @property
    def m(self):
        return len(self.rho)

    @classmethod
    def from_functions(cls, mesh: GenericMesh, rho, v, e, delta=1e-3):
        x = mesh.x
        r = rho(x)
        return cls(r, r * v(x), e(x), delta)


def _split(vec, m):
    return vec[:m], vec[m : 2 * m], vec[2 * m :]


def _height(mesh, params):
    return params.slope * mesh.x


@dataclass
class EnergyFunctionals:
    H: float
    S: float
    E: float
    dE: np.ndarray  # (dE/drho, dE/dM, dE/de) stacked, 3m
    dH: np.ndarray
    dS: np.ndarray


def energy_and_gradient(z: PipeStateZ, law: StateLaw, mesh: GenericMesh, params=PipeParams()):
    """Energy ``E = H - theta S`` and the pointwise variational derivatives.

    Integrals use the composite midpoint rule on the cells (equal to the
    trapezoidal rule on cell centres with constant end extension).
    """
    rho, M, e = z.rho, z.M, z.e
    if np.any(e <= 0):
        raise DomainError("ideal-gas entropy needs e > 0")
    h = _height(mesh, params)
    v = M / rho
    kin = 0.5 * M * M / rho
    H = mesh.dx * float(np.sum(kin + e + rho * params.g * h))
    S = mesh.dx * float(np.sum(law.s(rho, e)))
    E = H - law.theta * S
    dH = np.concatenate([-0.5 * v * v + params.g * h, v, np.ones_like(e)])
    dS = np.concatenate([law.s_rho(rho, e), np.zeros_like(M), law.s_e(rho, e)])
    dE = np.concatenate([
        -0.5 * v * v + law.H_rho(rho, e) + params.g * h,
        v,
        law.H_e(rho, e),
    ])
    return EnergyFunctionals(H, S, E, dE, dH, dS)


def assemble_J(z: PipeStateZ, law: StateLaw, mesh: GenericMesh):
    """Skew bilinear-form matrix (3m x 3m).

    rho-M: ``dx D^T diag(rho)``; M-M: ``dx (D^T diag(M) - diag(M) D)``;
    e-M: ``dx (D^T diag(e) + diag(p) D^T)``; the M-rho and M-e blocks are
    the negated transposes.
    """
    D = mesh.D()
    h = mesh.dx
    rho, M, e = z.rho, z.M, z.e
    p = law.p(rho, e)
    Dt = D.T.tocsr()
    J_rM = h * (Dt @ sparse.diags(rho))
    J_MM = h * (Dt @ sparse.diags(M) - sparse.diags(M) @ D)
    J_eM = h * (Dt @ sparse.diags(e) + sparse.diags(p) @ Dt)
    # exact antisymmetry of the diagonal block
    J_MM = 0.5 * (J_MM - J_MM.T)
    return sparse.bmat(
        [[None, J_rM, None], [-J_rM.T, J_MM, -J_eM.T], [None, J_eM, None]],
        format="csr",
    )


def friction_coefficient(z: PipeStateZ, law: StateLaw, params: PipeParams):
    """``a = (lam / 2d) (T / theta) rho |v|`` per cell."""
    T = law.T(z.rho, z.e)
    if np.any(T <= 0):
        raise DomainError("temperature must be positive")
    return params.lam / (2.0 * params.d) * (T / law.theta) * z.rho * np.abs(z.v)


def assemble_R(z: PipeStateZ, law: StateLaw, mesh: GenericMesh, params=PipeParams(), parts=("friction", "wall")):
    """Symmetric PSD bilinear-form matrix.

    Per cell the friction part is ``dx * a * [[1, -v], [-v, v^2]]`` on
    ``(M, e)``, the wall part ``dx * (4 k_w / d) T`` on ``e``.
    """
    m, h = z.m, mesh.dx
    v = z.v
    T = law.T(z.rho, z.e)
    if np.any(T <= 0):
        raise DomainError("temperature must be positive")
    zero = np.zeros(m)
    a = friction_coefficient(z, law, params) if "friction" in parts else zero
    kw = (4.0 * params.k_w / params.d) * T if "wall" in parts else zero
    R_MM = sparse.diags(h * a)
    R_Me = sparse.diags(-h * a * v)
    R_ee = sparse.diags(h * a * v * v + h * kw)
    Z = sparse.csr_matrix((m, m))
    return sparse.bmat([[Z, None, None], [None, R_MM, R_Me], [None, R_Me, R_ee]], format="csr")


def port_operator(z: PipeStateZ, law: StateLaw):
    """``B`` (3m x 2) for the boundary inputs ``u = (v(0), v(l))``.

    Column 0 carries ``+(rho, M, e + p)`` in the first cell, column 1
    ``-(rho, M, e + p)`` in the last cell, so that
    ``phi @ B @ u = -[(phi_rho rho + phi_M M + phi_e (e + p)) u]_0^l``.
    """
    m = z.m
    p = law.p(z.rho, z.e)
    B = np.zeros((3 * m, 2))
    for col, cell, sign in ((0, 0, 1.0), (1, m - 1, -1.0)):
        B[cell, col] = sign * z.rho[cell]
        B[m + cell, col] = sign * z.M[cell]
        B[2 * m + cell, col] = sign * (z.e[cell] + p[cell])
    return B


def boundary_flux(phi, z: PipeStateZ, law: StateLaw, cell):
    """``phi_rho rho + phi_M M + phi_e (e + p)`` at a boundary cell."""
    m = z.m
    pr, pM, pe = _split(np.asarray(phi, dtype=float), m)
    p = law.p(z.rho[cell], z.e[cell])
    return pr[cell] * z.rho[cell] + pM[cell] * z.M[cell] + pe[cell] * (z.e[cell] + p)


def boundary_identity_error(phi, u, z: PipeStateZ, law: StateLaw):
    """``|<phi, B u> + [(...) u]_0^l|`` relative to the largest term."""
    B = port_operator(z, law)
    lhs = float(np.asarray(phi) @ (B @ np.asarray(u)))
    f0 = boundary_flux(phi, z, law, 0) * u[0]
    fl = boundary_flux(phi, z, law, z.m - 1) * u[1]
    rhs = -(fl - f0)
    scale = max(abs(lhs), abs(f0), abs(fl), np.finfo(float).tiny)
    return abs(lhs - rhs) / scale


@dataclass
class PortPairing:
    u: np.ndarray  # (v(0), v(l))
    y: np.ndarray  # B^T dE
    closed_form: np.ndarray  # (c(0), -c(l)), c = |M|^2/2rho + p + H + rho g h

    @property
    def u_jump(self):
        return float(self.u[1] - self.u[0])

    @property
    def y_jump(self):
        """Scalar output ``-[|M|^2/2rho + p + H + rho g h]_0^l``."""
        return float(self.y[0] + self.y[1])

    @property
    def error(self):
        scale = max(np.abs(self.closed_form).max(), np.finfo(float).tiny)
        return float(np.abs(self.y - self.closed_form).max() / scale)


def boundary_output_closed_form(z: PipeStateZ, law: StateLaw, mesh: GenericMesh, params=PipeParams()):
    h = _height(mesh, params)
    rho, M, e = z.rho, z.M, z.e
    c = 0.5 * M * M / rho + law.p(rho, e) + law.H_ball(rho, e) + rho * params.g * h
    return np.array([c[0], -c[-1]])


def port_pairing(z: PipeStateZ, law: StateLaw, mesh: GenericMesh, params=PipeParams()):
    fun = energy_and_gradient(z, law, mesh, params)
    B = port_operator(z, law)
    u = np.array([z.v[0], z.v[-1]])
    y = B.T @ fun.dE
    return PortPairing(u, y, boundary_output_closed_form(z, law, mesh, params))


# -- structural checks -------------------------------------------------------


def _l2(dual, mesh):
    """Discrete L2 norm of the function represented by a dual vector."""
    f = np.asarray(dual) / mesh.dx
    return float(np.sqrt(mesh.dx * np.sum(f * f)))


@dataclass
class OperatorReport:
    skew: float
    symmetric: float
    min_eig_R: float
    norm_R: float

    @property
    def psd(self):
        return self.min_eig_R >= -1e-12 * max(self.norm_R, np.finfo(float).tiny)


def operator_report(z, law, mesh, params=PipeParams()):
    J = assemble_J(z, law, mesh)
    R = assemble_R(z, law, mesh, params)
    nJ = max(abs(J).max(), np.finfo(float).tiny)
    nR = max(abs(R).max(), np.finfo(float).tiny)
    skew = abs(J + J.T).max() / nJ
    sym = abs(R - R.T).max() / nR
    ev = eigvalsh(R.toarray())
    return OperatorReport(float(skew), float(sym), float(ev.min()), float(np.abs(ev).max()))


@dataclass
class DegeneracyReport:
    J_dS: float  # discrete L2 norm of J dS/dz as a function
    J_dS_rel: float
    R_dH: float  # max |R^lambda dH/dz| relative to |R^lambda| |dH/dz|


def check_degeneracy(z, law, mesh, params=PipeParams()):
    fun = energy_and_gradient(z, law, mesh, params)
    J = assemble_J(z, law, mesh)
    r = J @ fun.dS
    scale = abs(J).max() * np.abs(fun.dS).max() / mesh.dx
    Rl = assemble_R(z, law, mesh, params, parts=("friction",))
    rr = Rl @ fun.dH
    rscale = max(abs(Rl).max() * np.abs(fun.dH[z.m :]).max(), np.finfo(float).tiny)
    return DegeneracyReport(_l2(r, mesh), _l2(r, mesh) / max(scale, np.finfo(float).tiny), float(np.abs(rr).max() / rscale))


def strong_rhs(z: PipeStateZ, law: StateLaw, mesh: GenericMesh, params=PipeParams()):
    """``dz/dt`` from the balance laws with the mesh's difference matrix."""
    D = mesh.D()
    rho, M, e = z.rho, z.M, z.e
    v = z.v
    p = law.p(rho, e)
    T = law.T(rho, e)
    fr = params.lam / (2.0 * params.d) * rho * np.abs(v)
    drho = -(D @ (rho * v))
    dM = -(D @ (rho * v * v)) - D @ p - fr * v - rho * params.g * params.slope
    de = -(D @ (e * v)) - p * (D @ v) + fr * v * v - (4.0 * params.k_w / params.d) * (T - law.theta)
    return drho, dM, de


def entropy_balance_residual(z, dzdt, law, mesh, params=PipeParams()):
    """Discrete L2 norm of
    ``ds/dt + d(sv)/dx - (lam/2d) rho |v| v^2 / T + (4 k_w/d)(T - theta)/T``
    with ``ds/dt`` from the chain rule."""
    D = mesh.D()
    rho, e, v = z.rho, z.e, z.v
    drho, _, de = dzdt
    T = law.T(rho, e)
    s = law.s(rho, e)
    dsdt = law.s_rho(rho, e) * drho + law.s_e(rho, e) * de
    fr = params.lam / (2.0 * params.d) * rho * np.abs(v) * v * v / T
    wall = (4.0 * params.k_w / params.d) * (T - law.theta) / T
    r = dsdt + D @ (s * v) - fr + wall
    return float(np.sqrt(mesh.dx * np.sum(r * r)))


def power_balance(z, law, mesh, params=PipeParams()):
    """``(dE/dt along the strong form, -<dE, R dE> + y.u)``."""
    fun = energy_and_gradient(z, law, mesh, params)
    rate = mesh.dx * float(fun.dE @ np.concatenate(strong_rhs(z, law, mesh, params)))
    R = assemble_R(z, law, mesh, params)
    pp = port_pairing(z, law, mesh, params)
    return rate, float(-(fun.dE @ (R @ fun.dE)) + pp.y @ pp.u)


# -- manufactured states and refinement -------------------------------------


def manufactured_fields(law: StateLaw = StateLaw(), length=1.0):
    """Smooth non-uniform (rho, v, e) on ``(0, length)``."""
    k = 2.0 * np.pi / length
    rho = lambda x: 1.2 * (1.0 + 0.2 * np.sin(k * x))
    v = lambda x: 10.0 * (1.0 + 0.3 * np.cos(k * x))
    e = lambda x: 1.5e5 * (1.0 + 0.1 * np.sin(k * x + 1.0))
    return rho, v, e


def random_state(rng, m, law: StateLaw = StateLaw(), delta=1e-3):
    """Admissible random state with moderate variations."""
    rho = rng.uniform(0.5, 2.0, m)
    v = rng.uniform(-20.0, 20.0, m)
    e = rng.uniform(0.5e5, 3e5, m)
    return PipeStateZ(rho, rho * v, e, delta)


@dataclass
class LadderRow:
    m: int
    J_dS: float
    entropy: float
    skew: float
    symmetric: float
    min_eig_R: float
    R_dH: float


def refinement_ladder(levels=4, m0=16, law=StateLaw(), params=PipeParams(), scheme="forward", length=1.0):
    """Degeneracy and entropy residuals on ``m0 * 2**k`` cells."""
    rows = []
    fields = manufactured_fields(law, length)
    for k in range(levels):
        mesh = GenericMesh(m0 * 2**k, length, scheme)
        z = PipeStateZ.from_functions(mesh, *fields)
        deg = check_degeneracy(z, law, mesh, params)
        ent = entropy_balance_residual(z, strong_rhs(z, law, mesh, params), law, mesh, params)
        rep = operator_report(z, law, mesh, params)
        rows.append(LadderRow(mesh.m, deg.J_dS, ent, rep.skew, rep.symmetric, rep.min_eig_R, deg.R_dH))
    return rows


def observed_rates(values):
    v = np.asarray(values, dtype=float)
    return np.log2(v[:-1] / v[1:])
