"""Port-Hamiltonian embedding of the semi-discrete advection model.

With ``Q = diag(cell volumes)``,

    J = (A Q^-1 - (A Q^-1)^T) / 2,    R = -(A Q^-1 + (A Q^-1)^T) / 2,
    B~ = [B, (C Q^-1)^T],

so that ``A = (J - R) Q`` and ``B~^T Q = [B^T Q; C]``.  The Hamiltonian is
``H(e) = e^T Q e`` (no factor 1/2), hence the supply rate in the dissipation
inequality is ``2 y~^T u~``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.linalg import eigvalsh

from .network import Network
from .thermal import Mesh, SystemMatrices

STRUCT_TOL = 1e-12
SPECTRAL_TOL = 1e-10


class StructureViolation(ArithmeticError):
    pass


@dataclass(frozen=True)
class PHSystem:
    Q: np.ndarray  # diagonal of Q, cell volumes [m^3]
    J: sparse.csr_matrix
    R: sparse.csr_matrix
    Btilde: np.ndarray
    n_inputs: int = 2

    @property
    def Qmat(self):
        return sparse.diags(self.Q)

    def hamiltonian(self, e):
        e = np.asarray(e, dtype=float)
        return float(e @ (self.Q * e))

    def pad_input(self, u):
        """``u~ = (u, 0, ..., 0)``."""
        ut = np.zeros(self.Btilde.shape[1])
        ut[: self.n_inputs] = u
        return ut

    def output(self, e):
        """``y~ = B~^T Q e``."""
        return self.Btilde.T @ (self.Q * np.asarray(e, dtype=float))

    def rhs(self, e, utilde):
        x = self.Q * e
        return self.J @ x - self.R @ x + self.Btilde @ utilde

    def lyapunov_matrix(self, A):
        """``L = Q A + A^T Q``."""
        Qd = sparse.diags(self.Q)
        return (Qd @ A + A.T @ Qd).tocsr()


def cell_volumes(net: Network, mesh: Mesh):
    return np.repeat(net.cross_section, mesh.n_cells) * np.repeat(mesh.dx, mesh.n_cells)


def _offending_node(net, mesh, sys: SystemMatrices, row):
    p = int(mesh.pipe_of_cell()[row])
    arc = net.pipe_arcs[p]
    node = net.tail[arc] if sys.qhat[arc] >= 0 else net.head[arc]
    return net.nodes[node].id


def build_ph(sys: SystemMatrices, mesh: Mesh, net: Network, verify=True) -> PHSystem:
    """Construct the embedding; with ``verify`` the PSD property of ``R`` is
    checked through the Lyapunov matrix and a ``StructureViolation`` names the
    upstream node of the first offending cell."""
    Q = cell_volumes(net, mesh)
    Qinv = sparse.diags(1.0 / Q)
    AQ = (sys.A @ Qinv).tocsr()
    AQt = AQ.T.tocsr()
    J = ((AQ - AQt) * 0.5).tocsr()
    R = ((AQ + AQt) * -0.5).tocsr()
    Cq = (sys.C @ Qinv).toarray()
    Bt = np.hstack([sys.B, Cq.T])
    ph = PHSystem(Q, J, R, Bt, sys.B.shape[1])
    if verify:
        rep = check_lyapunov(sys, ph)
        if not rep.dominance_ok or not rep.eig_ok:
            row = rep.worst_row
            what = (
                f"min eig of R {rep.min_eig_R:.3e}" if not rep.eig_ok
                else f"Lyapunov row {row} not dominant (margin {rep.worst_margin:.3e})"
            )
            raise StructureViolation(
                f"dissipativity lost ({what}); "
                f"check flow at node {_offending_node(net, mesh, sys, row)!r}"
            )
    return ph


@dataclass
class LyapunovReport:
    dominance_ok: bool
    eig_ok: bool
    max_eig_L: float
    min_eig_R: float
    norm_L: float
    worst_row: int
    worst_margin: float

    @property
    def agree(self):
        return self.dominance_ok == self.eig_ok

    @property
    def ok(self):
        return self.dominance_ok and self.eig_ok


def _sym_eigs(M):
    M = M.toarray() if sparse.issparse(M) else np.asarray(M)
    if M.size == 0:
        return np.zeros(0)
    return eigvalsh(0.5 * (M + M.T))


def check_lyapunov(sys: SystemMatrices, ph: PHSystem, tol=SPECTRAL_TOL) -> LyapunovReport:
    """Check ``L = QA + A^T Q <= 0`` twice: by weak diagonal dominance with
    non-positive diagonal, and by its largest eigenvalue."""
    L = ph.lyapunov_matrix(sys.A)
    diag = L.diagonal()
    absrow = np.asarray(abs(L).sum(axis=1)).ravel() - np.abs(diag)
    margin = -diag - absrow  # >= 0 means dominant row
    scale = max(np.abs(L).max() if L.nnz else 0.0, np.finfo(float).tiny)
    dom_ok = bool(np.all(diag <= tol * scale) and np.all(margin >= -tol * scale))
    worst = int(np.argmin(margin)) if len(margin) else 0
    evL = _sym_eigs(L)
    evR = _sym_eigs(ph.R)
    normL = float(np.max(np.abs(evL), initial=0.0))
    normR = float(np.max(np.abs(evR), initial=0.0))
    max_eig = float(evL.max(initial=0.0))
    min_eig_R = float(evR.min(initial=0.0))
    eig_ok = bool(max_eig <= tol * max(normL, np.finfo(float).tiny) and min_eig_R >= -tol * max(normR, np.finfo(float).tiny))
    return LyapunovReport(dom_ok, eig_ok, max_eig, min_eig_R, normL, worst, float(margin[worst]) if len(margin) else 0.0)


@dataclass
class StructureReport:
    skew: float
    symmetric: float
    min_eig_R: float
    norm_R: float
    reconstruction: float
    lyapunov_diag: float
    output_containment: float
    lyapunov: LyapunovReport

    def checks(self, tol=STRUCT_TOL, spectral=SPECTRAL_TOL):
        return {
            "J skew": self.skew <= tol,
            "R symmetric": self.symmetric <= tol,
            "R PSD": self.min_eig_R >= -spectral * max(self.norm_R, np.finfo(float).tiny),
            "(J-R)Q = A": self.reconstruction <= tol,
            "diag L = -2|q|": self.lyapunov_diag <= tol,
            "B~^T Q contains C": self.output_containment <= tol,
            "L dominance": self.lyapunov.dominance_ok,
            "dominance/eig agree": self.lyapunov.agree,
        }


def _rel(x, scale):
    return float(x) / max(float(scale), np.finfo(float).tiny)


def structure_report(sys: SystemMatrices, ph: PHSystem, net: Network, mesh: Mesh) -> StructureReport:
    """All structural identities of the embedding, as relative errors."""
    J, R, A = ph.J, ph.R, sys.A
    nJ = abs(J).max() if J.nnz else 0.0
    nR = abs(R).max() if R.nnz else 0.0
    nA = abs(A).max() if A.nnz else 0.0
    skew = _rel(abs(J + J.T).max() if J.nnz else 0.0, nJ)
    sym = _rel(abs(R - R.T).max() if R.nnz else 0.0, nR)
    recon = (J - R) @ sparse.diags(ph.Q) - A
    recon = _rel(abs(recon).max() if recon.nnz else 0.0, nA)
    evR = _sym_eigs(R)
    L = ph.lyapunov_matrix(A)
    qp = np.abs(sys.qhat[net.pipe_arcs])
    want = -2.0 * np.repeat(qp, mesh.n_cells)
    ldiag = _rel(np.abs(L.diagonal() - want).max(initial=0.0), np.abs(want).max(initial=0.0))
    cont = ph.Btilde.T * ph.Q  # rows of B~^T Q
    c = sys.C.shape[0]
    contain = float(np.abs(cont[ph.n_inputs : ph.n_inputs + c] - sys.C.toarray()).max(initial=0.0))
    return StructureReport(
        skew, sym, float(evR.min(initial=0.0)), float(np.abs(evR).max(initial=0.0)),
        recon, ldiag, contain, check_lyapunov(sys, ph),
    )


# -- dissipation audit -------------------------------------------------------


@dataclass
class DissipationReport:
    margins: np.ndarray  # relative margin per step, >= -tol means satisfied
    worst_step: int
    worst_margin: float
    tol: float

    @property
    def ok(self):
        return bool(np.all(self.margins >= -self.tol))


def dissipation_margin(ph: PHSystem, e0, e1, utilde, dt):
    """Absolute margin ``2 dt y~^T u~ - (H(e1) - H(e0))`` with ``y~`` at the
    midpoint state."""
    em = 0.5 * (np.asarray(e0) + np.asarray(e1))
    supply = 2.0 * dt * float(ph.output(em) @ utilde)
    return supply - (ph.hamiltonian(e1) - ph.hamiltonian(e0))


def dissipation_audit(steps, tol=1e-9) -> DissipationReport:
    """Audit ``H(e_{k+1}) - H(e_k) <= 2 dt y~^T u~`` over a trajectory.

    ``steps`` yields ``(e_k, e_{k+1}, utilde, dt, ph)``.  Margins are taken
    relative to ``max(H(e_k), H(e_{k+1}))``.
    """
    margins = []
    for e0, e1, ut, dt, ph in steps:
        m = dissipation_margin(ph, e0, e1, ut, dt)
        scale = max(ph.hamiltonian(e0), ph.hamiltonian(e1), np.finfo(float).tiny)
        margins.append(m / scale)
    margins = np.asarray(margins)
    worst = int(np.argmin(margins)) if len(margins) else 0
    return DissipationReport(margins, worst, float(margins[worst]) if len(margins) else 0.0, tol)
