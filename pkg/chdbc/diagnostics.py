"""
Discrete space-time norms, experimental orders of convergence, error tables
and dual norms built from discrete Neumann problems.
"""

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import spsolve


class MeanNotZeroError(Exception):
    """
    Custom chdbc Exception.
    """
    pass


@dataclass
class FieldSeries:
    """
    Nodal vectors f_h^i at the time steps i = 1..N of a run.
    """
    tau: float
    snapshots: np.ndarray
    location: str = "bulk"

    def __post_init__(self):
        self.snapshots = np.atleast_2d(np.asarray(self.snapshots, dtype=float))
        if self.location not in ("bulk", "surface"):
            raise ValueError("location must be 'bulk' or 'surface'")

    def __len__(self):
        return 0 if self.snapshots.size == 0 else len(self.snapshots)

    def __sub__(self, other):
        check_same_grid(self, other)
        return FieldSeries(self.tau, self.snapshots - other.snapshots, self.location)

    def __mul__(self, c):
        return FieldSeries(self.tau, c * self.snapshots, self.location)

    __rmul__ = __mul__


def check_same_grid(a, b):
    if a.tau != b.tau or a.snapshots.shape != b.snapshots.shape:
        raise ValueError("series on different grids: tau {} vs {}, shape {} vs {}".format(
            a.tau, b.tau, a.snapshots.shape, b.snapshots.shape))


def _lumped_squares(series, mass):
    if len(series) == 0:
        raise ValueError("empty series")
    if series.snapshots.shape[1] != len(mass):
        raise ValueError("series of dimension {} with mass of dimension {}".format(
            series.snapshots.shape[1], len(mass)))
    return series.snapshots**2 @ mass.diagonal


def lp_l2_norm(series, p, mass):
    """
    Discrete L^p(0,T; L^2(X)) norm,
    tau^(1/p) [sum_i (f_i^T M f_i)^(p/2)]^(1/p).

    Args:
        series (FieldSeries): nodal vectors at steps 1..N
        p (int): 2 or 4
        mass (assembly.LumpedMass): lumped mass of X

    Returns:
        float
    """
    if p not in (2, 4):
        raise ValueError("p must be 2 or 4, got {}".format(p))
    s = np.maximum(_lumped_squares(series, mass), 0)
    return float(series.tau**(1 / p) * np.sum(s**(p / 2))**(1 / p))


def l2_h1_norm(series, mass, stiffness):
    """
    Discrete L^2(0,T; H^1(X)) norm, with the lumped L^2 part plus the
    stiffness seminorm: sqrt(tau sum_i [f_i^T M f_i + f_i^T A f_i]).
    """
    l2 = _lumped_squares(series, mass)
    f = series.snapshots
    grad = np.einsum("ij,ij->i", f, (stiffness @ f.T).T)
    return float(np.sqrt(series.tau * np.sum(np.maximum(l2 + grad, 0))))


def eoc(e1, K1, e2, K2):
    """
    Experimental order of convergence log(e1 / e2) / log(K1 / K2).

    Args:
        e1, e2 (floats): positive errors at K1 and K2
        K1, K2 (floats): penalty parameters with K1 > K2 > 0
    """
    if not (e1 > 0 and e2 > 0):
        raise ValueError("errors must be positive, got {} and {}".format(e1, e2))
    if not (K1 > K2 > 0):
        raise ValueError("need K1 > K2 > 0, got {} and {}".format(K1, K2))
    return float(np.log(e1 / e2) / np.log(K1 / K2))


@dataclass
class ErrorTableRow:
    K: float
    err_L2H1_bulk: float
    err_L4L2_bulk: float
    err_L2SigmaT: float
    err_L2H1_surf: float
    err_L4L2_surf: float
    eoc_1: float = None
    eoc_2: float = None
    eoc_3: float = None
    eoc_4: float = None
    eoc_5: float = None

    ERRORS = ("err_L2H1_bulk", "err_L4L2_bulk", "err_L2SigmaT",
              "err_L2H1_surf", "err_L4L2_surf")

    def errors(self):
        return [getattr(self, e) for e in self.ERRORS]

    def eocs(self):
        return [self.eoc_1, self.eoc_2, self.eoc_3, self.eoc_4, self.eoc_5]


def eoc_or_none(e1, K1, e2, K2):
    if e1 > 0 and e2 > 0:
        return eoc(e1, K1, e2, K2)
    return None


def error_table(reference, robin_runs, params, ops):
    """
    Errors between Robin runs and a reference run, one row per penalty K.

    The bulk columns measure u^K - u, the surface columns v^K - v, and the
    L2(Sigma_T) column the change of the transmission defect
    (u^K|Gamma - H(v^K)) - (u|Gamma - H(v)). For a limit reference v is
    reconstructed as (u|Gamma - beta) / alpha, its defect is zero and the
    column is the plain defect u^K - (alpha v^K + beta).

    Args:
        reference (dict): {"U": FieldSeries} for a limit run, plus
            {"V": FieldSeries} for a Robin reference run
        robin_runs (list): dicts {"K": float, "U": FieldSeries,
            "V": FieldSeries}, ordered by decreasing K
        params (model.ModelParams): Robin parameters (transmission, alpha,
            beta)
        ops (assembly.Operators): assembled operators

    Returns:
        list of ErrorTableRow
    """
    U = reference["U"]
    if reference.get("V") is not None:
        V = reference["V"]
    else:
        if params.alpha == 0:
            raise ValueError("alpha must be nonzero")
        V = FieldSeries(U.tau, (ops.trace(U.snapshots) - params.beta) / params.alpha,
                        "surface")
    H = params.transmission
    ref_defect = ops.trace(U.snapshots) - H.value(V.snapshots)

    rows = []
    for run in robin_runs:
        UK, VK = run["U"], run["V"]
        check_same_grid(UK, U)
        check_same_grid(VK, V)
        du = UK - U
        dv = VK - V
        defect = ops.trace(UK.snapshots) - H.value(VK.snapshots) - ref_defect
        rows.append(ErrorTableRow(
            K=run["K"],
            err_L2H1_bulk=l2_h1_norm(du, ops.M, ops.A),
            err_L4L2_bulk=lp_l2_norm(du, 4, ops.M),
            err_L2SigmaT=lp_l2_norm(FieldSeries(U.tau, defect, "surface"), 2, ops.M_gamma),
            err_L2H1_surf=l2_h1_norm(dv, ops.M_gamma, ops.A_gamma),
            err_L4L2_surf=lp_l2_norm(dv, 4, ops.M_gamma)))

    for prev, row in zip(rows[:-1], rows[1:]):
        if not prev.K > row.K:
            raise ValueError("K values must be strictly decreasing")
        for i, (e1, e2) in enumerate(zip(prev.errors(), row.errors())):
            setattr(row, "eoc_{}".format(i + 1), eoc_or_none(e1, prev.K, e2, row.K))
    return rows


def neumann_dual_norm(phi, mass, stiffness, tol=1e-10):
    """
    Dual norm of a mean-free nodal vector through the discrete Neumann
    problem A theta = M phi, sum_i M_ii theta_i = 0.

    The mean constraint is imposed with one Lagrange multiplier row.

    Args:
        phi (array): nodal vector with zero lumped mean
        mass (assembly.LumpedMass): lumped mass
        stiffness (sparse matrix): stiffness matrix
        tol (float): relative tolerance on the lumped mean of phi

    Returns:
        dict with keys "theta" and "dual_norm" (= sqrt(theta^T A theta))

    Raises:
        MeanNotZeroError: if the lumped mean of phi is not zero
    """
    phi = np.asarray(phi, dtype=float)
    m = mass.diagonal
    if phi.shape != m.shape:
        raise ValueError("vector of shape {} with mass of dimension {}".format(
            phi.shape, len(m)))
    mean = np.sum(m * phi)
    if abs(mean) > tol * np.linalg.norm(phi):
        raise MeanNotZeroError("lumped mean {:.3e} is not zero".format(mean))
    if not np.any(phi):
        return {"theta": np.zeros_like(phi), "dual_norm": 0.0}

    n = len(m)
    col = sp.csr_matrix(m.reshape(n, 1))
    B = sp.bmat([[stiffness, col], [col.T, None]], format="csc")
    rhs = np.append(m * phi, 0.0)
    theta = spsolve(B, rhs)[:n]
    return {"theta": theta,
            "dual_norm": float(np.sqrt(max(theta @ (stiffness @ theta), 0)))}


def h0dual_norm(u_err, v_err, ops):
    """
    Norm of a pair (u, v) of mean-free bulk and surface vectors in the dual of
    H^1 with zero means, sqrt(|u|_{Omega,*}^2 + |v|_{Gamma,*}^2).
    """
    bulk = neumann_dual_norm(u_err, ops.M, ops.A)["dual_norm"]
    surf = neumann_dual_norm(v_err, ops.M_gamma, ops.A_gamma)["dual_norm"]
    return float(np.hypot(bulk, surf))


def linf_h0dual_error(u_err, v_err, ops, mean_tol=1e-8):
    """
    Maximum over the time steps of h0dual_norm of the error pair.

    Both runs conserve their masses, so the error means vanish up to the
    Newton tolerance. That residual drift is projected out before the dual
    norms are taken.

    Args:
        u_err (FieldSeries): bulk error series
        v_err (FieldSeries): surface error series
        ops (assembly.Operators): assembled operators
        mean_tol (float): largest accepted drift of the average of an error
            snapshot

    Raises:
        MeanNotZeroError: if the average of an error snapshot exceeds mean_tol,
            as happens when the two runs start from data of different masses
    """
    if u_err.tau != v_err.tau or len(u_err) != len(v_err):
        raise ValueError("bulk and surface series on different time grids")
    if len(u_err) == 0:
        raise ValueError("empty series")
    m, mg = ops.M.diagonal, ops.M_gamma.diagonal
    out = 0.0
    for k, (u, v) in enumerate(zip(u_err.snapshots, v_err.snapshots)):
        u_mean = np.sum(m * u) / np.sum(m)
        v_mean = np.sum(mg * v) / np.sum(mg)
        if max(abs(u_mean), abs(v_mean)) > mean_tol:
            raise MeanNotZeroError(
                "error averages {:.3e} (bulk) and {:.3e} (surface) at step {} "
                "exceed {:g}".format(u_mean, v_mean, k, mean_tol))
        out = max(out, h0dual_norm(u - u_mean, v - v_mean, ops))
    return out
