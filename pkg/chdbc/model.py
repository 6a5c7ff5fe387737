"""
Potentials, transmission functions, model parameters, nonlinearity vectors and
discrete energies of the Robin and limit systems.
"""

import numpy as np


class InverseOutOfRangeError(Exception):
    """
    Custom chdbc Exception.
    """
    pass


class ScalarFunction:
    """
    Real function together with its first two derivatives.
    """
    def __init__(self, label, value, deriv1, deriv2):
        self.label = label
        self.value = value
        self.deriv1 = deriv1
        self.deriv2 = deriv2

    def __call__(self, s):
        return self.value(s)

    def __repr__(self):
        return "{}({!r})".format(self.__class__.__name__, self.label)


class Transmission(ScalarFunction):
    """
    Transmission function H of the relation u = H(v) on the boundary, with a
    closed-form inverse on an interval I where H is a bijection.
    """
    def __init__(self, label, value, deriv1, deriv2, inverse, interval, value_range):
        """
        Args:
            label (str): builtin name
            value, deriv1, deriv2 (callables): H, H' and H''
            inverse (callable): inverse of H restricted to `interval`
            interval (tuple): bounds of I
            value_range (tuple): bounds of H(I)
        """
        super().__init__(label, value, deriv1, deriv2)
        self._inverse = inverse
        self.interval = interval
        self.value_range = value_range

    def inverse_on_I(self, u, tol=1e-12):
        """
        Evaluate the inverse of H restricted to I.

        Args:
            u (float or array): values in the range of H on I
            tol (float): values outside the range by less than tol are
                clipped onto it

        Returns:
            float or array of points of I

        Raises:
            InverseOutOfRangeError: if a value leaves the range of H on I
        """
        u = np.asarray(u, dtype=float)
        lo, hi = self.value_range
        if np.any(u < lo - tol) or np.any(u > hi + tol):
            bad = u[(u < lo - tol) | (u > hi + tol)]
            raise InverseOutOfRangeError(
                "{} is not invertible at {} (range is [{}, {}])".format(
                    self.label, bad.ravel()[0], lo, hi))
        return self._inverse(np.clip(u, lo, hi))


def double_well():
    """
    F(s) = (s^2 - 1)^2 / 4, with minima at -1 and 1.
    """
    return ScalarFunction("double_well",
                          lambda s: 0.25 * (s**2 - 1)**2,
                          lambda s: s**3 - s,
                          lambda s: 3 * s**2 - 1)


def affine(alpha, beta):
    """
    H(s) = alpha s + beta.
    """
    if alpha == 0:
        raise ValueError("the affine transmission needs alpha != 0")
    return Transmission("affine",
                        lambda s: alpha * s + beta,
                        lambda s: alpha + 0 * s,
                        lambda s: 0 * s,
                        lambda u: (u - beta) / alpha,
                        (-np.inf, np.inf),
                        (-np.inf, np.inf))


def sine():
    """
    H(s) = sin(s), inverted on [-pi/2, pi/2].
    """
    return Transmission("sin",
                        np.sin,
                        np.cos,
                        lambda s: -np.sin(s),
                        np.arcsin,
                        (-np.pi / 2, np.pi / 2),
                        (-1.0, 1.0))


def cos3p2():
    """
    H(s) = 3 cos(s) + 2, inverted on [arccos(-1/3), pi] where it maps onto
    [-1, 1].
    """
    return Transmission("cos3p2",
                        lambda s: 3 * np.cos(s) + 2,
                        lambda s: -3 * np.sin(s),
                        lambda s: -3 * np.cos(s),
                        lambda u: np.arccos((u - 2) / 3),
                        (np.arccos(-1 / 3), np.pi),
                        (-1.0, 1.0))


POTENTIALS = {"double_well": double_well}
TRANSMISSIONS = ("affine", "sin", "cos3p2")


def potential_from_label(label):
    if label not in POTENTIALS:
        raise ValueError("unknown potential '{}'. Should be one of {}".format(
            label, sorted(POTENTIALS)))
    return POTENTIALS[label]()


def transmission_from_label(label, alpha=1.0, beta=0.0):
    if label == "affine":
        return affine(alpha, beta)
    elif label == "sin":
        return sine()
    elif label == "cos3p2":
        return cos3p2()
    raise ValueError("unknown transmission '{}'. Should be one of {}".format(
        label, list(TRANSMISSIONS)))


class ModelParams:
    def __init__(self, model="robin", eps=1.0, delta=1.0, kappa=1.0, tau=1e-5,
                 K=None, alpha=1.0, beta=0.0, potential_F="double_well",
                 potential_G="double_well", transmission="affine"):
        """
        Args:
            model (str): either "robin" or "limit"
            eps, delta (floats): interface parameters, > 0
            kappa (float): surface diffusion coefficient, >= 0
            tau (float): time step, > 0
            K (float): Robin penalty parameter, > 0 (robin model only)
            alpha, beta (floats): coefficients of the affine relation
                u = alpha v + beta (limit model and affine transmission)
            potential_F, potential_G (str or ScalarFunction): bulk and
                surface potentials
            transmission (str or Transmission): transmission function H
                (robin model only)
        """
        if model not in ("robin", "limit"):
            raise ValueError("model '{}' not supported. "
                             "Should be {{'robin','limit'}}".format(model))
        if not eps > 0 or not delta > 0:
            raise ValueError("eps and delta must be positive")
        if not kappa >= 0:
            raise ValueError("kappa must be nonnegative")
        if not tau > 0:
            raise ValueError("tau must be positive")
        if model == "robin" and (K is None or not K > 0):
            raise ValueError("the Robin model needs a penalty K > 0, got {}".format(K))
        if model == "limit" and alpha == 0:
            raise ValueError("the limit model needs alpha != 0")

        self.model = model
        self.eps = float(eps)
        self.delta = float(delta)
        self.kappa = float(kappa)
        self.tau = float(tau)
        self.K = None if K is None else float(K)
        self.alpha = float(alpha)
        self.beta = float(beta)

        if isinstance(potential_F, str):
            potential_F = potential_from_label(potential_F)
        if isinstance(potential_G, str):
            potential_G = potential_from_label(potential_G)
        for name, f in (("potential_F", potential_F), ("potential_G", potential_G)):
            if not isinstance(f, ScalarFunction):
                raise ValueError("{} must be a potential label or a ScalarFunction, "
                                 "got {!r}".format(name, f))
        self.potential_F = potential_F
        self.potential_G = potential_G

        self.transmission = None
        if model == "robin":
            if isinstance(transmission, str):
                transmission = transmission_from_label(transmission, self.alpha,
                                                       self.beta)
            if not isinstance(transmission, Transmission):
                raise ValueError("transmission must be a label or a Transmission, "
                                 "got {!r}".format(transmission))
            self.transmission = transmission

    def with_K(self, K):
        """
        Copy of these Robin parameters with another penalty K.
        """
        return ModelParams("robin", self.eps, self.delta, self.kappa, self.tau, K,
                           self.alpha, self.beta, self.potential_F,
                           self.potential_G, self.transmission)

    def with_tau(self, tau):
        """
        Copy of these parameters with another time step.
        """
        return ModelParams(self.model, self.eps, self.delta, self.kappa, tau, self.K,
                           self.alpha, self.beta, self.potential_F,
                           self.potential_G, self.transmission)

    def __repr__(self):
        return ("ModelParams(model={}, eps={}, delta={}, kappa={}, tau={}, K={}, "
                "alpha={}, beta={}, F={}, G={}, H={})").format(
                    self.model, self.eps, self.delta, self.kappa, self.tau,
                    self.K, self.alpha, self.beta, self.potential_F.label,
                    self.potential_G.label,
                    self.transmission.label if self.transmission else None)


def _check_sizes(ops, U=None, V=None):
    if U is not None and np.shape(U) != (ops.n_nodes,):
        raise ValueError("bulk vector of shape {}, expected ({},)".format(
            np.shape(U), ops.n_nodes))
    if V is not None and np.shape(V) != (ops.n_bnd,):
        raise ValueError("surface vector of shape {}, expected ({},)".format(
            np.shape(V), ops.n_bnd))


def eval_nonlinearities(U, V, params, ops):
    """
    Vectors of nonlinearities of the Robin system.

        F(U)_i   = M_ii F'(U_i)
        G(V)_i   = Mg_ii G'(V_i)
        H(V)_i   = Mg_ii H(V_i)
        J(U,V)_i = Mg_ii H'(V_i) (H(V_i) - U_i|Gamma)

    Args:
        U (array): bulk nodal vector
        V (array): surface nodal vector, in boundary indices
        params (ModelParams): Robin model parameters
        ops (assembly.Operators): assembled operators

    Returns:
        dict with keys "Fvec", "Gvec", "Hvec" and "Jvec". The first one is a
        bulk vector, the others are surface vectors.
    """
    _check_sizes(ops, U, V)
    H = params.transmission
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    HV = H.value(V)
    return {"Fvec": m * params.potential_F.deriv1(U),
            "Gvec": mg * params.potential_G.deriv1(V),
            "Hvec": mg * HV,
            "Jvec": mg * H.deriv1(V) * (HV - ops.trace(U))}


def eval_limit_nonlinearity(U, params, ops):
    """
    Surface nonlinearity of the limit system,
    Gtilde(U)_i = Mg_ii G'((U_i|Gamma - beta) / alpha).

    Returns:
        surface vector, in boundary indices
    """
    if params.alpha == 0:
        raise ValueError("alpha must be nonzero")
    _check_sizes(ops, U)
    s = (ops.trace(U) - params.beta) / params.alpha
    return ops.M_gamma.diagonal * params.potential_G.deriv1(s)


def energy_robin(U, V, params, ops):
    """
    Discrete energy of the Robin system.

    Gradient terms are exact quadratic forms of the stiffness matrices,
    potential and penalty terms use lumped quadrature.

    Returns:
        dict with keys "bulk_grad", "bulk_pot", "surf_grad", "surf_pot",
        "penalty" and "total"
    """
    _check_sizes(ops, U, V)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    H = params.transmission
    e = {}
    e["bulk_grad"] = 0.5 * params.eps * float(U @ (ops.A @ U))
    e["bulk_pot"] = float(np.sum(m * params.potential_F(U))) / params.eps
    e["surf_grad"] = 0.5 * params.delta * params.kappa * float(V @ (ops.A_gamma @ V))
    e["surf_pot"] = float(np.sum(mg * params.potential_G(V))) / params.delta
    e["penalty"] = float(np.sum(mg * (H.value(V) - ops.trace(U))**2)) / (2 * params.K)
    e["total"] = sum(e.values())
    return e


def energy_limit(U, params, ops):
    """
    Discrete energy of the limit system, where the surface phase is
    v = (u|Gamma - beta) / alpha.

    Returns:
        dict with the same keys as energy_robin, the penalty part being zero
    """
    if params.alpha == 0:
        raise ValueError("alpha must be nonzero")
    _check_sizes(ops, U)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    a, b = params.alpha, params.beta
    W = ops.trace(U)
    e = {}
    e["bulk_grad"] = 0.5 * params.eps * float(U @ (ops.A @ U))
    e["bulk_pot"] = float(np.sum(m * params.potential_F(U))) / params.eps
    e["surf_grad"] = 0.5 * params.delta * params.kappa / a**2 * float(W @ (ops.A_gamma @ W))
    e["surf_pot"] = float(np.sum(mg * params.potential_G((W - b) / a))) / params.delta
    e["penalty"] = 0.0
    e["total"] = sum(e.values())
    return e


def bulk_mass(U, ops):
    """
    Lumped bulk mass sum_i M_ii U_i.
    """
    return float(np.sum(ops.M.diagonal * U))


def surface_mass(V, ops):
    """
    Lumped surface mass sum_i Mg_ii V_i.
    """
    return float(np.sum(ops.M_gamma.diagonal * V))
