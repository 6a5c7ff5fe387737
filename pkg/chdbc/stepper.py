"""
Implicit time steps of the Robin and limit systems, solved by a damped Newton
method with sparse direct factorization.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from chdbc.model import eval_limit_nonlinearity
from chdbc.model import eval_nonlinearities


logger = logging.getLogger(__name__)


class NewtonError(Exception):
    """
    Custom chdbc Exception. Base class of the Newton solver failures.
    """
    def __init__(self, message, step_index=None):
        super().__init__(message)
        self.step_index = step_index


class SingularJacobianError(NewtonError):
    """
    Raised when the Jacobian cannot be factorized.
    """
    pass


class NoConvergenceError(NewtonError):
    """
    Raised when Newton exhausts its iterations or stalls above its tolerance.
    """
    pass


class LineSearchStalledError(NewtonError):
    """
    Raised when no step halving decreases the residual.
    """
    pass


@dataclass
class NewtonConfig:
    """
    Tolerances of the Newton solver and of the step fallbacks.

    Newton stops when the max-norm of the residual is at most
    max(abs_tol, rel_tol * |r0|). An update below step_tol * (1 + |x|) stops
    it too, and the last iterate is accepted only if its residual is at most
    max(abs_tol, rel_tol * |r0|, stall_tol). stall_tol bounds the rounding
    floor of the 1/K-scaled blocks for tiny K.

    A Robin step that fails with K below continuation_start is solved again
    for the penalties continuation_start, continuation_start / continuation_factor,
    ... down to K, each solve starting from the previous solution. A step that
    still fails is split into two half steps, recursively, at most max_splits
    times.
    """
    abs_tol: float = 1e-11
    rel_tol: float = 1e-12
    step_tol: float = 1e-13
    stall_tol: float = 1e-9
    max_iters: int = 50
    max_halvings: int = 10
    continuation_start: float = 1e-1
    continuation_factor: float = 10.0
    max_splits: int = 4

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0 and self.step_tol > 0
                and self.stall_tol > 0):
            raise ValueError("Newton tolerances must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be at least 1")
        if self.max_halvings < 0:
            raise ValueError("max_halvings must be nonnegative")
        if not self.continuation_start > 0:
            raise ValueError("continuation_start must be positive")
        if not self.continuation_factor > 1:
            raise ValueError("continuation_factor must be greater than 1")
        if self.max_splits < 0:
            raise ValueError("max_splits must be nonnegative")


@dataclass
class RobinState:
    U: np.ndarray
    V: np.ndarray
    Xi: np.ndarray
    Phi: np.ndarray
    step_index: int = 0
    time: float = 0.0
    newton_iters: int = 0
    residual_inf: float = 0.0

    def pack(self):
        return np.concatenate((self.U, self.V, self.Xi, self.Phi))


@dataclass
class LimitState:
    U: np.ndarray
    Xi: np.ndarray
    Phi: np.ndarray
    step_index: int = 0
    time: float = 0.0
    newton_iters: int = 0
    residual_inf: float = 0.0

    def pack(self):
        return np.concatenate((self.U, self.Xi, self.Phi))


def initial_robin_state(U0, V0):
    """
    Robin state at step 0, with zero chemical potentials.
    """
    U0 = np.asarray(U0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    return RobinState(U0, V0, np.zeros_like(U0), np.zeros_like(V0))


def initial_limit_state(U0, n_bnd):
    """
    Limit state at step 0, with zero chemical potentials.
    """
    U0 = np.asarray(U0, dtype=float)
    return LimitState(U0, np.zeros_like(U0), np.zeros(n_bnd))


def _unpack_robin(x, ops):
    n, nb = ops.n_nodes, ops.n_bnd
    if x.shape != (2 * n + 2 * nb,):
        raise ValueError("Robin unknown of shape {}, expected ({},)".format(
            x.shape, 2 * n + 2 * nb))
    return x[:n], x[n:n + nb], x[n + nb:2 * n + nb], x[2 * n + nb:]


def _unpack_limit(x, ops):
    n, nb = ops.n_nodes, ops.n_bnd
    if x.shape != (2 * n + nb,):
        raise ValueError("limit unknown of shape {}, expected ({},)".format(
            x.shape, 2 * n + nb))
    return x[:n], x[n:2 * n], x[2 * n:]


def _check_robin_params(params):
    if params.K is None or not params.K > 0:
        raise ValueError("the Robin system needs K > 0, got {}".format(params.K))


def _check_limit_params(params):
    if params.alpha == 0:
        raise ValueError("the limit system needs alpha != 0")


def robin_residual(state_next, state_prev, params, ops):
    """
    Residual of the nonlinear system of one Robin time step.

    The four stacked blocks are
        (i)   M U + tau A Xi - M U^k
        (ii)  Mg V + tau Ag Phi - Mg V^k
        (iii) eps A U + F(U) / eps - M Xi - H(V) / K + Mg U|Gamma / K
        (iv)  kappa delta Ag V + G(V) / delta - Mg Phi + J(U, V) / K
    where surface terms of (iii) are scattered into the boundary rows.

    Args:
        state_next (RobinState or array): candidate for step k+1, either as a
            state or as the packed vector (U, V, Xi, Phi)
        state_prev (RobinState): state at step k
        params (model.ModelParams): Robin model parameters
        ops (assembly.Operators): assembled operators

    Returns:
        array of length 2 n_nodes + 2 n_bnd
    """
    _check_robin_params(params)
    x = state_next.pack() if isinstance(state_next, RobinState) else np.asarray(state_next)
    U, V, Xi, Phi = _unpack_robin(x, ops)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    K = params.K

    nl = eval_nonlinearities(U, V, params, ops)
    r1 = m * (U - state_prev.U) + params.tau * (ops.A @ Xi)
    r2 = mg * (V - state_prev.V) + params.tau * (ops.A_gamma @ Phi)
    r3 = (params.eps * (ops.A @ U) + nl["Fvec"] / params.eps - m * Xi
          + ops.lift(mg * ops.trace(U) - nl["Hvec"]) / K)
    r4 = (params.kappa * params.delta * (ops.A_gamma @ V) + nl["Gvec"] / params.delta
          - mg * Phi + nl["Jvec"] / K)
    return np.concatenate((r1, r2, r3, r4))


def robin_jacobian(state_next, params, ops):
    """
    Exact Jacobian of robin_residual with respect to (U, V, Xi, Phi).

    Returns:
        scipy.sparse.csc_matrix of shape (2 n_nodes + 2 n_bnd,) * 2
    """
    _check_robin_params(params)
    x = state_next.pack() if isinstance(state_next, RobinState) else np.asarray(state_next)
    U, V, Xi, Phi = _unpack_robin(x, ops)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    K = params.K
    H = params.transmission
    P = ops.P

    dH = H.deriv1(V)
    coupling = sp.diags(mg * dH) @ P / K
    penalty = mg * (H.deriv2(V) * (H.value(V) - ops.trace(U)) + dH**2) / K

    J_uu = (params.eps * ops.A
            + sp.diags(m * params.potential_F.deriv2(U) / params.eps)
            + ops.lifted(ops.M_gamma.matrix) / K)
    J_vv = (params.kappa * params.delta * ops.A_gamma
            + sp.diags(mg * params.potential_G.deriv2(V) / params.delta + penalty))

    J = sp.bmat([[ops.M.matrix, None, params.tau * ops.A, None],
                 [None, ops.M_gamma.matrix, None, params.tau * ops.A_gamma],
                 [J_uu, -coupling.T, -ops.M.matrix, None],
                 [-coupling, J_vv, None, -ops.M_gamma.matrix]], format="csc")
    return J


def limit_residual(state_next, state_prev, params, ops):
    """
    Residual of the nonlinear system of one limit time step.

    The three stacked blocks are
        (i)   M U + tau A Xi - M U^k
        (ii)  Mg U|Gamma + tau Ag Phi - Mg U^k|Gamma
        (iii) (eps A + kappa delta / alpha^2 Ag) U + F(U) / eps - M Xi
              + Gtilde(U) / (alpha delta) - Mg Phi / alpha^2
    where surface terms of (iii) are scattered into the boundary rows.

    Args:
        state_next (LimitState or array): candidate for step k+1, either as a
            state or as the packed vector (U, Xi, Phi)
        state_prev (LimitState): state at step k
        params (model.ModelParams): limit model parameters
        ops (assembly.Operators): assembled operators

    Returns:
        array of length 2 n_nodes + n_bnd
    """
    _check_limit_params(params)
    x = state_next.pack() if isinstance(state_next, LimitState) else np.asarray(state_next)
    U, Xi, Phi = _unpack_limit(x, ops)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    a = params.alpha
    W = ops.trace(U)

    Fvec = m * params.potential_F.deriv1(U)
    Gtilde = eval_limit_nonlinearity(U, params, ops)
    surf = (params.kappa * params.delta / a**2 * (ops.A_gamma @ W)
            + Gtilde / (a * params.delta) - mg * Phi / a**2)

    r1 = m * (U - state_prev.U) + params.tau * (ops.A @ Xi)
    r2 = mg * (W - ops.trace(state_prev.U)) + params.tau * (ops.A_gamma @ Phi)
    r3 = params.eps * (ops.A @ U) + Fvec / params.eps - m * Xi + ops.lift(surf)
    return np.concatenate((r1, r2, r3))


def limit_jacobian(state_next, params, ops):
    """
    Exact Jacobian of limit_residual with respect to (U, Xi, Phi).

    Returns:
        scipy.sparse.csc_matrix of shape (2 n_nodes + n_bnd,) * 2
    """
    _check_limit_params(params)
    x = state_next.pack() if isinstance(state_next, LimitState) else np.asarray(state_next)
    U, Xi, Phi = _unpack_limit(x, ops)
    m = ops.M.diagonal
    mg = ops.M_gamma.diagonal
    a, b = params.alpha, params.beta
    s = (ops.trace(U) - b) / a

    surf_uu = (params.kappa * params.delta / a**2 * ops.A_gamma
               + sp.diags(mg * params.potential_G.deriv2(s) / (a**2 * params.delta)))
    J_uu = (params.eps * ops.A
            + sp.diags(m * params.potential_F.deriv2(U) / params.eps)
            + ops.lifted(surf_uu))
    MgP = (ops.M_gamma.matrix @ ops.P).tocsr()

    J = sp.bmat([[ops.M.matrix, params.tau * ops.A, None],
                 [MgP, None, params.tau * ops.A_gamma],
                 [J_uu, -ops.M.matrix, -MgP.T / a**2]], format="csc")
    return J


def newton_solve(residual_fn, jacobian_fn, initial_guess, config=None):
    """
    Damped Newton method for residual_fn(x) = 0.

    Each iteration solves J dx = -r with a sparse LU factorization. When the
    full step does not decrease the max-norm of the residual, the step is
    halved up to config.max_halvings times.

    Args:
        residual_fn (callable): x -> residual vector
        jacobian_fn (callable): x -> sparse Jacobian matrix
        initial_guess (array): starting point
        config (NewtonConfig): tolerances, defaults to NewtonConfig()

    Returns:
        dict with keys "solution", "iterations", "final_residual_norm" and
        "history" (max-norm of the residual at every iterate)

    Raises:
        SingularJacobianError: if the factorization fails
        NoConvergenceError: if config.max_iters iterations are exhausted, or
            if the update stalls at a residual above config.stall_tol
        LineSearchStalledError: if no halving decreases the residual
    """
    if config is None:
        config = NewtonConfig()
    x = np.array(initial_guess, dtype=float)
    r = np.asarray(residual_fn(x), dtype=float)
    norm = np.max(np.abs(r))
    target = max(config.abs_tol, config.rel_tol * norm)
    history = [norm]

    n = 0
    while norm > target:
        if n >= config.max_iters:
            raise NoConvergenceError(
                "Newton did not converge in {} iterations, residual {:.3e}".format(
                    n, norm))

        try:
            lu = splu(sp.csc_matrix(jacobian_fn(x)))
        except RuntimeError as e:
            raise SingularJacobianError("singular Jacobian: {}".format(e)) from e
        dx = lu.solve(-r)
        if not np.all(np.isfinite(dx)):
            raise SingularJacobianError("Newton update is not finite")
        n += 1

        # update below the rounding floor of the residual
        if np.max(np.abs(dx)) <= config.step_tol * (1 + np.max(np.abs(x))):
            x = x + dx
            r = np.asarray(residual_fn(x), dtype=float)
            norm = np.max(np.abs(r))
            history.append(norm)
            logger.debug("newton %d: |dx| below step_tol, residual %.3e", n, norm)
            if norm > max(target, config.stall_tol):
                raise NoConvergenceError(
                    "Newton update stalled after {} iterations, residual {:.3e}".format(
                        n, norm))
            break

        step = 1.0
        for k in range(config.max_halvings + 1):
            x_new = x + step * dx
            r_new = np.asarray(residual_fn(x_new), dtype=float)
            norm_new = np.max(np.abs(r_new))
            if norm_new < norm:
                break
            logger.debug("newton %d: halving step (residual %.3e >= %.3e)", n,
                         norm_new, norm)
            step /= 2
        else:
            raise LineSearchStalledError(
                "no decrease after {} step halvings, residual {:.3e}".format(
                    config.max_halvings, norm))

        x, r, norm = x_new, r_new, norm_new
        history.append(norm)
        logger.debug("newton %d: residual %.3e (step %g)", n, norm, step)

    return {"solution": x,
            "iterations": n,
            "final_residual_norm": norm,
            "history": history}


def _annotated(e, step_index):
    return type(e)("step {}: {}".format(step_index, e), step_index=step_index)


def continuation_levels(K, start, factor):
    """
    Decreasing penalties start, start / factor, ... ending with K.
    """
    levels = []
    level = start
    while level > K * (1 + 1e-9):
        levels.append(level)
        level /= factor
    return levels + [K]


def _robin_newton(x_prev, guess, params, ops, config):
    prev = RobinState(*_unpack_robin(x_prev, ops))
    return newton_solve(lambda x: robin_residual(x, prev, params, ops),
                        lambda x: robin_jacobian(x, params, ops),
                        guess, config)


def _robin_attempt(x_prev, params, ops, config):
    """
    Solve one Robin step, falling back to a continuation in K.

    Returns:
        solution (array), Newton iterations (int), final residual (float)
    """
    try:
        out = _robin_newton(x_prev, x_prev, params, ops, config)
        return out["solution"], out["iterations"], out["final_residual_norm"]
    except NewtonError as e:
        if not params.K < config.continuation_start:
            raise
        logger.info("Robin step failed for K = %g (%s), continuing from K = %g",
                    params.K, e, config.continuation_start)

    x, n = x_prev, 0
    for K in continuation_levels(params.K, config.continuation_start,
                                 config.continuation_factor):
        out = _robin_newton(x_prev, x, params.with_K(K), ops, config)
        x, n = out["solution"], n + out["iterations"]
        logger.debug("continuation: K = %g solved in %d iterations", K, out["iterations"])
    return x, n, out["final_residual_norm"]


def _limit_attempt(x_prev, params, ops, config):
    prev = LimitState(*_unpack_limit(x_prev, ops))
    out = newton_solve(lambda x: limit_residual(x, prev, params, ops),
                       lambda x: limit_jacobian(x, params, ops),
                       x_prev, config)
    return out["solution"], out["iterations"], out["final_residual_norm"]


def _split_attempt(attempt, x_prev, params, ops, config, depth=0):
    """
    Run attempt over a time step of params.tau, splitting the step into two
    halves when it fails, down to depth config.max_splits.
    """
    try:
        return attempt(x_prev, params, ops, config)
    except NewtonError as e:
        if depth >= config.max_splits:
            raise
        logger.warning("step of tau = %g failed (%s), splitting it in two", params.tau, e)

    half = params.with_tau(params.tau / 2)
    x_mid, n1, _ = _split_attempt(attempt, x_prev, half, ops, config, depth + 1)
    x, n2, res = _split_attempt(attempt, x_mid, half, ops, config, depth + 1)
    return x, n1 + n2, res


def robin_step(state_prev, params, ops, config=None):
    """
    Advance the Robin system by one implicit time step.

    When Newton fails, the step is solved again through a continuation in K
    and then through split time steps, see NewtonConfig.

    Args:
        state_prev (RobinState): state at step k
        params (model.ModelParams): Robin model parameters
        ops (assembly.Operators): assembled operators
        config (NewtonConfig): Newton tolerances

    Returns:
        RobinState at step k+1, warm-started from state_prev. Its newton_iters
        counts the iterations of every accepted solve.

    Raises:
        NewtonError: with the failing step index attached
    """
    if config is None:
        config = NewtonConfig()
    k = state_prev.step_index + 1
    try:
        x, n, res = _split_attempt(_robin_attempt, state_prev.pack(), params, ops, config)
    except NewtonError as e:
        raise _annotated(e, k) from e

    U, V, Xi, Phi = (a.copy() for a in _unpack_robin(x, ops))
    return RobinState(U, V, Xi, Phi, step_index=k, time=k * params.tau,
                      newton_iters=n, residual_inf=res)


def limit_step(state_prev, params, ops, config=None):
    """
    Advance the limit system by one implicit time step, split into smaller
    steps when Newton fails.

    Args:
        state_prev (LimitState): state at step k
        params (model.ModelParams): limit model parameters
        ops (assembly.Operators): assembled operators
        config (NewtonConfig): Newton tolerances

    Returns:
        LimitState at step k+1, warm-started from state_prev

    Raises:
        NewtonError: with the failing step index attached
    """
    if config is None:
        config = NewtonConfig()
    k = state_prev.step_index + 1
    try:
        x, n, res = _split_attempt(_limit_attempt, state_prev.pack(), params, ops, config)
    except NewtonError as e:
        raise _annotated(e, k) from e

    U, Xi, Phi = (a.copy() for a in _unpack_limit(x, ops))
    return LimitState(U, Xi, Phi, step_index=k, time=k * params.tau,
                      newton_iters=n, residual_inf=res)
