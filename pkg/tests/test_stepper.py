import numpy as np
import pytest
import scipy.sparse as sp
from scipy.sparse.linalg import splu

from chdbc import stepper
from chdbc.assembly import assemble_operators
from chdbc.mesh import build_unit_square_mesh
from chdbc.model import ModelParams
from chdbc.stepper import LimitState
from chdbc.stepper import LineSearchStalledError
from chdbc.stepper import NewtonConfig
from chdbc.stepper import NewtonError
from chdbc.stepper import NoConvergenceError
from chdbc.stepper import RobinState
from chdbc.stepper import continuation_levels
from chdbc.stepper import initial_limit_state
from chdbc.stepper import initial_robin_state
from chdbc.stepper import limit_jacobian
from chdbc.stepper import limit_residual
from chdbc.stepper import limit_step
from chdbc.stepper import newton_solve
from chdbc.stepper import robin_jacobian
from chdbc.stepper import robin_residual
from chdbc.stepper import robin_step


@pytest.fixture(scope="module")
def ops():
    return assemble_operators(build_unit_square_mesh(4))


@pytest.fixture(scope="module")
def ops8():
    return assemble_operators(build_unit_square_mesh(8))


def robin_params(transmission="affine", **kwargs):
    p = dict(model="robin", eps=0.5, delta=0.5, kappa=1.0, tau=1e-3, K=0.2,
             alpha=1.0, beta=0.0, transmission=transmission)
    p.update(kwargs)
    return ModelParams(**p)


def limit_params(**kwargs):
    p = dict(model="limit", eps=0.5, delta=0.5, kappa=1.0, tau=1e-3, alpha=1.0, beta=0.0)
    p.update(kwargs)
    return ModelParams(**p)


def random_robin_state(ops, rng):
    n, nb = ops.n_nodes, ops.n_bnd
    return RobinState(rng.uniform(-1, 1, n), rng.uniform(-1, 1, nb),
                      rng.standard_normal(n), rng.standard_normal(nb))


def random_limit_state(ops, rng):
    n, nb = ops.n_nodes, ops.n_bnd
    return LimitState(rng.uniform(-1, 1, n), rng.standard_normal(n),
                      rng.standard_normal(nb))


def smooth_data(mesh, mean=0.0, amplitude=0.1):
    x, y = mesh.nodes.T
    return mean + amplitude * np.cos(np.pi * x) * np.cos(np.pi * y)


def fd_check(residual, jacobian, x, d, h=1e-6):
    fd = (residual(x + h * d) - residual(x - h * d)) / (2 * h)
    Jd = jacobian(x) @ d
    assert np.max(np.abs(fd - Jd)) <= 1e-6 * (1 + np.max(np.abs(Jd)))


def test_robin_residual_stationary(ops):
    n, nb = ops.n_nodes, ops.n_bnd
    s = initial_robin_state(np.ones(n), np.ones(nb))
    r = robin_residual(s, s, robin_params(), ops)
    assert r.shape == (2 * n + 2 * nb,)
    assert np.max(np.abs(r)) < 1e-14

    J = robin_jacobian(s, robin_params(), ops)
    splu(J)


def test_robin_residual_mass_block(ops):
    rng = np.random.default_rng(0)
    prev, nxt = random_robin_state(ops, rng), random_robin_state(ops, rng)
    r = robin_residual(nxt, prev, robin_params(), ops)
    n = ops.n_nodes
    dm = np.sum(ops.M.diagonal * (nxt.U - prev.U))
    assert np.sum(r[:n]) == pytest.approx(dm, abs=1e-13)


def test_robin_residual_sparsity(ops):
    mesh = ops.mesh
    n, nb = ops.n_nodes, ops.n_bnd
    rng = np.random.default_rng(1)
    prev, s = random_robin_state(ops, rng), random_robin_state(ops, rng)
    p = robin_params()
    i = 2 * (mesh.n_cells + 1) + 2
    assert mesh.chi[i] == 0

    x = s.pack()
    y = x.copy()
    y[i] += 0.1
    diff = robin_residual(y, prev, p, ops) - robin_residual(x, prev, p, ops)
    changed = set(np.flatnonzero(np.abs(diff) > 1e-15))

    neighbours = set(ops.A.getrow(i).indices)
    allowed = {i} | {n + nb + j for j in neighbours}
    assert i in changed
    assert changed <= allowed


@pytest.mark.parametrize("transmission", ["affine", "sin", "cos3p2"])
def test_robin_jacobian_fd(ops, transmission):
    rng = np.random.default_rng(2)
    p = robin_params(transmission, alpha=1.3, beta=-0.2)
    prev = random_robin_state(ops, rng)
    for _ in range(20):
        x = random_robin_state(ops, rng).pack()
        d = rng.standard_normal(len(x))
        fd_check(lambda z: robin_residual(z, prev, p, ops),
                 lambda z: robin_jacobian(z, p, ops), x, d)


@pytest.mark.parametrize("kappa", [0.0, 1.0])
def test_limit_jacobian_fd(ops, kappa):
    rng = np.random.default_rng(3)
    p = limit_params(alpha=1.5, beta=0.2, kappa=kappa)
    prev = random_limit_state(ops, rng)
    for _ in range(20):
        x = random_limit_state(ops, rng).pack()
        d = rng.standard_normal(len(x))
        fd_check(lambda z: limit_residual(z, prev, p, ops),
                 lambda z: limit_jacobian(z, p, ops), x, d)


def test_robin_jacobian_affine_penalty(ops):
    n, nb = ops.n_nodes, ops.n_bnd
    rng = np.random.default_rng(4)
    s = random_robin_state(ops, rng)
    alpha, K = 1.7, 0.3
    p = robin_params(alpha=alpha, beta=0.4, kappa=0.0, K=K)
    J = robin_jacobian(s, p, ops)
    J_vv = J[n:n + nb, n:n + nb].toarray()
    mg = ops.M_gamma.diagonal
    rest = J_vv - np.diag(mg * p.potential_G.deriv2(s.V) / p.delta)
    np.testing.assert_allclose(rest, np.diag(alpha**2 * mg / K), atol=1e-13)


def test_limit_residual_examples(ops):
    n, nb = ops.n_nodes, ops.n_bnd
    s = initial_limit_state(np.ones(n), nb)
    assert np.max(np.abs(limit_residual(s, s, limit_params(), ops))) < 1e-14

    eps = 0.5
    s = initial_limit_state(np.full(n, -2.0), nb)
    r = limit_residual(s, s, limit_params(eps=eps, alpha=2.0, beta=-4.0), ops)
    np.testing.assert_allclose(r[:n + nb], 0, atol=1e-14)
    np.testing.assert_allclose(r[n + nb:], -6 * ops.M.diagonal / eps, atol=1e-13)


def test_limit_residual_mass_block(ops):
    rng = np.random.default_rng(5)
    prev, nxt = random_limit_state(ops, rng), random_limit_state(ops, rng)
    r = limit_residual(nxt, prev, limit_params(), ops)
    n, nb = ops.n_nodes, ops.n_bnd
    dm = np.sum(ops.M_gamma.diagonal * ops.trace(nxt.U - prev.U))
    assert np.sum(r[n:n + nb]) == pytest.approx(dm, abs=1e-13)


def test_limit_jacobian_structure(ops):
    n = ops.n_nodes
    s = random_limit_state(ops, np.random.default_rng(6))

    J_uu =limit_jacobian(s, limit_params(kappa=1.0), ops)[n + ops.n_bnd:, :n].toarray()
    np.testing.assert_allclose(J_uu, J_uu.T, atol=1e-13)

    # kappa only enters through the lifted surface stiffness
    J0 = limit_jacobian(s, limit_params(kappa=0.0), ops)[n + ops.n_bnd:, :n].toarray()
    p = limit_params(kappa=1.0)
    expected = p.kappa * p.delta / p.alpha**2 * ops.lifted(ops.A_gamma).toarray()
    np.testing.assert_allclose(J_uu - J0, expected, atol=1e-13)


def test_newton_scalar():
    out = newton_solve(lambda x: x**2 - 4,
                       lambda x: sp.csc_matrix([[2 * x[0]]]),
                       np.array([3.0]))
    assert out["solution"][0] == pytest.approx(2, abs=1e-11)
    assert out["iterations"] <= 6
    assert out["final_residual_norm"] <= 1e-11
    assert out["history"][0] == pytest.approx(5)


def test_newton_affine():
    rng = np.random.default_rng(7)
    B = sp.csc_matrix(np.eye(5) * 4 + rng.uniform(-0.5, 0.5, (5, 5)))
    b = rng.standard_normal(5)
    out = newton_solve(lambda x: B @ x - b, lambda x: B, np.zeros(5))
    assert out["iterations"] == 1
    np.testing.assert_allclose(B @ out["solution"], b, atol=1e-12)


def test_newton_no_root():
    with pytest.raises(NewtonError):
        newton_solve(lambda x: x**2 + 1,
                     lambda x: sp.csc_matrix([[2 * x[0]]]),
                     np.array([1.0]))


def test_newton_stalled_update():
    """
    A tiny update far from any root is not a converged solve.
    """
    with pytest.raises(NoConvergenceError):
        newton_solve(lambda x: 1e30 * x**2 + 1,
                     lambda x: sp.csc_matrix([[2e30 * x[0]]]),
                     np.array([1e-15]))

    # an update below step_tol at a residual under stall_tol is accepted
    out = newton_solve(lambda x: 1e30 * x**2 + 1e-10,
                       lambda x: sp.csc_matrix([[2e30 * x[0]]]),
                       np.array([1e-20]), NewtonConfig(abs_tol=1e-12))
    assert out["final_residual_norm"] <= 1e-9


def test_newton_config_validation():
    with pytest.raises(ValueError):
        NewtonConfig(abs_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(stall_tol=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_iters=0)
    with pytest.raises(ValueError):
        NewtonConfig(max_halvings=-1)
    with pytest.raises(ValueError):
        NewtonConfig(continuation_factor=1)
    with pytest.raises(ValueError):
        NewtonConfig(max_splits=-1)


def test_continuation_levels():
    np.testing.assert_allclose(continuation_levels(1e-5, 0.1, 10),
                               [1e-1, 1e-2, 1e-3, 1e-4, 1e-5])
    np.testing.assert_allclose(continuation_levels(3e-3, 0.1, 10), [1e-1, 1e-2, 3e-3])
    assert continuation_levels(0.5, 0.1, 10) == [0.5]


def test_newton_quadratic_convergence(ops8):
    rng = np.random.default_rng(8)
    n, nb = ops8.n_nodes, ops8.n_bnd
    U0 = rng.uniform(-0.8, 0.8, n)
    prev = initial_robin_state(U0, ops8.trace(U0))
    p = robin_params(tau=1e-2)
    out = newton_solve(lambda x: robin_residual(x, prev, p, ops8),
                       lambda x: robin_jacobian(x, p, ops8), prev.pack())
    r = out["history"]
    assert len(r) >= 3
    for a, b, c in zip(r[:-2], r[1:-1], r[2:]):
        if b > 1e-10:
            assert c <= max(10 * b**2 / a, 1e-12)


def test_stationary_steps(ops):
    n, nb = ops.n_nodes, ops.n_bnd
    s = initial_robin_state(np.ones(n), np.ones(nb))
    t = robin_step(s, robin_params(), ops)
    assert t.step_index == 1 and t.time == pytest.approx(1e-3)
    assert t.newton_iters <= 2
    np.testing.assert_allclose(t.pack(), s.pack(), atol=1e-10)

    s = initial_limit_state(np.ones(n), nb)
    t = limit_step(s, limit_params(), ops)
    np.testing.assert_allclose(t.pack(), s.pack(), atol=1e-10)


@pytest.mark.parametrize("transmission", ["affine", "sin"])
def test_robin_mass_conservation(ops8, transmission):
    p = robin_params(transmission, eps=0.1, delta=0.1, tau=1e-5, K=0.1)
    U0 = smooth_data(ops8.mesh, mean=0.3, amplitude=0.2)
    s = initial_robin_state(U0, p.transmission.inverse_on_I(ops8.trace(U0)))
    mb = np.sum(ops8.M.diagonal * s.U)
    ms = np.sum(ops8.M_gamma.diagonal * s.V)
    for _ in range(5):
        s = robin_step(s, p, ops8)
    assert abs(np.sum(ops8.M.diagonal * s.U) - mb) <= 1e-10 * abs(mb)
    assert abs(np.sum(ops8.M_gamma.diagonal * s.V) - ms) <= 1e-10 * abs(ms)


def test_limit_mass_conservation(ops8):
    p = limit_params(eps=0.1, delta=0.1, tau=1e-5, beta=0.1)
    s = initial_limit_state(smooth_data(ops8.mesh, mean=0.3, amplitude=0.2), ops8.n_bnd)
    mb = np.sum(ops8.M.diagonal * s.U)
    ms = np.sum(ops8.M_gamma.diagonal * ops8.trace(s.U))
    for _ in range(5):
        s = limit_step(s, p, ops8)
    assert abs(np.sum(ops8.M.diagonal * s.U) - mb) <= 1e-10 * abs(mb)
    assert abs(np.sum(ops8.M_gamma.diagonal * ops8.trace(s.U)) - ms) <= 1e-10 * abs(ms)


def test_implicit_euler_consistency(ops8):
    U0 = smooth_data(ops8.mesh)
    p = robin_params(eps=1.0, delta=1.0, tau=1e-8, K=1.0)
    s = robin_step(initial_robin_state(U0, ops8.trace(U0)), p, ops8)
    assert np.max(np.abs(s.U - U0)) <= 1e-5


def test_robin_to_limit_consistency(ops8):
    U0 = smooth_data(ops8.mesh)
    rob = robin_step(initial_robin_state(U0, ops8.trace(U0)),
                     robin_params(eps=1.0, delta=1.0, tau=1e-5, K=1e-6), ops8)
    lim = limit_step(initial_limit_state(U0, ops8.n_bnd),
                     limit_params(eps=1.0, delta=1.0, tau=1e-5), ops8)
    assert np.max(np.abs(rob.U - lim.U)) <= 1e-4


def test_step_failure_is_annotated(ops8):
    rng = np.random.default_rng(9)
    U0 = rng.uniform(-0.8, 0.8, ops8.n_nodes)
    s = initial_robin_state(U0, ops8.trace(U0))
    with pytest.raises(NoConvergenceError) as e:
        robin_step(s, robin_params(tau=1e-2), ops8,
                   NewtonConfig(max_iters=1, max_splits=0))
    assert e.value.step_index == 1
    assert str(e.value).startswith("step 1:")


def test_robin_step_continuation(ops8, monkeypatch):
    """
    A Robin step whose direct solve fails is solved again through a
    continuation in K, and lands on the direct solution.
    """
    p = robin_params("sin", eps=0.1, delta=0.1, tau=1e-5, K=1e-4)
    U0 = smooth_data(ops8.mesh, mean=0.3, amplitude=0.2)
    s = initial_robin_state(U0, p.transmission.inverse_on_I(ops8.trace(U0)))
    direct = robin_step(s, p, ops8)

    solve = stepper._robin_newton
    Ks = []

    def failing_direct_solve(x_prev, guess, params, ops, config):
        Ks.append(params.K)
        if len(Ks) == 1:
            raise LineSearchStalledError("no decrease")
        return solve(x_prev, guess, params, ops, config)

    monkeypatch.setattr(stepper, "_robin_newton", failing_direct_solve)
    t = robin_step(s, p, ops8)
    assert Ks == pytest.approx([1e-4, 1e-1, 1e-2, 1e-3, 1e-4])
    assert t.step_index == 1 and t.time == pytest.approx(1e-5)
    assert t.newton_iters >= 4
    np.testing.assert_allclose(t.U, direct.U, atol=1e-8)
    np.testing.assert_allclose(t.V, direct.V, atol=1e-8)


def test_limit_step_split(ops8, monkeypatch):
    """
    A failing step is replaced by two half steps.
    """
    U0 = smooth_data(ops8.mesh, mean=0.3, amplitude=0.2)
    s = initial_limit_state(U0, ops8.n_bnd)
    half = limit_params(eps=0.1, delta=0.1, tau=1e-5, beta=0.1)
    expected = limit_step(limit_step(s, half, ops8), half, ops8)

    attempt = stepper._limit_attempt
    taus = []

    def failing_full_step(x_prev, params, ops, config):
        taus.append(params.tau)
        if params.tau == 2e-5:
            raise NoConvergenceError("no convergence")
        return attempt(x_prev, params, ops, config)

    monkeypatch.setattr(stepper, "_limit_attempt", failing_full_step)
    t = limit_step(s, limit_params(eps=0.1, delta=0.1, tau=2e-5, beta=0.1), ops8)
    assert taus == pytest.approx([2e-5, 1e-5, 1e-5])
    assert t.step_index == 1 and t.time == pytest.approx(2e-5)
    np.testing.assert_allclose(t.U, expected.U, atol=1e-12)


def test_split_exhausted(ops8, monkeypatch):
    taus = []

    def failing_step(x_prev, params, ops, config):
        taus.append(params.tau)
        raise NoConvergenceError("no convergence")

    monkeypatch.setattr(stepper, "_limit_attempt", failing_step)
    s = initial_limit_state(np.zeros(ops8.n_nodes), ops8.n_bnd)
    with pytest.raises(NoConvergenceError) as e:
        limit_step(s, limit_params(tau=4e-3), ops8, NewtonConfig(max_splits=2))
    assert taus == pytest.approx([4e-3, 2e-3, 1e-3])
    assert e.value.step_index == 1


def test_dimension_mismatch(ops):
    s = initial_robin_state(np.ones(ops.n_nodes), np.ones(ops.n_bnd))
    with pytest.raises(ValueError):
        robin_residual(np.ones(3), s, robin_params(), ops)
    with pytest.raises(ValueError):
        limit_params(alpha=0.0)
