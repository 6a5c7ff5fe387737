import logging
import os
import warnings
from dataclasses import dataclass
from dataclasses import field

import numpy as np

from chdbc import utils
from chdbc.assembly import Operators
from chdbc.assembly import assemble_operators
from chdbc.config_readers import ConfigError
from chdbc.config_readers import RunConfig
from chdbc.config_readers import SweepConfig
from chdbc.config_readers import read_config_file
from chdbc.diagnostics import ErrorTableRow
from chdbc.diagnostics import FieldSeries
from chdbc.diagnostics import eoc_or_none
from chdbc.diagnostics import error_table
from chdbc.diagnostics import linf_h0dual_error
from chdbc.mesh import Mesh
from chdbc.mesh import build_unit_square_mesh
from chdbc.model import InverseOutOfRangeError
from chdbc.model import ModelParams
from chdbc.model import bulk_mass
from chdbc.model import energy_limit
from chdbc.model import energy_robin
from chdbc.model import surface_mass
from chdbc.stepper import NewtonError
from chdbc.stepper import initial_limit_state
from chdbc.stepper import initial_robin_state
from chdbc.stepper import limit_step
from chdbc.stepper import robin_step
from chdbc.__about__ import __version__


logger = logging.getLogger(__name__)


class EnergyIncreaseWarning(Warning):
    """
    Custom chdbc warning raised when a time step increases the discrete
    energy.
    """
    pass


@dataclass
class RunRecord:
    """
    Outcome of run_simulation.

    rows holds the per-step history (step 0 included), U and V the bulk and
    surface fields at steps 1..N, snapshots the (U, V) pairs saved every
    config.snapshot_every steps.
    """
    config: RunConfig
    rows: list
    U: FieldSeries
    V: FieldSeries
    final_state: object
    snapshots: dict = field(default_factory=dict)

    def column(self, name):
        return np.array([r[name] for r in self.rows])


@dataclass
class ConvergenceReport:
    rows: list
    dual_errors: list
    dual_eocs: list
    reference: RunRecord = None


def make_initial_data(config, mesh, transmission=None):
    """
    Nodal initial data of a run.

    The uniform_random datum draws lo + (hi - lo) * w with w uniform on
    [0, 1), from a Philox generator seeded with `seed`.

    Args:
        config (RunConfig): run configuration
        mesh (mesh.Mesh): triangulation
        transmission (model.Transmission): H, needed by the Robin model only

    Returns:
        dict with keys "U0" (bulk vector) and "V0" (surface vector
        H^-1(U0|Gamma) for the Robin model, None for the limit model)

    Raises:
        InverseOutOfRangeError: if a boundary value of U0 leaves the range of H
    """
    name, args = config.initial_data_spec
    x, y = mesh.nodes.T
    if name == "step_x":
        U0 = np.where(x > 0.5, 1.0, -1.0)
    elif name == "sine_product":
        U0 = np.sin(4 * np.pi * x) * np.cos(4 * np.pi * y)
    elif name == "uniform_random":
        lo, hi, seed = args
        rng = np.random.Generator(np.random.Philox(seed))
        U0 = rng.uniform(lo, hi, size=mesh.n_nodes)
    elif name == "constant":
        U0 = np.full(mesh.n_nodes, args[0])
    else:
        raise ValueError("unknown initial data '{}'".format(name))

    V0 = None
    if config.model == "robin":
        if transmission is None:
            raise ValueError("the Robin model needs a transmission function")
        V0 = transmission.inverse_on_I(U0[mesh.boundary_nodes])
    return {"U0": U0, "V0": V0}


def _energy(state, params, ops):
    if params.model == "robin":
        return energy_robin(state.U, state.V, params, ops)
    return energy_limit(state.U, params, ops)


def _surface_field(state, params, ops):
    if params.model == "robin":
        return state.V
    return (ops.trace(state.U) - params.beta) / params.alpha


def _write_snapshot(output_dir, k, config, ops, U, V):
    mesh = ops.mesh
    utils.write_nodal_csv(os.path.join(output_dir, "snapshot_bulk_{:06d}.csv".format(k)),
                          mesh.nodes, U, "u")
    utils.write_nodal_csv(os.path.join(output_dir, "snapshot_surf_{:06d}.csv".format(k)),
                          mesh.nodes[mesh.boundary_nodes], V, "v")
    if config.vtk:
        utils.write_vtk(os.path.join(output_dir, "snapshot_{:06d}.vtk".format(k)),
                        mesh, U)
    if config.profile_y is not None:
        utils.write_profile(os.path.join(output_dir, "profile_{:06d}.csv".format(k)),
                            mesh, U, config.profile_y)


def run_simulation(config, ops=None, verbose=False):
    """
    Run the time stepping of the Robin or limit system.

    Args:
        config (RunConfig): run configuration
        ops (assembly.Operators): operators assembled on a mesh with
            config.n_cells cells, built if not given
        verbose (bool): print a summary of the run

    Returns:
        instance of RunRecord

    Raises:
        NewtonError: with the index of the failing step
        InverseOutOfRangeError: if the initial data cannot be inverted by H
    """
    if ops is None:
        ops = assemble_operators(build_unit_square_mesh(config.n_cells))
    elif ops.mesh.n_cells != config.n_cells:
        raise ValueError("operators assembled with n_cells = {}, config has {}".format(
            ops.mesh.n_cells, config.n_cells))
    params = config.model_params()
    newton = config.newton_config()
    logger.info("%s run: n_cells=%d, tau=%g, n_steps=%d, K=%s", config.model,
                config.n_cells, config.tau, config.n_steps, config.K)

    data = make_initial_data(config, ops.mesh, params.transmission)
    if config.model == "robin":
        state = initial_robin_state(data["U0"], data["V0"])
        step = robin_step
    else:
        state = initial_limit_state(data["U0"], ops.n_bnd)
        step = limit_step

    out_dir = config.output_dir
    if out_dir:
        os.makedirs(out_dir, exist_ok=True)
        config.write_to_file(os.path.join(out_dir, "config.cfg"))

    def record(state, energy):
        V = _surface_field(state, params, ops)
        rows.append(utils.history_row(state, energy, bulk_mass(state.U, ops),
                                      surface_mass(V, ops)))
        k = state.step_index
        if config.snapshot_every and k % config.snapshot_every == 0:
            snapshots[k] = (state.U.copy(), V.copy())
            if out_dir:
                _write_snapshot(out_dir, k, config, ops, state.U, V)
        return V

    rows, snapshots = [], {}
    energy = _energy(state, params, ops)
    record(state, energy)

    U_series, V_series = [], []
    for _ in range(config.n_steps):
        state = step(state, params, ops, newton)
        new_energy = _energy(state, params, ops)
        E0, E1 = energy["total"], new_energy["total"]
        if E1 > E0 + 1e-9 * (1 + abs(E0)):
            warnings.warn("energy increases at step {}: {:.9e} -> {:.9e}".format(
                state.step_index, E0, E1), category=EnergyIncreaseWarning)
        energy = new_energy
        V = record(state, energy)
        U_series.append(state.U)
        V_series.append(V)

    if out_dir:
        utils.write_history(os.path.join(out_dir, "history.csv"), rows)

    rec = RunRecord(config=config, rows=rows,
                    U=FieldSeries(config.tau, np.array(U_series), "bulk"),
                    V=FieldSeries(config.tau, np.array(V_series), "surface"),
                    final_state=state, snapshots=snapshots)
    logger.info("%s run done: E_total=%.6e, newton iterations=%d", config.model,
                energy["total"], int(sum(r["newton_iters"] for r in rows)))

    if verbose:
        first, last = rows[0], rows[-1]
        print('steps: {}'.format(last["step"]))
        print('energy: {:.6e} -> {:.6e}'.format(first["E_total"], last["E_total"]))
        print('bulk mass: {:.6e} -> {:.6e}'.format(first["mass_bulk"], last["mass_bulk"]))
        print('surface mass: {:.6e} -> {:.6e}'.format(first["mass_surf"], last["mass_surf"]))

    return rec


def _run_dir(config, name):
    if not config.base.output_dir:
        return None
    return os.path.join(config.base.output_dir, name)


def run_sweep(config, ops=None, verbose=False):
    """
    Run a reference and one Robin run per penalty K, and compare them.

    Args:
        config (SweepConfig): sweep configuration
        ops (assembly.Operators): operators shared by all the runs, built if
            not given
        verbose (bool): print the error table

    Returns:
        instance of ConvergenceReport
    """
    base = config.base
    if ops is None:
        ops = assemble_operators(build_unit_square_mesh(base.n_cells))

    logger.info("sweep: reference %s, K in %s", config.reference, config.K_list)
    ref_cfg = config.reference_config.replace(output_dir=_run_dir(config, "reference"))
    ref = run_simulation(ref_cfg, ops)

    runs = []
    for K in config.K_list:
        logger.info("sweep: K = %g", K)
        cfg = config.robin_config(K).replace(
            output_dir=_run_dir(config, "K_{:g}".format(K)))
        rec = run_simulation(cfg, ops)
        runs.append({"K": K, "U": rec.U, "V": rec.V})

    reference = {"U": ref.U, "V": ref.V if config.reference == "robin" else None}
    rows = error_table(reference, runs, base.model_params(), ops)

    dual = [linf_h0dual_error(r["U"] - ref.U, r["V"] - ref.V, ops) for r in runs]
    dual_eocs = [None] + [eoc_or_none(e1, K1, e2, K2) for e1, K1, e2, K2 in
                          zip(dual[:-1], config.K_list[:-1], dual[1:], config.K_list[1:])]

    if base.output_dir:
        d = base.output_dir
        os.makedirs(d, exist_ok=True)
        with open(os.path.join(d, "sweep.cfg"), 'w') as f:
            f.write(config.to_text())
        utils.write_sweep(os.path.join(d, "sweep.csv"), rows)
        with open(os.path.join(d, "sweep_display.txt"), 'w') as f:
            f.write(utils.display_table(rows))
        utils.write_dual_errors(os.path.join(d, "sweep_dual.csv"), config.K_list,
                                dual, dual_eocs)

    if verbose:
        print(utils.display_table(rows), end='')

    return ConvergenceReport(rows=rows, dual_errors=dual, dual_eocs=dual_eocs,
                             reference=ref)


def assemble_dump(n_cells, output_dir, verbose=False):
    """
    Assemble the operators on a mesh and dump them in MatrixMarket files.

    Args:
        n_cells (int): number of cells along each axis
        output_dir (str): path to the output directory

    Returns:
        list of the written paths
    """
    ops = assemble_operators(build_unit_square_mesh(n_cells))
    paths = utils.write_operators(output_dir, ops)
    if verbose:
        for p in paths:
            print(p)
    return paths
