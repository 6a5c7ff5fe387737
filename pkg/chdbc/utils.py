import csv
import os

import meshio
import numpy as np
import scipy.io


HISTORY_HEADER = ["step", "time", "E_bulk_grad", "E_bulk_pot", "E_surf_grad",
                  "E_surf_pot", "E_penalty", "E_total", "mass_bulk", "mass_surf",
                  "newton_iters", "residual_inf"]

SWEEP_HEADER = ["K", "err_L2H1_bulk", "eoc", "err_L4L2_bulk", "eoc",
                "err_L2SigmaT", "eoc", "err_L2H1_surf", "eoc", "err_L4L2_surf", "eoc"]

DUAL_HEADER = ["K", "err_LinfH0dual", "eoc"]


def fmt(x):
    """
    Format a float with 17 significant digits, or an empty string for None.
    """
    if x is None:
        return ""
    return '{:.16e}'.format(x)


def fmt_display(x):
    """
    Format a float with 3 significant digits, or '-' for None.
    """
    if x is None:
        return "-"
    return '{:.2e}'.format(x)


def history_row(state, energy, mass_bulk, mass_surf):
    """
    Build one row of the per-step history.

    Args:
        state (stepper.RobinState or stepper.LimitState): state at step k
        energy (dict): output of model.energy_robin or model.energy_limit
        mass_bulk, mass_surf (floats): lumped masses

    Returns:
        dict keyed by the history header
    """
    return {"step": state.step_index,
            "time": state.time,
            "E_bulk_grad": energy["bulk_grad"],
            "E_bulk_pot": energy["bulk_pot"],
            "E_surf_grad": energy["surf_grad"],
            "E_surf_pot": energy["surf_pot"],
            "E_penalty": energy["penalty"],
            "E_total": energy["total"],
            "mass_bulk": mass_bulk,
            "mass_surf": mass_surf,
            "newton_iters": state.newton_iters,
            "residual_inf": state.residual_inf}


def write_history(path, rows):
    """
    Write the per-step history rows in a csv file.
    """
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(HISTORY_HEADER)
        for r in rows:
            w.writerow([str(r[k]) if k in ("step", "newton_iters") else fmt(r[k])
                        for k in HISTORY_HEADER])


def read_history(path):
    """
    Read a history csv file back into a dict of numpy arrays, one per column.
    """
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.atleast_1d(data[k]) for k in data.dtype.names}


def write_nodal_csv(path, coords, values, name):
    """
    Write nodal values in a csv file with columns x, y, <name>.

    Args:
        path (str): path to the output csv file
        coords (array): node coordinates, one (x, y) pair per line
        values (array): one value per node
        name (str): header of the value column
    """
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(["x", "y", name])
        for (x, y), v in zip(coords, values):
            w.writerow([fmt(x), fmt(y), fmt(v)])


def write_profile(path, mesh, U, y):
    """
    Write the values of U along the mesh row at height y, in a csv file with
    columns x, u.
    """
    idx = mesh.row_nodes(y)
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(["x", "u"])
        for i in idx:
            w.writerow([fmt(mesh.nodes[i, 0]), fmt(U[i])])


def write_vtk(path, mesh, U):
    """
    Write the triangulation with the nodal field u in a legacy ASCII vtk file.
    """
    points = np.column_stack((mesh.nodes, np.zeros(mesh.n_nodes)))
    m = meshio.Mesh(points, [("triangle", mesh.triangles)],
                    point_data={"u": np.asarray(U, dtype=float)})
    m.write(path, file_format="vtk", binary=False)


def write_sweep(path, rows):
    """
    Write an error table in a csv file, one row per penalty K.

    Args:
        path (str): path to the output csv file
        rows (list): list of diagnostics.ErrorTableRow
    """
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(SWEEP_HEADER)
        for r in rows:
            line = [fmt(r.K)]
            for e, o in zip(r.errors(), r.eocs()):
                line += [fmt(e), fmt(o)]
            w.writerow(line)


def display_table(rows):
    """
    Error table with 3 significant digits, as a string.
    """
    header = SWEEP_HEADER
    body = []
    for r in rows:
        line = [fmt_display(r.K)]
        for e, o in zip(r.errors(), r.eocs()):
            line += [fmt_display(e), fmt_display(o)]
        body.append(line)
    widths = [max([len(h)] + [len(b[i]) for b in body]) for i, h in enumerate(header)]
    out = ["  ".join(h.rjust(wd) for h, wd in zip(header, widths))]
    out += ["  ".join(c.rjust(wd) for c, wd in zip(b, widths)) for b in body]
    return "\n".join(out) + "\n"


def write_dual_errors(path, Ks, errors, eocs):
    """
    Write the L^inf((H_0)') errors of a sweep in a csv file.
    """
    with open(path, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(DUAL_HEADER)
        for K, e, o in zip(Ks, errors, eocs):
            w.writerow([fmt(K), fmt(e), fmt(o)])


def write_operators(output_dir, ops):
    """
    Dump A, M, A_gamma and M_gamma in MatrixMarket files, along with the node
    coordinates and the boundary node list.

    Returns:
        list of the written paths
    """
    os.makedirs(output_dir, exist_ok=True)
    paths = []
    for name, mat in [("A", ops.A), ("M", ops.M.matrix),
                      ("A_gamma", ops.A_gamma), ("M_gamma", ops.M_gamma.matrix)]:
        p = os.path.join(output_dir, "{}.mtx".format(name))
        scipy.io.mmwrite(p, mat, precision=17)
        paths.append(p)

    p = os.path.join(output_dir, "nodes.csv")
    with open(p, 'w', newline='') as f:
        w = csv.writer(f, lineterminator='\n')
        w.writerow(["node", "x", "y", "chi", "bnd_index"])
        for i, (x, y) in enumerate(ops.mesh.nodes):
            w.writerow([i, fmt(x), fmt(y), ops.mesh.chi[i], ops.mesh.bnd_of_node[i]])
    paths.append(p)
    return paths
