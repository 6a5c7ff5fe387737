"""
P1 stiffness matrices and lumped mass matrices on the bulk and on the boundary
curve.
"""

import numpy as np
import scipy.sparse as sp


class LumpedMass:
    """
    Diagonal mass matrix obtained by nodal quadrature.
    """
    def __init__(self, diagonal):
        """
        Args:
            diagonal (array): per-node measures, all strictly positive
        """
        self.diagonal = np.asarray(diagonal, dtype=float)
        self.diagonal.flags.writeable = False
        self.matrix = sp.diags(self.diagonal, format="csr")

    def __len__(self):
        return len(self.diagonal)

    @property
    def total(self):
        return float(np.sum(self.diagonal))

    def __matmul__(self, x):
        return self.diagonal * x


class Operators:
    """
    The four discrete operators of the scheme, together with the bulk/surface
    index maps of the mesh they were assembled on.

    Surface objects live on the compressed index set of the boundary nodes,
    in the order of mesh.boundary_nodes.
    """
    def __init__(self, mesh, A, M, A_gamma, M_gamma):
        self.mesh = mesh
        self.A = A
        self.M = M
        self.A_gamma = A_gamma
        self.M_gamma = M_gamma

        nb = mesh.n_bnd
        # restriction of bulk vectors to the boundary nodes
        self.P = sp.csr_matrix((np.ones(nb), (np.arange(nb), mesh.boundary_nodes)),
                               shape=(nb, mesh.n_nodes))

    @property
    def n_nodes(self):
        return self.mesh.n_nodes

    @property
    def n_bnd(self):
        return self.mesh.n_bnd

    def trace(self, U):
        """
        Restriction of a bulk nodal vector to the boundary nodes.
        """
        return np.asarray(U)[..., self.mesh.boundary_nodes]

    def lift(self, W):
        """
        Scatter a surface vector into a bulk vector, zero on interior nodes.
        """
        out = np.zeros(self.n_nodes)
        out[self.mesh.boundary_nodes] = W
        return out

    def lifted(self, S):
        """
        Surface matrix S acting on boundary-restricted bulk vectors,
        as a bulk-sized matrix P^T S P.
        """
        return (self.P.T @ sp.csr_matrix(S) @ self.P).tocsr()


def bulk_stiffness(mesh):
    """
    P1 stiffness matrix (grad L_i, grad L_j) over the triangulation.

    On each triangle with vertices p0, p1, p2, the local entries are
    (e_i . e_j) / (4 |T|) where e_i is the edge opposite vertex i.

    Args:
        mesh (mesh.Mesh): triangulation

    Returns:
        scipy.sparse.csr_matrix of shape (n_nodes, n_nodes)
    """
    tri = mesh.triangles
    p = [mesh.nodes[tri[:, k]] for k in range(3)]
    edges = [p[2] - p[1], p[0] - p[2], p[1] - p[0]]
    area = mesh.signed_areas()

    rows, cols, vals = [], [], []
    for i in range(3):
        for j in range(3):
            rows.append(tri[:, i])
            cols.append(tri[:, j])
            vals.append(np.sum(edges[i] * edges[j], axis=1) / (4 * area))

    n = mesh.n_nodes
    A = sp.coo_matrix((np.concatenate(vals),
                       (np.concatenate(rows), np.concatenate(cols))),
                      shape=(n, n))
    return A.tocsr()


def bulk_lumped_mass(mesh):
    """
    Lumped mass M_ii = integral of L_i over the domain = |supp L_i| / 3.
    """
    area = mesh.signed_areas()
    d = np.bincount(mesh.triangles.ravel(), weights=np.repeat(area / 3, 3),
                    minlength=mesh.n_nodes)
    return LumpedMass(d)


def surface_stiffness(mesh):
    """
    1D P1 stiffness matrix along the closed boundary polygon, in boundary
    indices. Corners are ordinary nodes of the curve.
    """
    nb = mesh.n_bnd
    a = np.arange(nb)
    b = np.roll(a, -1)
    w = 1 / mesh.segment_lengths()
    rows = np.concatenate((a, b, a, b))
    cols = np.concatenate((a, b, b, a))
    vals = np.concatenate((w, w, -w, -w))
    return sp.coo_matrix((vals, (rows, cols)), shape=(nb, nb)).tocsr()


def surface_lumped_mass(mesh):
    """
    Lumped boundary mass: half the length of the two adjacent segments.
    """
    L = mesh.segment_lengths()
    return LumpedMass(0.5 * (L + np.roll(L, 1)))


def assemble_operators(mesh):
    """
    Assemble A, M, A_gamma and M_gamma on a mesh.

    Args:
        mesh (mesh.Mesh): triangulation of the unit square

    Returns:
        instance of the assembly.Operators class
    """
    return Operators(mesh,
                     A=bulk_stiffness(mesh),
                     M=bulk_lumped_mass(mesh),
                     A_gamma=surface_stiffness(mesh),
                     M_gamma=surface_lumped_mass(mesh))


def lumped_inner_product(f, g, mass):
    """
    Lumped L2 inner product sum_i mass_ii f_i g_i.

    Args:
        f, g (arrays): nodal vectors
        mass (LumpedMass): bulk or surface lumped mass

    Returns:
        float
    """
    f = np.asarray(f, dtype=float)
    g = np.asarray(g, dtype=float)
    if not (f.shape == g.shape == mass.diagonal.shape):
        raise ValueError("dimension mismatch: {}, {} and mass of size {}".format(
            f.shape, g.shape, len(mass)))
    return float(np.sum(mass.diagonal * f * g))
