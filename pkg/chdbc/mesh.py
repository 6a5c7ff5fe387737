"""
Friedrichs-Keller triangulation of the unit square.
"""

import numpy as np


class Mesh:
    def __init__(self, n_cells, nodes, triangles, boundary_nodes):
        """
        Args:
            n_cells (int): number of cells along each axis
            nodes (array): (n_nodes, 2) array of node coordinates
            triangles (array): (n_triangles, 3) array of counterclockwise
                node index triples
            boundary_nodes (array): node indices tracing the boundary polygon
                once, counterclockwise
        """
        self.n_cells = n_cells
        self.nodes = nodes
        self.triangles = triangles
        self.boundary_nodes = boundary_nodes

        nb = len(boundary_nodes)
        self.boundary_segments = np.column_stack(
            (boundary_nodes, np.roll(boundary_nodes, -1)))

        self.chi = np.zeros(len(nodes), dtype=np.int8)
        self.chi[boundary_nodes] = 1

        # -1 for interior nodes
        self.bnd_of_node = np.full(len(nodes), -1, dtype=np.int64)
        self.bnd_of_node[boundary_nodes] = np.arange(nb)

        for a in (self.nodes, self.triangles, self.boundary_nodes,
                  self.boundary_segments, self.chi, self.bnd_of_node):
            a.flags.writeable = False

    @property
    def h(self):
        return 1.0 / self.n_cells

    @property
    def n_nodes(self):
        return len(self.nodes)

    @property
    def n_bnd(self):
        return len(self.boundary_nodes)

    def signed_areas(self):
        """
        Signed area of every triangle (positive for counterclockwise ones).
        """
        p0, p1, p2 = (self.nodes[self.triangles[:, k]] for k in range(3))
        e1 = p1 - p0
        e2 = p2 - p0
        return 0.5 * (e1[:, 0] * e2[:, 1] - e1[:, 1] * e2[:, 0])

    def segment_lengths(self):
        """
        Length of every boundary segment, in boundary order.
        """
        a, b = self.boundary_segments.T
        return np.linalg.norm(self.nodes[b] - self.nodes[a], axis=1)

    def row_nodes(self, y):
        """
        Node indices of the mesh row at height y, sorted by increasing x.

        Raises:
            ValueError: if y does not lie on a mesh row
        """
        j = y * self.n_cells
        if not (0 <= y <= 1) or abs(j - round(j)) > 1e-9:
            raise ValueError("y = {} is not a mesh row for n_cells = {}".format(
                y, self.n_cells))
        j = int(round(j))
        return j * (self.n_cells + 1) + np.arange(self.n_cells + 1)

    def __repr__(self):
        return "{}(n_cells={}, n_nodes={}, n_triangles={}, n_bnd={})".format(
            self.__class__.__name__, self.n_cells, self.n_nodes,
            len(self.triangles), self.n_bnd)


def build_unit_square_mesh(n_cells):
    """
    Build the Friedrichs-Keller triangulation of [0, 1]^2.

    Nodes are numbered row by row (y-major, then x). Every square cell is
    split along its lower-left to upper-right diagonal, and the boundary is
    traversed counterclockwise starting from the corner (0, 0).

    Args:
        n_cells (int): number of cells along each axis, the mesh size is
            h = 1 / n_cells

    Returns:
        instance of the mesh.Mesh class
    """
    if int(n_cells) != n_cells or n_cells < 1:
        raise ValueError("n_cells must be a positive integer, got {}".format(n_cells))
    n = int(n_cells)
    m = n + 1

    # exact coordinates i / n
    x, y = np.meshgrid(np.arange(m) / n, np.arange(m) / n)
    nodes = np.column_stack((x.ravel(), y.ravel()))

    # lower-left corner of every cell
    i, j = np.meshgrid(np.arange(n), np.arange(n))
    a = (j * m + i).ravel()
    b = a + 1
    c = a + m + 1
    d = a + m
    triangles = np.empty((2 * n * n, 3), dtype=np.int64)
    triangles[0::2] = np.column_stack((a, b, c))
    triangles[1::2] = np.column_stack((a, c, d))

    k = np.arange(n)
    bottom = k
    right = n + k * m
    top = m * m - 1 - k
    left = (n - k) * m
    boundary_nodes = np.concatenate((bottom, right, top, left)).astype(np.int64)

    return Mesh(n, nodes, triangles, boundary_nodes)
