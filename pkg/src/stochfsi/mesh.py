"""Structured bilinear mesh of the reference rectangle (0,L) x (0,1).

The deformable interface is the top side r = 1; inlet z = 0, outlet z = L,
symmetry bottom r = 0.  All volume integrals use a fixed 2x2 Gauss rule per
cell, interface integrals a 4-point Gauss rule per top edge segment.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

# 2x2 tensor Gauss rule on [-1,1]^2
_G1 = 1.0 / np.sqrt(3.0)
_QP_REF = np.array(
    [(-_G1, -_G1), (_G1, -_G1), (_G1, _G1), (-_G1, _G1)]
)
# 4-point Gauss rule on [-1,1]
_G4_X = np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
)
_G4_W = np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


def _q1_shape(xi: np.ndarray, et: np.ndarray) -> np.ndarray:
    """Bilinear shape values, local node order (0,0),(1,0),(1,1),(0,1) in [-1,1]^2."""
    return 0.25 * np.stack(
        [(1 - xi) * (1 - et), (1 + xi) * (1 - et), (1 + xi) * (1 + et), (1 - xi) * (1 + et)],
        axis=-1,
    )


def _q1_grad(xi: np.ndarray, et: np.ndarray) -> np.ndarray:
    """Reference gradients, shape (..., 4, 2)."""
    dxi = 0.25 * np.stack([-(1 - et), (1 - et), (1 + et), -(1 + et)], axis=-1)
    det = 0.25 * np.stack([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)], axis=-1)
    return np.stack([dxi, det], axis=-1)


@dataclass
class ReferenceMesh:
    """Fixed rectangle (0,L) x (0,1), nz x nr congruent cells, Q1 nodes.

    Node ids are j*(nz+1)+i so the interface row j=nr is contiguous at the
    end.  The boundary node sets overlap only at the four corners; the top
    corners carry interface data for the geometry while their radial
    velocity is constrained with the inlet/outlet columns.
    """

    length: float = 1.0
    nz: int = 8
    nr: int = 8
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.nz < 2 or self.nr < 2:
            raise ValueError("mesh needs nz >= 2 and nr >= 2")
        if self.length <= 0:
            raise ValueError("mesh length must be positive")
        L, nz, nr = self.length, self.nz, self.nr
        self.dz = L / nz
        self.dr = 1.0 / nr
        zs = np.linspace(0.0, L, nz + 1)
        rs = np.linspace(0.0, 1.0, nr + 1)
        Z, R = np.meshgrid(zs, rs)            # shape (nr+1, nz+1)
        self.nodes = np.column_stack([Z.ravel(), R.ravel()])
        self.n_nodes = (nz + 1) * (nr + 1)

        def nid(i, j):
            return j * (nz + 1) + i

        cells = []
        for j in range(nr):
            for i in range(nz):
                cells.append([nid(i, j), nid(i + 1, j), nid(i + 1, j + 1), nid(i, j + 1)])
        self.cells = np.asarray(cells, dtype=np.int64)
        self.n_cells = len(cells)

        # one shared reference table: congruent rectangular cells
        xi, et = _QP_REF[:, 0], _QP_REF[:, 1]
        self.shape = _q1_shape(xi, et)                   # (4qp, 4loc)
        g = _q1_grad(xi, et)                             # (4qp, 4loc, 2)
        self.grad = g * np.array([2.0 / self.dz, 2.0 / self.dr])
        self.n_qp = 4
        self.qp_weight = self.dz * self.dr / 4.0         # same at every point
        # physical quadrature coordinates, (n_cells, 4, 2)
        corner = self.nodes[self.cells]                  # (nc, 4, 2)
        self.qp_xy = np.einsum("qa,cax->cqx", self.shape, corner)

        # boundary node sets
        ii = np.arange(nz + 1)
        jj = np.arange(nr + 1)
        self.interface_nodes = nid(ii, nr)               # r = 1, includes corners
        self.inlet_nodes = nid(0, jj)                    # z = 0
        self.outlet_nodes = nid(nz, jj)                  # z = L
        self.bottom_nodes = nid(ii, 0)                   # r = 0
        bn = np.zeros(self.n_nodes, dtype=bool)
        for s in (self.interface_nodes, self.inlet_nodes, self.outlet_nodes, self.bottom_nodes):
            bn[s] = True
        self.boundary_nodes = np.flatnonzero(bn)

        # radial velocity is constrained on inlet/outlet columns and bottom row
        cr = np.zeros(self.n_nodes, dtype=bool)
        cr[self.inlet_nodes] = True
        cr[self.outlet_nodes] = True
        cr[self.bottom_nodes] = True
        self.constrained_ur = np.flatnonzero(cr)

        # interface segments, each with 4-point Gauss
        self.interface_z = zs
        z0 = zs[:-1]
        self.iface_qp_z = z0[:, None] + (0.5 * (_G4_X + 1.0))[None, :] * self.dz
        self.iface_qp_w = np.broadcast_to(0.5 * self.dz * _G4_W, self.iface_qp_z.shape).copy()

        # exact integration weights of P1 traces on inlet/outlet (trapezoid is exact)
        w1 = np.full(nr + 1, self.dr)
        w1[0] = w1[-1] = 0.5 * self.dr
        self.inlet_trace_w = w1
        self.outlet_trace_w = w1.copy()

    # -- assembly helpers ------------------------------------------------

    def node_id(self, i, j):
        return j * (self.nz + 1) + i

    def scalar_matrix(self, qp_coef: np.ndarray | float) -> sp.csr_matrix:
        """Assemble sum_qp w * coef * N_a N_b as a sparse scalar matrix."""
        coef = np.broadcast_to(np.asarray(qp_coef, dtype=float), (self.n_cells, self.n_qp))
        loc = self.qp_weight * np.einsum("cq,qa,qb->cab", coef, self.shape, self.shape)
        return self._scatter(loc)

    def stiffness_matrix(self) -> sp.csr_matrix:
        """Scalar Laplace stiffness (grad N_a . grad N_b)."""
        loc = self.qp_weight * np.einsum("qam,qbm->ab", self.grad, self.grad)
        loc = np.broadcast_to(loc, (self.n_cells, 4, 4))
        return self._scatter(loc)

    def _scatter(self, loc: np.ndarray) -> sp.csr_matrix:
        rows = np.repeat(self.cells, 4, axis=1).ravel()
        cols = np.tile(self.cells, (1, 4)).ravel()
        m = sp.coo_matrix(
            (loc.reshape(self.n_cells, -1).ravel(), (rows, cols)),
            shape=(self.n_nodes, self.n_nodes),
        )
        return m.tocsr()

    def mass(self) -> sp.csr_matrix:
        if "mass" not in self._cache:
            self._cache["mass"] = self.scalar_matrix(1.0)
        return self._cache["mass"]

    def laplace_interior_solver(self):
        """Prefactored Dirichlet Laplace solve, reused by every extension."""
        if "lap" not in self._cache:
            A = self.stiffness_matrix().tocsc()
            interior = np.setdiff1d(np.arange(self.n_nodes), self.boundary_nodes)
            A_ii = A[interior][:, interior]
            A_ib = A[interior][:, self.boundary_nodes]
            self._cache["lap"] = (interior, self.boundary_nodes, spla.splu(A_ii.tocsc()), A_ib)
        return self._cache["lap"]

    def solve_laplace_dirichlet(self, boundary_values: np.ndarray) -> np.ndarray:
        """Harmonic field with prescribed values on all boundary nodes.

        ``boundary_values`` is a full nodal array; only its boundary entries
        are read.  Returns the full nodal solution.
        """
        interior, bnodes, lu, A_ib = self.laplace_interior_solver()
        out = np.zeros(self.n_nodes)
        g = np.asarray(boundary_values, dtype=float)[bnodes]
        out[bnodes] = g
        out[interior] = lu.solve(-A_ib @ g)
        return out

    def field_at_qp(self, nodal: np.ndarray) -> np.ndarray:
        """Values of a nodal field at volume quadrature points.

        Scalar fields give (nc, nq); fields with trailing axes keep them.
        """
        vals = np.asarray(nodal)[self.cells]          # (nc, 4, ...)
        return np.einsum("qa,ca...->cq...", self.shape, vals)

    def grad_at_qp(self, nodal: np.ndarray) -> np.ndarray:
        """Gradients of a nodal field at quadrature points, (..., 2) last axis.

        Scalar input gives (nc, nq, 2); vector input (n_nodes, 2) gives
        (nc, nq, 2, 2) with entry [..., k, m] = d(comp k)/d(x_m).
        """
        vals = np.asarray(nodal)[self.cells]
        return np.einsum("qam,ca...->cq...m", self.grad, vals)

    def integrate(self, qp_values: np.ndarray) -> float:
        """Integral over the rectangle of values sampled at quadrature points."""
        return float(self.qp_weight * np.sum(qp_values))

    def l2_norm(self, nodal: np.ndarray) -> float:
        """Quadrature L2 norm of a nodal field (any component count)."""
        v = self.field_at_qp(nodal)
        return float(np.sqrt(self.qp_weight * np.sum(v * v)))
