"""Pathwise maps from the reference rectangle onto deformed configurations.

A map is id + d where d solves the componentwise Laplace problem with the
interface displacement as top boundary data and zero elsewhere.  Everything
downstream (transformed gradients, divergence, Piola transport, the
Jacobian evolution check) is exact pointwise calculus at the quadrature
points of the underlying bilinear representation: within one cell the
displacement is a bilinear polynomial, so its only nonzero second
derivative is the mixed one, and all derived quantities (J, adj(F), their
gradients) have closed forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import GeometryDegenerateError
from .mesh import ReferenceMesh
from .spectral import InterfaceSpectrum


def interface_spectrum(mesh: ReferenceMesh) -> InterfaceSpectrum:
    if "spectrum" not in mesh._cache:
        mesh._cache["spectrum"] = InterfaceSpectrum(mesh.interface_z)
    return mesh._cache["spectrum"]


@dataclass
class GeometryBounds:
    """Scalar certificates extracted from one map."""

    j_min: float
    eta_norm: float
    injective: bool


@dataclass
class QpField:
    """Vector field sampled at volume quadrature points with its gradients.

    values[c, q, k]    component k at point q of cell c
    grads[c, q, k, m]  d(component k)/d(x_m)
    """

    values: np.ndarray
    grads: np.ndarray

    @staticmethod
    def from_nodal(mesh: ReferenceMesh, u: np.ndarray) -> "QpField":
        u = np.asarray(u, dtype=float)
        return QpField(mesh.field_at_qp(u), mesh.grad_at_qp(u))

    @staticmethod
    def from_callable(mesh: ReferenceMesh, fun, grad) -> "QpField":
        """Sample analytic value/gradient callables of (z, r) arrays."""
        z, r = mesh.qp_xy[..., 0], mesh.qp_xy[..., 1]
        vals = np.stack(fun(z, r), axis=-1)
        g = grad(z, r)  # nested [[dzu_z, dru_z], [dzu_r, dru_r]]
        grads = np.stack([np.stack(row, axis=-1) for row in g], axis=-2)
        return QpField(vals, grads)


class AleMap:
    """Harmonic displacement map A = id + d with derived pointwise data."""

    def __init__(self, mesh: ReferenceMesh, d: np.ndarray):
        d = np.asarray(d, dtype=float)
        if d.shape != (mesh.n_nodes, 2):
            raise ValueError("displacement must be (n_nodes, 2)")
        self.mesh = mesh
        self.d = d
        self.eta = d[mesh.interface_nodes]            # interface trace (nz+1, 2)

        grad_d = mesh.grad_at_qp(d)                   # (nc, nq, 2, 2)
        self.grad_A = grad_d + np.eye(2)
        F = self.grad_A
        self.J = F[..., 0, 0] * F[..., 1, 1] - F[..., 0, 1] * F[..., 1, 0]
        # adjugate: J * F^{-1}
        self.adj = np.empty_like(F)
        self.adj[..., 0, 0] = F[..., 1, 1]
        self.adj[..., 0, 1] = -F[..., 0, 1]
        self.adj[..., 1, 0] = -F[..., 1, 0]
        self.adj[..., 1, 1] = F[..., 0, 0]
        with np.errstate(divide="ignore", invalid="ignore"):
            self.inv_grad_A = self.adj / self.J[..., None, None]

        # mixed second derivative of d per cell and component (cell-constant)
        dloc = d[mesh.cells]                          # (nc, 4, 2)
        signs = np.array([1.0, -1.0, 1.0, -1.0])
        self.mixed = np.einsum("a,cak->ck", signs, dloc) / (mesh.dz * mesh.dr)

        # interface tables at the top-edge quadrature points
        self.iface_S, self.iface_n, self.iface_tau = self.interface_geometry(mesh.iface_qp_z)

    # -- interface -------------------------------------------------------

    def interface_geometry(self, z):
        """(S, n, tau) of the deformed interface at coordinates z.

        Uses the piecewise-linear interface trace of the displacement, so S
        and the directions are constant per top-edge segment.
        """
        z = np.asarray(z, dtype=float)
        seg = np.clip((z / self.mesh.dz).astype(int), 0, self.mesh.nz - 1)
        deta = (self.eta[seg + 1] - self.eta[seg]) / self.mesh.dz
        t = np.stack([1.0 + deta[..., 0], deta[..., 1]], axis=-1)
        S = np.hypot(t[..., 0], t[..., 1])
        tau = t / S[..., None]
        n = np.stack([-tau[..., 1], tau[..., 0]], axis=-1)
        return S, n, tau

    # -- derivative tables -------------------------------------------------

    def grad_J(self) -> np.ndarray:
        """(nc, nq, 2) with entry [..., s] = dJ/dx_s, exact per cell."""
        F = self.grad_A
        ez = self.mixed[:, None, 0]
        er = self.mixed[:, None, 1]
        Jz = F[..., 0, 0] * er - F[..., 1, 0] * ez
        Jr = F[..., 1, 1] * ez - F[..., 0, 1] * er
        return np.stack([Jz, Jr], axis=-1)

    def grad_F(self) -> np.ndarray:
        """(nc, nq, 2, 2, 2) with [..., k, m, s] = d(F_km)/d(x_s)."""
        nc, nq = self.J.shape
        out = np.zeros((nc, nq, 2, 2, 2))
        ez = np.broadcast_to(self.mixed[:, None, 0], (nc, nq))
        er = np.broadcast_to(self.mixed[:, None, 1], (nc, nq))
        out[..., 0, 0, 1] = ez       # d_r F_zz
        out[..., 0, 1, 0] = ez       # d_z F_zr
        out[..., 1, 0, 1] = er
        out[..., 1, 1, 0] = er
        return out

    def grad_adj(self) -> np.ndarray:
        """(nc, nq, 2, 2, 2) with [..., k, m, s] = d(adj_km)/d(x_s)."""
        nc, nq = self.J.shape
        out = np.zeros((nc, nq, 2, 2, 2))
        ez = np.broadcast_to(self.mixed[:, None, 0], (nc, nq))
        er = np.broadcast_to(self.mixed[:, None, 1], (nc, nq))
        out[..., 0, 0, 0] = er       # adj_00 = F_rr
        out[..., 0, 1, 0] = -ez      # adj_01 = -F_zr
        out[..., 1, 0, 1] = -er      # adj_10 = -F_rz
        out[..., 1, 1, 1] = ez       # adj_11 = F_zz
        return out

    def require_injective(self):
        if np.min(self.J) <= 0.0:
            raise GeometryDegenerateError(
                f"map Jacobian not positive (min J = {np.min(self.J):.3e})"
            )

    def shape_transformed_grad(self) -> np.ndarray:
        """Transformed gradients of the scalar shape functions, (nc, nq, 4, 2)."""
        return np.einsum("qaj,cqjm->cqam", self.mesh.grad, self.inv_grad_A)


def harmonic_extension(mesh: ReferenceMesh, eta: np.ndarray) -> AleMap:
    """Extend clamped interface displacement data harmonically into the rectangle.

    ``eta`` holds nodal 2-vector values on the interface row.  The extension
    is componentwise harmonic with value eta on the top and zero on the
    other sides; the two top corners take the (clamped, hence zero)
    interface value.
    """
    eta = np.asarray(eta, dtype=float)
    if eta.shape != (mesh.nz + 1, 2):
        raise ValueError(f"interface data must be ({mesh.nz + 1}, 2)")
    if max(abs(eta[0]).max(), abs(eta[-1]).max()) > 1e-12:
        raise ValueError("interface displacement must vanish at z = 0, L")
    d = np.zeros((mesh.n_nodes, 2))
    for c in range(2):
        g = np.zeros(mesh.n_nodes)
        g[mesh.interface_nodes] = eta[:, c]
        d[:, c] = mesh.solve_laplace_dirichlet(g)
    return AleMap(mesh, d)


def identity_map(mesh: ReferenceMesh) -> AleMap:
    return AleMap(mesh, np.zeros((mesh.n_nodes, 2)))


def geometry_bounds(amap: AleMap, s: float) -> GeometryBounds:
    """Jacobian floor, fractional interface norm and the injectivity flag.

    Injectivity is certified by direct sampling: J > 0 at every quadrature
    point and a positive axial stretch 1 + deta_z/dz on every interface
    segment.
    """
    j_min = float(np.min(amap.J))
    spec = interface_spectrum(amap.mesh)
    eta_norm = spec.sobolev_norm(amap.eta, s)
    deta_z = np.diff(amap.eta[:, 0]) / amap.mesh.dz
    injective = bool(j_min > 0.0 and np.all(1.0 + deta_z > 0.0))
    return GeometryBounds(j_min=j_min, eta_norm=eta_norm, injective=injective)


def _as_qp(mesh: ReferenceMesh, u) -> QpField:
    if isinstance(u, QpField):
        return u
    return QpField.from_nodal(mesh, u)


def transformed_gradient(u, amap: AleMap) -> np.ndarray:
    """Gradient in deformed coordinates, grad(u) (grad A)^{-1}, at qp."""
    amap.require_injective()
    f = _as_qp(amap.mesh, u)
    return np.einsum("cqkj,cqjm->cqkm", f.grads, amap.inv_grad_A)


def transformed_sym_gradient(u, amap: AleMap) -> np.ndarray:
    g = transformed_gradient(u, amap)
    return 0.5 * (g + np.swapaxes(g, -1, -2))


def transformed_divergence(u, amap: AleMap) -> np.ndarray:
    g = transformed_gradient(u, amap)
    return np.trace(g, axis1=-2, axis2=-1)


def piola_transform(u, map_from: AleMap, map_to: AleMap) -> QpField:
    """Transport u between configurations preserving the weighted divergence.

    Returns the field (1/J_to) gradA_to (J_from (gradA_from)^{-1} u) with
    its exact pointwise gradients, so that

        J_to div_to(result) = J_from div_from(u)

    at every quadrature point (mixed-derivative symmetry of the bilinear
    displacement makes adj(F) columnwise divergence free within each cell).
    """
    map_from.require_injective()
    map_to.require_injective()
    if map_from.mesh is not map_to.mesh:
        raise ValueError("piola transport requires maps on the same mesh")
    f = _as_qp(map_from.mesh, u)

    # intermediate flux w = adj(F_from) u with exact gradients
    adjA = map_from.adj
    dadjA = map_from.grad_adj()
    w = np.einsum("cqkm,cqm->cqk", adjA, f.values)
    dw = np.einsum("cqkms,cqm->cqks", dadjA, f.values) + np.einsum(
        "cqkm,cqms->cqks", adjA, f.grads
    )

    FB = map_to.grad_A
    JB = map_to.J
    dJB = map_to.grad_J()
    dFB = map_to.grad_F()
    vals = np.einsum("cq,cqkm,cqm->cqk", 1.0 / JB, FB, w)
    grads = (
        -np.einsum("cq,cqs,cqkm,cqm->cqks", 1.0 / JB**2, dJB, FB, w)
        + np.einsum("cq,cqkms,cqm->cqks", 1.0 / JB, dFB, w)
        + np.einsum("cq,cqkm,cqms->cqks", 1.0 / JB, FB, dw)
    )
    return QpField(vals, grads)


def ale_velocity(map_prev: AleMap, map_next: AleMap, dt: float) -> np.ndarray:
    """Nodal domain velocity (d_next - d_prev)/dt."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if map_prev.mesh is not map_next.mesh:
        raise ValueError("maps live on different meshes")
    return (map_next.d - map_prev.d) / dt


def jacobian_identity_residual(
    map_prev: AleMap, map_next: AleMap, dt: float, u_test=None
) -> float:
    """L2 defect of the discrete Jacobian evolution law.

    Compares the difference quotient (J_next - J_prev)/dt against
    J_prev div_prev(w) with w the discrete domain velocity; the lagged
    evaluation matches the piecewise-constant-in-time geometry used by the
    marching scheme and decays linearly in dt.  ``u_test`` optionally
    weights the defect pointwise (nodal scalar field).
    """
    mesh = map_prev.mesh
    w = ale_velocity(map_prev, map_next, dt)
    rate = map_prev.J * transformed_divergence(w, map_prev)
    defect = (map_next.J - map_prev.J) / dt - rate
    if u_test is not None:
        defect = defect * mesh.field_at_qp(np.asarray(u_test, dtype=float))
    return float(np.sqrt(mesh.qp_weight * np.sum(defect**2)))


def harmonic_extension_scalar_bound_check(mesh: ReferenceMesh, v: np.ndarray):
    """L2 norm of a scalar interface extension vs the dual interface norm.

    Returns (lhs, rhs) = (|extension|_L2, |v|_{-1/2}); the continuous
    estimate bounds lhs by rhs, and the discrete ratio is tracked by the
    test suite under refinement.
    """
    v = np.asarray(v, dtype=float)
    if v.shape != (mesh.nz + 1,):
        raise ValueError("scalar interface data has wrong length")
    if max(abs(v[0]), abs(v[-1])) > 1e-12:
        raise ValueError("interface data must vanish at z = 0, L")
    g = np.zeros(mesh.n_nodes)
    g[mesh.interface_nodes] = v
    w = mesh.solve_laplace_dirichlet(g)
    lhs = mesh.l2_norm(w)
    rhs = interface_spectrum(mesh).sobolev_norm(v, -0.5)
    return lhs, rhs
