"""Penalized fluid half-step on artificial domain configurations.

Unknowns are the nodal velocity on the fixed rectangle (radial component
constrained to zero on inlet, outlet and bottom) and the interface velocity
coefficients.  One step solves, for all admissible (q, psi),

    (J_n (u - u_in), q) + 1/2 ((J_np1 - J_n) u, q)
      + dt/2 * J_n [ ((u - w).grad_n u).q - ((u - w).grad_n q).u ]
      + 2 nu dt (J_n D_n(u), D_n(q))
      + dt/eps (div_n u, div_n q) + dt/eps ((u - v).n, (q - psi).n)_G
      + dt/alpha (S (u - v), q - psi)_G
      + (v - v_in, psi)
    = dt (P_in int q_z|in - P_out int q_z|out) + (force, (q, psi))

with the advecting velocity lagged to the previous Picard iterate (the
skew pairing stays antisymmetric, so testing the converged step with its
own solution yields an exact discrete energy identity).  All geometric
factors are evaluated on the step-start artificial map except the Jacobian
update term.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import StepFailureError
from .geometry import AleMap, ale_velocity
from .mesh import ReferenceMesh
from .structure import ElasticOperator, HermiteGrid

_E = [[None, None], [None, None]]  # component unit matrices, filled below
for _k in range(2):
    for _l in range(2):
        _m = np.zeros((2, 2))
        _m[_k, _l] = 1.0
        _E[_k][_l] = sp.csr_matrix(_m)
_I2 = sp.identity(2, format="csr")

# 4-point Gauss rule on [0, 1]
_GX = 0.5 * (1.0 + np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
))
_GW = 0.5 * np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


def check_fluid_state(mesh: ReferenceMesh, u: np.ndarray) -> None:
    """Validate the velocity invariants: finite, radial trace constrained."""
    u = np.asarray(u)
    if u.shape != (mesh.n_nodes, 2):
        raise ValueError("velocity must be (n_nodes, 2)")
    if not np.all(np.isfinite(u)):
        raise ValueError("velocity contains non-finite values")
    if np.any(u[mesh.constrained_ur, 1] != 0.0):
        raise ValueError("radial velocity must vanish on inlet/outlet/bottom")


def zero_fluid_state(mesh: ReferenceMesh) -> np.ndarray:
    return np.zeros((mesh.n_nodes, 2))


class CouplingTable:
    """Interface quadrature shared by P1 fluid traces and Hermite functions.

    Breakpoints are the union of top-row mesh nodes and structure nodes; a
    4-point Gauss rule per sub-interval integrates products of the cubic
    interface functions against traces and geometric factors exactly
    enough for the energy bookkeeping to close at solver precision.
    """

    def __init__(self, mesh: ReferenceMesh, grid: HermiteGrid):
        if abs(mesh.length - grid.length) > 1e-12:
            raise ValueError("mesh and structure grid cover different intervals")
        pts = np.union1d(mesh.interface_z, grid.z_nodes)
        z0, z1 = pts[:-1], pts[1:]
        h = (z1 - z0)[:, None]
        self.z = (z0[:, None] + h * _GX).ravel()
        self.w = (h * _GW).ravel()
        self.n_qp = len(self.z)

        seg = np.clip((self.z / mesh.dz).astype(int), 0, mesh.nz - 1)
        t = (self.z - seg * mesh.dz) / mesh.dz
        self.fluid_nodes = np.stack(
            [mesh.interface_nodes[seg], mesh.interface_nodes[seg + 1]], axis=1
        )
        self.p1 = np.stack([1.0 - t, t], axis=1)

        self.h_idx, self.h_val = grid.shape_table(self.z, deriv=0)
        self.mesh = mesh
        self.grid = grid

        # cross mass  int H_d N_i dz  on full Hermite dofs x interface nodes
        M = np.zeros((grid.n_full, mesh.nz + 1))
        for qidx in range(self.n_qp):
            fl = self.fluid_nodes[qidx] - mesh.interface_nodes[0]
            np.add.at(
                M,
                (self.h_idx[qidx][:, None], fl[None, :]),
                self.w[qidx] * np.outer(self.h_val[qidx], self.p1[qidx]),
            )
        self.cross_mass = M


@dataclass
class FluidWorkspace:
    """Objects reused by every fluid solve on one mesh/structure pairing."""

    mesh: ReferenceMesh
    grid: HermiteGrid
    op: ElasticOperator
    coupling: CouplingTable = None

    def __post_init__(self):
        mesh, grid = self.mesh, self.grid
        if self.coupling is None:
            self.coupling = CouplingTable(mesh, grid)
        nd = 2 * mesh.n_nodes
        free_mask = np.ones(nd, dtype=bool)
        free_mask[2 * mesh.constrained_ur + 1] = False
        self.free_u = np.flatnonzero(free_mask)
        self.n_u = len(self.free_u)
        self.n_v = 2 * grid.n_free
        nf = grid.n_full
        self.struct_free = np.concatenate([grid.free, nf + grid.free])

        self.mass_scalar = mesh.mass()
        self.mass_vec = sp.kron(self.mass_scalar, _I2).tocsr()
        self.ms_block = sp.block_diag([self.op.mass, self.op.mass]).tocsr()

        pin = np.zeros(nd)
        pin[2 * mesh.inlet_nodes] = mesh.inlet_trace_w
        pout = np.zeros(nd)
        pout[2 * mesh.outlet_nodes] = mesh.outlet_trace_w
        self.press_in = pin
        self.press_out = pout

    def flat(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(u, dtype=float).ravel()

    def stack_v(self, v: np.ndarray) -> np.ndarray:
        return np.concatenate([v[0], v[1]])

    def unstack_v(self, x: np.ndarray) -> np.ndarray:
        n = self.grid.n_free
        return np.stack([x[:n], x[n:]])

    def expand_u(self, x_free: np.ndarray) -> np.ndarray:
        out = np.zeros(2 * self.mesh.n_nodes)
        out[self.free_u] = x_free
        return out.reshape(self.mesh.n_nodes, 2)

    def noise_rhs(self, dW_force):
        """Full-dof load vectors of an (f_fluid, f_struct) force pair."""
        if dW_force is None:
            return np.zeros(2 * self.mesh.n_nodes), np.zeros(2 * self.grid.n_full)
        f_fluid, f_struct = dW_force
        bu = self.mass_vec @ self.flat(f_fluid)
        bv = np.concatenate(
            [self.coupling.cross_mass @ f_struct[:, 0], self.coupling.cross_mass @ f_struct[:, 1]]
        )
        return bu, bv


@dataclass
class FluidStepInputs:
    """Everything one penalized solve consumes.

    u_prev is the step-start velocity (kept from the previous fluid step),
    v_half the just-updated interface velocity, the two maps are the
    artificial configurations bracketing the step, dW_force the assembled
    stochastic force pair (fluid field, interface field) and p_in/p_out the
    time-averaged boundary pressures for this step.
    """

    work: FluidWorkspace
    u_prev: np.ndarray
    v_half: np.ndarray
    map_n: AleMap
    map_np1: AleMap
    dt: float
    eps: float
    alpha: float
    nu: float
    p_in: float = 0.0
    p_out: float = 0.0
    dW_force: tuple | None = None
    slip_tangential: bool = False
    w_star: np.ndarray = None
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if min(self.dt, self.eps, self.alpha, self.nu) <= 0:
            raise ValueError("dt, eps, alpha, nu must be positive")
        self.map_n.require_injective()
        self.map_np1.require_injective()
        if self.w_star is None:
            self.w_star = ale_velocity(self.map_n, self.map_np1, self.dt)


def trilinear_b(u: np.ndarray, w: np.ndarray, q: np.ndarray, amap: AleMap) -> float:
    """Skew advection form 1/2 int J ((u-w).grad_A u . q - (u-w).grad_A q . u)."""
    mesh = amap.mesh
    amap.require_injective()
    uq = mesh.field_at_qp(u)
    qq = mesh.field_at_qp(q)
    adv = uq - mesh.field_at_qp(w)
    gu = np.einsum("cqkj,cqjm->cqkm", mesh.grad_at_qp(u), amap.inv_grad_A)
    gq = np.einsum("cqkj,cqjm->cqkm", mesh.grad_at_qp(q), amap.inv_grad_A)
    t1 = np.einsum("cqm,cqkm,cqk->cq", adv, gu, qq)
    t2 = np.einsum("cqm,cqkm,cqk->cq", adv, gq, uq)
    return 0.5 * mesh.integrate(amap.J * (t1 - t2))


class _Triplets:
    def __init__(self, shape):
        self.shape = shape
        self.r, self.c, self.v = [], [], []

    def add(self, rows, cols, block):
        rr, cc = np.meshgrid(rows, cols, indexing="ij")
        self.r.append(rr.ravel())
        self.c.append(cc.ravel())
        self.v.append(np.asarray(block).ravel())

    def tocsr(self):
        if not self.r:
            return sp.csr_matrix(self.shape)
        return sp.coo_matrix(
            (np.concatenate(self.v), (np.concatenate(self.r), np.concatenate(self.c))),
            shape=self.shape,
        ).tocsr()


def _interface_blocks(inputs: FluidStepInputs):
    """Sparse interface matrices on full dofs: normal penalty and slip."""
    work = inputs.work
    mesh, grid, ct = work.mesh, work.grid, work.coupling
    S, nvec, tau = inputs.map_n.interface_geometry(ct.z)

    nd = 2 * mesh.n_nodes
    nfv = 2 * grid.n_full

    def rank_one(direction, weight):
        """Blocks of  int weight (x . direction)(y . direction)  over the interface."""
        uu, uv, vv = _Triplets((nd, nd)), _Triplets((nd, nfv)), _Triplets((nfv, nfv))
        for qi in range(ct.n_qp):
            wq = weight[qi] * ct.w[qi]
            iu = (2 * ct.fluid_nodes[qi][:, None] + np.arange(2)).ravel()
            du = np.outer(ct.p1[qi], direction[qi]).ravel()
            iv = (np.arange(2)[:, None] * grid.n_full + ct.h_idx[qi]).ravel()
            dv = np.outer(direction[qi], ct.h_val[qi]).ravel()
            uu.add(iu, iu, wq * np.outer(du, du))
            uv.add(iu, iv, wq * np.outer(du, dv))
            vv.add(iv, iv, wq * np.outer(dv, dv))
        return uu.tocsr(), uv.tocsr(), vv.tocsr()

    def isotropic(weight):
        """Blocks of  int weight (x . y)  over the interface (componentwise)."""
        uu, uv, vv = _Triplets((nd, nd)), _Triplets((nd, nfv)), _Triplets((nfv, nfv))
        for qi in range(ct.n_qp):
            wq = weight[qi] * ct.w[qi]
            for k in range(2):
                iu = 2 * ct.fluid_nodes[qi] + k
                iv = k * grid.n_full + ct.h_idx[qi]
                uu.add(iu, iu, wq * np.outer(ct.p1[qi], ct.p1[qi]))
                uv.add(iu, iv, wq * np.outer(ct.p1[qi], ct.h_val[qi]))
                vv.add(iv, iv, wq * np.outer(ct.h_val[qi], ct.h_val[qi]))
        return uu.tocsr(), uv.tocsr(), vv.tocsr()

    pen = rank_one(nvec, np.ones_like(S))
    slip = rank_one(tau, S) if inputs.slip_tangential else isotropic(S)
    return pen, slip


class _StepOperator:
    """Per-step constant blocks; only the advection matrix varies in Picard."""

    def __init__(self, inputs: FluidStepInputs):
        work = inputs.work
        mesh = work.mesh
        amap = inputs.map_n
        self.inputs = inputs
        self.J = amap.J
        self.G = amap.shape_transformed_grad()            # (nc, nq, 4, 2)
        w = mesh.qp_weight

        self.mass_J = sp.kron(mesh.scalar_matrix(self.J), _I2).tocsr()
        self.mass_dJ = sp.kron(
            mesh.scalar_matrix(inputs.map_np1.J - self.J), _I2
        ).tocsr()

        S1 = self._scatter(mesh, w * np.einsum("cq,cqam,cqbm->cab", self.J, self.G, self.G))
        visc = sp.kron(S1, _I2)
        for k in range(2):
            for l in range(2):
                C_lk = self._scatter(
                    mesh,
                    w * np.einsum("cq,cqa,cqb->cab", self.J, self.G[..., l], self.G[..., k]),
                )
                visc = visc + sp.kron(C_lk, _E[k][l])
        self.visc = visc.tocsr()                           # q' visc u = 2 int J D(u):D(q)

        pdiv = None
        for k in range(2):
            for l in range(2):
                Dkl = self._scatter(
                    mesh, w * np.einsum("cqa,cqb->cab", self.G[..., k], self.G[..., l])
                )
                term = sp.kron(Dkl, _E[k][l])
                pdiv = term if pdiv is None else pdiv + term
        self.pdiv = pdiv.tocsr()

        (puu, puv, pvv), (suu, suv, svv) = _interface_blocks(inputs)
        sf = work.struct_free
        self.pen_uu = puu
        self.pen_uv = puv[:, sf].tocsr()
        self.pen_vv = pvv[sf][:, sf].tocsr()
        self.slip_uu = suu
        self.slip_uv = suv[:, sf].tocsr()
        self.slip_vv = svv[sf][:, sf].tocsr()

        self.adv_qp_w = mesh.field_at_qp(inputs.w_star)

        # constant rhs
        bu_noise, bv_noise = work.noise_rhs(inputs.dW_force)
        dt = inputs.dt
        self.rhs_u_full = (
            self.mass_J @ work.flat(inputs.u_prev)
            + dt * (inputs.p_in * work.press_in - inputs.p_out * work.press_out)
            + bu_noise
        )
        self.rhs_v = work.ms_block @ work.stack_v(inputs.v_half) + bv_noise[sf]

    @staticmethod
    def _scatter(mesh, loc):
        rows = np.repeat(mesh.cells, 4, axis=1).ravel()
        cols = np.tile(mesh.cells, (1, 4)).ravel()
        return sp.coo_matrix(
            (loc.reshape(mesh.n_cells, -1).ravel(), (rows, cols)),
            shape=(mesh.n_nodes, mesh.n_nodes),
        ).tocsr()

    def advection(self, u_adv: np.ndarray) -> sp.csr_matrix:
        """Antisymmetric scalar advection block for a frozen advecting field."""
        mesh = self.inputs.work.mesh
        adv = mesh.field_at_qp(u_adv) - self.adv_qp_w
        g = np.einsum("cqam,cqm->cqa", self.G, adv)        # directional derivatives
        loc = (
            0.5
            * mesh.qp_weight
            * (
                np.einsum("cq,qa,cqb->cab", self.J, mesh.shape, g)
                - np.einsum("cq,cqa,qb->cab", self.J, g, mesh.shape)
            )
        )
        return self._scatter(mesh, loc)

    def system(self, u_adv: np.ndarray):
        """Assembled (matrix, rhs) on free dofs for the given advecting field."""
        inputs = self.inputs
        work = inputs.work
        dt, eps, alpha = inputs.dt, inputs.eps, inputs.alpha
        B = sp.kron(self.advection(u_adv), _I2)
        A_uu = (
            self.mass_J
            + 0.5 * self.mass_dJ
            + 0.5 * dt * B
            + inputs.nu * dt * self.visc
            + (dt / eps) * (self.pdiv + self.pen_uu)
            + (dt / alpha) * self.slip_uu
        )
        A_uv = -(dt / eps) * self.pen_uv - (dt / alpha) * self.slip_uv
        A_vv = work.ms_block + (dt / eps) * self.pen_vv + (dt / alpha) * self.slip_vv
        fu = work.free_u
        A = sp.bmat(
            [
                [A_uu[fu][:, fu].tocsr(), A_uv[fu].tocsr()],
                [A_uv[fu].T.tocsr(), A_vv],
            ],
            format="csc",
        )
        b = np.concatenate([self.rhs_u_full[fu], self.rhs_v])
        return A, b


def _operator(inputs: FluidStepInputs) -> _StepOperator:
    if "op" not in inputs._cache:
        inputs._cache["op"] = _StepOperator(inputs)
    return inputs._cache["op"]


def assemble_fluid_system(inputs: FluidStepInputs, u_adv: np.ndarray):
    """Coupled (matrix, rhs) over free (velocity, interface-velocity) dofs."""
    return _operator(inputs).system(u_adv)


@dataclass
class PicardReport:
    iterations: int
    residual: float
    increment: float
    converged: bool


def fluid_substep(
    inputs: FluidStepInputs,
    picard_tol: float = 1e-10,
    max_picard: int = 50,
):
    """Solve the penalized step; returns (u_new, v_new, PicardReport).

    The advecting velocity is lagged to the previous iterate starting from
    the step-start velocity; convergence is declared on the relative
    residual of the nonlinear system.  Raises StepFailureError (with the
    last iterate attached) when max_picard is exhausted, so the caller can
    subdivide the step.
    """
    op = _operator(inputs)
    work = inputs.work
    u_adv = np.asarray(inputs.u_prev, dtype=float)
    u_new, v_new = None, None
    residual = np.inf
    increment = np.inf
    for it in range(1, max_picard + 1):
        A, b = op.system(u_adv)
        x = spla.splu(A).solve(b)
        u_new = work.expand_u(x[: work.n_u])
        v_new = work.unstack_v(x[work.n_u :])
        increment = float(
            np.linalg.norm(u_new - u_adv) / max(np.linalg.norm(u_new), 1e-300)
        )
        A2, b2 = op.system(u_new)
        r = A2 @ x - b2
        residual = float(
            np.linalg.norm(r) / max(np.linalg.norm(b2), np.linalg.norm(A2 @ x), 1e-300)
        )
        if residual < picard_tol:
            return u_new, v_new, PicardReport(it, residual, increment, True)
        u_adv = u_new
    raise StepFailureError(
        f"fluid step did not converge in {max_picard} Picard iterations "
        f"(residual {residual:.3e})",
        u_last=u_new,
        v_last=v_new,
        residual=residual,
        iterations=max_picard,
    )


@dataclass
class FluidBudget:
    """Quadratic-form bookkeeping of one accepted solve."""

    d2_visc: float
    d2_slip: float
    d2_div: float
    d2_iface: float
    c2_fluid: float
    c2_struct: float
    work_pressure: float
    work_noise_out: float
    kin_u_start: float
    kin_u_end: float
    kin_v_start: float
    kin_v_end: float

    @property
    def d2(self) -> float:
        return self.d2_visc + self.d2_slip + self.d2_div + self.d2_iface

    @property
    def identity_residual(self) -> float:
        lhs = (
            (self.kin_u_end - self.kin_u_start)
            + (self.kin_v_end - self.kin_v_start)
            + (self.c2_fluid + self.c2_struct)
            + self.d2
        )
        return abs(lhs - self.work_pressure - self.work_noise_out)


def step_budget(inputs: FluidStepInputs, u_new: np.ndarray, v_new: np.ndarray) -> FluidBudget:
    """Evaluate every energy-budget entry with the assembly quadrature."""
    op = _operator(inputs)
    work = inputs.work
    dt, eps, alpha = inputs.dt, inputs.eps, inputs.alpha
    uf = work.flat(u_new)
    u0 = work.flat(inputs.u_prev)
    vf = work.stack_v(v_new)
    v0 = work.stack_v(inputs.v_half)

    def pen_form(uu, uv, vv, u, v):
        return float(u @ (uu @ u) - 2.0 * u @ (uv @ v) + v @ (vv @ v))

    sf = work.struct_free
    d2_visc = inputs.nu * dt * float(uf @ (op.visc @ uf))
    d2_div = (dt / eps) * float(uf @ (op.pdiv @ uf))
    d2_iface = (dt / eps) * pen_form(op.pen_uu, op.pen_uv, op.pen_vv, uf, vf)
    d2_slip = (dt / alpha) * pen_form(op.slip_uu, op.slip_uv, op.slip_vv, uf, vf)
    du = uf - u0
    dv = vf - v0
    c2_fluid = 0.5 * float(du @ (op.mass_J @ du))
    c2_struct = 0.5 * float(dv @ (work.ms_block @ dv))
    work_pressure = dt * float(
        inputs.p_in * (work.press_in @ uf) - inputs.p_out * (work.press_out @ uf)
    )
    bu, bv = work.noise_rhs(inputs.dW_force)
    work_noise = float(bu @ uf + bv[sf] @ vf)
    mass_J_np1 = sp.kron(work.mesh.scalar_matrix(inputs.map_np1.J), _I2).tocsr()
    return FluidBudget(
        d2_visc=d2_visc,
        d2_slip=d2_slip,
        d2_div=d2_div,
        d2_iface=d2_iface,
        c2_fluid=c2_fluid,
        c2_struct=c2_struct,
        work_pressure=work_pressure,
        work_noise_out=work_noise,
        kin_u_start=0.5 * float(u0 @ (op.mass_J @ u0)),
        kin_u_end=0.5 * float(uf @ (mass_J_np1 @ uf)),
        kin_v_start=0.5 * float(v0 @ (work.ms_block @ v0)),
        kin_v_end=0.5 * float(vf @ (work.ms_block @ vf)),
    )


def fluid_energy_identity_residual(inputs: FluidStepInputs, outputs) -> float:
    """|LHS - RHS| of the step tested with its own solution.

    The identity balances the Jacobian-weighted kinetic change, the jump
    (numerical dissipation) terms, viscous/slip/penalty dissipation against
    boundary-pressure work and the stochastic pairing; for a converged
    solve it holds to solver precision.
    """
    u_new, v_new = outputs
    return step_budget(inputs, u_new, v_new).identity_residual
