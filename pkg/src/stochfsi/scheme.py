"""Splitting time loop: elastic half-step, cutoff bookkeeping, fluid half-step.

Each step advances (u, eta, v) by first updating the interface state
implicitly (fluid frozen), then freezing the geometry through the stopped
"artificial" displacement and solving the penalized fluid problem on the
bracketing artificial configurations.  A monotone latch tracks the
Jacobian floor and the fractional interface norm of the true displacement;
once either bound is violated the artificial displacement stays frozen,
which keeps every fluid solve on a uniformly non-degenerate domain.

On a Picard failure the fluid solve of that step is subdivided (bridged
noise increments, linearly interpolated artificial configurations) while
the reported grid keeps its spacing; repeated failure truncates the path.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diagnostics
from .errors import ConfigurationError, StepFailureError
from .fluid import FluidStepInputs, FluidWorkspace, fluid_substep, step_budget
from .geometry import AleMap, GeometryBounds, geometry_bounds, harmonic_extension
from .mesh import ReferenceMesh
from .noise import NoiseCoefficient, WienerProcess, apply_G, default_spectrum
from .structure import (
    ElasticOperator,
    HermiteGrid,
    StructureState,
    assemble_elastic,
    evaluate_state,
    structure_substep,
)

_G4_X = np.array(
    [-0.8611363115940526, -0.3399810435848563, 0.3399810435848563, 0.8611363115940526]
)
_G4_W = np.array(
    [0.3478548451374538, 0.6521451548625461, 0.6521451548625461, 0.3478548451374538]
)


def average_waveform(fun, t0: float, t1: float) -> float:
    """4-point Gauss average of a scalar waveform over [t0, t1]."""
    if t1 <= t0:
        raise ValueError("empty averaging interval")
    ts = 0.5 * (t0 + t1) + 0.5 * (t1 - t0) * _G4_X
    return float(0.5 * np.sum(_G4_W * np.asarray([fun(t) for t in ts])))


@dataclass
class SchemeConfig:
    """Numeric parameters of one marching run."""

    T: float = 0.5
    n_steps: int = 32
    eps: float = 1e-2
    delta1: float = 0.1
    delta2: float = 0.5
    s_exp: float = 1.75
    alpha: float = 1.0
    nu: float = 0.1
    picard_tol: float = 1e-10
    max_picard: int = 50
    max_halvings: int = 3
    slip_tangential: bool = False

    def __post_init__(self):
        if self.T <= 0 or self.n_steps < 1:
            raise ConfigurationError("T must be positive and n_steps >= 1")
        if min(self.eps, self.delta1, self.delta2, self.alpha, self.nu) <= 0:
            raise ConfigurationError("eps, delta1, delta2, alpha, nu must be positive")
        if not 1.5 < self.s_exp < 2.0:
            raise ConfigurationError("s_exp must lie in (3/2, 2)")

    @property
    def dt(self) -> float:
        return self.T / self.n_steps


@dataclass
class Problem:
    """Mesh, operators and data defining one stochastic marching problem."""

    mesh: ReferenceMesh
    grid: HermiteGrid
    op: ElasticOperator
    work: FluidWorkspace
    scheme: SchemeConfig
    noise: NoiseCoefficient
    q_spectrum: np.ndarray
    p_in_fun: callable
    p_out_fun: callable
    u0: np.ndarray
    state0: StructureState

    @staticmethod
    def build(
        mesh: ReferenceMesh,
        grid: HermiteGrid,
        scheme: SchemeConfig,
        c_bend: float = 1.0,
        c_low: float = 0.0,
        k_modes: int = 6,
        noise_decay: float = 2.0,
        noise_gain: float = 0.5,
        p_in_fun=None,
        p_out_fun=None,
        u0: np.ndarray = None,
        state0: StructureState = None,
    ) -> "Problem":
        op = assemble_elastic(grid, c_bend=c_bend, c_low=c_low)
        work = FluidWorkspace(mesh, grid, op)
        q = default_spectrum(k_modes, noise_decay)
        noise = NoiseCoefficient(mesh, op, q, gain=noise_gain)
        if u0 is None:
            u0 = np.zeros((mesh.n_nodes, 2))
        u0 = np.asarray(u0, dtype=float).copy()
        u0[mesh.constrained_ur, 1] = 0.0
        if state0 is None:
            state0 = StructureState.zero(op)
        zero = lambda t: 0.0
        return Problem(
            mesh=mesh,
            grid=grid,
            op=op,
            work=work,
            scheme=scheme,
            noise=noise,
            q_spectrum=q,
            p_in_fun=p_in_fun or zero,
            p_out_fun=p_out_fun or zero,
            u0=u0,
            state0=state0,
        )

    def interface_trace(self, eta_coeffs: np.ndarray) -> np.ndarray:
        return evaluate_state(self.grid, eta_coeffs, self.mesh.interface_z)

    def map_of(self, eta_coeffs: np.ndarray) -> AleMap:
        return harmonic_extension(self.mesh, self.interface_trace(eta_coeffs))


def compute_cutoff(history, delta1: float, delta2: float) -> int:
    """Monotone latch over a history of geometry certificates.

    1 iff every recorded state keeps the Jacobian floor strictly above
    delta1 and the fractional interface norm strictly below 1/delta2.
    """
    if len(history) == 0:
        raise ValueError("cutoff needs a nonempty history")
    for b in history:
        if not (b.j_min > delta1 and b.eta_norm < 1.0 / delta2):
            return 0
    return 1


def artificial_index(thetas) -> int:
    """Largest step index whose latch was still closed (0 if none)."""
    idx = 0
    for k, th in enumerate(thetas):
        if th:
            idx = k
    return idx


def update_artificial(trajectory, n: int) -> np.ndarray:
    """Stopped displacement at step n from the recorded latch history."""
    idx = artificial_index(trajectory.theta[: n + 1])
    return trajectory.eta[idx]


def detect_stopping_time(trajectory, delta1: float = None, delta2: float = None) -> int:
    """First step at which the true displacement violates either bound.

    Returns the step count of the trajectory if no violation occurs among
    the recorded steps.  For compliant initial data the result is at
    least 1.
    """
    delta1 = trajectory.delta1 if delta1 is None else delta1
    delta2 = trajectory.delta2 if delta2 is None else delta2
    for k in range(trajectory.completed_steps + 1):
        if trajectory.j_min[k] <= delta1 or trajectory.eta_norm[k] >= 1.0 / delta2:
            return k
    return trajectory.n_steps


@dataclass
class TrajectoryRecord:
    """Complete per-step record of one path."""

    dt: float
    n_steps: int
    delta1: float
    delta2: float
    s_exp: float
    seed: int
    u: np.ndarray          # (N+1, n_nodes, 2)
    v: np.ndarray          # (N+1, 2, n_free)
    v_half: np.ndarray     # (N, 2, n_free)
    eta: np.ndarray        # (N+1, 2, n_free)
    eta_star: np.ndarray   # (N+1, 2, n_free)
    theta: np.ndarray      # (N+1,)
    j_min: np.ndarray      # (N+1,)
    eta_norm: np.ndarray   # (N+1,)
    dW: np.ndarray         # (N, K)
    ledger: np.ndarray     # (N, len(diagnostics.LEDGER_COLUMNS))
    stop_step: int = 0
    failed: bool = False
    completed_steps: int = 0

    def row(self, n: int) -> dict:
        return dict(zip(diagnostics.LEDGER_COLUMNS, self.ledger[n]))


@dataclass
class _FluidAdvance:
    u_new: np.ndarray
    v_new: np.ndarray
    d2_visc: float = 0.0
    d2_slip: float = 0.0
    d2_div: float = 0.0
    d2_iface: float = 0.0
    c2_fluid: float = 0.0
    c2_struct: float = 0.0
    work_pressure: float = 0.0
    work_noise_out: float = 0.0
    resid_sum: float = 0.0
    picard_iters: int = 0
    picard_resid: float = 0.0
    n_subsolves: int = 0


def _interp_map(mesh, map_a: AleMap, map_b: AleMap, theta: float) -> AleMap:
    # harmonic extension is linear in its data, so interpolating the full
    # displacement equals extending the interpolated boundary data
    return AleMap(mesh, (1.0 - theta) * map_a.d + theta * map_b.d)


def _advance_fluid(
    problem: Problem,
    step: int,
    t0: float,
    u_n: np.ndarray,
    v_half: np.ndarray,
    map_star_n: AleMap,
    map_star_np1: AleMap,
    dW: np.ndarray,
    wiener: WienerProcess,
    force_state: tuple,
) -> _FluidAdvance:
    """Solve the fluid half-step, subdividing on Picard failure."""
    sch = problem.scheme
    dt = sch.dt
    u_hold, eta_star_hold = force_state

    for level in range(sch.max_halvings + 1):
        n_sub = 2**level
        if level == 0:
            increments = [dW]
        else:
            increments = wiener.bridge(increments, dt / 2 ** (level - 1), step, level)
        tau = dt / n_sub
        try:
            adv = _FluidAdvance(u_new=u_n, v_new=v_half, n_subsolves=n_sub)
            u_cur, v_cur = u_n, v_half
            for i in range(n_sub):
                m_a = map_star_n if i == 0 else _interp_map(
                    problem.mesh, map_star_n, map_star_np1, i / n_sub
                )
                m_b = map_star_np1 if i == n_sub - 1 else _interp_map(
                    problem.mesh, map_star_n, map_star_np1, (i + 1) / n_sub
                )
                if problem.noise.gain > 0.0:
                    force = apply_G(problem.noise, u_hold, eta_star_hold, increments[i])
                else:
                    force = None
                inputs = FluidStepInputs(
                    work=problem.work,
                    u_prev=u_cur,
                    v_half=v_cur,
                    map_n=m_a,
                    map_np1=m_b,
                    dt=tau,
                    eps=sch.eps,
                    alpha=sch.alpha,
                    nu=sch.nu,
                    p_in=average_waveform(problem.p_in_fun, t0 + i * tau, t0 + (i + 1) * tau),
                    p_out=average_waveform(problem.p_out_fun, t0 + i * tau, t0 + (i + 1) * tau),
                    dW_force=force,
                    slip_tangential=sch.slip_tangential,
                )
                u_cur, v_cur, report = fluid_substep(
                    inputs, picard_tol=sch.picard_tol, max_picard=sch.max_picard
                )
                b = step_budget(inputs, u_cur, v_cur)
                adv.d2_visc += b.d2_visc
                adv.d2_slip += b.d2_slip
                adv.d2_div += b.d2_div
                adv.d2_iface += b.d2_iface
                adv.c2_fluid += b.c2_fluid
                adv.c2_struct += b.c2_struct
                adv.work_pressure += b.work_pressure
                adv.work_noise_out += b.work_noise_out
                adv.resid_sum += b.identity_residual
                adv.picard_iters += report.iterations
                adv.picard_resid = max(adv.picard_resid, report.residual)
            adv.u_new, adv.v_new = u_cur, v_cur
            return adv
        except StepFailureError:
            if level == sch.max_halvings:
                raise
            continue


def run_path(problem: Problem, seed: int) -> TrajectoryRecord:
    """March one path over [0, T]; deterministic in (problem, seed)."""
    sch = problem.scheme
    mesh, op = problem.mesh, problem.op
    N = sch.n_steps
    dt = sch.dt
    wiener = WienerProcess(q=problem.q_spectrum, seed=seed)
    K = wiener.k_modes

    n_free = problem.grid.n_free
    traj = TrajectoryRecord(
        dt=dt,
        n_steps=N,
        delta1=sch.delta1,
        delta2=sch.delta2,
        s_exp=sch.s_exp,
        seed=seed,
        u=np.zeros((N + 1, mesh.n_nodes, 2)),
        v=np.zeros((N + 1, 2, n_free)),
        v_half=np.zeros((N, 2, n_free)),
        eta=np.zeros((N + 1, 2, n_free)),
        eta_star=np.zeros((N + 1, 2, n_free)),
        theta=np.zeros(N + 1, dtype=np.int64),
        j_min=np.zeros(N + 1),
        eta_norm=np.zeros(N + 1),
        dW=np.zeros((N, K)),
        ledger=np.zeros((N, len(diagnostics.LEDGER_COLUMNS))),
    )

    state = StructureState(problem.state0.eta.copy(), problem.state0.v.copy())
    u = problem.u0.copy()
    amap = problem.map_of(state.eta)
    bounds = geometry_bounds(amap, sch.s_exp)
    theta = 1 if (bounds.j_min > sch.delta1 and bounds.eta_norm < 1.0 / sch.delta2) else 0
    if theta == 0:
        raise ConfigurationError(
            "initial displacement violates the geometry bounds: "
            f"min J = {bounds.j_min:.4g} (needs > {sch.delta1}), "
            f"interface norm = {bounds.eta_norm:.4g} (needs < {1.0 / sch.delta2:.4g})"
        )
    traj.u[0] = u
    traj.v[0] = state.v
    traj.eta[0] = state.eta
    traj.eta_star[0] = state.eta
    traj.theta[0] = theta
    traj.j_min[0] = bounds.j_min
    traj.eta_norm[0] = bounds.eta_norm

    eta_star = state.eta.copy()
    map_star = amap

    for n in range(N):
        half = structure_substep(state, op, dt, sch.eps)
        eta_np1, v_half = half.eta, half.v

        map_true = problem.map_of(eta_np1)
        b_new = geometry_bounds(map_true, sch.s_exp)
        ok = b_new.j_min > sch.delta1 and b_new.eta_norm < 1.0 / sch.delta2
        theta_np1 = theta if not theta else (1 if ok else 0)
        if theta_np1:
            eta_star_np1, map_star_np1 = eta_np1, map_true
        else:
            eta_star_np1, map_star_np1 = eta_star, map_star

        dW = wiener.sample_at(n, dt)
        if problem.noise.gain > 0.0:
            force_full = apply_G(problem.noise, u, eta_star, dW)
        else:
            force_full = None

        try:
            adv = _advance_fluid(
                problem, n, n * dt, u, v_half, map_star, map_star_np1,
                dW, wiener, (u.copy(), eta_star.copy()),
            )
        except StepFailureError:
            traj.failed = True
            traj.completed_steps = n
            traj.v_half[n] = v_half
            traj.dW[n] = dW
            traj.stop_step = detect_stopping_time(traj)
            return traj

        row = diagnostics.ledger_step(
            op=op,
            work=problem.work,
            map_star_n=map_star,
            map_star_np1=map_star_np1,
            u_n=u,
            v_n=state.v,
            eta_n=state.eta,
            eta_star_n=eta_star,
            v_half=v_half,
            eta_half=eta_np1,
            u_np1=adv.u_new,
            v_np1=adv.v_new,
            dt=dt,
            eps=sch.eps,
            advance=adv,
            noise=problem.noise,
            wiener=wiener,
            dW=dW,
            force=force_full,
        )

        state = StructureState(eta_np1, adv.v_new)
        u = adv.u_new
        eta_star, map_star, theta = eta_star_np1, map_star_np1, theta_np1

        traj.u[n + 1] = u
        traj.v[n + 1] = state.v
        traj.v_half[n] = v_half
        traj.eta[n + 1] = eta_np1
        traj.eta_star[n + 1] = eta_star
        traj.theta[n + 1] = theta
        traj.j_min[n + 1] = b_new.j_min
        traj.eta_norm[n + 1] = b_new.eta_norm
        traj.dW[n] = dW
        traj.ledger[n] = row
        traj.completed_steps = n + 1

    traj.stop_step = detect_stopping_time(traj)
    return traj
