"""Independent replay of the diagnostics suite on a stored trajectory.

Recomputes every per-step quantity from the stored states (maps are
rebuilt from the stored displacements, forces from the stored increments)
and checks the energy identities, the latch/freeze bookkeeping and the
ledger against declared tolerances.  A corrupted state array therefore
surfaces as an identity failure even if the stored ledger is
self-consistent.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diagnostics
from .diagnostics import LEDGER_COLUMNS, _COL
from .fluid import FluidStepInputs, step_budget
from .geometry import geometry_bounds, harmonic_extension
from .noise import apply_G
from .scheme import Problem, TrajectoryRecord, artificial_index, average_waveform
from .structure import StructureState, bending_form, structure_energy


@dataclass
class CheckResult:
    name: str
    step: int
    value: float
    tol: float
    passed: bool

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" step {self.step}" if self.step >= 0 else ""
        return f"[{status}] {self.name}{where}: value {self.value:.3e} (tol {self.tol:.3e})"


def verify_trajectory(problem: Problem, traj: TrajectoryRecord) -> list:
    """Replay all per-step checks; returns a list of CheckResult."""
    sch = problem.scheme
    out = []
    n_done = traj.completed_steps

    # latch is monotone and the stopped displacement freezes with it
    latch_ok = all(traj.theta[k] >= traj.theta[k + 1] for k in range(n_done))
    out.append(CheckResult("latch monotone", -1, float(not latch_ok), 0.5, latch_ok))
    freeze_err = 0.0
    for n in range(n_done + 1):
        idx = artificial_index(traj.theta[: n + 1])
        freeze_err = max(freeze_err, float(np.max(np.abs(traj.eta_star[n] - traj.eta[idx]))))
    out.append(CheckResult("stopped displacement freeze", -1, freeze_err, 0.0, freeze_err == 0.0))

    maps = {}

    def map_at(n):
        if n not in maps:
            trace = problem.interface_trace(traj.eta_star[n])
            maps[n] = harmonic_extension(problem.mesh, trace)
        return maps[n]

    mesh = problem.mesh
    op = problem.op
    work = problem.work
    dt = traj.dt

    for n in range(n_done):
        row = traj.ledger[n]
        m_n = map_at(n)
        m_np1 = map_at(n + 1)

        # recompute the geometry certificates of the true displacement
        b = geometry_bounds(
            harmonic_extension(mesh, problem.interface_trace(traj.eta[n + 1])), sch.s_exp
        )
        gerr = max(abs(b.j_min - traj.j_min[n + 1]), abs(b.eta_norm - traj.eta_norm[n + 1]))
        out.append(CheckResult("geometry certificates", n, gerr, 1e-9, gerr <= 1e-9))

        # structure identity from raw states
        kin_u = diagnostics.weighted_kinetic(mesh, m_n.J, traj.u[n])
        kv_n, el_n = structure_energy(StructureState(traj.eta[n], traj.v[n]), op)
        kv_h, el_h = structure_energy(StructureState(traj.eta[n + 1], traj.v_half[n]), op)
        E_n = kin_u + kv_n + el_n
        E_half = kin_u + kv_h + el_h
        D1 = sch.eps * dt * bending_form(traj.v_half[n], op)
        dv = traj.v_half[n] - traj.v[n]
        de = traj.eta[n + 1] - traj.eta[n]
        C1 = 0.5 * float(np.einsum("ci,ij,cj->", dv, op.mass, dv)) + 0.5 * float(
            np.einsum("ci,ij,cj->", de, op.stiffness, de)
        )
        tol_s = 1e-10 * max(E_n, 1.0)
        r_s = abs(E_half + D1 + C1 - E_n)
        out.append(CheckResult("elastic half-step balance", n, r_s, tol_s, r_s <= tol_s))

        # fluid budget from raw states (single solves replay exactly)
        n_sub = int(round(row[_COL["n_subsolves"]]))
        tol_f = 10.0 * sch.picard_tol * max(E_n, 1.0)
        if n_sub == 1:
            force = (
                apply_G(problem.noise, traj.u[n], traj.eta_star[n], traj.dW[n])
                if problem.noise.gain > 0.0
                else None
            )
            inputs = FluidStepInputs(
                work=work,
                u_prev=traj.u[n],
                v_half=traj.v_half[n],
                map_n=m_n,
                map_np1=m_np1,
                dt=dt,
                eps=sch.eps,
                alpha=sch.alpha,
                nu=sch.nu,
                p_in=average_waveform(problem.p_in_fun, n * dt, (n + 1) * dt),
                p_out=average_waveform(problem.p_out_fun, n * dt, (n + 1) * dt),
                dW_force=force,
                slip_tangential=sch.slip_tangential,
            )
            budget = step_budget(inputs, traj.u[n + 1], traj.v[n + 1])
            r_f = budget.identity_residual
            out.append(CheckResult("fluid step balance", n, r_f, tol_f, r_f <= tol_f))
            ledger_drift = max(
                abs(budget.d2 - diagnostics.d2_total(row)),
                abs(budget.c2_fluid + budget.c2_struct - row[_COL["C2"]]),
                abs(budget.work_pressure - row[_COL["work_pressure"]]),
                abs(budget.work_noise_out - row[_COL["work_noise_out"]]),
            )
            tol_d = 1e-9 * max(E_n, 1.0)
            out.append(
                CheckResult("ledger consistency", n, ledger_drift, tol_d, ledger_drift <= tol_d)
            )
        else:
            r_f = diagnostics.verify_fluid_budget(row)
            out.append(CheckResult("fluid step balance (subdivided)", n, r_f, tol_f, r_f <= tol_f))

        # relaxed a-priori estimate; only meaningful for single solves
        if n_sub == 1:
            slack = diagnostics.fluid_inequality_slack(row, sch.delta1)
            tol_i = 1e-9 * max(E_n, 1.0)
            out.append(CheckResult("step estimate slack", n, slack, tol_i, slack >= -tol_i))

        e_np1 = row[_COL["E_np1"]]
        out.append(CheckResult("energy nonnegative", n, e_np1, 0.0, e_np1 >= 0.0))

    return out


def all_passed(results) -> bool:
    return all(r.passed for r in results)
