"""Per-step energy ledger, identity checks and ensemble aggregation.

One ledger row collects, with the same quadrature the solvers assemble
with, the energies before/between/after the two half-steps, the physical
and numerical dissipation, boundary-pressure work and the stochastic
pairings.  Two per-step identities are then available to machine
precision: the elastic half-step balance

    E_half + D1 + C1 = E_n,

and the fluid budget

    E_np1 - E_half + C2 + D2 = pressure work + stochastic pairing,

whose Young-inequality relaxation is also asserted (the classical
a-priori form with the quadratic noise term).
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .structure import bending_form, structure_energy

LEDGER_COLUMNS = (
    "E_n",
    "E_half",
    "E_np1",
    "D1",
    "D2_visc",
    "D2_slip",
    "D2_div",
    "D2_iface",
    "C1",
    "C1_v",
    "C2",
    "work_pressure",
    "work_noise_prev",
    "work_noise_out",
    "noise_quad",
    "gdw_l2sq",
    "resid_structure",
    "resid_fluid",
    "picard_iters",
    "picard_resid",
    "n_subsolves",
    "dW_u0_norm2",
)

_COL = {name: i for i, name in enumerate(LEDGER_COLUMNS)}


def weighted_kinetic(mesh, jac_qp: np.ndarray, u: np.ndarray) -> float:
    """(1/2) integral of J |u|^2 over the rectangle."""
    uq = mesh.field_at_qp(u)
    return 0.5 * mesh.integrate(jac_qp * np.sum(uq * uq, axis=-1))


def ledger_step(
    op,
    work,
    map_star_n,
    map_star_np1,
    u_n,
    v_n,
    eta_n,
    eta_star_n,
    v_half,
    eta_half,
    u_np1,
    v_np1,
    dt,
    eps,
    advance,
    noise,
    wiener,
    dW,
    force,
) -> np.ndarray:
    """Evaluate every ledger quantity for one completed step."""
    mesh = work.mesh
    from .structure import StructureState  # local alias for energy calls

    kin_u_n = weighted_kinetic(mesh, map_star_n.J, u_n)
    kin_u_np1 = weighted_kinetic(mesh, map_star_np1.J, u_np1)
    kin_v_n, ela_n = structure_energy(StructureState(eta_n, v_n), op)
    kin_v_half, ela_half = structure_energy(StructureState(eta_half, v_half), op)
    kin_v_np1, ela_np1 = structure_energy(StructureState(eta_half, v_np1), op)

    E_n = kin_u_n + kin_v_n + ela_n
    E_half = kin_u_n + kin_v_half + ela_half
    E_np1 = kin_u_np1 + kin_v_np1 + ela_np1

    D1 = eps * dt * bending_form(v_half, op)
    dv = v_half - v_n
    de = eta_half - eta_n
    C1_v = 0.5 * float(np.einsum("ci,ij,cj->", dv, op.mass, dv))
    C1 = C1_v + 0.5 * float(np.einsum("ci,ij,cj->", de, op.stiffness, de))
    C2 = advance.c2_fluid + advance.c2_struct
    D2 = advance.d2_visc + advance.d2_slip + advance.d2_div + advance.d2_iface

    if force is not None:
        bu, bv = work.noise_rhs(force)
        work_noise_prev = float(
            bu @ work.flat(u_n) + bv[work.struct_free] @ work.stack_v(v_n)
        )
        f_fluid, f_struct = force
        gdw_l2sq = mesh.l2_norm(f_fluid) ** 2 + float(
            sum(f_struct[:, c] @ noise.iface_mass @ f_struct[:, c] for c in range(2))
        )
        noise_quad = wiener.u0_norm2(dW) * noise.hs_norm(u_n, eta_star_n) ** 2
    else:
        work_noise_prev = 0.0
        gdw_l2sq = 0.0
        noise_quad = 0.0

    resid_structure = abs(E_half + D1 + C1 - E_n)
    row = np.zeros(len(LEDGER_COLUMNS))
    vals = {
        "E_n": E_n,
        "E_half": E_half,
        "E_np1": E_np1,
        "D1": D1,
        "D2_visc": advance.d2_visc,
        "D2_slip": advance.d2_slip,
        "D2_div": advance.d2_div,
        "D2_iface": advance.d2_iface,
        "C1": C1,
        "C1_v": C1_v,
        "C2": C2,
        "work_pressure": advance.work_pressure,
        "work_noise_prev": work_noise_prev,
        "work_noise_out": advance.work_noise_out,
        "noise_quad": noise_quad,
        "gdw_l2sq": gdw_l2sq,
        "resid_structure": resid_structure,
        "resid_fluid": advance.resid_sum,
        "picard_iters": float(advance.picard_iters),
        "picard_resid": advance.picard_resid,
        "n_subsolves": float(advance.n_subsolves),
        "dW_u0_norm2": wiener.u0_norm2(dW),
    }
    for k, v in vals.items():
        row[_COL[k]] = v
    return row


def _get(row, name):
    if isinstance(row, dict):
        return row[name]
    return row[_COL[name]]


def verify_structure_identity(row) -> float:
    """Residual of E_half + D1 + C1 = E_n, recomputed from the row."""
    return abs(
        _get(row, "E_half") + _get(row, "D1") + _get(row, "C1") - _get(row, "E_n")
    )


def d2_total(row) -> float:
    return (
        _get(row, "D2_visc")
        + _get(row, "D2_slip")
        + _get(row, "D2_div")
        + _get(row, "D2_iface")
    )


def verify_fluid_budget(row) -> float:
    """Residual of the fluid step budget, recomputed from the row."""
    lhs = _get(row, "E_np1") - _get(row, "E_half") + _get(row, "C2") + d2_total(row)
    rhs = _get(row, "work_pressure") + _get(row, "work_noise_out")
    return abs(lhs - rhs)


def fluid_inequality_slack(row, delta1: float) -> float:
    """Nonnegative slack of the Young-relaxed step estimate.

    Applies Cauchy-Schwarz/Young to the increment part of the stochastic
    pairing (valid when the artificial Jacobian floor delta1 holds), giving

        E_np1 + D2 + C2/2 <= E_half + pressure work + |noise work at n|
                             + max(1/delta1, 2) |G dW|_L2^2 + C1_v / 2.
    """
    lhs = _get(row, "E_np1") + d2_total(row) + 0.5 * _get(row, "C2")
    rhs = (
        _get(row, "E_half")
        + _get(row, "work_pressure")
        + abs(_get(row, "work_noise_prev"))
        + max(1.0 / delta1, 2.0) * _get(row, "gdw_l2sq")
        + 0.5 * _get(row, "C1_v")
    )
    return rhs - lhs


def telescoped_residual(traj, m: int = None) -> float:
    """Defect of the summed budget E_m - E_0 + sum(D + C) = sum(work)."""
    m = traj.completed_steps if m is None else m
    led = traj.ledger[:m]
    e0 = led[0, _COL["E_n"]]
    em = led[m - 1, _COL["E_np1"]]
    dsum = led[:, _COL["D1"]].sum() + sum(d2_total(r) for r in led)
    csum = led[:, _COL["C1"]].sum() + led[:, _COL["C2"]].sum()
    wsum = led[:, _COL["work_pressure"]].sum() + led[:, _COL["work_noise_out"]].sum()
    return abs(em - e0 + dsum + csum - wsum)


@dataclass
class EnsembleStats:
    """Monte Carlo aggregates over one ensemble of paths."""

    n_paths: int
    mean_max_E: float
    hw_max_E: float
    mean_sum_D: float
    hw_sum_D: float
    mean_sum_C: float
    hw_sum_C: float
    penalty_div_mean: float
    penalty_iface_mean: float
    stop_hist: np.ndarray
    n_failed: int


def _mean_hw(x: np.ndarray):
    x = np.asarray(x, dtype=float)
    m = float(np.mean(x))
    if len(x) < 2:
        return m, float("inf")
    return m, float(1.96 * np.std(x, ddof=1) / np.sqrt(len(x)))


def ensemble_stats(paths) -> EnsembleStats:
    """Aggregate path maxima, dissipation sums and penalty loads."""
    if len(paths) < 2:
        warnings.warn("fewer than 2 paths: confidence half-widths are meaningless")
    max_E, sum_D, sum_C, pen_div, pen_if, stops = [], [], [], [], [], []
    n_failed = 0
    n_steps = max(p.n_steps for p in paths)
    for p in paths:
        led = p.ledger[: p.completed_steps]
        if p.failed:
            n_failed += 1
        if len(led) == 0:
            continue
        max_E.append(np.max(led[:, _COL["E_np1"]]))
        sum_D.append(led[:, _COL["D1"]].sum() + sum(d2_total(r) for r in led))
        sum_C.append(led[:, _COL["C1"]].sum() + led[:, _COL["C2"]].sum())
        pen_div.append(led[:, _COL["D2_div"]].sum())
        pen_if.append(led[:, _COL["D2_iface"]].sum())
        stops.append(p.stop_step)
    m_max, h_max = _mean_hw(max_E)
    m_d, h_d = _mean_hw(sum_D)
    m_c, h_c = _mean_hw(sum_C)
    return EnsembleStats(
        n_paths=len(paths),
        mean_max_E=m_max,
        hw_max_E=h_max,
        mean_sum_D=m_d,
        hw_sum_D=h_d,
        mean_sum_C=m_c,
        hw_sum_C=h_c,
        penalty_div_mean=float(np.mean(pen_div)),
        penalty_iface_mean=float(np.mean(pen_if)),
        stop_hist=np.bincount(stops, minlength=n_steps + 1),
        n_failed=n_failed,
    )


def refinement_ratios(stats_seq):
    """Ratios of E[max E] between consecutive refinement grid points."""
    out = []
    for a, b in zip(stats_seq[:-1], stats_seq[1:]):
        out.append(b.mean_max_E / max(a.mean_max_E, 1e-300))
    return out


def penalty_scaling_report(groups):
    """Scaled penalty loads per eps value.

    ``groups`` is a sequence of (eps, [trajectories]).  Each row reports
    E[sum dt |div u|^2 / eps] and the interface analogue plus a flag that
    the value stays within twice the coarsest-eps one.
    """
    rows = []
    for eps, paths in groups:
        st = ensemble_stats(paths)
        rows.append(
            {
                "eps": eps,
                "div_scaled": st.penalty_div_mean,
                "iface_scaled": st.penalty_iface_mean,
                "n_paths": st.n_paths,
            }
        )
    if rows:
        base_div = max(rows[0]["div_scaled"], 1e-300)
        base_if = max(rows[0]["iface_scaled"], 1e-300)
        for r in rows:
            r["div_within_2x"] = bool(r["div_scaled"] <= 2.0 * base_div + 1e-300)
            r["iface_within_2x"] = bool(r["iface_scaled"] <= 2.0 * base_if + 1e-300)
    return rows


def time_shift_modulus(traj, mesh, grid, spectrum, h: float, beta: float = 0.25) -> float:
    """Translated-in-time modulus dt sum_n |u^n - u^{n-j}|^2 + |v^n - v^{n-j}|^2_{-beta}.

    ``h`` must be a multiple of the step; the velocity part uses the dual
    interface-eigenbasis norm of the trace.
    """
    from .structure import evaluate_state

    dt = traj.dt
    j = int(round(h / dt))
    if abs(j * dt - h) > 1e-10 * max(dt, 1.0):
        raise ValueError("shift must be a multiple of the time step")
    if j == 0:
        return 0.0
    n_rec = traj.completed_steps
    total = 0.0
    for n in range(j, n_rec + 1):
        du = traj.u[n] - traj.u[n - j]
        total += mesh.l2_norm(du) ** 2
        dv = traj.v[n] - traj.v[n - j]
        trace = evaluate_state(grid, dv, mesh.interface_z)
        total += spectrum.sobolev_norm(trace, -beta) ** 2
    return dt * total
