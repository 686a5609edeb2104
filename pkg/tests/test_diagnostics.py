import numpy as np
import pytest

from stochfsi import (
    build_interpolants,
    build_problem,
    ensemble_stats,
    parse_config_text,
    penalty_scaling_report,
    refinement_ratios,
    run_path,
    telescoped_residual,
    time_shift_modulus,
    verify_fluid_budget,
    verify_structure_identity,
    verify_trajectory,
)
from stochfsi.diagnostics import _COL, fluid_inequality_slack, ledger_step
from stochfsi.geometry import interface_spectrum
from stochfsi.scheme import _FluidAdvance
from stochfsi.structure import StructureState
from stochfsi.verify import all_passed


def make_problem(text):
    return build_problem(parse_config_text(text))


BASE = """
T = 0.25
steps = 8
mesh_nz = 6
mesh_nr = 6
struct_elems = 6
"""

NOISY = BASE + """
noise_gain = 0.6
init_eta = bump
init_eta_amp_r = 0.03
init_u = poiseuille
init_u_amp = 0.3
p_in_const = 0.4
"""


@pytest.fixture(scope="module")
def noisy_traj():
    p = make_problem(NOISY)
    return p, run_path(p, seed=11)


# -- interpolants ------------------------------------------------------------


def test_interpolant_nodes_and_midpoints(noisy_traj):
    _, traj = noisy_traj
    bundle = build_interpolants(traj)
    dt = traj.dt
    for n in (0, 3, traj.n_steps):
        assert np.array_equal(bundle.u_lin(n * dt), traj.u[n])
    t = 2 * dt + dt / 2
    want = 0.5 * (traj.u[2] + traj.u[3])
    assert np.max(np.abs(bundle.u_lin(t) - want)) < 1e-14
    # left-constant and shifted families
    assert np.array_equal(bundle.u_const(2 * dt + 0.1 * dt), traj.u[2])
    assert np.array_equal(bundle.u_shift(2 * dt + 0.1 * dt), traj.u[3])
    assert np.array_equal(bundle.u_shift(3 * dt), traj.u[3])
    assert np.array_equal(bundle.v_sharp(2 * dt + 0.3 * dt), traj.v_half[2])


def test_interpolant_rate_is_half_step_velocity(noisy_traj):
    _, traj = noisy_traj
    bundle = build_interpolants(traj)
    dt = traj.dt
    for n in range(traj.n_steps):
        t = (n + 0.25) * dt
        assert np.max(np.abs(bundle.eta_lin_rate(t) - traj.v_half[n])) < 1e-12


def test_constant_vs_linear_distance_identity(noisy_traj):
    # int_0^T |u_const - u_lin|^2 dt equals sum |du|^2 dt/3; the left side
    # is integrated here with 5-point Gauss in time, independently
    problem, traj = noisy_traj
    bundle = build_interpolants(traj)
    mesh = problem.mesh
    dt = traj.dt
    gx, gw = np.polynomial.legendre.leggauss(5)
    lhs = 0.0
    for n in range(traj.n_steps):
        ts = (n + 0.5 * (gx + 1.0)) * dt
        for t, w in zip(ts, gw):
            d = bundle.u_const(t) - bundle.u_lin(t)
            lhs += 0.5 * dt * w * mesh.l2_norm(d) ** 2
    rhs = sum(
        mesh.l2_norm(traj.u[n + 1] - traj.u[n]) ** 2 * dt / 3.0
        for n in range(traj.n_steps)
    )
    assert abs(lhs - rhs) < 1e-12 * max(rhs, 1.0)


# -- ledger ------------------------------------------------------------------


def test_ledger_zero_step():
    p = make_problem(BASE + "noise_gain = 0.0\n")
    traj = run_path(p, seed=0)
    assert np.all(traj.ledger == 0.0) or np.all(
        traj.ledger[:, : _COL["picard_iters"]] == 0.0
    )


def test_ledger_structure_only_motion():
    # a step in which the fluid did not move books no fluid dissipation
    p = make_problem(BASE)
    op, work = p.op, p.work
    amap = p.map_of(np.zeros((2, p.grid.n_free)))
    rng = np.random.default_rng(0)
    eta_n = 0.01 * rng.normal(size=(2, p.grid.n_free))
    v_n = 0.01 * rng.normal(size=(2, p.grid.n_free))
    from stochfsi.structure import structure_substep

    half = structure_substep(StructureState(eta_n, v_n), op, 0.05, 1e-2)
    u = np.zeros((p.mesh.n_nodes, 2))
    adv = _FluidAdvance(u_new=u, v_new=half.v, n_subsolves=1)
    from stochfsi.noise import WienerProcess
    wiener = WienerProcess(q=p.q_spectrum, seed=0)
    row = ledger_step(
        op=op, work=work, map_star_n=amap, map_star_np1=amap,
        u_n=u, v_n=v_n, eta_n=eta_n, eta_star_n=eta_n,
        v_half=half.v, eta_half=half.eta, u_np1=u, v_np1=half.v,
        dt=0.05, eps=1e-2, advance=adv, noise=p.noise,
        wiener=wiener, dW=np.zeros(len(p.q_spectrum)), force=None,
    )
    for name in ("D2_visc", "D2_slip", "D2_div", "D2_iface", "C2"):
        assert row[_COL[name]] == 0.0
    assert verify_structure_identity(row) <= 1e-10 * max(row[_COL["E_n"]], 1.0)


def test_identities_on_noisy_path(noisy_traj):
    _, traj = noisy_traj
    for n in range(traj.n_steps):
        row = traj.ledger[n]
        scale = max(row[_COL["E_n"]], 1.0)
        assert verify_structure_identity(row) <= 1e-10 * scale
        assert verify_fluid_budget(row) <= 10 * 1e-10 * scale
        assert fluid_inequality_slack(row, 0.1) >= -1e-9 * scale
        assert row[_COL["E_n"]] >= 0.0
        for name in ("D1", "D2_visc", "D2_slip", "D2_div", "D2_iface", "C1", "C2"):
            assert row[_COL[name]] >= -1e-12
    assert telescoped_residual(traj) <= 1e-9 * max(traj.ledger[0, _COL["E_n"]], 1.0)


def test_structure_identity_single_eigenmode():
    # closed-form per-mode budget from the generalized eigenbasis
    import scipy.linalg

    p = make_problem(BASE)
    op = p.op
    lam, vec = scipy.linalg.eigh(op.stiffness, op.mass)
    i, a, b = 2, 0.4, -0.1
    dt, eps = 0.03, 1e-2
    v_hat = (b - dt * lam[i] * a) / (1.0 + dt**2 * lam[i] + eps * dt * lam[i])
    e_hat = a + dt * v_hat
    # modal budget: (b^2 + lam a^2)/2 = (v^2 + lam e^2)/2 + eps dt lam v^2
    #               + ((v-b)^2 + lam (e-a)^2)/2
    lhs = 0.5 * (v_hat**2 + lam[i] * e_hat**2) + eps * dt * lam[i] * v_hat**2
    lhs += 0.5 * ((v_hat - b) ** 2 + lam[i] * (e_hat - a) ** 2)
    rhs = 0.5 * (b**2 + lam[i] * a**2)
    assert abs(lhs - rhs) < 1e-12 * max(rhs, 1.0)
    # and the assembled step reproduces the modal numbers
    from stochfsi.structure import structure_substep

    s = StructureState(np.zeros((2, op.grid.n_free)), np.zeros((2, op.grid.n_free)))
    s.eta[1] = a * vec[:, i]
    s.v[1] = b * vec[:, i]
    out = structure_substep(s, op, dt, eps)
    kin = 0.5 * float(out.v[1] @ op.mass @ out.v[1])
    assert abs(kin - 0.5 * v_hat**2) < 1e-10


def test_verify_trajectory_pass(noisy_traj):
    problem, traj = noisy_traj
    results = verify_trajectory(problem, traj)
    assert all_passed(results)


# -- ensembles ---------------------------------------------------------------

SMALL = """
T = 0.2
steps = 4
mesh_nz = 4
mesh_nr = 4
struct_elems = 4
noise_modes = 2
noise_gain = 0.5
init_eta = bump
init_eta_amp_r = 0.02
"""


def test_ensemble_zero_state():
    p = make_problem(BASE + "noise_gain = 0.0\n")
    paths = [run_path(p, seed=s) for s in range(3)]
    st = ensemble_stats(paths)
    assert st.mean_max_E == 0.0
    assert st.n_failed == 0
    assert st.stop_hist[p.scheme.n_steps] == 3


def test_ensemble_warning_single_path():
    p = make_problem(BASE + "noise_gain = 0.0\n")
    with pytest.warns(UserWarning):
        ensemble_stats([run_path(p, seed=0)])


def test_half_width_clt_scaling():
    p = make_problem(SMALL)
    paths = [run_path(p, seed=s) for s in range(256)]
    st64 = ensemble_stats(paths[:64])
    st256 = ensemble_stats(paths)
    ratio = st64.hw_max_E / st256.hw_max_E
    assert 1.3 < ratio < 3.1
    rr = refinement_ratios([st64, st256])
    assert len(rr) == 1 and rr[0] > 0


def test_penalty_scaling_halves_with_eps():
    groups = []
    for eps in (2e-2, 1e-2):
        cfg = SMALL + f"eps = {eps}\n"
        p = make_problem(cfg)
        groups.append((eps, [run_path(p, seed=s) for s in range(8)]))
    rows = penalty_scaling_report(groups)
    assert len(rows) == 2
    assert rows[1]["div_within_2x"] and rows[1]["iface_within_2x"]
    # raw loads (scaled back by eps) roughly halve when eps halves
    raw = [r["eps"] * r["div_scaled"] for r in rows]
    assert raw[1] < raw[0]


def test_penalty_scaling_trivial_cases():
    p = make_problem(BASE + "noise_gain = 0.0\n")
    rows = penalty_scaling_report([(1e-2, [run_path(p, seed=0), run_path(p, seed=1)])])
    assert len(rows) == 1
    assert rows[0]["div_scaled"] == 0.0


def test_time_shift_modulus(noisy_traj):
    problem, traj = noisy_traj
    spec = interface_spectrum(problem.mesh)
    args = (traj, problem.mesh, problem.grid, spec)
    assert time_shift_modulus(*args, h=0.0) == 0.0
    frozen = run_path(make_problem(BASE + "noise_gain = 0.0\n"), seed=0)
    assert time_shift_modulus(frozen, problem.mesh, problem.grid, spec, h=2 * frozen.dt) == 0.0
    m2 = time_shift_modulus(*args, h=2 * traj.dt)
    m1 = time_shift_modulus(*args, h=traj.dt)
    assert m1 < m2
    with pytest.raises(ValueError):
        time_shift_modulus(*args, h=0.5 * traj.dt)
