import numpy as np
import pytest
import scipy.linalg

from stochfsi import (
    ConfigurationError,
    StructureState,
    assemble_elastic,
    structure_energy,
    structure_substep,
)
from stochfsi.structure import HermiteGrid, bending_form, energy_norm


@pytest.fixture(scope="module")
def grid():
    return HermiteGrid(1.0, 12)


@pytest.fixture(scope="module")
def op(grid):
    return assemble_elastic(grid)


def test_coercive_on_constrained_space(op):
    lam = scipy.linalg.eigh(op.stiffness, op.mass, eigvals_only=True)
    assert lam[0] > 0.0
    assert np.max(np.abs(op.stiffness - op.stiffness.T)) == 0.0


def test_zero_bending_rejected(grid):
    with pytest.raises(ConfigurationError):
        assemble_elastic(grid, c_bend=0.0)


def test_stiffness_matches_dense_quadrature(grid, op):
    # interpolate the clamped quartic z^2 (L-z)^2 and compare the stiffness
    # action against 10-point Gauss quadrature of the bending pairing
    L = grid.length
    z = grid.z_nodes
    full = np.zeros((2, grid.n_full))
    full[0, 0::2] = z**2 * (L - z) ** 2
    full[0, 1::2] = 2 * z * (L - z) ** 2 - 2 * z**2 * (L - z)
    coeffs = full[:, grid.free]

    gx, gw = np.polynomial.legendre.leggauss(10)
    out = np.zeros(grid.n_full)
    for e in range(grid.n_elems):
        x = 0.5 * (gx + 1.0) * grid.h
        w = 0.5 * grid.h * gw
        H2 = grid._shapes(x, deriv=2)               # (10, 4)
        pe = full[0, 2 * e : 2 * e + 4] @ H2.T      # interpolant second derivative
        out[2 * e : 2 * e + 4] += (H2 * (w * pe)[:, None]).sum(axis=0)
    got = op.stiffness @ coeffs[0]
    assert np.max(np.abs(got - out[grid.free])) < 1e-10


def test_stiffness_zero_function(op):
    z = np.zeros(op.grid.n_free)
    assert np.all(op.stiffness @ z == 0.0)


def test_substep_zero_fixed_point(op):
    s = StructureState.zero(op)
    out = structure_substep(s, op, dt=0.05, eps=1e-3)
    assert np.all(out.eta == 0.0) and np.all(out.v == 0.0)


def test_substep_eigenmode_closed_form(op):
    # with the default operator the regularization equals the stiffness, so
    # generalized eigenmodes of (K, M) evolve by an explicit 2x2 update
    lam, vec = scipy.linalg.eigh(op.stiffness, op.mass)
    dt, eps = 0.02, 1e-2
    i = 1
    a, b = 0.3, -0.8
    s = StructureState(np.zeros((2, op.grid.n_free)), np.zeros((2, op.grid.n_free)))
    s.eta[0] = a * vec[:, i]
    s.v[0] = b * vec[:, i]
    out = structure_substep(s, op, dt, eps)
    v_hat = (b - dt * lam[i] * a) / (1.0 + dt**2 * lam[i] + eps * dt * lam[i])
    eta_hat = a + dt * v_hat
    assert np.max(np.abs(out.v[0] - v_hat * vec[:, i])) < 1e-10
    assert np.max(np.abs(out.eta[0] - eta_hat * vec[:, i])) < 1e-10
    assert np.max(np.abs(out.v[1])) == 0.0


def test_substep_displacement_velocity_relation(op):
    rng = np.random.default_rng(0)
    s = StructureState(
        rng.normal(size=(2, op.grid.n_free)), rng.normal(size=(2, op.grid.n_free))
    )
    dt = 0.07
    out = structure_substep(s, op, dt, eps=1e-3)
    assert np.max(np.abs(out.eta - (s.eta + dt * out.v))) < 1e-14


def test_substep_energy_identity_and_stability(op):
    rng = np.random.default_rng(1)
    for dt in (1e-3, 0.05, 2.0, 50.0):
        s = StructureState(
            rng.normal(size=(2, op.grid.n_free)), rng.normal(size=(2, op.grid.n_free))
        )
        eps = 1e-2
        out = structure_substep(s, op, dt, eps)
        kin_n, ela_n = structure_energy(s, op)
        kin_h, ela_h = structure_energy(out, op)
        dv = out.v - s.v
        de = out.eta - s.eta
        c1 = 0.5 * float(np.einsum("ci,ij,cj->", dv, op.mass, dv)) + 0.5 * float(
            np.einsum("ci,ij,cj->", de, op.stiffness, de)
        )
        d1 = eps * dt * bending_form(out.v, op)
        e_n = kin_n + ela_n
        e_half = kin_h + ela_h
        assert abs(e_half + d1 + c1 - e_n) < 1e-10 * max(e_n, 1.0)
        assert e_half <= e_n + 1e-12 * max(e_n, 1.0)


def test_substep_linearity(op):
    rng = np.random.default_rng(2)
    s1 = StructureState(rng.normal(size=(2, op.grid.n_free)), rng.normal(size=(2, op.grid.n_free)))
    s2 = StructureState(rng.normal(size=(2, op.grid.n_free)), rng.normal(size=(2, op.grid.n_free)))
    a, b = 1.7, -0.4
    comb = StructureState(a * s1.eta + b * s2.eta, a * s1.v + b * s2.v)
    o12 = structure_substep(comb, op, 0.03, 1e-3)
    o1 = structure_substep(s1, op, 0.03, 1e-3)
    o2 = structure_substep(s2, op, 0.03, 1e-3)
    scale_e = max(1.0, np.max(np.abs(o12.eta)))
    scale_v = max(1.0, np.max(np.abs(o12.v)))
    assert np.max(np.abs(o12.eta - (a * o1.eta + b * o2.eta))) < 1e-12 * scale_e
    assert np.max(np.abs(o12.v - (a * o1.v + b * o2.v))) < 1e-12 * scale_v


def test_energy_forms(op):
    s = StructureState.zero(op)
    assert structure_energy(s, op) == (0.0, 0.0)
    rng = np.random.default_rng(3)
    s = StructureState(
        rng.normal(size=(2, op.grid.n_free)), rng.normal(size=(2, op.grid.n_free))
    )
    kin, ela = structure_energy(s, op)
    # dense quadratic-form oracle
    kin_d = 0.5 * sum(s.v[c] @ op.mass @ s.v[c] for c in range(2))
    ela_d = 0.5 * sum(s.eta[c] @ op.stiffness @ s.eta[c] for c in range(2))
    assert abs(kin - kin_d) < 1e-12 * max(kin_d, 1.0)
    assert abs(ela - ela_d) < 1e-12 * max(ela_d, 1.0)
    s2 = StructureState(s.eta, 2.0 * s.v)
    kin2, _ = structure_energy(s2, op)
    assert abs(kin2 - 4.0 * kin) < 1e-12 * max(kin2, 1.0)


def test_energy_norm_realizes_operator_pairing(op):
    rng = np.random.default_rng(4)
    eta = rng.normal(size=(2, op.grid.n_free))
    n1 = energy_norm(eta, op) ** 2
    n2 = sum(eta[c] @ op.stiffness @ eta[c] for c in range(2))
    assert abs(n1 - n2) < 1e-12 * n2
