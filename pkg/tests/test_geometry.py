import numpy as np
import pytest

from stochfsi import (
    GeometryBounds,
    QpField,
    ReferenceMesh,
    ale_velocity,
    geometry_bounds,
    harmonic_extension,
    harmonic_extension_scalar_bound_check,
    identity_map,
    interface_spectrum,
    jacobian_identity_residual,
    piola_transform,
    transformed_divergence,
    transformed_gradient,
)
from stochfsi.geometry import AleMap

from conftest import bump_eta, random_injective_map


def test_identity_extension(mesh8):
    amap = harmonic_extension(mesh8, np.zeros((9, 2)))
    assert np.all(amap.d == 0.0)
    assert np.allclose(amap.J, 1.0)
    assert np.allclose(amap.iface_S, 1.0)
    assert np.allclose(amap.iface_n, [0.0, 1.0])
    assert geometry_bounds(amap, 1.75).j_min == 1.0


def test_extension_matches_dense_solve(mesh8):
    # oracle: dense factorization of the same assembled Laplace system
    eta = bump_eta(mesh8, amp_r=0.07, amp_z=0.03, k=2)
    amap = harmonic_extension(mesh8, eta)
    A = mesh8.stiffness_matrix().toarray()
    interior = np.setdiff1d(np.arange(mesh8.n_nodes), mesh8.boundary_nodes)
    for c in range(2):
        g = np.zeros(mesh8.n_nodes)
        g[mesh8.interface_nodes] = eta[:, c]
        x = np.zeros(mesh8.n_nodes)
        x[mesh8.boundary_nodes] = g[mesh8.boundary_nodes]
        rhs = -A[np.ix_(interior, mesh8.boundary_nodes)] @ g[mesh8.boundary_nodes]
        x[interior] = np.linalg.solve(A[np.ix_(interior, interior)], rhs)
        assert np.max(np.abs(x - amap.d[:, c])) < 1e-12


def test_extension_linearity(mesh8):
    e1 = bump_eta(mesh8, amp_r=0.04, k=1)
    e2 = bump_eta(mesh8, amp_r=-0.02, amp_z=0.05, k=2)
    a, b = 0.7, -1.3
    m12 = harmonic_extension(mesh8, a * e1 + b * e2)
    m1 = harmonic_extension(mesh8, e1)
    m2 = harmonic_extension(mesh8, e2)
    assert np.max(np.abs(m12.d - (a * m1.d + b * m2.d))) < 1e-12


def test_folding_detected(mesh8):
    eta = bump_eta(mesh8, amp_r=-1.2)
    amap = harmonic_extension(mesh8, eta)
    b = geometry_bounds(amap, 1.75)
    assert b.j_min <= 0.0
    assert not b.injective


def test_clamping_required(mesh8):
    eta = np.ones((9, 2)) * 0.1
    with pytest.raises(ValueError):
        harmonic_extension(mesh8, eta)


def test_inverse_consistency_random_maps(mesh8):
    rng = np.random.default_rng(11)
    for _ in range(5):
        amap = random_injective_map(mesh8, rng)
        prod = np.einsum("cqkm,cqml->cqkl", amap.inv_grad_A, amap.grad_A)
        assert np.max(np.abs(prod - np.eye(2))) < 1e-12
        assert np.min(amap.J) > 0
        assert np.allclose(np.linalg.norm(amap.iface_n, axis=-1), 1.0)
        assert np.max(np.abs(np.einsum("sqk,sqk->sq", amap.iface_n, amap.iface_tau))) < 1e-14
        assert np.all(amap.iface_S > 0)


def test_transformed_gradient_identity(mesh8):
    rng = np.random.default_rng(1)
    u = rng.normal(size=(mesh8.n_nodes, 2))
    g = transformed_gradient(u, identity_map(mesh8))
    assert np.max(np.abs(g - mesh8.grad_at_qp(u))) == 0.0


def test_transformed_gradient_linear_field(mesh8):
    # linear u has a constant gradient; the transform is then an exact
    # pointwise matrix product with the map inverse
    rng = np.random.default_rng(2)
    amap = random_injective_map(mesh8, rng)
    G = np.array([[0.3, -1.1], [0.7, 0.2]])
    u = mesh8.nodes @ G.T
    got = transformed_gradient(u, amap)
    want = np.einsum("kj,cqjm->cqkm", G, amap.inv_grad_A)
    assert np.max(np.abs(got - want)) < 1e-13


def test_pulled_back_divergence_free(mesh8):
    # analytic curl field: exactly divergence free at the points, then
    # transported with the map; the transformed divergence must vanish
    rng = np.random.default_rng(3)
    amap = random_injective_map(mesh8, rng)

    def fun(z, r):
        return (
            np.pi * np.sin(np.pi * z) * np.cos(np.pi * r),
            -np.pi * np.cos(np.pi * z) * np.sin(np.pi * r),
        )

    def grad(z, r):
        return [
            [
                np.pi**2 * np.cos(np.pi * z) * np.cos(np.pi * r),
                -np.pi**2 * np.sin(np.pi * z) * np.sin(np.pi * r),
            ],
            [
                np.pi**2 * np.sin(np.pi * z) * np.sin(np.pi * r),
                -np.pi**2 * np.cos(np.pi * z) * np.cos(np.pi * r),
            ],
        ]

    u0 = QpField.from_callable(mesh8, fun, grad)
    assert np.max(np.abs(np.trace(u0.grads, axis1=-2, axis2=-1))) < 1e-12
    moved = piola_transform(u0, identity_map(mesh8), amap)
    assert np.max(np.abs(transformed_divergence(moved, amap))) < 1e-11


def test_piola_same_map_is_identity(mesh8):
    rng = np.random.default_rng(4)
    amap = random_injective_map(mesh8, rng)
    u = rng.normal(size=(mesh8.n_nodes, 2))
    out = piola_transform(u, amap, amap)
    uq = QpField.from_nodal(mesh8, u)
    assert np.max(np.abs(out.values - uq.values)) < 1e-12


def test_piola_constant_identity(mesh8):
    u = np.tile([1.5, -0.5], (mesh8.n_nodes, 1))
    out = piola_transform(u, identity_map(mesh8), identity_map(mesh8))
    assert np.max(np.abs(out.values - np.array([1.5, -0.5]))) < 1e-14


def test_piola_round_trip(mesh8):
    rng = np.random.default_rng(5)
    m1 = random_injective_map(mesh8, rng)
    m2 = random_injective_map(mesh8, rng)
    u = rng.normal(size=(mesh8.n_nodes, 2))
    back = piola_transform(piola_transform(u, m1, m2), m2, m1)
    uq = QpField.from_nodal(mesh8, u)
    assert np.max(np.abs(back.values - uq.values)) < 1e-10
    assert np.max(np.abs(back.grads - uq.grads)) < 1e-10


def test_piola_divergence_preservation(mesh8):
    rng = np.random.default_rng(6)
    for _ in range(5):
        m1 = random_injective_map(mesh8, rng)
        m2 = random_injective_map(mesh8, rng)
        u = rng.normal(size=(mesh8.n_nodes, 2))
        out = piola_transform(u, m1, m2)
        lhs = m2.J * transformed_divergence(out, m2)
        rhs = m1.J * transformed_divergence(u, m1)
        assert np.max(np.abs(lhs - rhs)) < 1e-12 * max(np.max(np.abs(u)), 1.0)


def test_ale_velocity(mesh8):
    rng = np.random.default_rng(7)
    m1 = random_injective_map(mesh8, rng)
    assert np.all(ale_velocity(m1, m1, 0.1) == 0.0)
    c = np.array([0.3, -0.2])
    m2 = AleMap(mesh8, m1.d + 0.1 * np.tile(c, (mesh8.n_nodes, 1)))
    assert np.allclose(ale_velocity(m1, m2, 0.1), c)
    m3 = random_injective_map(mesh8, rng)
    got = ale_velocity(m1, m3, 0.25)
    assert np.max(np.abs(got - (m3.d - m1.d) / 0.25)) == 0.0


def test_jacobian_identity_static_and_identity(mesh8):
    rng = np.random.default_rng(8)
    m1 = random_injective_map(mesh8, rng)
    assert jacobian_identity_residual(m1, m1, 0.05) == 0.0
    ident = identity_map(mesh8)
    assert jacobian_identity_residual(ident, ident, 0.05) == 0.0


def test_jacobian_identity_halves_with_dt(mesh8):
    m0 = harmonic_extension(mesh8, bump_eta(mesh8, amp_r=0.06, amp_z=0.02))
    m1 = harmonic_extension(mesh8, bump_eta(mesh8, amp_r=-0.05, amp_z=0.03, k=2))
    resid = []
    for dt in (0.2, 0.1, 0.05, 0.025):
        mb = AleMap(mesh8, m0.d + dt * (m1.d - m0.d))
        resid.append(jacobian_identity_residual(m0, mb, dt))
    for a, b in zip(resid[:-1], resid[1:]):
        assert abs(a / b - 2.0) < 0.4      # halves within 20%


def test_scalar_bound_trivial(mesh8):
    lhs, rhs = harmonic_extension_scalar_bound_check(mesh8, np.zeros(9))
    assert lhs == 0.0 and rhs == 0.0


def test_scalar_bound_first_mode():
    mesh = ReferenceMesh(length=1.0, nz=16, nr=16)
    spec = interface_spectrum(mesh)
    v = spec.mode_nodal(0)
    lhs, rhs = harmonic_extension_scalar_bound_check(mesh, v)
    assert lhs <= rhs * 1.1


def test_scalar_bound_refinement_monotone():
    rng = np.random.default_rng(9)
    coefs = rng.normal(size=4)
    ratios = []
    for nz in (16, 32, 64):
        mesh = ReferenceMesh(length=1.0, nz=nz, nr=nz)
        z = mesh.interface_z
        v = sum(c * np.sin((k + 1) * np.pi * z) for k, c in enumerate(coefs))
        lhs, rhs = harmonic_extension_scalar_bound_check(mesh, v)
        ratios.append(lhs / rhs)
    assert ratios[1] <= ratios[0] + 1e-12
    assert ratios[2] <= ratios[1] + 1e-12
    assert ratios[-1] <= 1.0 + 0.1
