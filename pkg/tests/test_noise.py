import numpy as np
import pytest

from stochfsi import NoiseCoefficient, ReferenceMesh, WienerProcess, apply_G, default_spectrum
from stochfsi.structure import HermiteGrid, assemble_elastic, energy_norm, l2_norm


@pytest.fixture(scope="module")
def setup():
    mesh = ReferenceMesh(length=1.0, nz=8, nr=8)
    grid = HermiteGrid(1.0, 8)
    op = assemble_elastic(grid)
    g = NoiseCoefficient(mesh, op, default_spectrum(6), gain=1.0)
    return mesh, grid, op, g


def random_state(mesh, op, rng, scale=1.0):
    u = scale * rng.normal(size=(mesh.n_nodes, 2))
    eta = scale * rng.normal(size=(2, op.grid.n_free))
    return u, eta


def test_spectrum_validation():
    with pytest.raises(ValueError):
        WienerProcess(q=np.array([1.0, 2.0]), seed=0)     # increasing
    with pytest.raises(ValueError):
        WienerProcess(q=np.array([1.0, 0.0]), seed=0)     # not positive


def test_tiny_dt_increment():
    w = WienerProcess(q=default_spectrum(4), seed=1)
    dw = w.sample_increment(1e-300)
    assert np.max(np.abs(dw)) < 1e-140


def test_increment_variance():
    w = WienerProcess(q=default_spectrum(4), seed=42)
    dt = 0.01
    n = 30000
    draws = np.array([w.sample_at(i, dt) for i in range(n)])
    var = draws.var(axis=0, ddof=1)
    # mode 1: q_1 dt within 5 percent (well beyond the chi-square band)
    assert abs(var[0] / (w.q[0] * dt) - 1.0) < 0.05
    assert abs(var[1] / (w.q[1] * dt) - 1.0) < 0.05


def test_increment_reproducibility():
    w1 = WienerProcess(q=default_spectrum(4), seed=9, counter=5)
    w2 = WienerProcess(q=default_spectrum(4), seed=9, counter=5)
    a = w1.sample_increment(0.1)
    b = w2.sample_increment(0.1)
    assert np.array_equal(a, b)
    assert w1.counter == 6
    # different counters decorrelate
    assert not np.array_equal(a, w1.sample_increment(0.1))


def test_increment_independence_across_steps():
    w = WienerProcess(q=default_spectrum(2), seed=3)
    n = 4000
    draws = np.array([w.sample_at(i, 0.05) for i in range(n + 1)])
    x, y = draws[:-1, 0], draws[1:, 0]
    corr = np.corrcoef(x, y)[0, 1]
    assert abs(corr) <= 3.0 / np.sqrt(n)


def test_bridge_preserves_sums_and_distribution():
    w = WienerProcess(q=default_spectrum(3), seed=17)
    dt = 0.2
    dw = w.sample_at(4, dt)
    halves = w.bridge([dw], dt, step=4, level=1)
    assert len(halves) == 2
    assert np.max(np.abs(halves[0] + halves[1] - dw)) < 1e-15
    quarters = w.bridge(halves, dt / 2, step=4, level=2)
    assert np.max(np.abs(sum(quarters) - dw)) < 1e-15
    # reproducible
    again = w.bridge([dw], dt, step=4, level=1)
    assert np.array_equal(halves[0], again[0])


def test_apply_zero_cases(setup):
    mesh, grid, op, g = setup
    rng = np.random.default_rng(0)
    u, eta = random_state(mesh, op, rng)
    f, s = apply_G(g, u, eta, np.zeros(6))
    assert np.all(f == 0.0) and np.all(s == 0.0)
    f, s = apply_G(g, np.zeros((mesh.n_nodes, 2)), np.zeros((2, grid.n_free)), rng.normal(size=6))
    assert np.all(f == 0.0) and np.all(s == 0.0)


def test_growth_bound(setup):
    mesh, grid, op, g = setup
    rng = np.random.default_rng(1)
    for _ in range(1000):
        u, eta = random_state(mesh, op, rng, scale=rng.uniform(0.01, 10.0))
        # direct mode summation of the squared Hilbert-Schmidt norm
        a = g.amplitudes(*g.state_norms(u, eta))
        hs2 = 0.0
        for k in range(len(g.q)):
            m2 = mesh.l2_norm(g.modes_fluid[k]) ** 2 + float(
                sum(
                    g.modes_struct[k][:, c] @ g.iface_mass @ g.modes_struct[k][:, c]
                    for c in range(2)
                )
            )
            hs2 += g.q[k] * a[k] ** 2 * m2
        bound = mesh.l2_norm(u) + energy_norm(eta, op)
        assert np.sqrt(hs2) <= bound * (1.0 + 1e-12)
        assert abs(np.sqrt(hs2) - g.hs_norm(u, eta)) < 1e-12 * max(1.0, bound)


def test_lipschitz_bound(setup):
    mesh, grid, op, g = setup
    rng = np.random.default_rng(2)
    for _ in range(1000):
        u1, e1 = random_state(mesh, op, rng, scale=rng.uniform(0.1, 5.0))
        u2, e2 = random_state(mesh, op, rng, scale=rng.uniform(0.1, 5.0))
        d = abs(g.hs_norm(u1, e1) - g.hs_norm(u2, e2))
        bound = mesh.l2_norm(u1 - u2) + l2_norm(e1 - e2, op)
        assert d <= bound * (1.0 + 1e-12)


def test_force_pairs_match_mode_sum(setup):
    mesh, grid, op, g = setup
    rng = np.random.default_rng(3)
    u, eta = random_state(mesh, op, rng)
    dw = rng.normal(size=6)
    f, s = apply_G(g, u, eta, dw)
    a = g.amplitudes(*g.state_norms(u, eta))
    f2 = sum(dw[k] * a[k] * g.modes_fluid[k] for k in range(6))
    s2 = sum(dw[k] * a[k] * g.modes_struct[k] for k in range(6))
    assert np.max(np.abs(f - f2)) < 1e-14
    assert np.max(np.abs(s - s2)) < 1e-14


def test_gain_zero_and_validation(setup):
    mesh, grid, op, _ = setup
    g0 = NoiseCoefficient(mesh, op, default_spectrum(4), gain=0.0)
    rng = np.random.default_rng(4)
    u, eta = random_state(mesh, op, rng)
    f, s = apply_G(g0, u, eta, rng.normal(size=4))
    assert np.all(f == 0.0) and np.all(s == 0.0)
    with pytest.raises(ValueError):
        NoiseCoefficient(mesh, op, default_spectrum(4), gain=1.5)
