import numpy as np
import pytest

from stochfsi import ReferenceMesh, harmonic_extension


@pytest.fixture(scope="session")
def mesh8():
    return ReferenceMesh(length=1.0, nz=8, nr=8)


def bump_eta(mesh, amp_r=0.05, amp_z=0.0, k=1):
    """Clamped interface displacement data for map construction."""
    z = mesh.interface_z
    eta = np.zeros((mesh.nz + 1, 2))
    eta[:, 1] = amp_r * np.sin(k * np.pi * z / mesh.length) ** 2
    eta[:, 0] = amp_z * np.sin(k * np.pi * z / mesh.length) ** 2
    return eta


def random_injective_map(mesh, rng, scale=0.05):
    """Random smooth interface data, rejection-sampled to keep J positive."""
    z = mesh.interface_z / mesh.length
    for _ in range(50):
        eta = np.zeros((mesh.nz + 1, 2))
        for c in range(2):
            coefs = rng.normal(size=3)
            eta[:, c] = scale * sum(
                a * np.sin((k + 1) * np.pi * z) for k, a in enumerate(coefs)
            ) * np.sin(np.pi * z)
        amap = harmonic_extension(mesh, eta)
        if amap.J.min() > 0.1:
            return amap
    raise AssertionError("could not draw an injective test map")
