"""Truncated Wiener forcing with a multiplicative, norm-bounded coefficient.

The driving process keeps K modes with trace-class spectrum q_k (default
k^-2).  Mode k pairs an interface eigenmode (alternating radial/axial
component) with its harmonic extension into the rectangle, normalized to
unit combined L2 norm.  The coefficient scales every mode by
c * (|u|_L2 + |eta|_L2); the constant c folds in the spectrum trace and
the discrete Poincare factor of the elastic pencil so that

    |G(u, eta)|_HS <= gain * (|u|_L2 + |eta|_E)     (elastic-energy norm)
    |G(u1,eta1) - G(u2,eta2)|_HS
        <= gain * (|u1-u2|_L2 + |eta1-eta2|_L2)

hold with gain <= 1 by construction.

Streams are counter-based (Philox) and keyed by (seed, step, lane), so any
increment is reproducible regardless of scheduling; lane 0 carries the
per-step increments and higher lanes the bridge refinements used when a
step is subdivided.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .geometry import harmonic_extension, interface_spectrum
from .mesh import ReferenceMesh
from .structure import ElasticOperator


def _stream(seed: int, step: int, lane: int) -> np.random.Generator:
    key = np.array([seed & 0xFFFFFFFFFFFFFFFF, 0x9E3779B97F4A7C15], dtype=np.uint64)
    counter = np.array([0, lane, step, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(counter=counter, key=key))


@dataclass
class WienerProcess:
    """Finite-mode Wiener increments with reproducible counter streams."""

    q: np.ndarray
    seed: int
    counter: int = 0

    def __post_init__(self):
        self.q = np.asarray(self.q, dtype=float)
        if np.any(self.q <= 0) or np.any(np.diff(self.q) > 0):
            raise ValueError("covariance spectrum must be positive and nonincreasing")

    @property
    def k_modes(self) -> int:
        return len(self.q)

    @property
    def trace(self) -> float:
        return float(np.sum(self.q))

    def sample_at(self, step: int, dt: float) -> np.ndarray:
        """Increment over one step of length dt; Var of mode k is q_k dt."""
        if dt < 0:
            raise ValueError("dt must be nonnegative")
        g = _stream(self.seed, step, lane=0)
        return g.standard_normal(self.k_modes) * np.sqrt(self.q * dt)

    def sample_increment(self, dt: float) -> np.ndarray:
        out = self.sample_at(self.counter, dt)
        self.counter += 1
        return out

    def bridge(self, increments: list, tau: float, step: int, level: int) -> list:
        """Split each increment over tau into two over tau/2, preserving sums.

        Conditional midpoint sampling: each half is dW/2 +- xi with
        xi ~ N(0, q tau/4), drawn from the lane of the given refinement
        level so repeated refinements stay reproducible.
        """
        g = _stream(self.seed, step, lane=level)
        out = []
        scale = np.sqrt(self.q * tau / 4.0)
        for dw in increments:
            xi = g.standard_normal(self.k_modes) * scale
            out.append(dw / 2.0 + xi)
            out.append(dw / 2.0 - xi)
        return out

    def u0_norm2(self, dw: np.ndarray) -> float:
        """Squared norm of an increment in the Cameron-Martin space."""
        return float(np.sum(np.asarray(dw) ** 2 / self.q))


def default_spectrum(k_modes: int, decay: float = 2.0) -> np.ndarray:
    return (1.0 + np.arange(k_modes)) ** (-float(decay))


class NoiseCoefficient:
    """Multiplicative coefficient pairing fluid and interface mode shapes."""

    def __init__(
        self,
        mesh: ReferenceMesh,
        op: ElasticOperator,
        q: np.ndarray,
        gain: float = 1.0,
    ):
        if not 0.0 <= gain <= 1.0:
            raise ValueError("noise gain must lie in [0, 1]")
        self.mesh = mesh
        self.op = op
        self.q = np.asarray(q, dtype=float)
        self.gain = float(gain)
        k_modes = len(self.q)

        spec = interface_spectrum(mesh)
        # P1 interface mass for the structure-part norms
        nzp = mesh.nz + 1
        h = mesh.dz
        main = np.full(nzp, 2 * h / 3.0)
        main[0] = main[-1] = h / 3.0
        off = np.full(nzp - 1, h / 6.0)
        self.iface_mass = (
            np.diag(main) + np.diag(off, 1) + np.diag(off, -1)
        )

        self.modes_fluid = np.zeros((k_modes, mesh.n_nodes, 2))
        self.modes_struct = np.zeros((k_modes, nzp, 2))
        for k in range(k_modes):
            j, comp = k // 2, (1 if k % 2 == 0 else 0)   # radial first
            phi = spec.mode_nodal(j)
            bdata = np.zeros((nzp, 2))
            bdata[:, comp] = phi
            ext = harmonic_extension(mesh, bdata)
            nrm2 = mesh.l2_norm(ext.d) ** 2 + float(phi @ self.iface_mass @ phi)
            scale = 1.0 / np.sqrt(nrm2)
            self.modes_fluid[k] = ext.d * scale
            self.modes_struct[k] = bdata * scale

        # discrete Poincare factor sup |eta|_L2 / |eta|_E of the elastic pencil
        lam = scipy.linalg.eigh(
            op.stiffness, op.mass, eigvals_only=True, subset_by_index=[0, 0]
        )[0]
        self.poincare = 1.0 / np.sqrt(lam)
        self.mode_gain = self.gain / (np.sqrt(np.sum(self.q)) * max(1.0, self.poincare))

    def amplitudes(self, u_l2: float, eta_l2: float) -> np.ndarray:
        """Per-mode amplitude from the state norms (same for every mode)."""
        return np.full(len(self.q), self.mode_gain * (u_l2 + eta_l2))

    def state_norms(self, u: np.ndarray, eta_coeffs: np.ndarray):
        """(|u|_L2(O), |eta|_L2(0,L)) for a nodal field and Hermite coefficients."""
        u_l2 = self.mesh.l2_norm(u)
        eta_l2 = float(
            np.sqrt(np.einsum("ci,ij,cj->", eta_coeffs, self.op.mass, eta_coeffs))
        )
        return u_l2, eta_l2

    def hs_norm(self, u: np.ndarray, eta_coeffs: np.ndarray) -> float:
        """Hilbert-Schmidt norm of the coefficient at the given state."""
        a = self.amplitudes(*self.state_norms(u, eta_coeffs))
        return float(np.sqrt(np.sum(self.q * a**2)))


def apply_G(
    g: NoiseCoefficient, u: np.ndarray, eta_coeffs: np.ndarray, dW: np.ndarray
):
    """Force pair (fluid nodal field, interface nodal field) of G(u, eta) dW."""
    a = g.amplitudes(*g.state_norms(u, eta_coeffs))
    coef = np.asarray(dW) * a
    f_fluid = np.einsum("k,knc->nc", coef, g.modes_fluid)
    f_struct = np.einsum("k,knc->nc", coef, g.modes_struct)
    return f_fluid, f_struct
