"""Elastic interface dynamics: cubic Hermite elements, implicit half-step.

Displacement and velocity are 2-vector functions on (0,L), each component
in the clamped H2-conforming Hermite space (value + derivative dofs,
both eliminated at z = 0 and z = L).  The elastic operator is
c_bend * d^4/dz^4 + c_low, assembled weakly; the energy norm of a
displacement is the quadratic form of that operator, which makes the
half-step energy balance an exact algebraic identity.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .errors import ConfigurationError


class HermiteGrid:
    """Uniform clamped Hermite discretization of (0, L)."""

    def __init__(self, length: float, n_elems: int):
        if n_elems < 2:
            raise ValueError("need at least 2 elements")
        self.length = float(length)
        self.n_elems = int(n_elems)
        self.h = self.length / self.n_elems
        self.z_nodes = np.linspace(0.0, self.length, self.n_elems + 1)
        self.n_full = 2 * (self.n_elems + 1)
        # clamped: drop value+derivative at both ends
        self.free = np.arange(2, self.n_full - 2)
        self.n_free = len(self.free)

    # Hermite shape values/derivatives on [0, h] at local coordinate x
    def _shapes(self, x, deriv=0):
        h = self.h
        t = x / h
        if deriv == 0:
            return np.stack(
                [
                    1 - 3 * t**2 + 2 * t**3,
                    h * (t - 2 * t**2 + t**3),
                    3 * t**2 - 2 * t**3,
                    h * (-(t**2) + t**3),
                ],
                axis=-1,
            )
        if deriv == 1:
            return np.stack(
                [
                    (-6 * t + 6 * t**2) / h,
                    1 - 4 * t + 3 * t**2,
                    (6 * t - 6 * t**2) / h,
                    -2 * t + 3 * t**2,
                ],
                axis=-1,
            )
        if deriv == 2:
            return np.stack(
                [
                    (-6 + 12 * t) / h**2,
                    (-4 + 6 * t) / h,
                    (6 - 12 * t) / h**2,
                    (-2 + 6 * t) / h,
                ],
                axis=-1,
            )
        raise ValueError("deriv must be 0, 1 or 2")

    def element_of(self, z):
        return np.clip((np.asarray(z) / self.h).astype(int), 0, self.n_elems - 1)

    def evaluate(self, coeffs_full: np.ndarray, z, deriv: int = 0) -> np.ndarray:
        """Evaluate a Hermite function (full dof vector, one component) at z."""
        z = np.asarray(z, dtype=float)
        e = self.element_of(z)
        x = z - e * self.h
        H = self._shapes(x, deriv)           # (..., 4)
        dof0 = 2 * e
        idx = np.stack([dof0, dof0 + 1, dof0 + 2, dof0 + 3], axis=-1)
        return np.einsum("...a,...a->...", H, coeffs_full[idx])

    def to_full(self, coeffs_free: np.ndarray) -> np.ndarray:
        out = np.zeros(coeffs_free.shape[:-1] + (self.n_full,))
        out[..., self.free] = coeffs_free
        return out

    def shape_table(self, z, deriv: int = 0):
        """(indices, values) of the 4 active dofs at each z (full numbering)."""
        z = np.asarray(z, dtype=float)
        e = self.element_of(z)
        x = z - e * self.h
        H = self._shapes(x, deriv)
        dof0 = 2 * e
        idx = np.stack([dof0, dof0 + 1, dof0 + 2, dof0 + 3], axis=-1)
        return idx, H


def _element_matrices(h: float):
    k4 = (
        np.array(
            [
                [12, 6 * h, -12, 6 * h],
                [6 * h, 4 * h**2, -6 * h, 2 * h**2],
                [-12, -6 * h, 12, -6 * h],
                [6 * h, 2 * h**2, -6 * h, 4 * h**2],
            ]
        )
        / h**3
    )
    m = (
        np.array(
            [
                [156, 22 * h, 54, -13 * h],
                [22 * h, 4 * h**2, 13 * h, -3 * h**2],
                [54, 13 * h, 156, -22 * h],
                [-13 * h, -3 * h**2, -22 * h, 4 * h**2],
            ]
        )
        * h
        / 420.0
    )
    return k4, m


@dataclass
class ElasticOperator:
    """Constrained matrices of the interface elasticity (one component).

    stiffness = c_bend * bending + c_low * mass realizes the weak elastic
    pairing; ``bending`` alone is the velocity regularization form.
    """

    grid: HermiteGrid
    c_bend: float
    c_low: float
    mass: np.ndarray
    bending: np.ndarray
    stiffness: np.ndarray

    def __post_init__(self):
        self._solver_cache = {}
        self._chol_mass = scipy.linalg.cho_factor(self.mass)

    def substep_solver(self, dt: float, eps: float):
        key = (float(dt), float(eps))
        if key not in self._solver_cache:
            A = self.mass + dt**2 * self.stiffness + eps * dt * self.bending
            self._solver_cache[key] = scipy.linalg.cho_factor(A)
        return self._solver_cache[key]


def assemble_elastic(grid: HermiteGrid, c_bend: float = 1.0, c_low: float = 0.0) -> ElasticOperator:
    """Assemble mass, bending and elastic stiffness on the clamped space."""
    if c_bend <= 0.0:
        raise ConfigurationError("bending coefficient must be positive (operator coercivity)")
    if c_low < 0.0:
        raise ConfigurationError("lower-order coefficient must be nonnegative")
    k4e, me = _element_matrices(grid.h)
    n = grid.n_full
    K4 = np.zeros((n, n))
    M = np.zeros((n, n))
    for e in range(grid.n_elems):
        i = 2 * e
        K4[i : i + 4, i : i + 4] += k4e
        M[i : i + 4, i : i + 4] += me
    f = grid.free
    K4c = K4[np.ix_(f, f)]
    Mc = M[np.ix_(f, f)]
    return ElasticOperator(
        grid=grid,
        c_bend=c_bend,
        c_low=c_low,
        mass=Mc,
        bending=K4c,
        stiffness=c_bend * K4c + c_low * Mc,
    )


@dataclass
class StructureState:
    """Displacement and velocity coefficients, shape (2, n_free): (z, r) rows."""

    eta: np.ndarray
    v: np.ndarray

    @staticmethod
    def zero(op: ElasticOperator) -> "StructureState":
        n = op.grid.n_free
        return StructureState(np.zeros((2, n)), np.zeros((2, n)))

    def copy(self) -> "StructureState":
        return StructureState(self.eta.copy(), self.v.copy())


def structure_substep(state: StructureState, op: ElasticOperator, dt: float, eps: float) -> StructureState:
    """One implicit elastic half-step.

    Solves, componentwise,
        (M + dt^2 K + eps dt R) v_new = M v - dt K eta,
        eta_new = eta + dt v_new,
    which is the velocity-regularized implicit update; the identity
    eta_new = eta + dt v_new holds exactly in coefficients.
    """
    if dt <= 0:
        raise ValueError("dt must be positive")
    if eps < 0:
        raise ValueError("eps must be nonnegative")
    solver = op.substep_solver(dt, eps)
    rhs = (op.mass @ state.v.T - dt * (op.stiffness @ state.eta.T)).T
    v_new = np.vstack([scipy.linalg.cho_solve(solver, rhs[c]) for c in range(2)])
    eta_new = state.eta + dt * v_new
    return StructureState(eta_new, v_new)


def structure_energy(state: StructureState, op: ElasticOperator):
    """(kinetic, elastic) = (v' M v / 2, eta' K eta / 2), both components."""
    kin = 0.5 * float(np.einsum("ci,ij,cj->", state.v, op.mass, state.v))
    ela = 0.5 * float(np.einsum("ci,ij,cj->", state.eta, op.stiffness, state.eta))
    return kin, ela


def l2_norm(coeffs: np.ndarray, op: ElasticOperator) -> float:
    """L2(0,L) norm of a (2, n_free) coefficient array."""
    return float(np.sqrt(np.einsum("ci,ij,cj->", coeffs, op.mass, coeffs)))


def energy_norm(coeffs: np.ndarray, op: ElasticOperator) -> float:
    """Elastic-operator norm, the H2-type norm used by the energy ledger."""
    return float(np.sqrt(np.einsum("ci,ij,cj->", coeffs, op.stiffness, coeffs)))


def bending_form(coeffs: np.ndarray, op: ElasticOperator) -> float:
    """Quadratic form of the second-derivative pairing (regularization)."""
    return float(np.einsum("ci,ij,cj->", coeffs, op.bending, coeffs))


def evaluate_state(grid: HermiteGrid, coeffs: np.ndarray, z, deriv: int = 0) -> np.ndarray:
    """Evaluate a (2, n_free) coefficient array at points z -> (..., 2)."""
    full = grid.to_full(coeffs)
    return np.stack(
        [grid.evaluate(full[c], z, deriv) for c in range(2)], axis=-1
    )
