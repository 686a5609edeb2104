"""Piecewise-constant, shifted and piecewise-linear views of a trajectory.

The constant family takes the left value on [t_n, t_{n+1}), the shifted
one the right value on (t_n, t_{n+1}], and the linear one interpolates;
the slope of the linear displacement is the half-step velocity by
construction, and the stopped displacement interpolant freezes together
with the latch.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class InterpolantBundle:
    dt: float
    n_steps: int
    u: np.ndarray
    v: np.ndarray
    v_half: np.ndarray
    eta: np.ndarray
    eta_star: np.ndarray

    def _left(self, t: float) -> int:
        n = int(np.floor(t / self.dt + 1e-12))
        return min(max(n, 0), self.n_steps - 1)

    def _right(self, t: float) -> int:
        n = int(np.ceil(t / self.dt - 1e-12))
        return min(max(n, 1), self.n_steps)

    def _lin(self, arr: np.ndarray, t: float) -> np.ndarray:
        n = self._left(t)
        th = t / self.dt - n
        return (1.0 - th) * arr[n] + th * arr[n + 1]

    # piecewise-constant (left) families
    def u_const(self, t):
        return self.u[self._left(t)]

    def v_const(self, t):
        return self.v[self._left(t)]

    def v_sharp(self, t):
        return self.v_half[self._left(t)]

    def eta_const(self, t):
        return self.eta[self._left(t)]

    def eta_star_const(self, t):
        return self.eta_star[self._left(t)]

    # shifted (right) families
    def u_shift(self, t):
        return self.u[self._right(t)]

    def v_shift(self, t):
        return self.v[self._right(t)]

    def eta_shift(self, t):
        return self.eta[self._right(t)]

    # piecewise-linear families
    def u_lin(self, t):
        return self._lin(self.u, t)

    def v_lin(self, t):
        return self._lin(self.v, t)

    def eta_lin(self, t):
        return self._lin(self.eta, t)

    def eta_star_lin(self, t):
        return self._lin(self.eta_star, t)

    def eta_lin_rate(self, t):
        """Slope of the linear displacement; equals the half-step velocity."""
        n = self._left(t)
        return (self.eta[n + 1] - self.eta[n]) / self.dt

    def eta_star_lin_rate(self, t):
        n = self._left(t)
        return (self.eta_star[n + 1] - self.eta_star[n]) / self.dt


def build_interpolants(traj) -> InterpolantBundle:
    if traj.completed_steps != traj.n_steps:
        raise ValueError("interpolants need a completed trajectory")
    return InterpolantBundle(
        dt=traj.dt,
        n_steps=traj.n_steps,
        u=traj.u,
        v=traj.v,
        v_half=traj.v_half,
        eta=traj.eta,
        eta_star=traj.eta_star,
    )
