"""Discrete interface eigenbasis and Sobolev-index proxy norms.

The interface (0,L) carries P1 hat functions on the mesh's top-row nodes.
Eigenpairs of the Dirichlet interface Laplacian, K phi = gamma M phi with
phi(0) = phi(L) = 0, define fractional norms

    |v|_s = ( sum_k (1 + gamma_k)^s  vhat_k^2 )^(1/2),

with vhat the coefficients of the nodal data in the M-orthonormal
eigenbasis.  Negative s gives the dual norms used for the extension bound
and the time-shift modulus.
"""

from __future__ import annotations

import numpy as np
import scipy.linalg


class InterfaceSpectrum:
    """Eigenpairs of the P1 interface Laplacian with clamped endpoints."""

    def __init__(self, z_nodes: np.ndarray):
        z = np.asarray(z_nodes, dtype=float)
        if z.ndim != 1 or len(z) < 3:
            raise ValueError("need at least 3 interface nodes")
        h = np.diff(z)
        if np.any(h <= 0):
            raise ValueError("interface nodes must be strictly increasing")
        n = len(z)
        K = np.zeros((n, n))
        M = np.zeros((n, n))
        for e in range(n - 1):
            he = h[e]
            ke = np.array([[1, -1], [-1, 1]]) / he
            me = he / 6.0 * np.array([[2, 1], [1, 2]])
            idx = [e, e + 1]
            K[np.ix_(idx, idx)] += ke
            M[np.ix_(idx, idx)] += me
        self.z = z
        self.interior = np.arange(1, n - 1)
        Ki = K[1:-1, 1:-1]
        Mi = M[1:-1, 1:-1]
        gam, vec = scipy.linalg.eigh(Ki, Mi)
        # eigh(M-normalized) already gives vec.T @ Mi @ vec = I
        self.gammas = gam
        self.modes = vec                      # columns, interior nodes only
        self._Mi = Mi

    def coefficients(self, values: np.ndarray) -> np.ndarray:
        """Eigen-coefficients of nodal interface data (endpoints ignored)."""
        v = np.asarray(values, dtype=float)
        if v.shape[0] != len(self.z):
            raise ValueError("interface data has wrong length")
        return self.modes.T @ (self._Mi @ v[1:-1])

    def sobolev_norm(self, values: np.ndarray, s: float) -> float:
        """Proxy |values|_s; ``values`` may be (n,) or (n, ncomp)."""
        vh = self.coefficients(values)
        w = (1.0 + self.gammas) ** s
        if vh.ndim == 1:
            return float(np.sqrt(np.sum(w * vh**2)))
        return float(np.sqrt(np.sum(w[:, None] * vh**2)))

    def mode_nodal(self, k: int) -> np.ndarray:
        """k-th eigenfunction as full nodal data (zeros at the endpoints)."""
        out = np.zeros(len(self.z))
        out[1:-1] = self.modes[:, k]
        return out
