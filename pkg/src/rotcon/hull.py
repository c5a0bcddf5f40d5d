"""Spectrahedral representation of the convex hull of SO(n).

The hull of the rotation group is the image of the free spectrahedron
(PSD matrices with unit trace, dimension d = 2^(n-1)) under a fixed
linear map R_ij = <A_ij, Z>.  This module builds the basis matrices
A_ij from Kronecker products and exposes the forward map and its
adjoint.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

# 2x2 building blocks of the Kronecker chains.
_SKEW = np.array([[0.0, -1.0], [1.0, 0.0]])
_SIGN = np.diag([1.0, -1.0])
_EYE2 = np.eye(2)

DEFAULT_N_MAX = 8

# Membership tolerances: orthogonality/determinant accumulate over d <= 128
# dense products, PSD/trace checks are direct.
ORTH_TOL = 1e-8
DET_TOL = 1e-8
PSD_TOL = 1e-10
TRACE_TOL = 1e-10


class HullError(ValueError):
    """Raised for invalid hull construction or application arguments."""


def _kron_chain(factors) -> np.ndarray:
    out = np.array([[1.0]])
    for f in factors:
        out = np.kron(out, f)
    return out


def build_lambda(n: int, i: int) -> np.ndarray:
    """Left Kronecker factor: (i-1) sign flips, one skew block, (n-i) identities.

    Returns a 2^n x 2^n orthogonal, skew-symmetric matrix.
    """
    if not 1 <= i <= n:
        raise HullError(f"index i={i} out of range 1..{n}")
    return _kron_chain([_SIGN] * (i - 1) + [_SKEW] + [_EYE2] * (n - i))


def build_rho(n: int, j: int) -> np.ndarray:
    """Right Kronecker factor: (j-1) identities, one skew block, (n-j) sign flips."""
    if not 1 <= j <= n:
        raise HullError(f"index j={j} out of range 1..{n}")
    return _kron_chain([_EYE2] * (j - 1) + [_SKEW] + [_SIGN] * (n - j))


def build_p_even(n: int) -> np.ndarray:
    """Orthonormal basis of the even-parity coordinate subspace of R^(2^n).

    Columns are the standard basis vectors e_k whose n-bit index k has an
    even number of ones, in ascending index order.  This realizes the
    projector (I + S)/2 with S the n-fold Kronecker power of diag(1, -1):
    P P^T = (I + S)/2 and P^T P = I.
    """
    if n < 1:
        raise HullError(f"n={n} must be >= 1")
    dim = 2**n
    cols = [k for k in range(dim) if bin(k).count("1") % 2 == 0]
    p = np.zeros((dim, dim // 2))
    for c, k in enumerate(cols):
        p[k, c] = 1.0
    return p


@dataclass(frozen=True)
class HullOperator:
    """The linear map A and adjoint A+ for conv(SO(n)).

    basis[i, j] is the symmetric d x d matrix defining entry (i, j) of the
    image, d = 2^(n-1).  Immutable after construction; safe to share.
    """

    n: int
    d: int
    basis: np.ndarray  # shape (n, n, d, d), write-protected

    def apply(self, Z: np.ndarray) -> np.ndarray:
        """Map a d x d spectrahedron point to its n x n hull element."""
        Z = np.asarray(Z, dtype=float)
        if Z.shape != (self.d, self.d):
            raise HullError(f"expected {self.d}x{self.d} matrix, got {Z.shape}")
        return np.einsum("ijkl,kl->ij", self.basis, Z)

    def adjoint(self, Y: np.ndarray) -> np.ndarray:
        """Adjoint map: sum_ij A_ij Y_ij, a symmetric d x d matrix."""
        Y = np.asarray(Y, dtype=float)
        if Y.shape != (self.n, self.n):
            raise HullError(f"expected {self.n}x{self.n} matrix, got {Y.shape}")
        return np.einsum("ijkl,ij->kl", self.basis, Y)


def build_hull(n: int, n_max: int = DEFAULT_N_MAX, _flip_sign: bool = False) -> HullOperator:
    """Construct the hull operator for SO(n), 2 <= n <= n_max.

    ``_flip_sign`` negates every A_ij; it exists as a verification hook
    (extreme points then land in the det = -1 component) and must stay
    False in normal use.
    """
    if not 2 <= n <= n_max:
        raise HullError(f"n={n} outside supported range 2..{n_max} (d = 2^(n-1) blow-up)")
    p_even = build_p_even(n)
    d = 2 ** (n - 1)
    sign = 1.0 if _flip_sign else -1.0
    rho_p = [build_rho(n, j) @ p_even for j in range(1, n + 1)]
    basis = np.empty((n, n, d, d))
    for i in range(1, n + 1):
        pt_lam = p_even.T @ build_lambda(n, i)
        for j in range(1, n + 1):
            a = sign * (pt_lam @ rho_p[j - 1])
            # lam_i rho_j is symmetric for every index pair; symmetrize
            # anyway to kill float round-off.
            basis[i - 1, j - 1] = 0.5 * (a + a.T)
    basis.setflags(write=False)
    return HullOperator(n=n, d=d, basis=basis)


@lru_cache(maxsize=None)
def cached_hull(n: int) -> HullOperator:
    """Shared, immutable hull operator per dimension."""
    return build_hull(n)


def rotation_residuals(R: np.ndarray) -> tuple[float, float]:
    """(orthogonality residual, determinant residual) of a candidate rotation."""
    R = np.asarray(R, dtype=float)
    n = R.shape[0]
    orth = float(np.linalg.norm(R.T @ R - np.eye(n)))
    det = float(abs(np.linalg.det(R) - 1.0))
    return orth, det


def is_rotation(R: np.ndarray, orth_tol: float = ORTH_TOL, det_tol: float = DET_TOL) -> bool:
    """SO(n) membership test at the module tolerances."""
    orth, det = rotation_residuals(R)
    return orth <= orth_tol and det <= det_tol


def spectra_residuals(Z: np.ndarray) -> tuple[float, float]:
    """(negative-eigenvalue excess, trace deviation) of a spectrahedron point."""
    Z = np.asarray(Z, dtype=float)
    w = np.linalg.eigvalsh(0.5 * (Z + Z.T))
    return float(max(0.0, -w[0])), float(abs(np.trace(Z) - 1.0))


def is_spectra_point(Z: np.ndarray, psd_tol: float = PSD_TOL, trace_tol: float = TRACE_TOL) -> bool:
    """Feasibility test for the free spectrahedron (PSD, unit trace)."""
    neg, tr = spectra_residuals(Z)
    return neg <= psd_tol and tr <= trace_tol
