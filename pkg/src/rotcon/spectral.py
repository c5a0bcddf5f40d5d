"""Numerical kernels shared by the consensus protocols.

Symmetric eigendecomposition with a fixed sign convention, Euclidean
projection onto the probability simplex, projection onto the free
spectrahedron, and the closed-form maximization of a linear functional
over conv(SO(n)) via the top eigenpair of the adjoint image.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .hull import HullOperator

# Top-eigenvalue separation below this is reported as degenerate.
EIG_GAP_TOL = 1e-9


class EigDecomposition(NamedTuple):
    """Eigenvalues in descending order and matching orthonormal eigenvectors."""

    values: np.ndarray   # (d,)
    vectors: np.ndarray  # (d, d), column k pairs with values[k]


def sym_eig(M: np.ndarray) -> EigDecomposition:
    """Full spectral decomposition of a (nearly) symmetric matrix.

    The input is symmetrized as (M + M^T)/2.  Output is deterministic for
    a fixed input: eigenvalues sorted descending, and each eigenvector
    scaled so its entry of largest magnitude is positive (first such entry
    on ties).
    """
    M = np.asarray(M, dtype=float)
    if not np.all(np.isfinite(M)):
        raise ValueError("matrix has non-finite entries")
    w, v = np.linalg.eigh(0.5 * (M + M.T))
    w = w[::-1]
    v = v[:, ::-1]
    anchor = np.abs(v).argmax(axis=0)
    signs = np.sign(v[anchor, np.arange(v.shape[1])])
    signs[signs == 0] = 1.0
    return EigDecomposition(values=w, vectors=v * signs)


def project_simplex(v: np.ndarray) -> np.ndarray:
    """Euclidean projection onto {x : x >= 0, sum(x) = 1}.

    Sort-based thresholding, O(d log d); d stays small here (<= 128), so
    the linear-time variants buy nothing.
    """
    v = np.asarray(v, dtype=float).ravel()
    if v.size == 0:
        raise ValueError("cannot project an empty vector")
    if not np.all(np.isfinite(v)):
        raise ValueError("vector has non-finite entries")
    u = np.sort(v)[::-1]
    css = np.cumsum(u)
    rho = np.nonzero(u + (1.0 - css) / np.arange(1, v.size + 1) > 0)[0][-1]
    tau = (css[rho] - 1.0) / (rho + 1.0)
    return np.maximum(v - tau, 0.0)


def project_spectrahedron(T: np.ndarray) -> np.ndarray:
    """Projection onto the free spectrahedron (PSD, unit trace).

    Diagonalize, project the eigenvalues onto the probability simplex,
    reassemble.
    """
    eig = sym_eig(T)
    w = project_simplex(eig.values)
    Z = (eig.vectors * w) @ eig.vectors.T
    return 0.5 * (Z + Z.T)


class LinearMaxResult(NamedTuple):
    rotation: np.ndarray   # n x n, the maximizer A(mu mu^T)
    point: np.ndarray      # d x d rank-1 spectrahedron point mu mu^T
    separated: bool        # top eigenvalue simple (gap > EIG_GAP_TOL)
    value: float           # attained objective <D, rotation> = top eigenvalue


def linear_max_over_hull(h: HullOperator, D: np.ndarray) -> LinearMaxResult:
    """Maximize <D, R> over conv(SO(n)) in closed form.

    The maximizer is A(mu mu^T) where mu is the top eigenvector of the
    adjoint image of D.  When the top eigenvalue is degenerate (gap below
    EIG_GAP_TOL) the solution may be non-unique; the deterministic
    tie-break of sym_eig is used and ``separated`` is False.
    """
    eig = sym_eig(h.adjoint(D))
    mu = eig.vectors[:, 0]
    Z = np.outer(mu, mu)
    Z = 0.5 * (Z + Z.T)
    if h.d >= 2:
        separated = bool(eig.values[0] - eig.values[1] > EIG_GAP_TOL)
    else:
        separated = True
    return LinearMaxResult(
        rotation=h.apply(Z),
        point=Z,
        separated=separated,
        value=float(eig.values[0]),
    )
