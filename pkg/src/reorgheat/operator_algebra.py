"""Dense complex-matrix workspace.

All superoperators act on column-stacked density matrices, i.e.
``vec(X) = X.flatten(order="F")``.  With this convention

    vec(A X B) = (B^T kron A) vec(X),

so left multiplication is ``kron(I, A)`` and right multiplication is
``kron(B^T, I)``.  Every builder in the package goes through :func:`spre`,
:func:`spost` and :func:`sprepost` so the convention lives in one place.
"""
from __future__ import annotations

import logging

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp

from .errors import DimensionMismatchError, SupportError, ValidationError

log = logging.getLogger(__name__)

HERMITIAN_TOL = 1e-12
DENSITY_TOL = 1e-10
POSITIVITY_FLOOR = -1e-8
EIGEN_FLOOR = 1e-12


def _square(m, name="operator"):
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1] or m.shape[0] == 0:
        raise ValidationError(f"{name} must be a non-empty square matrix, got shape {m.shape}")
    return m


def hermiticity_defect(m):
    """Relative Frobenius distance between ``m`` and its adjoint."""
    m = np.asarray(m)
    scale = np.linalg.norm(m)
    if scale == 0.0:
        return 0.0
    return float(np.linalg.norm(m - m.conj().T) / scale)


def as_hermitian(m, tol=HERMITIAN_TOL, name="operator"):
    """Validate that ``m`` is Hermitian and return its symmetrised copy.

    Raises
    ------
    ValidationError
        If the relative defect exceeds ``tol``.
    """
    m = _square(m, name)
    defect = hermiticity_defect(m)
    if defect > tol:
        raise ValidationError(f"{name} is not Hermitian (relative defect {defect:.3e} > {tol:.1e})")
    return 0.5 * (m + m.conj().T)


def hermitize(m, label="state"):
    """Return ``(m + m^dag)/2`` and log the removed anti-Hermitian drift."""
    m = np.asarray(m, dtype=complex)
    drift = np.linalg.norm(m - m.conj().T)
    if drift > 0:
        log.debug("hermitize %s: removed drift %.3e", label, drift)
    return 0.5 * (m + m.conj().T)


def validate_density_matrix(rho, tol=DENSITY_TOL, floor=POSITIVITY_FLOOR):
    """Check Hermiticity, unit trace and approximate positivity.

    Returns
    -------
    numpy.ndarray
        The Hermitised density matrix.
    """
    rho = _square(rho, "density matrix")
    if np.max(np.abs(rho - rho.conj().T)) > tol:
        raise ValidationError("density matrix is not Hermitian")
    rho = 0.5 * (rho + rho.conj().T)
    tr = np.trace(rho).real
    if abs(tr - 1.0) > tol:
        raise ValidationError(f"density matrix trace {tr:.12g} differs from 1")
    emin = np.linalg.eigvalsh(rho)[0]
    if emin < floor:
        raise ValidationError(f"density matrix has negative eigenvalue {emin:.3e}")
    return rho


def eig_hermitian(h, tol=HERMITIAN_TOL):
    """Eigendecomposition of a Hermitian matrix.

    Parameters
    ----------
    h : array_like
        Hermitian matrix.
    tol : float
        Relative Frobenius tolerance for the Hermiticity check.

    Returns
    -------
    evals : numpy.ndarray
        Real eigenvalues in ascending order.
    evecs : numpy.ndarray
        Unitary matrix whose columns are the eigenvectors.
    """
    h = as_hermitian(h, tol)
    evals, evecs = la.eigh(h)
    return evals, evecs


def commutator(a, b):
    return a @ b - b @ a


def anticommutator(a, b):
    return a @ b + b @ a


def vec(x):
    """Column-stack a matrix into a vector."""
    return np.asarray(x).reshape(-1, order="F")


def unvec(v, dim=None):
    """Inverse of :func:`vec`."""
    v = np.asarray(v)
    if dim is None:
        dim = int(round(np.sqrt(v.size)))
    if dim * dim != v.size:
        raise DimensionMismatchError(f"vector of length {v.size} is not a square matrix")
    return v.reshape((dim, dim), order="F")


def _sparse(a):
    return a if sp.issparse(a) else sp.csr_matrix(np.asarray(a, dtype=complex))


def spre(a):
    """Superoperator of ``X -> A X`` (sparse CSR)."""
    a = _sparse(a)
    return sp.kron(sp.identity(a.shape[0], dtype=complex, format="csr"), a, format="csr")


def spost(b):
    """Superoperator of ``X -> X B`` (sparse CSR)."""
    b = _sparse(b)
    return sp.kron(b.T, sp.identity(b.shape[0], dtype=complex, format="csr"), format="csr")


def sprepost(a, b):
    """Superoperator of ``X -> A X B`` (sparse CSR)."""
    return sp.kron(_sparse(b).T, _sparse(a), format="csr")


def commutator_super(h):
    """Superoperator of ``X -> -i[H, X]``."""
    return (-1j) * (spre(h) - spost(h))


def lindblad_dissipator(a, rate=1.0):
    """Superoperator of ``rate * (A X A^dag - {A^dag A, X}/2)``."""
    a = _sparse(a)
    ad = a.conj().T.tocsr()
    ada = (ad @ a).tocsr()
    return rate * (sprepost(a, ad) - 0.5 * spre(ada) - 0.5 * spost(ada))


def apply_super(sop, x):
    """Apply a vectorised superoperator to a matrix and return a matrix."""
    x = np.asarray(x, dtype=complex)
    return unvec(sop @ vec(x), x.shape[0])


def vectorize_generator(unitary_part, dissipators=()):
    """Matrix of ``rho -> -i[H, rho] + sum_k D_k(rho)`` under column stacking.

    Parameters
    ----------
    unitary_part : array_like
        Hermitian operator generating the coherent part.
    dissipators : sequence
        Superoperators (dense or sparse) of shape ``(d^2, d^2)``.

    Returns
    -------
    scipy.sparse.csr_matrix
    """
    h = as_hermitian(unitary_part, name="unitary part")
    d = h.shape[0]
    gen = commutator_super(h)
    for k, dis in enumerate(dissipators):
        if dis.shape != (d * d, d * d):
            raise DimensionMismatchError(
                f"dissipator {k} has shape {dis.shape}, expected {(d * d, d * d)}")
        gen = gen + _sparse(dis)
    return sp.csr_matrix(gen)


def trace_row(dim):
    """Row vector ``t`` with ``t @ vec(X) == trace(X)``."""
    t = np.zeros(dim * dim, dtype=complex)
    t[np.arange(dim) * (dim + 1)] = 1.0
    return t


def relative_entropy(rho, sigma, floor=EIGEN_FLOOR):
    """Quantum relative entropy ``tr rho (log rho - log sigma)`` in nats.

    Eigenvalues below ``floor`` are treated as exact zeros.

    Raises
    ------
    SupportError
        If ``rho`` has weight outside the support of ``sigma``.
    """
    rho = _square(rho, "rho")
    sigma = _square(sigma, "sigma")
    if rho.shape != sigma.shape:
        raise DimensionMismatchError("rho and sigma differ in dimension")
    p, u = la.eigh(hermitize(rho))
    q, v = la.eigh(hermitize(sigma))
    p = np.where(p > floor, p, 0.0)
    # overlap[i, j] = |<u_i|v_j>|^2
    overlap = np.abs(u.conj().T @ v) ** 2
    ker = q <= floor
    leak = overlap[:, ker].T @ p if np.any(ker) else np.zeros(1)
    if np.any(leak > floor):
        raise SupportError("support of rho is not contained in support of sigma")
    plogp = np.sum(p[p > 0] * np.log(p[p > 0]))
    logq = np.where(ker, 0.0, np.log(np.where(ker, 1.0, q)))
    cross = p @ overlap @ logq
    return float(plogp - cross)


def trace_distance(rho, sigma):
    """Half the trace norm of ``rho - sigma``."""
    w = la.eigvalsh(hermitize(np.asarray(rho) - np.asarray(sigma)))
    return float(0.5 * np.sum(np.abs(w)))


def gibbs_state(h, temperature):
    """``exp(-H/T)/Z`` evaluated stably in the eigenbasis of ``H``."""
    if temperature <= 0:
        raise ValidationError("temperature must be positive")
    e, v = eig_hermitian(h)
    w = np.exp(-(e - e[0]) / temperature)
    w /= w.sum()
    return (v * w) @ v.conj().T
