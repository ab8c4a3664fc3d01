"""Born-Markov master equations in the eigenbasis of a reference Hamiltonian.

A :class:`MasterEquation` keeps its superoperators in the *working basis*,
the eigenbasis of ``h_ref``, where the jump operators are sparse.  Public
entry points accept and return lab-basis matrices.
"""
from __future__ import annotations

import enum
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from . import bath as bath_mod
from .errors import (DimensionMismatchError, IntegrationError, MultipleFixedPointsError,
                     NonStationaryError, SolverError, ValidationError)
from .operator_algebra import (as_hermitian, eig_hermitian, gibbs_state, hermitize,
                               lindblad_dissipator, sprepost, spre, spost, trace_row, unvec, vec,
                               vectorize_generator, validate_density_matrix)

log = logging.getLogger(__name__)

DENSE_STEADY_LIMIT = 400          # vectorised dimension up to which the SVD path is used
ELEMENT_DROP = 1e-15              # relative size below which jump-operator entries are dropped
BLOCK_DROP = 1e-14                # relative norm below which a whole Bohr block is dropped
RESIDUAL_TOL = 1e-10
UNIQUENESS_TOL = 1e-8


class Reference(enum.Enum):
    CONVENTIONAL = "conventional"
    REORGANISED = "reorganised"


class Flavor(enum.Enum):
    SECULAR_GKLS = "gkls"
    REDFIELD = "redfield"


@dataclass(frozen=True)
class Coupling:
    """System operator ``S`` coupled to one bath.

    ``square`` may carry an exact representation of ``S**2`` (useful on a
    truncated Fock space where ``S @ S`` is wrong in the last row).
    """

    op: np.ndarray
    bath: bath_mod.BathSpec
    square: np.ndarray | None = None

    @property
    def op_squared(self):
        return self.square if self.square is not None else self.op @ self.op


@dataclass
class JumpDecomposition:
    """Bohr-frequency components ``A_w`` of one coupling operator.

    ``ops_working`` are the components in the eigenbasis ``basis`` of the
    reference Hamiltonian; :attr:`ops` rotates them to the lab basis.
    """

    frequencies: np.ndarray
    ops_working: list
    basis: np.ndarray
    energies: np.ndarray

    @property
    def ops(self):
        v = self.basis
        return [v @ a.toarray() @ v.conj().T for a in self.ops_working]

    def __len__(self):
        return len(self.frequencies)


def default_degeneracy_tol(h):
    return 1e-9 * max(np.linalg.norm(h, 2), 1.0)


def _cluster(values, tol):
    """Label sorted-adjacent values closer than ``tol`` with common ids."""
    order = np.argsort(values, kind="stable")
    labels = np.empty(values.size, dtype=int)
    reps = []
    start = 0
    current = 0
    sv = values[order]
    for k in range(1, sv.size + 1):
        if k == sv.size or sv[k] - sv[k - 1] > tol:
            labels[order[start:k]] = current
            reps.append(sv[start:k].mean())
            current += 1
            start = k
    return labels, np.asarray(reps)


def _gap_matrix(energies):
    return energies[None, :] - energies[:, None]      # element (i, j) has w = E_j - E_i


def bohr_decompose(h_ref, s, degeneracy_tol=None, eig=None) -> JumpDecomposition:
    """Split ``s`` into eigenoperators ``A_w`` of ``h_ref`` with ``[H, A_w] = -w A_w``.

    Parameters
    ----------
    h_ref, s : array_like
        Hermitian reference Hamiltonian and coupling operator.
    degeneracy_tol : float, optional
        Gaps closer than this are merged; defaults to ``1e-9 * ||h_ref||``.
    eig : tuple, optional
        Precomputed ``(energies, basis)`` of ``h_ref``.
    """
    h_ref = as_hermitian(h_ref, name="reference Hamiltonian")
    s = as_hermitian(s, name="coupling operator")
    if h_ref.shape != s.shape:
        raise DimensionMismatchError("h_ref and s differ in dimension")
    if degeneracy_tol is None:
        degeneracy_tol = default_degeneracy_tol(h_ref)
    energies, basis = eig if eig is not None else eig_hermitian(h_ref)
    st = basis.conj().T @ s @ basis
    snorm = np.linalg.norm(st)
    st = np.where(np.abs(st) > ELEMENT_DROP * snorm, st, 0.0)
    # merge degenerate energies first so that a degenerate level is treated as one projector
    elabels, ereps = _cluster(energies, degeneracy_tol)
    gaps = ereps[elabels][None, :] - ereps[elabels][:, None]
    labels, reps = _cluster(gaps.ravel(), degeneracy_tol)
    labels = labels.reshape(gaps.shape)
    freqs, ops = [], []
    rows, cols = np.nonzero(st)
    for lbl in np.unique(labels[rows, cols]):
        mask = labels[rows, cols] == lbl
        r, c = rows[mask], cols[mask]
        block = sp.csr_matrix((st[r, c], (r, c)), shape=st.shape)
        if sp.linalg.norm(block) <= BLOCK_DROP * snorm:
            continue
        freqs.append(reps[lbl])
        ops.append(block)
    order = np.argsort(freqs)
    return JumpDecomposition(np.asarray(freqs)[order], [ops[k] for k in order], basis, energies)


@dataclass
class MasterEquation:
    """Generator ``-i[unitary_part, rho] + sum_i D_i(rho)``.

    Attributes
    ----------
    reference, flavor : Reference, Flavor
    h_ref : numpy.ndarray
        Reference Hamiltonian (lab basis); defines the jump operators and the
        heat-current functional.
    unitary_part : numpy.ndarray
        Hermitian generator of the coherent part (lab basis).
    lamb_shift : numpy.ndarray
        ``sum_{i,w} S_i(w) A^dag A`` (lab basis); zero matrix for Redfield.
    dissipators_working : list of scipy.sparse matrices
        Per-bath dissipators in the working basis.
    """

    reference: Reference
    flavor: Flavor
    h_ref: np.ndarray
    unitary_part: np.ndarray
    lamb_shift: np.ndarray
    dissipators_working: list
    couplings: tuple
    basis: np.ndarray
    energies: np.ndarray
    decompositions: list = field(default_factory=list)
    _generator: object = field(default=None, repr=False)

    @property
    def dim(self):
        return self.h_ref.shape[0]

    def to_working(self, op):
        return self.basis.conj().T @ np.asarray(op) @ self.basis

    def from_working(self, op):
        return self.basis @ np.asarray(op) @ self.basis.conj().T

    @property
    def generator(self):
        """Vectorised generator in the working basis (sparse CSR)."""
        if self._generator is None:
            hw = self.to_working(self.unitary_part)
            # basis round trips leave roundoff that would densify the commutator
            hw = np.where(np.abs(hw) > ELEMENT_DROP * max(np.abs(hw).max(), 1e-300), hw, 0.0)
            self._generator = vectorize_generator(hw, self.dissipators_working)
        return self._generator

    def per_bath_dissipators(self):
        """Per-bath dissipators as lab-basis callables ``rho -> D_i(rho)``."""
        return [lambda rho, d=d: self.from_working(unvec(d @ vec(self.to_working(rho)), self.dim))
                for d in self.dissipators_working]

    def apply(self, rho):
        """Apply the full generator to a lab-basis matrix."""
        rt = self.to_working(rho)
        return self.from_working(unvec(self.generator @ vec(rt), self.dim))

    def apply_dissipator(self, index, rho):
        rt = self.to_working(rho)
        return self.from_working(unvec(self.dissipators_working[index] @ vec(rt), self.dim))

    def rates(self, index):
        """``(frequency, rate)`` pairs used by a GKLS dissipator."""
        dec = self.decompositions[index]
        return dec.frequencies, bath_mod.rate(self.couplings[index].bath, dec.frequencies)


def _check_couplings(h_ref, couplings):
    couplings = tuple(couplings)
    if not couplings:
        raise ValidationError("at least one coupling is required")
    for k, c in enumerate(couplings):
        if np.shape(c.op) != h_ref.shape:
            raise DimensionMismatchError(f"coupling {k} has shape {np.shape(c.op)}")
        as_hermitian(c.op, name=f"coupling operator {k}")
    return couplings


def build_gkls(h_ref, couplings: Sequence[Coupling], degeneracy_tol=None,
               reference=Reference.CONVENTIONAL, lamb_shift_sign=None,
               lamb_method="series") -> MasterEquation:
    """Secular (Davies/GKLS) master equation in the eigenbasis of ``h_ref``.

    Parameters
    ----------
    h_ref : array_like
        Reference Hamiltonian that fixes the jump operators.
    couplings : sequence of Coupling
    degeneracy_tol : float, optional
    reference : Reference
        Tag recorded on the result.  It also picks the default Lamb-shift
        treatment: the conventional equation evolves under ``h_ref - dH``,
        the reorganised one under ``h_ref`` alone.
    lamb_shift_sign : {-1, 0, +1}, optional
        Coefficient of ``dH`` in the unitary part; overrides the default.
    lamb_method : {"series", "quadrature"}
        How the Lamb coefficients are evaluated.
    """
    h_ref = as_hermitian(h_ref, name="reference Hamiltonian")
    couplings = _check_couplings(h_ref, couplings)
    if lamb_shift_sign is None:
        lamb_shift_sign = -1 if reference is Reference.CONVENTIONAL else 0
    if lamb_shift_sign not in (-1, 0, 1):
        raise ValidationError("lamb_shift_sign must be -1, 0 or +1")
    energies, basis = eig_hermitian(h_ref)
    d = h_ref.shape[0]
    dissipators, decs = [], []
    lamb = np.zeros((d, d), dtype=complex)
    for c in couplings:
        dec = bohr_decompose(h_ref, c.op, degeneracy_tol, eig=(energies, basis))
        decs.append(dec)
        gam = np.atleast_1d(bath_mod.rate(c.bath, dec.frequencies))
        if np.any(gam < 0):
            raise ValidationError("negative GKLS rate")
        dis = sp.csr_matrix((d * d, d * d), dtype=complex)
        for g, a in zip(gam, dec.ops_working):
            if g != 0.0:
                dis = dis + lindblad_dissipator(a, g)
        dissipators.append(dis.tocsr())
        if lamb_shift_sign != 0 and c.bath.lam > 0:
            coef = np.atleast_1d(bath_mod.lamb_coefficient(c.bath, dec.frequencies, method=lamb_method))
            for s_w, a in zip(coef, dec.ops_working):
                lamb += s_w * (a.conj().T @ a).toarray()
    lamb_lab = basis @ lamb @ basis.conj().T
    lamb_lab = 0.5 * (lamb_lab + lamb_lab.conj().T)
    unitary = h_ref + lamb_shift_sign * lamb_lab
    return MasterEquation(reference, Flavor.SECULAR_GKLS, h_ref, unitary, lamb_lab, dissipators,
                          couplings, basis, energies, decs)


def build_redfield(h_ref, couplings: Sequence[Coupling], absorb_lamb_shift=True,
                   h_system=None, degeneracy_tol=None, reference=Reference.CONVENTIONAL,
                   lamb_method="series") -> MasterEquation:
    """Non-secular Redfield equation with one-sided rates ``Gamma(w)``.

    Each bath contributes ``-[S, L rho] + [S, rho L^dag]`` with
    ``L = sum_w Gamma(w) A_w`` and ``A_w`` taken from ``h_ref``.

    Parameters
    ----------
    absorb_lamb_shift : bool
        Keep ``Gamma = gamma/2 + i S`` inside the dissipator.  Otherwise only
        ``gamma/2`` is kept.
    h_system : array_like, optional
        Physical system Hamiltonian.  With the Lamb shift absorbed, this is
        the coherent part, since the absorbed shift already supplies the
        second-order energy correction (for the reorganised reference it
        cancels the counter term).  Without absorption the coherent part is
        ``h_ref``.  Defaults to ``h_ref``.
    """
    h_ref = as_hermitian(h_ref, name="reference Hamiltonian")
    couplings = _check_couplings(h_ref, couplings)
    h_system = h_ref if h_system is None else as_hermitian(h_system, name="system Hamiltonian")
    energies, basis = eig_hermitian(h_ref)
    d = h_ref.shape[0]
    if degeneracy_tol is None:
        degeneracy_tol = default_degeneracy_tol(h_ref)
    dissipators, decs = [], []
    for c in couplings:
        dec = bohr_decompose(h_ref, c.op, degeneracy_tol, eig=(energies, basis))
        decs.append(dec)
        if c.bath.lam == 0.0 or len(dec) == 0:
            dissipators.append(sp.csr_matrix((d * d, d * d), dtype=complex))
            continue
        w = dec.frequencies
        if absorb_lamb_shift:
            if lamb_method == "series":
                gam = bath_mod.one_sided_transform(c.bath, w)
            else:
                gam = 0.5 * bath_mod.rate(c.bath, w) + 1j * bath_mod.lamb_coefficient(
                    c.bath, w, method=lamb_method)
        else:
            gam = 0.5 * bath_mod.rate(c.bath, w)
        gam = np.atleast_1d(gam)
        st = sum(dec.ops_working).tocsr()
        lam_op = sum(g * a for g, a in zip(gam, dec.ops_working)).tocsr()
        lam_dag = lam_op.conj().T.tocsr()
        dis = (-spre(st @ lam_op) + sprepost(lam_op, st) + sprepost(st, lam_dag)
               - spost(lam_dag @ st))
        dissipators.append(sp.csr_matrix(dis))
    unitary = h_system if absorb_lamb_shift else h_ref
    return MasterEquation(reference, Flavor.REDFIELD, h_ref, unitary,
                          np.zeros((d, d), dtype=complex), dissipators, couplings, basis,
                          energies, decs)


def propagate(me: MasterEquation, rho0, t_grid, rtol=1e-9, atol=1e-12, method="DOP853",
              trace_tol=1e-9):
    """Integrate ``d rho/dt = L rho`` and return lab-basis states on ``t_grid``.

    Raises
    ------
    IntegrationError
        On integrator failure or if the trace drifts by more than ``trace_tol``.
    """
    rho0 = validate_density_matrix(rho0)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid.size == 0 or t_grid[0] < 0 or np.any(np.diff(t_grid) < 0):
        raise ValidationError("t_grid must be ascending and start at t >= 0")
    gen = me.generator
    y0 = vec(me.to_working(rho0))
    if t_grid[-1] == t_grid[0] or gen.nnz == 0:
        states = [rho0.copy() for _ in t_grid]
        return states
    sol = solve_ivp(lambda t, y: gen @ y, (0.0 if t_grid[0] > 0 else t_grid[0], t_grid[-1]), y0,
                    t_eval=t_grid, method=method, rtol=rtol, atol=atol)
    if not sol.success:
        raise IntegrationError(f"integration failed: {sol.message}")
    out = []
    for k in range(sol.y.shape[1]):
        rho = hermitize(me.from_working(unvec(sol.y[:, k], me.dim)), "propagated state")
        drift = abs(np.trace(rho).real - 1.0)
        if drift > trace_tol:
            raise IntegrationError(f"trace drift {drift:.3e} at t = {sol.t[k]:.6g}")
        out.append(rho)
    return out


def _normalise(v, d):
    rho = unvec(v, d)
    tr = np.trace(rho)
    if abs(tr) < 1e-300:
        raise SolverError("stationary vector has zero trace")
    return hermitize(rho / tr, "steady state")


def steady_state(me: MasterEquation, residual_tol=RESIDUAL_TOL, uniqueness_tol=UNIQUENESS_TOL):
    """Unique stationary state of the generator (lab basis).

    Small problems use the singular-value decomposition: the null vector is
    the right singular vector of the smallest singular value and uniqueness
    is certified by the second-smallest one.  Larger problems replace the
    first equation by the trace constraint and use a sparse LU solve; a
    singular factorisation signals a degenerate kernel.

    Raises
    ------
    MultipleFixedPointsError
        If the kernel is not one-dimensional.
    NonStationaryError
        If the residual ``||L tau||_F`` exceeds ``residual_tol``.
    """
    d = me.dim
    gen = me.generator
    n = d * d
    if n <= DENSE_STEADY_LIMIT:
        dense = gen.toarray()
        _, svals, vh = la.svd(dense)
        if n > 1 and svals[-2] < uniqueness_tol:
            raise MultipleFixedPointsError(
                f"second-smallest singular value {svals[-2]:.3e} below {uniqueness_tol:.1e}")
        rho_w = _normalise(vh[-1].conj(), d)
    else:
        mat = gen.tolil()
        mat[0, :] = trace_row(d)
        rhs = np.zeros(n, dtype=complex)
        rhs[0] = 1.0
        try:
            lu = spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A")
        except RuntimeError as exc:
            raise MultipleFixedPointsError(f"generator kernel is degenerate ({exc})") from exc
        rho_w = _normalise(lu.solve(rhs), d)
    res = np.linalg.norm(gen @ vec(rho_w))
    if res > residual_tol:
        raise NonStationaryError(f"steady-state residual {res:.3e} exceeds {residual_tol:.1e}")
    return me.from_working(rho_w)


def stationarity_residual(me: MasterEquation, rho):
    """``||L rho||_F`` evaluated in the working basis."""
    return float(np.linalg.norm(me.generator @ vec(me.to_working(rho))))


def mean_force_classical_state(h_s, couplings, temperature):
    """Gibbs state of ``H_S - sum_i Q_i S_i^2``.

    Parameters
    ----------
    couplings : iterable of ``(Q_i, S_i)`` or ``(Q_i, S_i, S_i_squared)``
    """
    h = np.array(h_s, dtype=complex)
    for item in couplings:
        q, s = item[0], np.asarray(item[1])
        s2 = np.asarray(item[2]) if len(item) > 2 and item[2] is not None else s @ s
        h = h - q * s2
    return gibbs_state(h, temperature)


def gibbs_of_reference(me: MasterEquation, temperature):
    return gibbs_state(me.h_ref, temperature)
