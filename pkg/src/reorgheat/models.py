"""System builders with counter-term bookkeeping.

Each model carries the bare Hamiltonian ``H0``, the physical Hamiltonian
``H_S`` and the reorganised reference ``H_R = H_S - sum_i Q_i S_i^2``.  With
the counter term included, ``H_S = H0 + sum_i Q_i S_i^2`` and ``H_R = H0``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import bath as bath_mod
from .errors import ValidationError
from .master_eq import Coupling, Reference
from .operator_algebra import as_hermitian, commutator

SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)

# spin basis order: index 0 = excited |e>, index 1 = ground |g>, so sigma_z|e> = +|e>
EXCITED, GROUND = 0, 1


@dataclass
class SystemModel:
    """Open system: bare Hamiltonian, couplings and derived references.

    Attributes
    ----------
    bare_hamiltonian : numpy.ndarray
    couplings : tuple of Coupling
    counter_term_included : bool
    h_s : numpy.ndarray
        Physical system Hamiltonian.
    h_r : numpy.ndarray
        Reorganised reference ``h_s - sum_i Q_i S_i^2``.
    name : str
    extras : dict
        Model-specific operators (``x``, ``p``, ``x2`` ...).
    """

    bare_hamiltonian: np.ndarray
    couplings: tuple
    counter_term_included: bool
    h_s: np.ndarray
    h_r: np.ndarray
    name: str = ""
    extras: dict = field(default_factory=dict)

    @property
    def dim(self):
        return self.h_s.shape[0]

    @property
    def reorganisation_energies(self):
        return [bath_mod.reorganisation_energy(c.bath) for c in self.couplings]

    @property
    def reorganisation_operator(self):
        """``sum_i Q_i S_i^2``."""
        return sum(q * c.op_squared for q, c in zip(self.reorganisation_energies, self.couplings))

    @property
    def temperatures(self):
        return [c.bath.temperature for c in self.couplings]

    def reference_hamiltonian(self, reference: Reference):
        return self.h_r if reference is Reference.REORGANISED else self.h_s

    def mean_force_couplings(self):
        return [(q, c.op, c.op_squared) for q, c in zip(self.reorganisation_energies, self.couplings)]


def _assemble(h0, couplings, counter_term, name, extras):
    h0 = as_hermitian(h0, name="bare Hamiltonian")
    couplings = tuple(couplings)
    for i, a in enumerate(couplings):
        for b in couplings[i + 1:]:
            if np.linalg.norm(commutator(a.op, b.op)) > 1e-12 * max(np.linalg.norm(a.op), 1.0):
                raise ValidationError("coupling operators must commute for unambiguous currents")
    shift = sum(bath_mod.reorganisation_energy(c.bath) * c.op_squared for c in couplings)
    h_s = h0 + shift if counter_term else h0.copy()
    h_r = h_s - shift
    return SystemModel(h0, couplings, counter_term, h_s, 0.5 * (h_r + h_r.conj().T), name, extras)


def ladder_operators(dim, frequency):
    """Truncated ``a``, ``x``, ``p`` and exact ``x^2``, ``p^2`` with m = 1.

    ``x = (a + a^dag)/sqrt(2 w)``; the squares are built from ``a^2``,
    ``a^dag^2`` and the number operator so that they are correct up to the
    last Fock level.
    """
    if dim < 2:
        raise ValidationError("Fock dimension must be at least 2")
    n = np.arange(dim)
    a = np.diag(np.sqrt(n[1:]), 1).astype(complex)
    ad = a.conj().T
    num = np.diag(n).astype(complex)
    eye = np.eye(dim, dtype=complex)
    x = (a + ad) / np.sqrt(2 * frequency)
    p = 1j * np.sqrt(frequency / 2) * (ad - a)
    a2 = a @ a
    x2 = (a2 + a2.conj().T + 2 * num + eye) / (2 * frequency)
    p2 = -(frequency / 2) * (a2 + a2.conj().T - 2 * num - eye)
    return {"a": a, "x": x, "p": p, "x2": x2, "p2": p2, "n": num}


def oscillator_model(omega0, fock_dim, baths, counter_term=True, basis_frequency=None,
                     min_dim=10) -> SystemModel:
    """Damped oscillator ``H0 = (w0^2 x^2 + p^2)/2`` with ``S_i = x``.

    Parameters
    ----------
    omega0 : float
        Bare frequency.
    fock_dim : int
        Truncation of the Fock space.
    baths : sequence of BathSpec
    counter_term : bool
        Whether ``H_S`` includes ``sum Q_i x^2``.  Then ``H_S`` oscillates at
        ``w_R = sqrt(w0^2 + sum lam_i cutoff_i)`` and ``H_R = H0``.
        Otherwise ``H_S = H0`` and ``H_R`` has frequency
        ``sqrt(w0^2 - sum lam_i cutoff_i)``.
    basis_frequency : float, optional
        Frequency defining the Fock basis (default ``omega0``).  Choosing the
        frequency of the reference Hamiltonian makes it exactly diagonal.
    """
    if omega0 <= 0:
        raise ValidationError("omega0 must be positive")
    if fock_dim < min_dim:
        raise ValidationError(f"fock_dim must be at least {min_dim}")
    wb = omega0 if basis_frequency is None else float(basis_frequency)
    if wb <= 0:
        raise ValidationError("basis frequency must be positive")
    ops = ladder_operators(fock_dim, wb)
    h0 = 0.5 * omega0 ** 2 * ops["x2"] + 0.5 * ops["p2"]
    couplings = [Coupling(ops["x"], b, ops["x2"]) for b in baths]
    model = _assemble(h0, couplings, counter_term, "oscillator", dict(ops, basis_frequency=wb))
    shift = sum(b.lam * b.cutoff for b in baths)
    w2 = omega0 ** 2 + shift if counter_term else omega0 ** 2
    wr2 = w2 - shift
    model.extras.update(omega0=omega0, omega_s=np.sqrt(w2),
                        omega_r=np.sqrt(wr2) if wr2 > 0 else float("nan"))
    return model


def oscillator_frequencies(omega0, baths, counter_term=True):
    """``(w_S, w_R)``: frequencies of the physical and reorganised Hamiltonians."""
    shift = sum(b.lam * b.cutoff for b in baths)
    w2 = omega0 ** 2 + shift if counter_term else omega0 ** 2
    wr2 = w2 - shift
    return np.sqrt(w2), (np.sqrt(wr2) if wr2 > 0 else float("nan"))


def oscillator_reference_model(omega0, fock_dim, baths, reference: Reference, counter_term=True):
    """Oscillator whose Fock basis is adapted to the chosen reference."""
    ws, wr = oscillator_frequencies(omega0, baths, counter_term)
    wb = wr if reference is Reference.REORGANISED else ws
    if not np.isfinite(wb):
        raise ValidationError("reorganised oscillator is unstable (negative squared frequency)")
    return oscillator_model(omega0, fock_dim, baths, counter_term, basis_frequency=wb)


def spin_boson_model(epsilon0, baths, identity_component=True, counter_term=True) -> SystemModel:
    """Spin ``H0 = eps0 sigma_z / 2`` coupled through ``S = 1 + sigma_x``.

    With ``identity_component=False`` the coupling is ``sigma_x`` alone; then
    ``S^2 = 1`` and the counter term only shifts the energy origin.
    """
    h0 = 0.5 * epsilon0 * SIGMA_Z
    s = SIGMA_X + (np.eye(2) if identity_component else 0.0)
    couplings = [Coupling(s.astype(complex), b) for b in baths]
    return _assemble(h0, couplings, counter_term, "spin", {"epsilon0": epsilon0})


def plus_state():
    v = np.array([1, 1], dtype=complex) / np.sqrt(2)
    return np.outer(v, v.conj())


def coherent_state(dim, alpha):
    """Projector on the truncated, renormalised coherent state ``|alpha>``."""
    from scipy.special import gammaln
    n = np.arange(dim)
    amp = np.exp(-0.5 * abs(alpha) ** 2 + n * np.log(complex(alpha) if alpha != 0 else 1.0)
                 - 0.5 * gammaln(n + 1)) if alpha != 0 else (n == 0).astype(complex)
    amp = amp / np.linalg.norm(amp)
    return np.outer(amp, amp.conj())
