"""Hierarchical equations of motion for baths with a Lorentzian cutoff.

Auxiliary density operators (ADOs) are stored rescaled,
``rho_n = prod_k sqrt(n_k! |c_k|^n_k) * rhobar_n``, which keeps all tiers of
comparable size.  For multi-index ``n`` the generator reads::

    d rhobar_n/dt = (L_sys - sum_k n_k nu_k) rhobar_n + T_n rhobar_n
        - i sum_k sqrt((n_k + 1)|c_k|) [S_k, rhobar_{n+e_k}]
        - i sum_k sqrt(n_k/|c_k|) (c_k S_k rhobar_{n-e_k} - c_k^* rhobar_{n-e_k} S_k)

``T_n`` is the terminator, a Markovian closure for the exponents that are
not kept explicitly.  Adiabatic elimination of an unretained exponent gives
``T_n rho = -[S, L_n rho] + [S, rho L_n^dag]`` with
``L_n = sum_w R(i w - g_n) A_w`` and ``R(z) = sum_{unretained} c_k/(nu_k - z)``.
The eliminated ADO is slaved to ``rho_n``, which decays at ``g_n = sum_k n_k nu_k``.
So the residual is evaluated at the shifted frequency.  The real part of the
cutoff-pole amplitude is moved into ``R`` whenever the cutoff lies beyond the
last retained Matsubara frequency.  Near that resonance it nearly cancels
against the unretained Matsubara amplitudes, and the pair has to be treated
at a single level of approximation.

The exact heat current from bath ``j`` is ``i tr([S_j, H_S] X_j)`` with
``X_j = sum_{k in j} sqrt|c_k| rhobar_{e_k} - i (L_j rho - rho L_j^dag)``.
"""
from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import solve_ivp

from . import bath as bath_mod
from .errors import (BudgetError, ConvergenceError, IntegrationError, MultipleFixedPointsError,
                     SolverError, ValidationError)
from .operator_algebra import as_hermitian, commutator, eig_hermitian, validate_density_matrix

log = logging.getLogger(__name__)

MEMORY_ENV = "REORGHEAT_HEOM_MEMORY"
DEFAULT_MEMORY = 3 * 1024 ** 3
DIRECT_LIMIT = 40_000          # unknowns up to which the assembled matrix is LU-factorised
GMRES_RESTART = 60


def memory_budget_from_env(default=DEFAULT_MEMORY) -> int:
    """Parse the HEOM memory budget (bytes, optional K/M/G suffix) from the environment."""
    raw = os.environ.get(MEMORY_ENV, "").strip()
    if not raw:
        return default
    units = {"K": 1024, "M": 1024 ** 2, "G": 1024 ** 3}
    scale = units.get(raw[-1].upper(), 1)
    number = raw[:-1] if raw[-1].upper() in units else raw
    try:
        value = float(number) * scale
    except ValueError as exc:
        raise ValidationError(f"{MEMORY_ENV}={raw!r} is not a byte count") from exc
    if value <= 0:
        raise ValidationError(f"{MEMORY_ENV} must be positive")
    return int(value)


@dataclass(frozen=True)
class HeomConfig:
    """Truncation and solver settings.

    Attributes
    ----------
    n_matsubara : int
        Matsubara terms ``N_k`` kept explicitly per bath.
    depth : int
        Hierarchy depth ``N_C`` (triangular truncation ``sum n_k <= N_C``).
    terminator : bool
        Markovian closure of the unretained exponents.
    shifted_terminator : bool
        Evaluate the closure at each ADO's own decay rate.
    rtol, atol : float
        Propagation tolerances.
    solver_tol : float
        Relative residual targeted by the iterative stationary solver.
    memory_budget : int or None
        Bytes; ``None`` reads the environment variable (default 3 GiB).
    """

    n_matsubara: int = 2
    depth: int = 3
    terminator: bool = True
    shifted_terminator: bool = False
    rtol: float = 1e-8
    atol: float = 1e-10
    solver_tol: float = 1e-12
    memory_budget: int | None = None

    def __post_init__(self):
        if self.n_matsubara < 0 or self.depth < 0:
            raise ValidationError("n_matsubara and depth must be non-negative")

    def refined(self, d_matsubara=0, d_depth=0):
        return replace(self, n_matsubara=self.n_matsubara + d_matsubara, depth=self.depth + d_depth)


@dataclass(frozen=True)
class Exponent:
    """One explicit term ``c exp(-nu t)`` of bath ``bath``."""

    bath: int
    amplitude: complex
    decay: float
    kind: str
    order: int


def split_series(series: bath_mod.ExponentialSeries, bath_index: int, terminator: bool):
    """Explicit exponents of one bath and the real cutoff amplitude sent to the closure.

    Returns
    -------
    exps : list of Exponent
    moved : float
        Real part of the cutoff-pole amplitude handled by the terminator.
    """
    b = series.bath
    amps, decays = series.amplitudes, series.decays
    last = decays[-1] if series.n_matsubara > 0 else 0.0
    move = terminator and last < b.cutoff
    exps = []
    c0 = 1j * amps[0].imag if move else amps[0]
    if abs(c0) > 0:
        exps.append(Exponent(bath_index, complex(c0), float(decays[0]), "cutoff", 0))
    for k in range(1, len(amps)):
        if abs(amps[k]) > 0:
            exps.append(Exponent(bath_index, complex(amps[k]), float(decays[k]), "matsubara", k))
    return exps, (float(amps[0].real) if move else 0.0)


def enumerate_lattice(n_exp: int, depth: int) -> np.ndarray:
    """All multi-indices over ``n_exp`` slots with total at most ``depth``, ordered by tier."""
    out = [np.zeros(n_exp, dtype=np.int64)]
    frontier = [tuple([0] * n_exp)]
    seen = {frontier[0]}
    for _ in range(depth):
        nxt = []
        for lab in frontier:
            for k in range(n_exp):
                m = list(lab)
                m[k] += 1
                t = tuple(m)
                if t not in seen:
                    seen.add(t)
                    nxt.append(t)
        nxt.sort(reverse=True)
        out.extend(np.asarray(t, dtype=np.int64) for t in nxt)
        frontier = nxt
    return np.vstack(out) if out else np.zeros((1, n_exp), dtype=np.int64)


def hierarchy_size(n_exp: int, depth: int) -> int:
    from math import comb
    return comb(n_exp + depth, depth)


@dataclass
class HeomHierarchy:
    """Assembled hierarchy: lattice, couplings and terminator data."""

    h_sys: np.ndarray
    couplings: list
    series: list
    cfg: HeomConfig
    exponents: list
    labels: np.ndarray
    index: dict
    up: np.ndarray
    down: np.ndarray
    decay_rates: np.ndarray
    group_of: np.ndarray
    group_rates: np.ndarray
    term_ops: list            # per bath: dict of stacks (SL, L, Ld, LdS) of shape (G, d, d)
    moved_real: list
    energies: np.ndarray
    basis: np.ndarray
    _sparse: object = field(default=None, repr=False)
    _apply_plan: object = field(default=None, repr=False)

    @property
    def dim(self):
        return self.h_sys.shape[0]

    @property
    def n_ados(self):
        return self.labels.shape[0]

    @property
    def n_unknowns(self):
        return self.n_ados * self.dim ** 2

    # ------------------------------------------------------------------ action
    def _plan(self):
        """Precomputed tables for :meth:`apply`, grouped by distinct coupling operator."""
        if self._apply_plan is not None:
            return self._apply_plan
        n = self.n_ados
        groups = []
        for j, s in enumerate(self.couplings):
            for g in groups:
                if g["op"].shape == s.shape and np.array_equal(g["op"], s):
                    g["baths"].append(j)
                    break
            else:
                groups.append({"op": s, "baths": [j]})
        single = len(self.group_rates) == 1
        for g in groups:
            ops = [self.term_ops[j] for j in g["baths"] if self.term_ops[j] is not None]
            if ops:
                tot = {k: sum(o[k] for o in ops) for k in ("SL", "L", "Ld", "LdS")}
                g["term"] = {k: (v[0] if single else v) for k, v in tot.items()}
            else:
                g["term"] = None
            ks = [k for k, e in enumerate(self.exponents) if e.bath in g["baths"]]
            up_idx, up_c, dn_idx, dn_a, dn_b = [], [], [], [], []
            for k in ks:
                e = self.exponents[k]
                ak = abs(e.amplitude)
                up = self.up[:, k]
                if np.any(up >= 0):
                    up_idx.append(np.where(up >= 0, up, n))
                    up_c.append(np.where(up >= 0, -1j * np.sqrt((self.labels[:, k] + 1) * ak), 0.0))
                rows = np.flatnonzero(self.down[:, k] >= 0)
                if rows.size:
                    c = -1j * np.sqrt(self.labels[rows, k] / ak)
                    dn_idx.append((rows, self.down[rows, k]))
                    dn_a.append(c * e.amplitude)
                    dn_b.append(-c * np.conj(e.amplitude))
            g["up"] = list(zip(up_idx, [c[:, None, None] for c in up_c]))
            g["down"] = [(rw, ix, a_[:, None, None], b_[:, None, None])
                         for (rw, ix), a_, b_ in zip(dn_idx, dn_a, dn_b)]
        # -i[H, r] - S L r + r L^dag S folded into one left and one right factor
        n_groups = len(self.group_rates)
        a_left = np.repeat((-1j * self.h_sys)[None], n_groups, axis=0)
        a_right = np.repeat((1j * self.h_sys)[None], n_groups, axis=0)
        for g in groups:
            if g["term"] is not None:
                a_left = a_left - (g["term"]["SL"] if not single else g["term"]["SL"][None])
                a_right = a_right - (g["term"]["LdS"] if not single else g["term"]["LdS"][None])
        coherent = (a_left[0], a_right[0]) if single else (a_left, a_right)
        self._apply_plan = {"groups": groups, "single": single, "coherent": coherent,
                            "decay": self.decay_rates[:, None, None]}
        return self._apply_plan

    def apply(self, r: np.ndarray, couple=True) -> np.ndarray:
        """Generator acting on a stack of rescaled ADOs ``r`` of shape ``(len(labels), d, d)``."""
        plan = self._plan()
        n, d = r.shape[0], self.dim
        gid = None if plan["single"] else self.group_of[:n]
        a_left, a_right = plan["coherent"]
        if gid is not None:
            a_left, a_right = a_left[gid], a_right[gid]
        out = np.matmul(a_left, r)
        out += np.matmul(r, a_right)
        out -= plan["decay"][:n] * r
        for g in plan["groups"]:
            s = g["op"]
            t = g["term"]
            need = t is not None or (couple and (g["up"] or g["down"]))
            if not need:
                continue
            sr = np.empty((n + 1, d, d), dtype=complex)
            rs = np.empty((n + 1, d, d), dtype=complex)
            np.matmul(s, r, out=sr[:n])
            np.matmul(r, s, out=rs[:n])
            sr[n] = 0.0
            rs[n] = 0.0
            if t is not None:
                lam = t["L"] if gid is None else t["L"][gid]
                lamd = t["Ld"] if gid is None else t["Ld"][gid]
                out += np.matmul(lam, rs[:n])
                out += np.matmul(sr[:n], lamd)
            if not couple:
                continue
            comm = sr - rs
            for idx, c in g["up"]:
                x = comm[idx]
                x *= c
                out += x
            for rows, idx, ca, cb in g["down"]:
                x = sr[idx]
                x *= ca
                y = rs[idx]
                y *= cb
                x += y
                out[rows] += x
        return out

    def matvec(self, v):
        d = self.dim
        return self.apply(v.reshape(self.n_ados, d, d)).ravel()

    def terminator_operator(self, bath_index, rate=0.0):
        """``L_j`` of the closure at ADO decay rate ``rate`` (lab basis)."""
        if self.term_ops[bath_index] is None:
            return np.zeros_like(self.h_sys)
        g = int(np.argmin(np.abs(self.group_rates - rate)))
        return self.term_ops[bath_index]["L"][g]

    # ------------------------------------------------------------- assembled form
    def to_sparse(self) -> sp.csr_matrix:
        """Assembled generator on row-major-flattened ADO stacks."""
        if self._sparse is not None:
            return self._sparse
        d = self.dim
        D = d * d
        n = self.n_ados
        eye = sp.identity(d, dtype=complex, format="csr")

        # row-major flattening: vec_r(A X B) = (A kron B^T) vec_r(X)
        def left(a):
            return sp.kron(sp.csr_matrix(a), eye, format="coo")

        def right(b):
            return sp.kron(eye, sp.csr_matrix(b).T, format="coo")

        rows, cols, vals = [], [], []

        def add(i, j, blk, f=1.0):
            rows.append(blk.row + i * D)
            cols.append(blk.col + j * D)
            vals.append(f * blk.data)

        lsys = (-1j * (left(self.h_sys) - right(self.h_sys))).tocsr()
        term = []
        for g in range(len(self.group_rates)):
            t = sp.csr_matrix((D, D), dtype=complex)
            for j, s in enumerate(self.couplings):
                ops = self.term_ops[j]
                if ops is None:
                    continue
                t = t - left(ops["SL"][g]) + left(ops["L"][g]) @ right(s) \
                    + left(s) @ right(ops["Ld"][g]) - right(ops["LdS"][g])
            term.append((lsys + t).tocoo())
        ident = sp.identity(D, dtype=complex, format="coo")
        comm = [(left(s) - right(s)).tocoo() for s in self.couplings]
        down = [(e.amplitude * left(self.couplings[e.bath])
                 - np.conj(e.amplitude) * right(self.couplings[e.bath])).tocoo()
                for e in self.exponents]
        for i in range(n):
            add(i, i, term[self.group_of[i]])
            add(i, i, ident, -self.decay_rates[i])
            for k, e in enumerate(self.exponents):
                ak = abs(e.amplitude)
                if self.up[i, k] >= 0:
                    add(i, self.up[i, k], comm[e.bath], -1j * np.sqrt((self.labels[i, k] + 1) * ak))
                if self.down[i, k] >= 0:
                    add(i, self.down[i, k], down[k], -1j * np.sqrt(self.labels[i, k] / ak))
        mat = sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                            shape=(n * D, n * D))
        self._sparse = mat
        return mat


def _estimate_memory(n_ados, d, n_groups, n_baths, restart=GMRES_RESTART):
    vec_bytes = 16 * n_ados * d * d
    # Krylov basis + work arrays in apply (products and gathered terminator stacks)
    return (restart + 12 + 4 * n_baths) * vec_bytes + 16 * n_groups * (4 * n_baths + 2) * d * d \
        + 16 * (d * d) ** 2


def build_hierarchy(system, couplings: Sequence, series: Sequence[bath_mod.ExponentialSeries],
                    cfg: HeomConfig) -> HeomHierarchy:
    """Set up the hierarchy for ``system`` coupled through ``couplings``.

    Parameters
    ----------
    system : array_like
        Physical system Hamiltonian ``H_S``.
    couplings : sequence of array_like
        Hermitian coupling operators, mutually commuting.
    series : sequence of ExponentialSeries
        One correlation series per coupling; ``N_k`` must match ``cfg``.
    cfg : HeomConfig

    Raises
    ------
    BudgetError
        If the estimated memory exceeds the configured budget.
    """
    h = as_hermitian(system, name="system Hamiltonian")
    ss = [as_hermitian(s, name=f"coupling {k}") for k, s in enumerate(couplings)]
    if len(ss) != len(series):
        raise ValidationError("one correlation series per coupling is required")
    for i in range(len(ss)):
        for j in range(i + 1, len(ss)):
            if np.linalg.norm(commutator(ss[i], ss[j])) > 1e-12 * max(np.linalg.norm(ss[i]), 1):
                raise ValidationError("coupling operators must commute")
    for s in series:
        if s.n_matsubara != cfg.n_matsubara:
            raise ValidationError("series truncation differs from cfg.n_matsubara")
    exps, moved = [], []
    for j, s in enumerate(series):
        e, mv = split_series(s, j, cfg.terminator)
        exps.extend(e)
        moved.append(mv)
    n_exp = len(exps)
    d = h.shape[0]
    n_ados = hierarchy_size(n_exp, cfg.depth)
    budget = cfg.memory_budget if cfg.memory_budget is not None else memory_budget_from_env()
    est = _estimate_memory(n_ados, d, min(n_ados, 64), len(ss))
    if est > budget:
        raise BudgetError(f"hierarchy with {n_ados} ADOs of dimension {d} needs about "
                          f"{est / 1024 ** 2:.0f} MiB (budget {budget / 1024 ** 2:.0f} MiB)")
    labels = enumerate_lattice(n_exp, cfg.depth)
    index = {tuple(l): i for i, l in enumerate(labels)}
    up = np.full((len(labels), n_exp), -1, dtype=np.int64)
    down = np.full((len(labels), n_exp), -1, dtype=np.int64)
    for i, lab in enumerate(labels):
        for k in range(n_exp):
            m = lab.copy()
            m[k] += 1
            up[i, k] = index.get(tuple(m), -1)
            if lab[k] > 0:
                m[k] -= 2
                down[i, k] = index[tuple(m)]
    decays = np.array([e.decay for e in exps]) if exps else np.zeros(0)
    rates = labels @ decays if n_exp else np.zeros(len(labels))
    if cfg.terminator and cfg.shifted_terminator:
        keys = np.round(rates, 9)
    else:
        keys = np.zeros(len(labels))
    group_rates, group_of = np.unique(keys, return_inverse=True)
    energies, basis = eig_hermitian(h)
    gaps = energies[None, :] - energies[:, None]
    term_ops = []
    for j, (s, ser) in enumerate(zip(ss, series)):
        if not cfg.terminator or ser.bath.lam == 0.0:
            term_ops.append(None)
            continue
        st = basis.conj().T @ s @ basis
        stacks = {"SL": [], "L": [], "Ld": [], "LdS": []}
        for g in group_rates:
            z = 1j * gaps - g
            resid = bath_mod.matsubara_tail(ser.bath, cfg.n_matsubara, z)
            resid = resid + moved[j] / (ser.bath.cutoff - z)
            lam = basis @ (st * resid) @ basis.conj().T
            lamd = lam.conj().T
            stacks["SL"].append(s @ lam)
            stacks["L"].append(lam)
            stacks["Ld"].append(lamd)
            stacks["LdS"].append(lamd @ s)
        term_ops.append({k: np.asarray(v) for k, v in stacks.items()})
    log.debug("hierarchy: %d exponents, %d ADOs, %d terminator groups", n_exp, len(labels),
              len(group_rates))
    return HeomHierarchy(h, ss, list(series), cfg, exps, labels, index, up, down, rates,
                         group_of.astype(np.int64), group_rates, term_ops, moved, energies, basis)


@dataclass
class AdoStore:
    """Rescaled ADOs; entry 0 is the physical density matrix."""

    labels: np.ndarray
    index: dict
    ados: np.ndarray
    exponents: list
    residual: float = float("nan")
    iterations: int = 0

    @property
    def rho(self):
        return self.ados[0]

    def ado(self, label, scaled=True):
        """ADO for a multi-index; unscaled on request."""
        i = self.index[tuple(label)]
        if scaled:
            return self.ados[i]
        from math import factorial
        f = 1.0
        for k, nk in enumerate(label):
            f *= np.sqrt(factorial(int(nk)) * abs(self.exponents[k].amplitude) ** int(nk))
        return f * self.ados[i]


def _trace_mask(d):
    return np.arange(d) * (d + 1)


def _constrained_apply(hier, v):
    d = hier.dim
    r = v.reshape(hier.n_ados, d, d)
    out = hier.apply(r)
    out[0, 0, 0] = np.trace(r[0])
    return out.ravel()


def _block_zero(hier):
    """Dense tier-0 block (with the trace row) for the preconditioner."""
    d = hier.dim
    D = d * d
    basis = np.eye(D, dtype=complex).reshape(D, d, d)
    sub = HeomHierarchy(hier.h_sys, hier.couplings, hier.series, hier.cfg, hier.exponents,
                        np.zeros((D, len(hier.exponents)), dtype=np.int64), {}, hier.up[:0],
                        hier.down[:0], np.zeros(D), np.full(D, hier.group_of[0]),
                        hier.group_rates, hier.term_ops, hier.moved_real, hier.energies,
                        hier.basis)
    cols = sub.apply(basis, couple=False).reshape(D, D).T
    cols[0, :] = 0.0
    cols[0, _trace_mask(d)] = 1.0
    return la.lu_factor(cols)


def _preconditioner(hier):
    d = hier.dim
    n = hier.n_ados
    V = hier.basis
    e = hier.energies
    denom = -1j * (e[:, None] - e[None, :])
    lu0 = _block_zero(hier)
    rates = hier.decay_rates.copy()
    rates[0] = 1.0

    def apply(v):
        r = v.reshape(n, d, d)
        out = np.empty_like(r)
        out[0] = la.lu_solve(lu0, r[0].ravel()).reshape(d, d)
        if n > 1:
            rt = V.conj().T @ r[1:] @ V
            rt = rt / (denom[None] - rates[1:, None, None])
            out[1:] = V @ rt @ V.conj().T
        return out.ravel()

    return spla.LinearOperator((hier.n_unknowns,) * 2, matvec=apply, dtype=complex)


def heom_steady_state(hier: HeomHierarchy, method="auto", tol=None) -> AdoStore:
    """Stationary ADOs with ``tr rho = 1``.

    Small hierarchies are solved by sparse LU of the assembled generator with
    the first equation replaced by the trace constraint.  Larger ones use
    matrix-free GMRES with a block preconditioner (exact tier-0 block,
    coherent-plus-decay approximation elsewhere).

    Raises
    ------
    SolverError
        If GMRES does not reach the residual target.
    MultipleFixedPointsError
        If the constrained direct system is singular.
    """
    d = hier.dim
    n_unk = hier.n_unknowns
    tol = hier.cfg.solver_tol if tol is None else tol
    rhs = np.zeros(n_unk, dtype=complex)
    rhs[0] = 1.0
    iters = 0
    if method == "direct" or (method == "auto" and n_unk <= DIRECT_LIMIT):
        mat = hier.to_sparse().tolil()
        row = np.zeros(n_unk, dtype=complex)
        row[_trace_mask(d)] = 1.0
        mat[0, :] = row
        try:
            x = spla.splu(mat.tocsc(), permc_spec="MMD_AT_PLUS_A").solve(rhs)
        except RuntimeError as exc:
            raise MultipleFixedPointsError(f"hierarchy kernel is degenerate ({exc})") from exc
    elif method in ("auto", "gmres"):
        op = spla.LinearOperator((n_unk, n_unk), matvec=lambda v: _constrained_apply(hier, v),
                                 dtype=complex)
        counter = [0]

        def cb(_):
            counter[0] += 1

        x, info = spla.gmres(op, rhs, M=_preconditioner(hier), rtol=tol, atol=0.0,
                             restart=GMRES_RESTART, maxiter=400, callback=cb,
                             callback_type="pr_norm")
        iters = counter[0]
        if info != 0:
            raise SolverError(f"GMRES did not converge (info={info}, {iters} iterations)")
    else:
        raise ValidationError(f"unknown method {method!r}")
    ados = x.reshape(hier.n_ados, d, d)
    res = np.linalg.norm(_constrained_apply(hier, x) - rhs) / max(np.linalg.norm(x), 1e-300)
    if res > 1e-9:
        raise SolverError(f"stationary residual {res:.3e} exceeds 1e-9")
    ados = ados.copy()
    ados[0] = 0.5 * (ados[0] + ados[0].conj().T)
    return AdoStore(hier.labels, hier.index, ados, hier.exponents, float(res), iters)


def heom_propagate(hier: HeomHierarchy, rho0, t_grid, method="DOP853", store_final=False):
    """Propagate from a factorised initial state (all higher ADOs zero).

    Returns
    -------
    list of numpy.ndarray
        Physical density matrices on ``t_grid``; with ``store_final`` the
        final :class:`AdoStore` is returned as a second value.
    """
    rho0 = validate_density_matrix(rho0)
    t_grid = np.asarray(t_grid, dtype=float)
    if t_grid.ndim != 1 or t_grid[0] < 0 or np.any(np.diff(t_grid) < 0):
        raise ValidationError("t_grid must be ascending and start at t >= 0")
    d = hier.dim
    y0 = np.zeros(hier.n_unknowns, dtype=complex)
    y0[:d * d] = rho0.ravel()
    if t_grid[-1] == 0.0:
        ys = np.tile(y0[:, None], (1, t_grid.size))
    else:
        sol = solve_ivp(lambda t, y: hier.matvec(y), (0.0, t_grid[-1]), y0, t_eval=t_grid,
                        method=method, rtol=hier.cfg.rtol, atol=hier.cfg.atol)
        if not sol.success:
            raise IntegrationError(f"HEOM integration failed: {sol.message}")
        ys = sol.y
    out = []
    tol = max(1e-9, 100 * hier.cfg.rtol)
    for k in range(ys.shape[1]):
        rho = ys[:d * d, k].reshape(d, d)
        herm = np.max(np.abs(rho - rho.conj().T))
        drift = abs(np.trace(rho) - 1.0)
        if herm > 1e-12:
            log.debug("hermiticity drift %.2e at t = %.6g", herm, t_grid[k])
        if herm > tol or drift > 1e-9:
            raise IntegrationError(f"physical state drifted (hermiticity {herm:.2e}, trace {drift:.2e})")
        out.append(0.5 * (rho + rho.conj().T))
    if store_final:
        final = ys[:, -1].reshape(hier.n_ados, d, d).copy()
        return out, AdoStore(hier.labels, hier.index, final, hier.exponents)
    return out


def heom_current(store: AdoStore, hier: HeomHierarchy, bath_index: int) -> float:
    """Exact heat current from bath ``bath_index`` into the system.

    Raises
    ------
    ValidationError
        If the hierarchy has no first tier (``N_C = 0``).
    """
    if hier.cfg.depth < 1:
        raise ValidationError("the exact current needs first-tier ADOs (depth >= 1)")
    s = hier.couplings[bath_index]
    rho = store.rho
    lam = hier.terminator_operator(bath_index, 0.0)
    x = -1j * (lam @ rho - rho @ lam.conj().T)
    n_exp = len(hier.exponents)
    for k, e in enumerate(hier.exponents):
        if e.bath != bath_index:
            continue
        lab = np.zeros(n_exp, dtype=np.int64)
        lab[k] = 1
        x = x + np.sqrt(abs(e.amplitude)) * store.ados[hier.index[tuple(lab)]]
    return float(np.real(1j * np.trace((s @ hier.h_sys - hier.h_sys @ s) @ x)))


# ---------------------------------------------------------------------------
# convergence protocol

@dataclass
class ConvergenceRecord:
    n_matsubara: int
    depth: int
    value: list
    n_ados: int = 0


@dataclass
class ConvergenceReport:
    n_matsubara: int
    depth: int
    value: list
    max_relative_change: float
    converged: bool
    tolerance: float
    records: list

    def to_dict(self):
        return {"n_matsubara": self.n_matsubara, "depth": self.depth, "value": self.value,
                "max_relative_change": self.max_relative_change, "converged": self.converged,
                "tolerance": self.tolerance,
                "records": [vars(r) for r in self.records]}


def _max_pairwise_change(values, floor):
    vals = [np.atleast_1d(np.asarray(v, dtype=float)) for v in values]
    worst = 0.0
    for a in vals:
        for b in vals:
            scale = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
            worst = max(worst, float(np.max(np.abs(a - b) / scale)))
    return worst


def convergence_sweep(evaluate: Callable[[HeomConfig], object], base_cfg: HeomConfig,
                      refinements=((2, 0), (0, 2)), rel_tol=1e-3, max_rounds=3,
                      abs_floor=1e-14) -> ConvergenceReport:
    """Run ``evaluate`` at ``base_cfg`` and at each refinement of it.

    The result is converged when the largest pairwise relative change among
    the base and refined values is below ``rel_tol``.  Otherwise the base is
    moved to the refinement that changed the observable most and the check is
    repeated, up to ``max_rounds`` times.

    Raises
    ------
    ConvergenceError
        If the rounds or the memory budget are exhausted first.
    """
    cache = {}
    records = []

    def run(cfg):
        key = (cfg.n_matsubara, cfg.depth)
        if key not in cache:
            val = evaluate(cfg)
            cache[key] = [float(v) for v in np.atleast_1d(val)]
            records.append(ConvergenceRecord(cfg.n_matsubara, cfg.depth, cache[key]))
        return cache[key]

    cfg = base_cfg
    for _ in range(max_rounds):
        try:
            base = run(cfg)
            refined = [(r, run(cfg.refined(*r))) for r in refinements]
        except BudgetError as exc:
            raise ConvergenceError(f"budget exhausted before convergence: {exc}", records) from exc
        floor = max(abs_floor, 1e-12 * max(abs(v) for v in base + [0.0]))
        change = _max_pairwise_change([base] + [v for _, v in refined], floor)
        if change < rel_tol:
            return ConvergenceReport(cfg.n_matsubara, cfg.depth, base, change, True, rel_tol, records)
        worst = max(refined, key=lambda rv: _max_pairwise_change([base, rv[1]], floor))
        cfg = cfg.refined(*worst[0])
    raise ConvergenceError(f"not converged to {rel_tol:.1e} within {max_rounds} rounds", records)


# ---------------------------------------------------------------------------
# convenience

def heom_for_model(model, cfg: HeomConfig) -> HeomHierarchy:
    """Hierarchy for a :class:`~reorgheat.models.SystemModel`."""
    series = [bath_mod.correlation_series(c.bath, cfg.n_matsubara) for c in model.couplings]
    return build_hierarchy(model.h_s, [c.op for c in model.couplings], series, cfg)


def heom_currents(model, cfg: HeomConfig, method="auto"):
    """Stationary exact currents (one per bath) and the store."""
    hier = heom_for_model(model, cfg)
    store = heom_steady_state(hier, method=method)
    return [heom_current(store, hier, j) for j in range(len(model.couplings))], store, hier
