from math import comb

import numpy as np
import pytest

from reorgheat import bath as bm
from reorgheat import heom
from reorgheat import models
from reorgheat import operator_algebra as oa
from reorgheat.errors import BudgetError, ConvergenceError, ValidationError
from reorgheat.heom import (HeomConfig, build_hierarchy, convergence_sweep, heom_currents,
                            heom_for_model, heom_propagate, heom_steady_state)
from reorgheat.master_eq import mean_force_classical_state


def spin(lams=(3e-3, 1e-3), temps=(1.0, 1.2), cutoff=100.0, **kw):
    return models.spin_boson_model(1.0, [bm.make_bath(l, cutoff, t) for l, t in zip(lams, temps)], **kw)


@pytest.mark.parametrize("n_exp,depth", [(1, 1), (3, 2), (6, 3), (4, 5)])
def test_lattice_size(n_exp, depth):
    lat = heom.enumerate_lattice(n_exp, depth)
    assert len(lat) == heom.hierarchy_size(n_exp, depth) == comb(n_exp + depth, depth)
    assert (lat.sum(axis=1) <= depth).all()
    assert len({tuple(r) for r in lat}) == len(lat)
    assert not lat[0].any()


def test_hierarchy_counts_exponents():
    hier = heom_for_model(spin(), HeomConfig(n_matsubara=1, depth=2))
    assert hier.n_ados == comb(2 * 2 + 2, 2)


def test_matrix_free_matches_assembled(rng):
    hier = heom_for_model(spin(lams=(2e-2, 1e-2), cutoff=50.0, temps=(1.0, 2.0)),
                          HeomConfig(n_matsubara=2, depth=2))
    v = rng.standard_normal(hier.n_unknowns) + 1j * rng.standard_normal(hier.n_unknowns)
    a = hier.to_sparse() @ v
    b = hier.matvec(v)
    assert np.abs(a - b).max() < 1e-12 * np.abs(a).max()


def test_gmres_matches_direct():
    hier = heom_for_model(spin(), HeomConfig(n_matsubara=1, depth=3))
    d = heom_steady_state(hier, method="direct")
    g = heom_steady_state(hier, method="gmres")
    assert np.abs(d.rho - g.rho).max() < 1e-9
    assert d.residual < 1e-9 and g.residual < 1e-9


def test_decoupled_limit_is_unitary():
    m = spin(lams=(0.0, 0.0))
    hier = heom_for_model(m, HeomConfig(n_matsubara=1, depth=2))
    t = np.linspace(0, 8, 9)
    states = heom_propagate(hier, models.plus_state(), t)
    u = [oa.unvec(oa.vec(models.plus_state()), 2) for _ in t]
    for s, tt in zip(states, t):
        ev = np.diag(np.exp(-0.5j * tt * np.array([1, -1])))
        assert np.abs(s - ev @ u[0] @ ev.conj().T).max() < 1e-7


def test_propagation_preserves_trace_and_converges_to_stationary():
    m = spin(lams=(2e-2, 1e-2), cutoff=50.0, temps=(1.0, 2.0))
    hier = heom_for_model(m, HeomConfig(n_matsubara=0, depth=3))
    states, final = heom_propagate(hier, models.plus_state(), np.linspace(0, 150, 4), store_final=True)
    for s in states:
        assert abs(np.trace(s) - 1) < 1e-9
    ss = heom_steady_state(hier)
    assert np.abs(states[-1] - ss.rho).max() < 1e-4


def test_equilibrium_currents_vanish():
    m = spin(temps=(0.8, 0.8))
    q, store, _ = heom_currents(m, HeomConfig(n_matsubara=1, depth=3))
    assert max(abs(x) for x in q) < 1e-10
    oa.validate_density_matrix(store.rho)


def test_current_balance_and_direction():
    q, _, _ = heom_currents(spin(), HeomConfig(n_matsubara=0, depth=3))
    assert abs(sum(q)) < 1e-9
    assert q[0] < 0 < q[1]


def test_single_bath_weak_coupling_close_to_mean_force():
    b = bm.make_bath(1e-3, 100, 2.0)
    m = models.spin_boson_model(1.0, [b])
    _, store, _ = heom_currents(m, HeomConfig(n_matsubara=1, depth=3))
    mf = mean_force_classical_state(m.h_s, m.mean_force_couplings(), 2.0)
    assert oa.trace_distance(store.rho, mf) < 5e-3
    assert oa.trace_distance(store.rho, oa.gibbs_state(m.h_s, 2.0)) > oa.trace_distance(store.rho, mf)


def test_depth_zero_has_no_current():
    hier = heom_for_model(spin(), HeomConfig(n_matsubara=0, depth=0))
    assert hier.n_ados == 1
    states, store = heom_propagate(hier, models.plus_state(), [0.0, 1.0], store_final=True)
    assert abs(np.trace(states[-1]) - 1) < 1e-12
    with pytest.raises(ValidationError):
        heom.heom_current(store, hier, 0)


def test_noncommuting_couplings_rejected():
    s = bm.correlation_series(bm.make_bath(1e-3, 100, 1.0), 0)
    with pytest.raises(ValidationError):
        build_hierarchy(0.5 * models.SIGMA_Z, [models.SIGMA_X, models.SIGMA_Z], [s, s],
                        HeomConfig(n_matsubara=0, depth=2))


def test_budget_error(monkeypatch):
    monkeypatch.setenv(heom.MEMORY_ENV, "1K")
    assert heom.memory_budget_from_env() == 1024
    with pytest.raises(BudgetError):
        heom_for_model(spin(), HeomConfig(n_matsubara=1, depth=3))
    monkeypatch.setenv(heom.MEMORY_ENV, "lots")
    with pytest.raises(ValidationError):
        heom.memory_budget_from_env()


def test_sweep_trivially_converged_without_coupling():
    m = spin(lams=(0.0, 0.0), temps=(1.0, 2.0))
    calls = []

    def evaluate(cfg):
        calls.append((cfg.n_matsubara, cfg.depth))
        hier = heom_for_model(m, cfg)
        return [heom_propagate(hier, models.plus_state(), [0.0, 3.0])[-1][0, 1].real]

    rep = convergence_sweep(evaluate, HeomConfig(n_matsubara=0, depth=1))
    assert rep.converged and rep.max_relative_change < 1e-12
    assert sorted(calls) == [(0, 1), (0, 3), (2, 1)]


def test_sweep_escalates_and_reports_failure():
    seq = {}

    def evaluate(cfg):
        seq[(cfg.n_matsubara, cfg.depth)] = 1.0 / (1 + cfg.depth)
        return seq[(cfg.n_matsubara, cfg.depth)]

    with pytest.raises(ConvergenceError) as err:
        convergence_sweep(evaluate, HeomConfig(n_matsubara=0, depth=1), max_rounds=2)
    assert len(err.value.records) >= 4

    def budget(cfg):
        if cfg.depth > 3:
            raise BudgetError("too big")
        return 1.0 / cfg.depth

    with pytest.raises(ConvergenceError):
        convergence_sweep(budget, HeomConfig(n_matsubara=0, depth=2))


def test_terminator_on_off_consistency():
    # without the closure the current approaches the closed value only like 1/N_k
    m = spin(lams=(3e-2, 1e-2), cutoff=5.0, temps=(1.0, 1.5))
    on, gaps = [], []
    for nk in (2, 4, 6):
        q_on = heom_currents(m, HeomConfig(n_matsubara=nk, depth=3))[0][0]
        q_off = heom_currents(m, HeomConfig(n_matsubara=nk, depth=3, terminator=False))[0][0]
        on.append(q_on)
        gaps.append(abs(q_off - q_on))
    assert max(abs(x - on[-1]) for x in on) < 1e-3 * abs(on[-1])
    assert gaps[0] > gaps[1] > gaps[2]
    assert gaps[2] * 6 < gaps[0] * 2 * 1.5


def test_spin_dynamics_converge_under_refinement():
    m = spin(lams=(2e-2, 1e-2), cutoff=50.0, temps=(1.0, 2.0))
    t = np.linspace(0, 30, 16)
    a = heom_propagate(heom_for_model(m, HeomConfig(n_matsubara=0, depth=3)), models.plus_state(), t)
    b = heom_propagate(heom_for_model(m, HeomConfig(n_matsubara=0, depth=5)), models.plus_state(), t)
    assert max(np.abs(x - y).max() for x, y in zip(a, b)) < 1e-3
    # coherences decay, populations relax towards the stationary value
    assert abs(a[-1][0, 1]) < 0.5 * abs(a[0][0, 1])
