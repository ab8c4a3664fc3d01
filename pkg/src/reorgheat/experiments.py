"""Experiment runners behind the command line: dynamics, currents, sweeps,
HEOM convergence records and golden-value evaluators.

Runners return lists of flat row dictionaries; :mod:`reorgheat.cli` writes
them out.  Every row carries ``method``, ``reference`` and ``flavor`` tags.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor

import numpy as np

from . import bath as bath_mod
from . import exact_osc, heom, models, thermo
from .errors import ConvergenceError, ReorgHeatError, ValidationError
from .master_eq import Flavor, Reference, propagate, steady_state

log = logging.getLogger(__name__)

FOCK_START = 30
FOCK_STEP = 10
FOCK_TOL = 1e-3
FOCK_MAX = 120
EXACT_TAG = ("exact", "exact")


# ----------------------------------------------------------------- builders
def baths_for(cfg, t1, t2):
    b = cfg["baths"]
    return [bath_mod.make_bath(b["lambda1"], b["cutoff1"], t1, "bath1"),
            bath_mod.make_bath(b["lambda2"], b["cutoff2"], t2, "bath2")]


def system_model(cfg, t1, t2, fock_dim=None, reference=None):
    """Model for the configured system; an adapted Fock basis when ``reference`` is given."""
    m = cfg["model"]
    baths = baths_for(cfg, t1, t2)
    if m["kind"] == "spin":
        return models.spin_boson_model(m["epsilon0"], baths, m["identity_component"],
                                       m["counter_term"])
    d = m["fock_dim"] if fock_dim is None else fock_dim
    if reference is not None:
        return models.oscillator_reference_model(m["omega0"], d, baths, reference, m["counter_term"])
    return models.oscillator_model(m["omega0"], d, baths, m["counter_term"])


def heom_config(cfg, **over):
    h = cfg["heom"]
    kw = dict(n_matsubara=h["n_matsubara"], depth=h["depth"], terminator=h["terminator"],
              shifted_terminator=h["shifted_terminator"])
    kw.update(over)
    return heom.HeomConfig(**kw)


def fock_converged(evaluate, start=FOCK_START, step=FOCK_STEP, tol=FOCK_TOL, max_dim=FOCK_MAX):
    """Grow the Fock dimension until ``evaluate(d)`` changes by less than ``tol`` (relative).

    Returns ``(value, dim)``; raises ConvergenceError beyond ``max_dim``.
    """
    d = start
    prev = np.atleast_1d(np.asarray(evaluate(d), dtype=float))
    while d + step <= max_dim:
        d += step
        cur = np.atleast_1d(np.asarray(evaluate(d), dtype=float))
        scale = np.maximum(np.abs(cur), 1e-300)
        if np.all(np.abs(cur - prev) <= tol * scale + 1e-15):
            return cur, d
        prev = cur
    raise ConvergenceError(f"Fock truncation not converged up to dimension {max_dim}")


# ----------------------------------------------------------------- currents
def me_currents(cfg, t1, t2, reference: Reference, flavor: Flavor, **fock):
    """Master-equation steady-state report (oscillator: Fock-converged).

    ``fock`` overrides the ``start``, ``step`` and ``max_dim`` of the Fock loop.
    """
    if cfg["model"]["kind"] == "spin":
        return thermo._report(system_model(cfg, t1, t2), reference, flavor)
    box = {}

    def ev(d):
        box[d] = thermo._report(system_model(cfg, t1, t2, d, reference), reference, flavor)
        return box[d].per_bath_currents

    fock.setdefault("start", max(cfg["model"]["fock_dim"], 10))
    _, d = fock_converged(ev, **fock)
    rep = box[d]
    rep.extras["fock_dim"] = d
    return rep


def heom_sweep(cfg, t1, t2, fock_dim=None):
    """Converged HEOM currents for the configured system: ConvergenceReport."""
    h = cfg["heom"]
    d = h["fock_dim"] if fock_dim is None else fock_dim
    model = system_model(cfg, t1, t2, fock_dim=d)

    def ev(hc):
        cur, _, _ = heom.heom_currents(model, hc)
        return cur

    return heom.convergence_sweep(ev, heom_config(cfg), rel_tol=h["sweep_tol"],
                                  max_rounds=h["max_rounds"])


def exact_currents(cfg, t1, t2, oracle="auto"):
    """``(currents, tag, record)`` from the exact oracle."""
    kind = cfg["model"]["kind"]
    if oracle == "auto":
        oracle = "quadrature" if kind == "oscillator" else "heom"
    if oracle == "quadrature":
        if kind != "oscillator":
            raise ValidationError("the quadrature oracle exists for the oscillator only")
        spec = exact_osc.OscillatorSpec(cfg["model"]["omega0"], tuple(baths_for(cfg, t1, t2)),
                                        cfg["model"]["counter_term"])
        return [exact_osc.exact_current(spec, 0), exact_osc.exact_current(spec, 1)], "quadrature", None
    rep = heom_sweep(cfg, t1, t2)
    return list(rep.value), "heom", rep


def _me_row(base, rep, exact):
    q1, q2 = rep.per_bath_currents
    row = dict(base, method="master_equation", reference=rep.reference, flavor=rep.flavor,
               q1=q1, q2=q2, clausius_sum=rep.clausius_sum,
               clausius_ok=int(rep.clausius_sum <= thermo.CLAUSIUS_TOL),
               balance=rep.balance_residual, status="ok")
    row["rel_error_q1"] = thermo.relative_error(q1, exact[0]) if exact is not None else float("nan")
    return row


def current_point(cfg, t1, t2, index=0):
    """All requested methods plus the exact oracle at one temperature pair."""
    base = {"index": index, "t1": float(t1), "t2": float(t2)}
    rows = []
    exact = None
    if cfg["methods"]["exact"] != "none":
        try:
            exact, tag, rec = exact_currents(cfg, t1, t2, cfg["methods"]["exact"])
            row = dict(base, method=tag, reference="exact", flavor="exact", q1=exact[0],
                       q2=exact[1], clausius_sum=exact[0] / t1 + exact[1] / t2,
                       clausius_ok=int(exact[0] / t1 + exact[1] / t2 <= thermo.CLAUSIUS_TOL),
                       balance=abs(exact[0] + exact[1]), rel_error_q1=0.0, status="ok")
            if rec is not None:
                row["status"] = f"converged nk={rec.n_matsubara} nc={rec.depth}"
            rows.append(row)
        except ReorgHeatError as exc:
            rows.append(dict(base, method=cfg["methods"]["exact"], reference="exact",
                             flavor="exact", status=f"error: {exc}"))
    for ref in cfg["methods"]["references"]:
        for fl in cfg["methods"]["flavors"]:
            try:
                rep = me_currents(cfg, t1, t2, Reference(ref), Flavor(fl))
                rows.append(_me_row(base, rep, exact))
            except ReorgHeatError as exc:
                rows.append(dict(base, method="master_equation", reference=ref, flavor=fl,
                                 status=f"error: {exc}"))
    return rows


def temperature_points(cfg):
    """Grid (off-diagonal) or line points; falls back to the single (t1, t2) pair."""
    t = cfg["temperatures"]
    if t["line"]:
        return [(x, t["ratio"] * x) for x in t["line"]]
    if t["t1_grid"] or t["t2_grid"]:
        g1 = t["t1_grid"] or (t["t1"],)
        g2 = t["t2_grid"] or (t["t2"],)
        return [(a, b) for a in g1 for b in g2 if not np.isclose(a, b, rtol=0, atol=1e-12)]
    return [(t["t1"], t["t2"])]


def _point_job(args):
    cfg, t1, t2, i = args
    return current_point(cfg, t1, t2, i)


def run_current_sweep(cfg, jobs=1):
    """Rows for every grid point, gathered in grid order."""
    pts = temperature_points(cfg)
    tasks = [(cfg, a, b, i) for i, (a, b) in enumerate(pts)]
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            chunks = list(pool.map(_point_job, tasks))
    else:
        chunks = [_point_job(t) for t in tasks]
    rows = [r for c in chunks for r in c]
    rows.sort(key=lambda r: r["index"])
    return rows


# ----------------------------------------------------------------- dynamics
def initial_state(cfg, dim):
    m = cfg["model"]
    if m["kind"] == "spin":
        if m["initial_state"] == "vacuum":
            return np.diag([0.0, 1.0]).astype(complex)
        return models.plus_state()
    if m["initial_state"] == "plus":
        raise ValidationError("the |+> state applies to the spin only")
    return models.coherent_state(dim, m["alpha"] if m["initial_state"] == "coherent" else 0.0)


def observables(cfg, model, rho):
    if cfg["model"]["kind"] == "spin":
        return {"p_excited": float(np.real(rho[0, 0])), "re_coherence": float(np.real(rho[0, 1]))}
    return {"x2": float(np.real(np.trace(model.extras["x2"] @ rho)))}


def relaxation_time(model):
    """Inverse of the slowest non-zero decay rate of the reorganised GKLS generator."""
    me = thermo.build_master_equation(model, Reference.REORGANISED, Flavor.SECULAR_GKLS)
    ev = np.linalg.eigvals(me.generator.toarray())
    rates = np.sort(-ev.real)
    slow = rates[rates > 1e-10 * max(rates.max(), 1e-300)]
    if slow.size == 0:
        return float("inf")
    return float(1.0 / slow[0])


def dynamics_grid(cfg, model):
    dy = cfg["dynamics"]
    tf = dy["t_final"]
    if tf == 0.0:
        tr = relaxation_time(model)
        if not np.isfinite(tr):
            raise ValidationError("no relaxation without coupling; set dynamics.t_final")
        tf = dy["relaxation_times"] * tr
    return np.linspace(0.0, tf, dy["n_points"])


def run_dynamics(cfg, heom_cfg=None):
    """Time series of the observables for every method on a shared Fock space.

    The oscillator uses the ``heom.fock_dim`` truncation in the bare basis
    for all methods so that the initial state is common.
    """
    t = cfg["temperatures"]
    d = cfg["heom"]["fock_dim"]
    model = system_model(cfg, t["t1"], t["t2"], fock_dim=d)
    grid = dynamics_grid(cfg, model)
    rho0 = initial_state(cfg, model.dim)
    rows = []

    def emit(method, ref, fl, states):
        for tk, rho in zip(grid, states):
            rows.append(dict({"t": float(tk), "method": method, "reference": ref, "flavor": fl},
                             **observables(cfg, model, rho)))

    for ref in cfg["methods"]["references"]:
        for fl in cfg["methods"]["flavors"]:
            me = thermo.build_master_equation(model, Reference(ref), Flavor(fl))
            emit("master_equation", ref, fl, propagate(me, rho0, grid))
    if cfg["methods"]["exact"] in ("auto", "heom"):
        hier = heom.heom_for_model(model, heom_cfg or heom_config(cfg))
        emit("heom", "exact", "exact", heom.heom_propagate(hier, rho0, grid))
    return rows


def heom_convergence(cfg):
    """Convergence record of the HEOM currents at the configured (t1, t2)."""
    t = cfg["temperatures"]
    try:
        rep = heom_sweep(cfg, t["t1"], t["t2"])
        records, ok, info = rep.records, True, rep
    except ConvergenceError as exc:
        records, ok, info = exc.records, False, None
    rows = []
    for r in records:
        rows.append({"t1": t["t1"], "t2": t["t2"], "method": "heom", "reference": "exact",
                     "flavor": "exact", "n_matsubara": r.n_matsubara, "depth": r.depth,
                     "q1": r.value[0], "q2": r.value[1]})
    summary = info.to_dict() if info is not None else {"converged": False}
    summary["converged"] = ok
    return rows, summary


# ----------------------------------------------------------------- golden evaluators
def _cfg_from(params):
    from .config import defaults
    over = {f"{k.split('.')[0]}__{k.split('.')[1]}": v for k, v in params.items() if "." in k}
    return defaults().with_values(**over)


def eval_exact_osc(**params):
    cfg = _cfg_from(params)
    t = cfg["temperatures"]
    return exact_currents(cfg, t["t1"], t["t2"], "quadrature")[0][params.get("bath", 0)]


def eval_heom_current(**params):
    cfg = _cfg_from(params)
    t = cfg["temperatures"]
    model = system_model(cfg, t["t1"], t["t2"], fock_dim=cfg["heom"]["fock_dim"])
    cur, _, _ = heom.heom_currents(model, heom_config(cfg))
    return cur[params.get("bath", 0)]


def eval_me_current(**params):
    cfg = _cfg_from(params)
    t = cfg["temperatures"]
    rep = me_currents(cfg, t["t1"], t["t2"], Reference(params["reference"]),
                      Flavor(params["flavor"]))
    return rep.per_bath_currents[params.get("bath", 0)]


def eval_cross_oracle(**params):
    """Relative difference between the HEOM and quadrature oscillator currents."""
    h = eval_heom_current(**params)
    e = eval_exact_osc(**params)
    return abs(h - e) / abs(e)


EVALUATORS = {
    "exact_osc_current": eval_exact_osc,
    "heom_current": eval_heom_current,
    "me_current": eval_me_current,
    "cross_oracle": eval_cross_oracle,
}
