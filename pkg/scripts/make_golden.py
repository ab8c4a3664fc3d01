"""Regenerate ``src/reorgheat/data/golden.json`` from the oracles.

Run from the repository root::

    python3 scripts/make_golden.py [--skip-oscillator-record]

Every HEOM value is stored together with its convergence record; entries
whose record does not meet the sweep tolerance are kept but flagged.
"""
from __future__ import annotations

import argparse
import datetime
import time

import numpy as np

from reorgheat import __version__, exact_osc, golden, heom
from reorgheat.config import defaults
from reorgheat.errors import ConvergenceError
from reorgheat.experiments import (baths_for, eval_exact_osc, eval_heom_current,
                                   eval_me_current, heom_config, system_model)

SPIN = {"model.kind": "spin", "baths.lambda1": 3e-3, "baths.lambda2": 1e-3,
        "baths.cutoff1": 100.0, "baths.cutoff2": 100.0}
OSC = {"model.kind": "oscillator", "baths.lambda1": 0.01, "baths.lambda2": 0.005,
       "baths.cutoff1": 100.0, "baths.cutoff2": 100.0}
OSC_HEOM = {"heom.fock_dim": 14, "heom.n_matsubara": 6, "heom.depth": 2}
SWEEP_TOL = 1e-3


def _cfg(params):
    over = {k.replace(".", "__"): v for k, v in params.items() if "." in k}
    return defaults().with_values(**over)


def _sweep(params, max_rounds):
    cfg = _cfg(params)
    t = cfg["temperatures"]
    model = system_model(cfg, t["t1"], t["t2"], fock_dim=cfg["heom"]["fock_dim"])

    def ev(hc):
        t0 = time.time()
        cur, _, hier = heom.heom_currents(model, hc)
        print(f"  heom nk={hc.n_matsubara} nc={hc.depth} ados={hier.n_ados} q={cur} "
              f"({time.time() - t0:.1f}s)", flush=True)
        return cur

    try:
        rep = heom.convergence_sweep(ev, heom_config(cfg), rel_tol=SWEEP_TOL, max_rounds=max_rounds)
        return rep.to_dict()
    except ConvergenceError as exc:
        recs = [vars(r) for r in exc.records]
        base = recs[0]
        vals = [np.asarray(r["value"]) for r in recs]
        change = max(float(np.max(np.abs(a - b) / np.maximum(np.abs(a), np.abs(b))))
                     for a in vals for b in vals)
        return {"n_matsubara": base["n_matsubara"], "depth": base["depth"], "value": base["value"],
                "max_relative_change": change, "converged": False, "tolerance": SWEEP_TOL,
                "records": recs, "note": str(exc)}


def entry(name, quantity, params, value, tol_kind, tol, **prov):
    prov.setdefault("generated_by", f"reorgheat {__version__} scripts/make_golden.py")
    return {"name": name, "quantity": quantity, "params": params, "value": float(value),
            "tolerance": {"kind": tol_kind, "value": tol}, "provenance": prov}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default=str(golden.default_golden_path()))
    ap.add_argument("--skip-oscillator-record", action="store_true")
    args = ap.parse_args()
    entries = []
    stamp = datetime.date.today().isoformat()

    for T in (0.5, 1.0, 2.0):
        p = dict(OSC, **{"temperatures.t1": T, "temperatures.t2": 1.2 * T, "bath": 0})
        v = eval_exact_osc(**p)
        spec = exact_osc.OscillatorSpec(1.0, tuple(baths_for(_cfg(p), T, 1.2 * T)))
        _, err = exact_osc.exact_current(spec, 0, return_error=True)
        entries.append(entry(f"exact_osc_q1_T{T:g}", "exact_osc_current", p, v, "rel", 1e-8,
                             oracle="quadrature, w = cutoff tan(theta), rtol 1e-9",
                             quadrature_error=err, prefactor="1/pi", date=stamp))
        print("exact", T, v, flush=True)

    for T in (0.5, 1.0, 3.0):
        p = dict(SPIN, **{"temperatures.t1": T, "temperatures.t2": 1.2 * T, "heom.n_matsubara": 0,
                          "heom.depth": 3})
        print("spin sweep T =", T, flush=True)
        rec = _sweep(p, max_rounds=3)
        pv = dict(p, **{"heom.n_matsubara": rec["n_matsubara"], "heom.depth": rec["depth"], "bath": 0})
        entries.append(entry(f"heom_spin_q1_T{T:g}", "heom_current", pv, rec["value"][0], "rel", 1e-6,
                             oracle="heom", convergence=rec, date=stamp))

    p_osc = dict(OSC, **OSC_HEOM, **{"temperatures.t1": 1.0, "temperatures.t2": 1.5, "bath": 0})
    if args.skip_oscillator_record:
        rec = {"converged": False, "note": "record skipped"}
        value = eval_heom_current(**p_osc)
    else:
        print("oscillator sweep", flush=True)
        rec = _sweep(p_osc, max_rounds=1)
        value = rec["value"][0]
    entries.append(entry("heom_osc_q1_T1_T1.5", "heom_current", p_osc, value, "rel", 1e-6,
                         oracle="heom", convergence=rec, date=stamp))
    gap = abs(value - eval_exact_osc(**p_osc)) / abs(eval_exact_osc(**p_osc))
    entries.append(entry("cross_oracle_osc_T1_T1.5", "cross_oracle", p_osc, gap, "max", 0.02,
                         oracle="|heom - quadrature| / |quadrature| must stay below the bound",
                         date=stamp))

    for name, base, t1, t2 in (("spin", SPIN, 1.0, 1.2), ("osc", OSC, 1.0, 1.5)):
        for ref in ("reorganised", "conventional"):
            for fl in ("gkls", "redfield"):
                p = dict(base, **{"temperatures.t1": t1, "temperatures.t2": t2, "reference": ref,
                                  "flavor": fl, "bath": 0})
                v = eval_me_current(**p)
                entries.append(entry(f"me_{name}_{ref}_{fl}_q1", "me_current", p, v, "rel", 1e-8,
                                     oracle="steady state of the master equation", date=stamp))
                print("me", name, ref, fl, v, flush=True)

    golden.write_golden(entries, args.out)
    print("wrote", args.out)


if __name__ == "__main__":
    main()
