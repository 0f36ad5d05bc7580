"""Acceptance criteria 1-9. Each check prints one PASS/FAIL line.

Run with pytest (lines are echoed in the terminal summary) or directly:
    python tests/test_acceptance.py
The flagship checks (4, 5, 9) run the full bundled thm12_1d config twice and
take several minutes.
"""

from __future__ import annotations

import contextlib
import functools
import json
import math
import os
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from saddleflow import bundled_config
from saddleflow.cli import main as cli_main
from saddleflow.config import load_config
from saddleflow.flow import (Cutoff, FlowOptions, certificates, integrate, variational_integrate)
from saddleflow.functional import EnergyModel, geometry_probe
from saddleflow.mollifier import (BumpKernel, Nonlinearity, SmoothedNonlinearity, check_ar, mollify,
                                  preset, uniform_error)
from saddleflow.morse import generalized_index
from saddleflow.oracles import SyntheticFunctional, run_theorem_4_5, shoot_enumerate
from saddleflow.pipeline import run_pipeline
from saddleflow.spectral import Domain, eigenpairs, evaluate

try:
    from conftest import ACCEPTANCE_LINES
except ImportError:  # run as a script from elsewhere
    ACCEPTANCE_LINES = []


def report(n: int, ok: bool, detail: str, seconds: float):
    line = f"CRITERION {n} {'PASS' if ok else 'FAIL'} ({seconds:.1f}s): {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return ok


@contextlib.contextmanager
def threads(count: int):
    old = os.environ.get("SADDLEFLOW_THREADS")
    os.environ["SADDLEFLOW_THREADS"] = str(count)
    try:
        yield
    finally:
        if old is None:
            os.environ.pop("SADDLEFLOW_THREADS", None)
        else:
            os.environ["SADDLEFLOW_THREADS"] = old


# ---------------------------------------------------------------------------
# 1. mollifier suite

def criterion_1():
    t0 = time.time()
    mass_err = max(abs(BumpKernel(m).mass() - 1.0) for m in range(1, 257))
    aff = Nonlinearity(f=lambda x, t: 3.0 * t - 1.0, ft=lambda x, t: 3.0 + 0 * t,
                       F=lambda x, t: 1.5 * t**2 - t, p=2.0, C_growth=3.0, theta=2.0, M_ar=math.inf)
    t = np.linspace(-5, 5, 201)
    aff_err = max(float(np.max(np.abs(mollify(aff, BumpKernel(m), 0.0, t) - aff.f(0.0, t))))
                  for m in (1, 4, 32, 256))
    ms = np.array([8, 16, 32, 64, 128])
    errs = np.array([uniform_error(preset("cubic"), BumpKernel(int(m))) for m in ms])
    order = -np.polyfit(np.log(ms), np.log(errs), 1)[0]
    dt = time.time() - t0
    ok = mass_err < 1e-10 and aff_err < 1e-12 and order >= 1.9 and dt < 5.0
    return report(1, ok, f"mass error {mass_err:.1e}, affine error {aff_err:.1e}, "
                         f"cubic order {order:.3f}", dt)


# ---------------------------------------------------------------------------
# 2. AR preservation

def criterion_2():
    t0 = time.time()
    worst = []
    ok = True
    for name in ("cubic", "thm12"):
        base = preset(name, p=4, q=3)
        for m in (32, 64, 128, 256):
            rep = check_ar(SmoothedNonlinearity(base, BumpKernel(m)), t_max=50.0)
            ok &= rep.passed and abs(rep.theta_tilde - 0.5 * (2 + base.theta)) < 1e-15
            worst.append(rep.min_gap)
    dt = time.time() - t0
    ok = ok and dt < 5.0
    return report(2, ok, f"8 (preset, m) pairs, smallest gap t f_m - theta~ F_m = {min(worst):.3e}", dt)


# ---------------------------------------------------------------------------
# 3. flow certificates

def _flow_checks(model, rng, count=20):
    geo = geometry_probe(EnergyModel(model.nl.base, model.basis), 2, starts=16)
    cut = Cutoff.from_geometry(geo)
    n = model.n
    floor = FlowOptions(energy_floor=-1.0)
    cert_fail = semi_worst = 0.0
    ratios = []
    fails = 0
    for _ in range(count):
        u = rng.normal(size=n) / np.sqrt(np.arange(1, n + 1))
        u *= rng.uniform(0.3, 1.5) * geo.rho0 / np.linalg.norm(u)
        rec = variational_integrate(model, cut, u, 1.0, opts=floor)
        rep = certificates(rec, tol=1e-6)
        fails += not rep.passed
        T = float(rec.times[-1])
        a = integrate(model, cut, u, 0.4 * T)
        b = integrate(model, cut, a.final, T - 0.4 * T)
        c = integrate(model, cut, u, T)
        semi_worst = max(semi_worst, float(np.max(np.abs(b.final - c.final))))
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        rv = variational_integrate(model, cut, u, T, directions=v[:, None], jacobian_bound=False)
        errs = []
        for d in (1e-3, 5e-4, 2.5e-4):
            rp = integrate(model, cut, u + d * v, T, steps=rv.steps)
            errs.append(np.linalg.norm((rp.final - rv.final) / d - rv.sens[-1][:, 0]))
        ratios += [errs[0] / errs[1], errs[1] / errs[2]]
    return fails, semi_worst, ratios


def criterion_3():
    t0 = time.time()
    rng = np.random.default_rng(2024)
    basis = eigenpairs(Domain.interval(), 12)
    fails, semi, ratios = 0, 0.0, []
    for name in ("cubic", "thm12"):
        model = EnergyModel(SmoothedNonlinearity(preset(name, p=4, q=3), BumpKernel(32)), basis)
        f, s, r = _flow_checks(model, rng)
        fails += f
        semi = max(semi, s)
        ratios += r
    dt = time.time() - t0
    ok = fails == 0 and semi < 1e-7 and all(1.7 <= r <= 2.3 for r in ratios) and dt < 60.0
    return report(3, ok, f"40 trajectories, certificate failures {fails}, semigroup error {semi:.1e}, "
                         f"FD ratios in [{min(ratios):.3f}, {max(ratios):.3f}]", dt)


# ---------------------------------------------------------------------------
# flagship run, shared by 4, 5 and 9

@functools.lru_cache(maxsize=None)
def flagship(thread_count: int):
    out = Path(tempfile.mkdtemp(prefix=f"flagship{thread_count}_"))
    t0 = time.time()
    with threads(thread_count):
        code = cli_main(["run", str(bundled_config("thm12_1d")), "-o", str(out)])
    return code, out, time.time() - t0


@functools.lru_cache(maxsize=None)
def thm12_oracle():
    return shoot_enumerate(lambda u: u**3 + u**2, lambda u: 3 * u**2 + 2 * u,
                           lambda u: u**4 / 4 + u**3 / 3, threads=1)


@functools.lru_cache(maxsize=None)
def cubic_run():
    cfg = load_config(bundled_config("cubic_1d"))
    t0 = time.time()
    return run_pipeline(cfg, threads=1), time.time() - t0


def criterion_4():
    code, out, secs = flagship(1)
    certs = json.loads((out / "certificates.json").read_text())
    runs = certs["runs"] + [r.certificate_dict() for r in cubic_run()[0].kresults]
    rows = []
    ok = True
    for r in runs:
        b = r["bounds"]
        lo, hi = 0.75 * r["geometry"]["d0"], r["geometry"]["sup_Xk"] + 1.0
        good = lo < b["C_best"] <= hi and b["crossing_ok"]
        ok &= good
        rows.append(f"k={r['k']}: {lo:.4g} < {b['C_best']:.6g} <= {hi:.4g}")
    return report(4, ok, "; ".join(rows) + " (flagship k=1..4, then cubic k=1), crossing ok", secs)


def criterion_5():
    code, out, secs = flagship(1)
    sol = json.loads((out / "solutions.json").read_text())
    cfg = load_config(out / "config_used.json")
    basis = eigenpairs(Domain.interval(), sol["n"])
    oracle = thm12_oracle()
    rows = sol["solutions"]
    ks = sorted(r["k"] for r in rows)
    energies = [r["energy"] for r in rows]
    norms = [r["norm_X"] for r in rows]
    problems = []
    if ks != [1, 2, 3, 4]:
        problems.append(f"rows for k={ks}")
    if not all(b > a for a, b in zip(energies, energies[1:])):
        problems.append("energies not increasing")
    if not all(b > a for a, b in zip(norms, norms[1:])):
        problems.append("norms not increasing")
    linf = []
    for r in rows:
        c = np.asarray(r["coeffs"])
        errs = [float(np.max(np.abs(evaluate(c, basis, o.x) - o.profile))) for o in oracle]
        j = int(np.argmin(errs))
        linf.append(errs[j])
        if r["residual"] >= 1e-10:
            problems.append(f"k={r['k']} residual {r['residual']:.1e}")
        if not (r["certified"] and r["n_neg"] + r["n_null"] >= r["k"]):
            problems.append(f"k={r['k']} not certified")
        if errs[j] > 1e-4:
            problems.append(f"k={r['k']} Linf {errs[j]:.2e} > 1e-4")
        if r["n_neg"] != oracle[j].sturm_index:
            problems.append(f"k={r['k']} n_neg {r['n_neg']} vs Sturm {oracle[j].sturm_index}")
    if code != 0:
        problems.append(f"exit code {code}")
    if secs > 600:
        problems.append("over 10 minutes")
    ok = not problems
    detail = (f"n={cfg.basis.n}, energies {', '.join(f'{e:.6f}' for e in energies)}; "
              f"Linf to oracle {', '.join(f'{e:.1e}' for e in linf)}")
    if problems:
        detail += "; " + "; ".join(problems)
    return report(5, ok, detail, secs)


def criterion_6():
    result, secs = cubic_run()
    C = result.kresults[0].minimax["C_best"]
    t0 = time.time()
    sols = shoot_enumerate(lambda u: u**3, lambda u: 3 * u**2, lambda u: 0.25 * u**4,
                           slope_range=(0.05, 5.0), scan=200, threads=1)
    least = min(s.energy for s in sols if s.energy > 0)
    secs += time.time() - t0
    rel = abs(C - least) / least
    ok = rel < 0.01 and secs < 120
    return report(6, ok, f"C_1 = {C:.6f}, oracle least positive value {least:.6f}, "
                         f"relative gap {rel:.2e}", secs)


def criterion_7():
    t0 = time.time()
    basis = eigenpairs(Domain.interval(), 12)
    zero = np.zeros(12)
    lines = []
    ok = True
    for j in (1, 2, 3):
        lam = j * j + 0.5 * (2 * j + 1)
        rep = generalized_index(EnergyModel(preset("linear", lam=lam), basis).hessian(zero))
        ok &= rep.n_neg + rep.n_null == j and rep.n_null == 0
        lines.append(f"lambda={lam:g}: index {rep.index}")
        res = generalized_index(EnergyModel(preset("linear", lam=float(j * j)), basis).hessian(zero))
        ok &= res.n_null >= 1
        lines.append(f"lambda={j * j}: n_null {res.n_null}")
    dt = time.time() - t0
    ok = ok and dt < 5.0
    return report(7, ok, ", ".join(lines), dt)


def criterion_8():
    t0 = time.time()
    phi = SyntheticFunctional.diagonal([1.0, 1.0, 1.0, 1.0])
    parts = []
    ok = True
    for l, target in ((1, 0.25), (2, 0.5)):
        rep = run_theorem_4_5(phi, l, threads=1)
        err = abs(rep.d - target)
        ok &= err < 1e-6 and rep.matched_index >= l and rep.refined_index >= l and rep.d <= rep.d_tilde
        parts.append(f"l={l}: d={rep.d:.9f} (error {err:.1e}), index {rep.refined_index}, "
                     f"d~={rep.d_tilde:.3f}")
    dt = time.time() - t0
    ok = ok and dt < 30.0
    return report(8, ok, "; ".join(parts), dt)


def criterion_9():
    _, out1, s1 = flagship(1)
    _, out2, s2 = flagship(2)
    same = (out1 / "solutions.csv").read_bytes() == (out2 / "solutions.csv").read_bytes()
    return report(9, same, "solutions.csv with SADDLEFLOW_THREADS=1 and =2 "
                           f"{'byte-identical' if same else 'differ'}", s1 + s2)


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5, criterion_6, criterion_7,
            criterion_8, criterion_9]


@pytest.mark.parametrize("check", CRITERIA, ids=[f"criterion_{i}" for i in range(1, 10)])
def test_acceptance(check):
    assert check()


if __name__ == "__main__":
    results = [check() for check in CRITERIA]
    sys.exit(0 if all(results) else 1)
