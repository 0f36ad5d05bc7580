"""saddleflow command line: run, verify, oracle1d, thm45.

Exit codes: 0 success, 1 a check did not pass, 2 invalid input, 3 a module error
(the failing stage is named on stderr).
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig, load_config
from .functional import EnergyModel
from .morse import generalized_index
from .parallel import thread_count
from .pipeline import (StageError, base_nonlinearity, build_domain, jsonable, profiles, run_pipeline,
                       stage)
from .spectral import eigenpairs

EXIT_OK, EXIT_FAIL, EXIT_INPUT, EXIT_MODULE = 0, 1, 2, 3


def _dump(path: Path, obj):
    path.write_text(json.dumps(jsonable(obj), indent=2) + "\n")


def _outdir(cfg: RunConfig, override) -> Path:
    out = Path(override or cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def solutions_payload(result) -> dict:
    cfg = result.config
    return {
        "preset": cfg.to_dict()["preset"],
        "domain": cfg.to_dict()["domain"],
        "n": result.basis.n,
        "per_mode_factor": cfg.grid.per_mode_factor,
        "table": result.table.flags(),
        "solutions": [
            {"k": r.k, "energy": r.energy, "residual": r.residual, "n_neg": r.n_neg, "n_null": r.n_null,
             "norm_X": r.norm_X, "certified": r.certified, "borderline": r.borderline,
             "coeffs": [float(c) for c in r.coeffs]}
            for r in result.table.rows
        ],
    }


def profiles_csv(result) -> str:
    pts, vals = profiles(result)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    axes = ["x"] if pts.shape[1] == 1 else ["x", "y"]
    w.writerow(axes + [f"u_{r.k}" for r in result.table.rows])
    for p, v in zip(pts, vals):
        w.writerow([f"{c:.10g}" for c in p] + [f"{c:.12e}" for c in v])
    return buf.getvalue()


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    (out / "config_used.json").write_text(cfg.to_json())
    result = run_pipeline(cfg, threads=thread_count())
    (out / "solutions.csv").write_text(result.table.to_csv())
    _dump(out / "solutions.json", solutions_payload(result))
    _dump(out / "certificates.json", {
        "ar": result.ar,
        "table": result.table.flags(),
        "runs": [r.certificate_dict() for r in result.kresults],
        "all_certified": result.all_certified,
    })
    (out / "profiles.csv").write_text(profiles_csv(result))
    sys.stdout.write(result.table.to_csv())
    if not result.all_certified:
        bad = [r.k for r in result.kresults if not r.record.certified]
        print(f"not certified: k={bad}", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


class DimensionMismatch(ValueError):
    pass


def verify_dir(directory) -> dict:
    """Recompute residual, energy and Hessian counts of every stored solution (no flow involved)."""
    directory = Path(directory)
    cfg = load_config(directory / "config_used.json")
    data = json.loads((directory / "solutions.json").read_text())
    n = int(data["n"])
    if n != cfg.basis.n:
        raise DimensionMismatch(f"solutions.json has n={n} but the config has basis.n={cfg.basis.n}")
    basis = eigenpairs(build_domain(cfg), n, cfg.grid.per_mode_factor)
    model = EnergyModel(base_nonlinearity(cfg), basis)
    rows = []
    for s in data["solutions"]:
        c = np.asarray(s["coeffs"], dtype=float)
        if c.shape[0] != n:
            raise DimensionMismatch(f"k={s['k']}: {c.shape[0]} coefficients for a basis of size {n}")
        res = float(np.linalg.norm(model.gradient(c)))
        energy = float(model.energy(c))
        rep = generalized_index(model.hessian(c), cfg.morse.zero_tol)
        checks = {
            "residual": res <= 10.0 * s["residual"],
            "energy": abs(energy - s["energy"]) <= 1e-9 * max(1.0, abs(energy)),
            "counts": (rep.n_neg, rep.n_null) == (s["n_neg"], s["n_null"]),
        }
        rows.append({"k": s["k"], "residual": res, "stored_residual": s["residual"], "energy": energy,
                     "n_neg": rep.n_neg, "n_null": rep.n_null, "checks": checks,
                     "passed": all(checks.values())})
    return {"n": n, "rows": rows, "passed": all(r["passed"] for r in rows)}


def cmd_verify(args) -> int:
    try:
        report = verify_dir(args.directory)
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except DimensionMismatch as exc:
        print(f"error: dimension mismatch: {exc}", file=sys.stderr)
        return EXIT_INPUT
    print(json.dumps(jsonable(report), indent=2))
    return EXIT_OK if report["passed"] else EXIT_FAIL


def cmd_oracle1d(args) -> int:
    from .oracles import shoot_enumerate

    cfg = load_config(args.config)
    if cfg.domain.kind != "interval":
        raise ConfigError("oracle1d needs an interval domain")
    out = _outdir(cfg, args.output)
    base = base_nonlinearity(cfg)
    L = build_domain(cfg).size[0]
    with stage("oracle1d"):
        sols = shoot_enumerate(lambda u: base.f(0.0, u), lambda u: base.ft(0.0, u),
                               lambda u: base.F(0.0, u), slope_range=tuple(cfg.oracle.slope_range),
                               scan=cfg.oracle.scan, L=L, points=cfg.oracle.points,
                               threads=thread_count())
    payload = [s.as_dict() for s in sols]
    _dump(out / "oracle1d.json", payload)
    for s in payload:
        print(f"slope={s['slope']:+.8f} energy={s['energy']:.8f} sturm={s['sturm_index']} "
              f"nodes={s['nodes']}")
    return EXIT_OK


def cmd_thm45(args) -> int:
    from .oracles import SyntheticFunctional, remark_4_6, run_theorem_4_5

    cfg = load_config(args.config)
    out = _outdir(cfg, args.output)
    phi = SyntheticFunctional.diagonal(np.asarray(cfg.thm45.a, dtype=float))
    reports = []
    with stage("thm45"):
        for l in cfg.thm45.l:
            rep = run_theorem_4_5(phi, int(l), samples=cfg.thm45.samples, seed=cfg.seed,
                                  threads=thread_count())
            reports.append(rep.as_dict())
            print(f"l={l} d={rep.d:.10f} matched={rep.matched_value:.10f} index={rep.refined_index} "
                  f"d_tilde={rep.d_tilde:.6f} passed={rep.passed}")
        family = remark_4_6(cfg.thm45.remark_dims, threads=thread_count()) if cfg.thm45.remark_dims else []
    _dump(out / "thm45.json", {"reports": reports, "remark_family": family})
    return EXIT_OK if all(r["passed"] for r in reports) else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="saddleflow", description=__doc__.splitlines()[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)
    p = sub.add_parser("run", help="compute and certify the solution table")
    p.add_argument("config")
    p.add_argument("-o", "--output", help="output directory (overrides the config)")
    p.set_defaults(func=cmd_run)
    p = sub.add_parser("verify", help="re-check stored solutions without the flow machinery")
    p.add_argument("directory")
    p.set_defaults(func=cmd_verify)
    p = sub.add_parser("oracle1d", help="enumerate 1D solutions by shooting")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_oracle1d)
    p = sub.add_parser("thm45", help="synthetic finite-dimensional minimax testbed")
    p.add_argument("config")
    p.add_argument("-o", "--output")
    p.set_defaults(func=cmd_thm45)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(name)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODULE


if __name__ == "__main__":
    sys.exit(main())
