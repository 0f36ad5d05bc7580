"""End-to-end run: geometry -> minimax -> refinement -> continuation -> certification."""

from __future__ import annotations

import logging
import math
from contextlib import contextmanager
from dataclasses import dataclass, field as dc_field

import numpy as np

from .config import RunConfig
from .continuation import ContinuationRun, SolutionTable, assemble_table, continue_in_m, continue_in_n
from .flow import Cutoff, FlowOptions, certificates, integrate, variational_integrate
from .functional import EnergyModel, geometry_probe, positivity_sphere
from .minimax import MinimaxOptions, bound_checks, minimax_value, refine_critical, sample_annulus
from .mollifier import BumpKernel, SmoothedNonlinearity, check_ar, preset
from .morse import RankDeficient, certify, tangent_negativity
from .parallel import pmap
from .spectral import Domain, eigenpairs, evaluate

__all__ = ["StageError", "KResult", "RunResult", "build_domain", "base_nonlinearity", "run_pipeline",
           "profile_grid", "profiles", "jsonable"]

log = logging.getLogger(__name__)


class StageError(RuntimeError):
    """A module error, tagged with the pipeline stage that raised it."""

    def __init__(self, stage: str, cause: BaseException):
        self.stage = stage
        self.cause = cause
        super().__init__(f"stage '{stage}' failed: {type(cause).__name__}: {cause}")


@contextmanager
def stage(name: str):
    try:
        yield
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def build_domain(cfg: RunConfig) -> Domain:
    return Domain(cfg.domain.kind, tuple(cfg.domain.size))


def base_nonlinearity(cfg: RunConfig):
    p = cfg.preset
    return preset(p.name, p=p.p, q=p.q, lam=p.lam)


def minimax_options(cfg: RunConfig) -> MinimaxOptions:
    mm, fl = cfg.minimax, cfg.flow
    return MinimaxOptions(
        samples=mm.samples, schedule_start=mm.schedule_start, schedule_ratio=mm.schedule_ratio,
        t_global=mm.t_global, t_max=fl.t_max, ps_tol=mm.ps_tol, newton_tol=mm.newton_tol,
        ascend_tol=mm.ascend_tol, growth_switch=mm.growth_switch, chart_growth=mm.chart_growth,
        top=mm.top,
        flow=FlowOptions(rtol=fl.rtol, atol=fl.atol, h_min=fl.h_min, store_every=fl.store_every),
    )


@dataclass
class KResult:
    k: int
    geometry: dict
    minimax: dict
    witness: dict
    bounds: dict
    flow: list
    tangent: dict
    continuation: ContinuationRun
    energy_bound: dict

    @property
    def record(self):
        return self.continuation.final

    def certificate_dict(self) -> dict:
        rec = self.record
        return {
            "k": self.k,
            "geometry": self.geometry,
            "minimax": self.minimax,
            "witness": self.witness,
            "bounds": self.bounds,
            "flow_certificates": self.flow,
            "tangent_negativity": self.tangent,
            "continuation": self.continuation.as_dict(),
            "energy_bound": self.energy_bound,
            "morse": rec.morse.as_dict() if rec.morse is not None else None,
            "certified": bool(rec.certified),
        }


@dataclass
class RunResult:
    config: RunConfig
    basis: object
    table: SolutionTable
    kresults: list
    ar: list = dc_field(default_factory=list)

    @property
    def all_certified(self) -> bool:
        return bool(self.kresults) and all(bool(r.record.certified) for r in self.kresults)


def _flow_certificates(model, cut, annulus, T, d0, count=3):
    """Variational integration from the highest-energy annulus samples, checked against the bounds."""
    n = model.n
    X = annulus.embed(n)
    order = np.argsort(-np.asarray(model.energy(X)), kind="stable")[:count]
    D = annulus.embed(n, np.eye(annulus.k))
    # stop before the superlinear escape; the certificate covers whatever interval was integrated
    opts = FlowOptions(energy_floor=-1.0)
    out = []
    for i in order:
        rec = variational_integrate(model, cut, X[int(i)], max(T, 0.1), directions=D.T, opts=opts)
        rep = certificates(rec)
        out.append({"sample": int(i), "t_end": float(rec.times[-1]), "status": rec.status,
                    **rep.as_dict()})
    return out


def _solve_k(cfg: RunConfig, ctx: dict, k: int) -> KResult:
    mopts = minimax_options(cfg)
    M0, Mm = ctx["model0"], ctx["model_m"]
    with stage(f"geometry (k={k})"):
        geo = geometry_probe(M0, k, starts=cfg.geometry.starts, seed=cfg.geometry.seed,
                             sphere=ctx["sphere"])
    cut = Cutoff.from_geometry(geo)
    ann = sample_annulus(k, geo.r_k, geo.R_k, cfg.minimax.samples)
    with stage(f"minimax (k={k})"):
        C, w, state = minimax_value(Mm, cut, geo, ann, mopts, threads=ctx["threads"])
    log.info("k=%d minimax value %.10g (residual %.2e, %s phase, t=%.4g)", k, C, w.residual, w.phase,
             w.total_time)
    with stage(f"bounds (k={k})"):
        bounds = bound_checks(Mm, cut, geo, ann, C, t_cross=state.sampled_end or w.total_time,
                              opts=mopts.flow)
    with stage(f"flow certificates (k={k})"):
        flow = _flow_certificates(Mm, cut, ann, state.sampled_end, geo.d0)
    try:
        tn = tangent_negativity(Mm, w.state, w.tangent)
        tangent = {"max_rayleigh": tn, "slack": cfg.morse.eps_slack, "ok": bool(tn <= cfg.morse.eps_slack)}
    except RankDeficient as exc:
        tangent = {"max_rayleigh": None, "slack": cfg.morse.eps_slack, "ok": False, "error": str(exc)}
    tol = cfg.minimax.newton_tol
    with stage(f"refinement (k={k})"):
        rec = refine_critical(Mm, w, newton_tol=tol, k=k, c_best=C)
    run = ContinuationRun(k=k, stages=[(rec.m, rec.n)], records=[rec])
    with stage(f"m-continuation (k={k})"):
        continue_in_m(ctx["base"], ctx["basis0"], rec, cfg.mollifier.m_schedule[1:], k, newton_tol=tol,
                      n_quad=cfg.mollifier.n_quad, run=run)
    stages_n = cfg.basis.stages[1:]
    if stages_n:
        with stage(f"n-continuation (k={k})"):
            continue_in_n(ctx["base"], ctx["domain"], run.final, stages_n, k, newton_tol=tol,
                          per_mode_factor=cfg.grid.per_mode_factor, tol=cfg.continuation.delta_tol,
                          run=run)
    final = run.final
    final.c_best = C
    with stage(f"certification (k={k})"):
        try:
            certify(ctx["model_final"], final, k, zero_tol=cfg.morse.zero_tol, newton_tol=tol)
        except ValueError:
            final.certified = False
    # uniform energy bound along the continuation: J_n(u_k) stays below sup_{X_k} J + 2
    eb = {"bound": geo.sup_Xk + 2.0, "energies": [r.energy for r in run.records]}
    eb["ok"] = bool(max(eb["energies"]) <= eb["bound"])
    # re-flowing the preimage must land on the witness state
    replay = integrate(Mm, cut, w.preimage, w.t, mopts.flow).final if w.t > 0 else w.preimage
    drift = float(np.linalg.norm(replay - w.state))
    witness = {"phase": w.phase, "t": w.t, "total_time": w.total_time, "residual": w.residual,
               "energy": w.energy, "replay_drift": drift, "replay_ok": bool(drift < 1e-6)}
    return KResult(k=k, geometry=geo.as_dict(), minimax=state.as_dict(), witness=witness, bounds=bounds,
                   flow=flow, tangent=tangent, continuation=run, energy_bound=eb)


def run_pipeline(cfg: RunConfig, threads: int | None = None) -> RunResult:
    """Compute, refine and certify one critical point per scheduled k."""
    with stage("setup"):
        domain = build_domain(cfg)
        base = base_nonlinearity(cfg)
        n_stages = cfg.basis.stages
        basis0 = eigenpairs(domain, n_stages[0], cfg.grid.per_mode_factor)
        basis_final = basis0 if len(n_stages) == 1 else eigenpairs(domain, n_stages[-1],
                                                                   cfg.grid.per_mode_factor)
        m0 = cfg.mollifier.m_schedule[0]
        model0 = EnergyModel(base, basis0)
        model_m = EnergyModel(SmoothedNonlinearity(base, BumpKernel(int(m0), n_quad=cfg.mollifier.n_quad)),
                              basis0)
    ar = []
    if base.theta > 2.0:
        with stage("AR check"):
            for m in cfg.mollifier.m_schedule:
                sm = SmoothedNonlinearity(base, BumpKernel(int(m), n_quad=cfg.mollifier.n_quad))
                rep = check_ar(sm, t_max=cfg.mollifier.ar_t_max)
                ar.append({"m": int(m), "passed": rep.passed, "min_gap": rep.min_gap, "min_F": rep.min_F,
                           "theta_tilde": rep.theta_tilde, "M1": rep.M1,
                           "violations": rep.violations})
    with stage("geometry"):
        sphere = positivity_sphere(model0, starts=cfg.geometry.starts, seed=cfg.geometry.seed)
    log.info("positivity sphere rho0=%.6g d0=%.6g", sphere[0], sphere[1])
    ctx = {"domain": domain, "base": base, "basis0": basis0, "model0": model0, "model_m": model_m,
           "model_final": EnergyModel(base, basis_final), "sphere": sphere, "threads": threads}
    ks = [int(k) for k in cfg.k_schedule]
    kresults = pmap(lambda k: _solve_k(cfg, ctx, k), ks, threads)
    with stage("assemble"):
        table = assemble_table([r.record for r in kresults], dedup_tol=cfg.continuation.dedup_tol)
    return RunResult(config=cfg, basis=basis_final, table=table, kresults=kresults, ar=ar)


def profile_grid(domain: Domain, points: int | None = None) -> np.ndarray:
    if domain.dim == 1:
        return np.linspace(0.0, domain.size[0], points or 401)[:, None]
    m = points or 65
    gx = np.linspace(0.0, domain.size[0], m)
    gy = np.linspace(0.0, domain.size[1], m)
    X, Y = np.meshgrid(gx, gy, indexing="ij")
    return np.column_stack([X.ravel(), Y.ravel()])


def profiles(result: RunResult) -> tuple[np.ndarray, np.ndarray]:
    """Grid points and the values of each table row's u_k there, shape (P, rows)."""
    pts = profile_grid(result.basis.domain)
    vals = np.column_stack([evaluate(row.coeffs, result.basis, pts) for row in result.table.rows]) \
        if result.table.rows else np.zeros((pts.shape[0], 0))
    return pts, vals


def jsonable(obj):
    """Replace non-finite floats so the output stays strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        return jsonable(obj.item())
    if isinstance(obj, np.ndarray):
        return jsonable(obj.tolist())
    return obj
