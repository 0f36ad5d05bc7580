"""Flow-based minimax C_k = inf_t sup_{u in D} J(tau(t, u)) and critical-point extraction.

The sup over the annulus D = {u in X_k : r_k < |u| < R_k} is estimated by
flowing a fixed set of low-discrepancy samples and refining the best ones
by ascent over the k-dimensional preimage, using the chain-rule gradient
tau'_u(t, u)^T J'(tau(t, u)). The flowed family A_t stretches along the
unstable directions, so once the sensitivities grow large the preimage
ascent is continued on local charts: the tangent plane of A_t at the
current best state is flowed a short time and maximised again.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.special import ndtri
from scipy.stats import qmc

from .flow import Cutoff, FlowOptions, StepFailure, integrate, variational_integrate
from .functional import GeometryReport
from .parallel import pmap

log = logging.getLogger(__name__)

__all__ = [
    "AscentStalled",
    "NoWitness",
    "NewtonDiverged",
    "Annulus",
    "sample_annulus",
    "MinimaxOptions",
    "AscentResult",
    "ascend_preimage",
    "sup_on_flowed",
    "PSWitness",
    "MinimaxState",
    "minimax_value",
    "CriticalPointRecord",
    "refine_critical",
    "bound_checks",
]


class AscentStalled(RuntimeError):
    pass


class NoWitness(RuntimeError):
    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = trace or []


class NewtonDiverged(RuntimeError):
    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = residuals or []


# ----------------------------------------------------------------------------
# annulus samples


@dataclass(frozen=True, eq=False)
class Annulus:
    k: int
    r: float
    R: float
    samples: np.ndarray  # (N, k) coordinates in X_k

    @property
    def size(self) -> int:
        return self.samples.shape[0]

    def embed(self, n: int, Y=None) -> np.ndarray:
        Y = self.samples if Y is None else np.atleast_2d(Y)
        out = np.zeros((Y.shape[0], n))
        out[:, : self.k] = Y
        return out


def sample_annulus(k: int, r: float, R: float, N: int) -> Annulus:
    """Deterministic samples of D_{r,R} in X_k; every prefix of a longer set is a shorter set.

    Layout: the 2k axis points +-e_i at the mid radius, two points within 5%
    of the inner and outer radii, then a Halton sequence in (direction, radius).
    """
    if not 0.0 < r < R:
        raise ValueError("annulus needs 0 < r < R")
    if N < 2 * k + 8:
        raise ValueError(f"need at least 2k+8 = {2 * k + 8} samples")
    mid = 0.5 * (r + R)
    rows = []
    for i in range(k):
        for sgn in (1.0, -1.0):
            e = np.zeros(k)
            e[i] = sgn * mid
            rows.append(e)
    halton = qmc.Halton(d=k + 1, scramble=False)
    halton.fast_forward(1)
    H = halton.random(N)
    eps = 1e-9 * (R - r)
    near = []
    for j, rad in enumerate((r * 1.025, R * 0.975)):
        z = ndtri(np.clip(H[j, :k], 1e-12, 1 - 1e-12))
        if k == 1 and j == 1:
            z = -z
        z = z if np.linalg.norm(z) > 1e-12 else np.eye(k)[0]
        near.append(z / np.linalg.norm(z) * min(max(rad, r + eps), R - eps))
    rows.extend(near)
    for h in H[2 : 2 + N - len(rows)]:
        z = ndtri(np.clip(h[:k], 1e-12, 1 - 1e-12))
        nz = np.linalg.norm(z)
        d = z / nz if nz > 1e-12 else np.eye(k)[0]
        rad = r + (R - r) * h[k]
        rows.append(d * min(max(rad, r + eps), R - eps))
    return Annulus(k=k, r=float(r), R=float(R), samples=np.array(rows[:N]))


# ----------------------------------------------------------------------------
# preimage ascent


@dataclass
class MinimaxOptions:
    samples: int = 64
    schedule_start: float = 0.1
    schedule_ratio: float = 1.3
    t_global: float = 6.0  # end of the sampled phase
    t_max: float = 400.0
    ps_tol: float = 1e-6
    newton_tol: float = 1e-10
    ascend_tol: float = 1e-8
    growth_switch: float = 1e2  # sensitivity norm that hands over to chart ascent
    chart_growth: float = 1e3  # target sensitivity growth across one chart
    chart_time: float = 1.0
    chart_time_max: float = 20.0
    max_charts: int = 400
    top: int = 3
    flow: FlowOptions = dc_field(default_factory=FlowOptions)


@dataclass
class AscentResult:
    preimage: np.ndarray  # parameters y
    value: float
    state: np.ndarray  # tau(t, base + D y)
    sens: np.ndarray  # tau'_u D, (n, k)
    grad: np.ndarray  # chain-rule gradient D^T tau'^T J'
    residual: float  # |J'(state)|
    boundary: bool
    iterations: int


def _flow_point(model, cut, x0, t, opts, floor=None):
    if t == 0.0:
        return x0, float(model.energy(x0))
    if floor is not None:
        # J is non-increasing along the flow: stop as soon as the trial cannot win
        opts = FlowOptions(**{**opts.__dict__, "energy_floor": floor})
    rec = integrate(model, cut, x0, t, opts)
    if rec.status == "floor":
        return rec.final, -math.inf
    return rec.final, float(rec.energies[-1])


def _flow_with_sens(model, cut, x0, D, t, opts):
    if t == 0.0:
        return x0.copy(), D.copy()
    rec = variational_integrate(model, cut, x0, t, directions=D, opts=opts, jacobian_bound=False)
    if rec.status == "floor":
        raise StepFailure("trajectory fell below the energy floor", t=rec.times[-1], state=rec.final)
    return rec.final, rec.sens[-1]


def ascend_preimage(model, cut: Cutoff, base, D, y0, t: float, opts: MinimaxOptions | None = None,
                    radii: tuple[float, float] | None = None) -> AscentResult:
    """Maximise h(y) = J(tau(t, base + D y)) by damped Newton steps on y.

    The gradient is D^T tau'_u^T J'(tau); the curvature model is
    (tau'_u D)^T J'' (tau'_u D) with its spectrum flipped to be negative.
    With `radii` the parameter is confined to the closed shell r <= |y| <= R.
    """
    opts = opts or MinimaxOptions()
    fopts = opts.flow
    base = np.asarray(base, dtype=float)
    D = np.asarray(D, dtype=float)

    def project(y):
        if radii is None:
            return y, False
        ny = np.linalg.norm(y)
        lo, hi = radii
        if ny < lo:
            return (y / ny * lo if ny > 0 else np.eye(y.shape[0])[0] * lo), True
        if ny > hi:
            return y / ny * hi, True
        return y, False

    y, on_bd = project(np.array(y0, dtype=float))
    x, Psi = _flow_with_sens(model, cut, base + D @ y, D, t, fopts)
    J, G = model.energy_and_gradient(x)
    J = float(J)
    failures = 0
    it = 0
    for it in range(1, 201):
        g = Psi.T @ G
        gn = float(np.linalg.norm(g))
        scale = float(np.linalg.norm(Psi, 2))
        if gn < max(opts.ascend_tol, 1e-13 * scale * scale * (1.0 + np.linalg.norm(y))):
            break
        Hh = Psi.T @ model.hessian_apply(x, Psi)
        Hh = 0.5 * (Hh + Hh.T)
        lam, V = np.linalg.eigh(Hh)
        floor = 1e-8 * max(np.abs(lam).max(), 1.0)
        step = V @ ((V.T @ g) / np.maximum(np.abs(lam), floor))
        slope = float(g @ step)
        alpha = 1.0
        accepted = False
        for _ in range(40):
            y_try, bd_try = project(y + alpha * step)
            try:
                x_try, J_try = _flow_point(model, cut, base + D @ y_try, t, fopts,
                                           floor=J + 1e-4 * alpha * slope)
            except StepFailure:
                alpha *= 0.5
                continue
            if J_try >= J + 1e-4 * alpha * slope or (J_try > J and alpha * slope < 1e-14 * (1 + abs(J))):
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            if alpha * np.linalg.norm(step) < 1e-14 * (1.0 + np.linalg.norm(y)) or gn < 1e-9 * (1.0 + scale):
                break  # at the resolution limit of the flow map
            failures += 1
            if failures >= 20:
                raise AscentStalled(f"line search failed 20 times in a row at t={t:.4g}")
            continue
        failures = 0
        y, on_bd = y_try, bd_try
        x, Psi = _flow_with_sens(model, cut, base + D @ y, D, t, fopts)
        J_new, G = model.energy_and_gradient(x)
        done = abs(float(J_new) - J) <= 1e-15 * (1.0 + abs(J)) and alpha == 1.0
        J = float(J_new)
        if done:
            break
    return AscentResult(preimage=y, value=J, state=x, sens=Psi, grad=Psi.T @ G,
                        residual=float(np.linalg.norm(G)), boundary=bool(on_bd), iterations=it)


def _annulus_ascent(model, cut, ann, y0, t, opts):
    E = np.eye(model.n)[:, : ann.k]
    return ascend_preimage(model, cut, np.zeros(model.n), E, y0, t, opts, radii=(ann.r, ann.R))


def _pick(results):
    # largest value, ties to the earliest candidate
    best = 0
    for i, res in enumerate(results):
        if res.value > results[best].value:
            best = i
    return results[best]


def sup_on_flowed(model, cut: Cutoff, annulus: Annulus, t: float, opts: MinimaxOptions | None = None,
                  threads: int | None = None):
    """Sampled sup of J(tau(t, .)) over the annulus, refined by preimage ascent.

    Returns (value, preimage in X_k, AscentResult).
    """
    opts = opts or MinimaxOptions()
    X0 = annulus.embed(model.n)
    if t > 0:
        vals = np.array(pmap(lambda x: _flow_point(model, cut, x, t, opts.flow)[1], list(X0), threads))
    else:
        vals = np.asarray(model.energy(X0))
    order = np.argsort(-vals, kind="stable")[: opts.top]
    results = pmap(lambda j: _annulus_ascent(model, cut, annulus, annulus.samples[j], t, opts),
                   [int(j) for j in order], threads)
    best = _pick(results)
    return best.value, best.preimage, best


# ----------------------------------------------------------------------------
# minimax driver


@dataclass
class PSWitness:
    state: np.ndarray  # v = tau(t, u)
    preimage: np.ndarray  # u, in X_n coordinates
    t: float  # flow time from preimage to state
    total_time: float  # accumulated flow time from the annulus
    residual: float
    energy: float
    tangent: np.ndarray  # (n, k) sensitivity columns at the state
    phase: str  # "sampled" or "chart"


@dataclass
class MinimaxState:
    k: int
    d0_est: float
    times: list = dc_field(default_factory=list)
    sup_values: list = dc_field(default_factory=list)
    c_best: list = dc_field(default_factory=list)
    residuals: list = dc_field(default_factory=list)
    phases: list = dc_field(default_factory=list)
    boundary_hits: int = 0
    active: list = dc_field(default_factory=list)
    flagged_low: bool = False
    sampled_end: float = 0.0

    @property
    def t_current(self) -> float:
        return self.times[-1] if self.times else 0.0

    @property
    def C_best(self) -> float:
        return self.c_best[-1] if self.c_best else math.inf

    def record(self, t, value, residual, phase):
        self.times.append(float(t))
        self.sup_values.append(float(value))
        self.c_best.append(float(min(self.C_best, value)))
        self.residuals.append(float(residual))
        self.phases.append(phase)
        if value <= 0.75 * self.d0_est:
            self.flagged_low = True

    def as_dict(self):
        return {
            "k": self.k, "d0_est": self.d0_est, "C_best": self.C_best, "times": self.times,
            "sup_values": self.sup_values, "c_best": self.c_best, "residuals": self.residuals,
            "phases": self.phases, "boundary_hits": self.boundary_hits,
            "active_samples": self.active, "flagged_low": self.flagged_low,
            "sampled_end": self.sampled_end,
        }


def _schedule(opts: MinimaxOptions):
    times = [0.0]
    t = opts.schedule_start
    while t <= opts.t_global + 1e-12:
        times.append(t)
        t *= opts.schedule_ratio
    return times


def _orth(P):
    Q, _ = np.linalg.qr(P)
    return Q


def minimax_value(model, cut: Cutoff, geo: GeometryReport, annulus: Annulus,
                  opts: MinimaxOptions | None = None, threads: int | None = None):
    """Run the inf-sup schedule. Returns (C_best, PSWitness, MinimaxState)."""
    opts = opts or MinimaxOptions()
    n = model.n
    state = MinimaxState(k=annulus.k, d0_est=geo.d0)
    floor = 0.5 * geo.d0
    fopts = FlowOptions(**{**opts.flow.__dict__, "energy_floor": floor})
    # ascent flows use the same floor: anything below it cannot carry the sup
    opts = MinimaxOptions(**{**opts.__dict__, "flow": fopts})
    X = annulus.embed(n)
    Jv = np.asarray(model.energy(X), dtype=float)
    active = Jv >= floor
    steps_h = [None] * annulus.size
    best = None
    t_prev = 0.0
    for t in _schedule(opts):
        if t > 0.0:
            idx = [int(i) for i in np.flatnonzero(active)]

            def advance(i, t_prev=t_prev, t=t):
                try:
                    rec = integrate(model, cut, X[i], t - t_prev, fopts, h0=steps_h[i], t0=t_prev)
                except StepFailure:
                    return i, None, None, -math.inf
                return i, rec.final, rec.last_h, float(rec.energies[-1])

            for i, x, h, J in pmap(advance, idx, threads):
                if x is None or J < floor:
                    active[i] = False
                    Jv[i] = J if x is not None else -math.inf
                    continue
                X[i], steps_h[i], Jv[i] = x, h, J
        t_prev = t
        state.active.append(int(active.sum()))
        cand = [int(j) for j in np.argsort(-np.where(active, Jv, -np.inf), kind="stable")[: opts.top]
                if active[j]]
        starts = [annulus.samples[j] for j in cand]
        if best is not None:
            starts.insert(0, best.preimage)
        if not starts:
            raise NoWitness(f"every sampled trajectory fell below d0/2 by t={t:.4g}", state.as_dict())
        results = pmap(lambda y, t=t: _annulus_ascent(model, cut, annulus, y, t, opts), starts, threads)
        best = _pick(results)
        state.boundary_hits += int(best.boundary)
        state.record(t, best.value, best.residual, "sampled")
        log.debug("k=%d t=%.4g sup=%.10g residual=%.3e active=%d", annulus.k, t, best.value,
                  best.residual, int(active.sum()))
        if best.residual < opts.ps_tol:
            u = annulus.embed(n, best.preimage)[0]
            return state.C_best, PSWitness(best.state, u, t, t, best.residual, best.value,
                                           best.sens, "sampled"), state
        if np.linalg.norm(best.sens, 2) > opts.growth_switch:
            break
    state.sampled_end = t_prev
    # chart phase: flow the tangent plane of A_t at the current best state
    v = best.state
    Q = _orth(best.sens)
    total = t_prev
    growth0 = float(np.linalg.norm(best.sens, 2))
    s = opts.chart_time
    if t_prev > 0.0 and growth0 > 1.0:
        # first chart: aim for a sensitivity growth of about growth_switch
        rate = math.log(growth0) / t_prev
        s = min(s, math.log(opts.chart_growth) / rate)
    prev_res = best.residual
    for _ in range(opts.max_charts):
        try:
            res = ascend_preimage(model, cut, v, Q, np.zeros(annulus.k), s, opts)
        except StepFailure:
            s *= 0.5
            continue
        growth = float(np.linalg.norm(res.sens, 2))
        total += s
        state.record(total, res.value, res.residual, "chart")
        log.debug("k=%d chart t=%.4g s=%.3g sup=%.10g residual=%.3e growth=%.3g", annulus.k, total, s,
                  res.value, res.residual, growth)
        if res.residual < opts.ps_tol:
            u = v + Q @ res.preimage
            return state.C_best, PSWitness(res.state, u, s, total, res.residual, res.value,
                                           res.sens, "chart"), state
        # keep the sensitivity growth across one chart near chart_growth
        if growth > 10.0 * opts.chart_growth:
            s = max(0.5 * s, 1e-3)
        elif growth < opts.chart_growth or res.residual > 0.5 * prev_res:
            s = min(1.5 * s, opts.chart_time_max)
        prev_res = res.residual
        v = res.state
        Q = _orth(res.sens)
        if total > opts.t_max:
            break
    raise NoWitness(f"no Palais-Smale witness below {opts.ps_tol:g} by t={total:.4g} "
                    f"(last residual {prev_res:.3e})", state.as_dict())


# ----------------------------------------------------------------------------
# Newton refinement


@dataclass
class CriticalPointRecord:
    coeffs: np.ndarray
    energy: float
    residual: float
    iterations: int
    k: int | None = None
    c_best: float | None = None
    m: int | None = None  # None for the unmollified functional
    morse: object = None
    certified: bool | None = None
    residual_trace: list = dc_field(default_factory=list)

    @property
    def n(self) -> int:
        return self.coeffs.shape[0]

    @property
    def gap(self) -> float | None:
        return None if self.c_best is None else abs(self.energy - self.c_best)

    @property
    def norm_X(self) -> float:
        return float(np.linalg.norm(self.coeffs))


def refine_critical(model, start, newton_tol: float = 1e-10, max_iter: int = 50,
                    k: int | None = None, c_best: float | None = None) -> CriticalPointRecord:
    """Levenberg-Marquardt Newton on J'(u) = 0 from a witness (or a plain coefficient vector)."""
    if isinstance(start, PSWitness):
        x = np.array(start.state, dtype=float)
    else:
        x = np.array(start, dtype=float)
    G = model.gradient(x)
    res = float(np.linalg.norm(G))
    trace = [res]
    nu = 0.0
    it = 0
    while res >= newton_tol:
        if it >= max_iter:
            raise NewtonDiverged(f"residual {res:.3e} above {newton_tol:g} after {max_iter} iterations",
                                 trace)
        it += 1
        H = model.hessian(x)
        HtH = H.T @ H
        HtG = H.T @ G
        scale = float(np.trace(HtH)) / x.shape[0]
        improved = False
        for _ in range(30):
            try:
                delta = -np.linalg.solve(HtH + nu * np.eye(x.shape[0]), HtG)
            except np.linalg.LinAlgError:
                nu = max(10.0 * nu, 1e-12 * scale)
                continue
            G_try = model.gradient(x + delta)
            r_try = float(np.linalg.norm(G_try))
            if np.isfinite(r_try) and r_try < res:
                x, G, res = x + delta, G_try, r_try
                nu = 0.0 if nu < 1e-10 * scale else nu / 10.0
                improved = True
                break
            nu = max(10.0 * nu, 1e-12 * scale)
        trace.append(res)
        if not improved:
            raise NewtonDiverged(f"residual stuck at {res:.3e}", trace)
    return CriticalPointRecord(coeffs=x, energy=float(model.energy(x)), residual=res, iterations=it,
                               k=k, c_best=c_best, m=getattr(getattr(model.nl, "kernel", None), "m", None),
                               residual_trace=trace)


# ----------------------------------------------------------------------------
# bounds


def bound_checks(model, cut: Cutoff, geo: GeometryReport, annulus: Annulus, C_best: float,
                 t_cross: float, points: int = 33, opts: FlowOptions | None = None) -> dict:
    """Upper bound C_best <= sup_{X_k} J + 1 and the rho0-sphere crossing of a flowed segment.

    The segment joins the samples closest to the inner and outer radii along
    one direction; trajectories that reach negative energy are stopped early
    (they are outside the positivity ball for good).
    """
    opts = opts or FlowOptions()
    k = annulus.k
    norms = np.linalg.norm(annulus.samples, axis=1)
    d = annulus.samples[int(np.argmin(norms))]
    d = d / np.linalg.norm(d)
    r_in = annulus.r * 1.025
    r_out = annulus.R * 0.975
    sgrid = np.linspace(0.0, 1.0, points)
    fo = FlowOptions(**{**opts.__dict__, "energy_floor": -1.0})
    signs = []
    for s in sgrid:
        u = np.zeros(model.n)
        u[:k] = ((1 - s) * r_in + s * r_out) * d
        if t_cross > 0:
            try:
                x = integrate(model, cut, u, t_cross, fo).final
            except StepFailure as exc:
                x = exc.state
        else:
            x = u
        signs.append(float(np.linalg.norm(x) - geo.rho0))
    signs = np.array(signs)
    crossing = bool(signs.min() < 0.0 < signs.max())
    upper = geo.sup_Xk + 1.0
    return {
        "C_best": float(C_best),
        "lower": 0.75 * geo.d0,
        "upper": float(upper),
        "lower_ok": bool(C_best > 0.75 * geo.d0),
        "upper_ok": bool(C_best <= upper),
        "crossing_ok": crossing,
        "crossing_t": float(t_cross),
        "crossing_first_last": [float(signs[0]), float(signs[-1])],
    }
