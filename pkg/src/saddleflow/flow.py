"""Cutoff-modified descending flow d tau/dt = -(1 - l(tau)) J'(tau) and its variations.

The cutoff l is 1 on the mu-neighbourhood of the anchor set K (a closed
small ball plus a large sphere in X_k) and 0 outside its 2 mu-neighbourhood.
It is built from the distance to K through a C-infinity step, so its first
and second derivatives are available in closed form for the variational
equations.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .functional import GeometryReport

__all__ = [
    "StepFailure",
    "smooth_step",
    "Cutoff",
    "field",
    "field_jacobian",
    "field_jacobian_apply",
    "field_second",
    "dopri45",
    "FlowOptions",
    "TrajectoryRecord",
    "integrate",
    "variational_integrate",
    "second_variational",
    "operator_norm",
    "CertificateReport",
    "certificates",
]


class StepFailure(RuntimeError):
    def __init__(self, message, t=None, state=None):
        super().__init__(message)
        self.t = t
        self.state = state


# ----------------------------------------------------------------------------
# cutoff


def _psi(t):
    t = np.asarray(t, dtype=float)
    pos = t > 0.0
    safe = np.where(pos, t, 1.0)
    return np.where(pos, np.exp(-1.0 / safe), 0.0), safe, pos


def smooth_step(t, order: int = 0):
    """C-infinity step: 1 for t <= 0, 0 for t >= 1, and its first two derivatives."""
    a, sa, pa = _psi(1.0 - np.asarray(t, dtype=float))
    b, sb, pb = _psi(t)
    s = a + b
    if order == 0:
        return a / s
    # psi' = psi/t^2, psi'' = psi (1/t^4 - 2/t^3)
    da = -np.where(pa, a / sa**2, 0.0)
    db = np.where(pb, b / sb**2, 0.0)
    if order == 1:
        return (da * b - a * db) / s**2
    dda = np.where(pa, a * (1.0 / sa**4 - 2.0 / sa**3), 0.0)
    ddb = np.where(pb, b * (1.0 / sb**4 - 2.0 / sb**3), 0.0)
    N = da * b - a * db
    dN = dda * b - a * ddb
    ds = da + db
    if order == 2:
        return (dN * s - 2.0 * N * ds) / s**3
    raise ValueError("smooth_step supports derivative orders 0..2")


@dataclass(frozen=True)
class Cutoff:
    """l(x) = sigma((d(x) - mu)/mu), d = distance to K = ball(r) U sphere(R) in X_k.

    mode "normal" uses the construction above; "frozen" forces l = 1 (flow
    is the identity) and "off" forces l = 0 (plain gradient flow).
    """

    k: int
    r: float
    R: float
    mu: float
    mode: str = "normal"

    @classmethod
    def from_geometry(cls, geo: GeometryReport, mode: str = "normal"):
        return cls(k=geo.k, r=geo.r_k, R=geo.R_k, mu=geo.mu, mode=mode)

    @classmethod
    def disabled(cls):
        return cls(k=1, r=0.0, R=math.inf, mu=1.0, mode="off")

    def _branch(self, x):
        k = self.k
        p = x[:k]
        q = x[k:]
        pn = math.sqrt(float(p @ p))
        qn2 = float(q @ q)
        a_ball = max(pn - self.r, 0.0)
        d_ball = math.sqrt(a_ball * a_ball + qn2)
        d_sph = math.sqrt((pn - self.R) ** 2 + qn2) if math.isfinite(self.R) else math.inf
        if d_ball <= d_sph:
            return d_ball, a_ball, pn, p, q, pn > self.r
        return d_sph, pn - self.R, pn, p, q, True

    def distance(self, x) -> float:
        return self._branch(np.asarray(x, dtype=float))[0]

    def l(self, x) -> float:
        if self.mode == "off":
            return 0.0
        if self.mode == "frozen":
            return 1.0
        d = self.distance(x)
        return float(smooth_step((d - self.mu) / self.mu))

    def _grad_d(self, x):
        d, a, pn, p, q, radial = self._branch(x)
        g = np.zeros_like(x)
        if d == 0.0:
            return d, g, a, pn, radial
        if radial and pn > 0.0:
            g[: self.k] = a * p / pn
        g[self.k :] = q
        return d, g / d, a, pn, radial

    def grad(self, x):
        """Gradient of l."""
        x = np.asarray(x, dtype=float)
        if self.mode != "normal":
            return np.zeros_like(x)
        d, gd, *_ = self._grad_d(x)
        s = (d - self.mu) / self.mu
        if s <= 0.0 or s >= 1.0:
            return np.zeros_like(x)
        return float(smooth_step(s, 1)) / self.mu * gd

    def l_and_grad(self, x):
        x = np.asarray(x, dtype=float)
        if self.mode == "off":
            return 0.0, np.zeros_like(x)
        if self.mode == "frozen":
            return 1.0, np.zeros_like(x)
        d, gd, *_ = self._grad_d(x)
        s = (d - self.mu) / self.mu
        lval = float(smooth_step(s))
        if s <= 0.0 or s >= 1.0:
            return lval, np.zeros_like(x)
        return lval, float(smooth_step(s, 1)) / self.mu * gd

    def hess(self, x):
        """Hessian of l (dense n x n)."""
        x = np.asarray(x, dtype=float)
        n = x.shape[0]
        if self.mode != "normal":
            return np.zeros((n, n))
        d, gd, a, pn, radial = self._grad_d(x)
        s = (d - self.mu) / self.mu
        if s <= 0.0 or s >= 1.0 or d == 0.0:
            return np.zeros((n, n))
        k = self.k
        M = np.zeros((n, n))
        if radial and pn > 0.0:
            ph = x[:k] / pn
            P = np.outer(ph, ph)
            M[:k, :k] = P + (a / pn) * (np.eye(k) - P)
        M[k:, k:] = np.eye(n - k)
        Hd = (M - np.outer(gd, gd)) / d
        s1 = float(smooth_step(s, 1))
        s2 = float(smooth_step(s, 2))
        return s2 / self.mu**2 * np.outer(gd, gd) + s1 / self.mu * Hd


# ----------------------------------------------------------------------------
# vector field


def field(model, cut: Cutoff, x):
    """g(x) = -(1 - l(x)) J'(x)."""
    x = np.asarray(x, dtype=float)
    lval = cut.l(x)
    if lval >= 1.0:
        return np.zeros_like(x)
    return -(1.0 - lval) * model.gradient(x)


def field_jacobian_apply(model, cut: Cutoff, x, V, _cache=None):
    """g'(x) V = -(1 - l) H V + G (grad l . V), V a vector or (n, p) block."""
    x = np.asarray(x, dtype=float)
    lval, gl = cut.l_and_grad(x)
    if lval >= 1.0:
        return np.zeros_like(V)
    out = -(1.0 - lval) * model.hessian_apply(x, V)
    if gl.any():
        G = model.gradient(x)
        out = out + (np.outer(G, gl @ V) if np.ndim(V) == 2 else G * (gl @ V))
    return out


def field_jacobian(model, cut: Cutoff, x):
    x = np.asarray(x, dtype=float)
    return field_jacobian_apply(model, cut, x, np.eye(x.shape[0]))


def field_second(model, cut: Cutoff, x, a, B):
    """g''(x)[a, b_j] for each column b_j of B."""
    x = np.asarray(x, dtype=float)
    lval, gl = cut.l_and_grad(x)
    if lval >= 1.0:
        return np.zeros_like(B)
    A = np.repeat(a[:, None], B.shape[1], axis=1)
    out = -(1.0 - lval) * model.third_apply(x, A, B)
    if gl.any():
        G = model.gradient(x)
        Hl = cut.hess(x)
        Ha = model.hessian_apply(x, a)
        HB = model.hessian_apply(x, B)
        out = out + np.outer(G, a @ Hl @ B) + (gl @ a) * HB + np.outer(Ha, gl @ B)
    return out


def operator_norm(A) -> float:
    """Largest singular value. Dense SVD: power iteration stalls when the top
    singular values cluster (the high modes of g' all sit near 1) and then
    underestimates the bound."""
    A = np.asarray(A, dtype=float)
    if not A.any():
        return 0.0
    return float(np.linalg.norm(A, 2))


# ----------------------------------------------------------------------------
# Dormand-Prince 5(4)

_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B = np.array(_A[6] + [0.0])
_AM = np.zeros((7, 7))
for _i, _row in enumerate(_A):
    _AM[_i, : len(_row)] = _row
_E = np.array([71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40])


def dopri45(fun, t0, y0, t1, rtol=1e-8, atol=1e-10, h0=None, h_min=1e-12, max_steps=200_000,
            stop=None, steps=None, t_eval=None, store_every=1):
    """Adaptive explicit Runge-Kutta integration of y' = fun(t, y) from t0 to t1.

    stop(t, y) is called after every accepted step; a non-None return ends
    the integration early and becomes the status. With `steps` given, the
    listed step sizes are replayed without error control. With `t_eval`
    given, states are stored exactly at those times instead of at accepted
    steps.

    Returns (times, states, accepted_steps, status, last_h).
    """
    y = np.array(y0, dtype=float)
    t = float(t0)
    span = float(t1) - t
    if span < 0:
        raise ValueError("integration must run forward in time")
    times, states, taken = [t], [y.copy()], []
    if span == 0.0:
        return np.array(times), np.array(states), taken, "done", h0
    k1 = fun(t, y)
    if steps is not None:
        K = np.empty((7,) + y.shape)
        for h in steps:
            K[0] = k1
            for i in range(1, 7):
                K[i] = fun(t + _C[i] * h, y + h * (_AM[i, :i] @ K[:i]))
            y = y + h * (_B @ K)
            t += h
            k1 = K[6].copy()
            taken.append(h)
            times.append(t)
            states.append(y.copy())
        return np.array(times), np.array(states), taken, "done", steps[-1] if steps else h0
    if h0 is None:
        scale = atol + rtol * np.abs(y)
        d0 = np.sqrt(np.mean((y / scale) ** 2))
        d1 = np.sqrt(np.mean((k1 / scale) ** 2))
        h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
        h0 = min(h0, span)
    h = h0
    ev = None
    if t_eval is not None:
        ev = [float(s) for s in np.asarray(t_eval, dtype=float) if t0 < s <= t1]
        times, states = [t], [y.copy()]
    status = "done"
    n_acc = 0
    K = np.empty((7,) + y.shape)
    for _ in range(max_steps):
        if t >= t1 - 1e-14 * max(1.0, abs(t1)):
            break
        h = min(h, t1 - t)
        hit = False
        if ev:
            if t + h >= ev[0] - 1e-14:
                h = ev[0] - t
                hit = True
        if h < h_min and t1 - t > h_min:
            raise StepFailure(f"step size {h:.3e} fell below h_min at t={t:.6g}", t=t, state=y)
        K[0] = k1
        for i in range(1, 7):
            K[i] = fun(t + _C[i] * h, y + h * (_AM[i, :i] @ K[:i]))
        y_new = y + h * (_B @ K)
        err_vec = h * (_E @ K)
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        err = math.sqrt(float(np.mean((err_vec / scale) ** 2)))
        if not np.all(np.isfinite(y_new)) or not math.isfinite(err):
            h *= 0.25
            if h < h_min:
                raise StepFailure(f"non-finite state near t={t:.6g}", t=t, state=y)
            continue
        if err <= 1.0:
            t += h
            y = y_new
            k1 = K[6].copy()
            taken.append(h)
            n_acc += 1
            if ev is not None:
                if hit:
                    ev.pop(0)
                    times.append(t)
                    states.append(y.copy())
            elif n_acc % store_every == 0 or t >= t1 - 1e-14 * max(1.0, abs(t1)):
                times.append(t)
                states.append(y.copy())
            fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
            h_next = h * fac
            if stop is not None:
                st = stop(t, y)
                if st is not None:
                    status = st
                    if ev is None and times[-1] != t:
                        times.append(t)
                        states.append(y.copy())
                    h = h_next
                    break
            h = h_next if not hit else max(h_next, h)
        else:
            h *= max(0.2, 0.9 * err ** -0.2)
    else:
        raise StepFailure("maximum number of steps exceeded", t=t, state=y)
    return np.array(times), np.array(states), taken, status, h


# ----------------------------------------------------------------------------
# trajectories


@dataclass
class FlowOptions:
    rtol: float = 1e-8
    atol: float = 1e-10
    h_min: float = 1e-10
    ps_tol: float | None = None  # stop once ||J'|| drops below this
    energy_floor: float | None = None  # stop once J drops below this
    store_every: int = 1
    max_steps: int = 200_000
    jacobian_bound: bool = False  # compute C_traj for plain integrations too


@dataclass
class TrajectoryRecord:
    times: np.ndarray
    states: np.ndarray
    energies: np.ndarray
    lvals: np.ndarray
    grad_norms: np.ndarray
    field_norms: np.ndarray
    status: str = "done"
    steps: list = dc_field(default_factory=list)
    sens: np.ndarray | None = None  # (T, n, p) columns tau'_u v_j
    directions: np.ndarray | None = None  # (n, p)
    second: np.ndarray | None = None  # (T, n, n): tau''_u[v, e_j]
    c_traj: float | None = None
    last_h: float | None = None

    @property
    def final(self):
        return self.states[-1]


def _diagnostics(model, cut, states):
    J, G = model.energy_and_gradient(states)
    lv = np.array([cut.l(x) for x in states])
    gn = np.linalg.norm(G, axis=1)
    return J, lv, gn, (1.0 - lv) * gn


def _c_traj(model, cut, states):
    return max(operator_norm(field_jacobian(model, cut, x)) for x in states)


def _stopper(model, opts):
    if opts.ps_tol is None and opts.energy_floor is None:
        return None

    def stop(t, y):
        x = y[: model.n]
        if opts.energy_floor is not None and float(model.energy(x)) < opts.energy_floor:
            return "floor"
        if opts.ps_tol is not None and float(np.linalg.norm(model.gradient(x))) < opts.ps_tol:
            return "ps"
        return None

    return stop


def integrate(model, cut: Cutoff, u0, T: float, opts: FlowOptions | None = None, steps=None,
              h0=None, t0: float = 0.0) -> TrajectoryRecord:
    """Integrate the cutoff flow from u0 over [t0, t0 + T]."""
    opts = opts or FlowOptions()
    if T <= 0 and steps is None:
        raise ValueError("T must be positive")

    def rhs(t, y):
        return field(model, cut, y)

    ts, ys, taken, status, h = dopri45(rhs, t0, u0, t0 + T, opts.rtol, opts.atol, h0=h0,
                                       h_min=opts.h_min, max_steps=opts.max_steps,
                                       stop=_stopper(model, opts), steps=steps,
                                       store_every=opts.store_every)
    J, lv, gn, fn = _diagnostics(model, cut, ys)
    rec = TrajectoryRecord(times=ts, states=ys, energies=J, lvals=lv, grad_norms=gn,
                           field_norms=fn, status=status, steps=taken, last_h=h)
    if opts.jacobian_bound:
        rec.c_traj = _c_traj(model, cut, ys)
    return rec


def variational_integrate(model, cut: Cutoff, u0, T: float, directions=None,
                          opts: FlowOptions | None = None, steps=None, h0=None,
                          jacobian_bound: bool = True) -> TrajectoryRecord:
    """Co-integrate the flow and Psi' = g'(tau) Psi, Psi(0) = directions (n x p)."""
    opts = opts or FlowOptions()
    u0 = np.asarray(u0, dtype=float)
    n = u0.shape[0]
    D = np.eye(n) if directions is None else np.asarray(directions, dtype=float)
    if D.ndim == 1:
        D = D[:, None]
    p = D.shape[1]

    def rhs(t, y):
        x = y[:n]
        Psi = y[n:].reshape(n, p)
        lval, gl = cut.l_and_grad(x)
        if lval >= 1.0:
            return np.zeros_like(y)
        G = model.gradient(x)
        dx = -(1.0 - lval) * G
        dPsi = -(1.0 - lval) * model.hessian_apply(x, Psi)
        if gl.any():
            dPsi = dPsi + np.outer(G, gl @ Psi)
        return np.concatenate([dx, dPsi.ravel()])

    y0 = np.concatenate([u0, D.ravel()])
    ts, ys, taken, status, h = dopri45(rhs, 0.0, y0, T, opts.rtol, opts.atol, h0=h0,
                                       h_min=opts.h_min, max_steps=opts.max_steps,
                                       stop=_stopper(model, opts), steps=steps,
                                       store_every=opts.store_every)
    X = ys[:, :n]
    J, lv, gn, fn = _diagnostics(model, cut, X)
    rec = TrajectoryRecord(times=ts, states=X, energies=J, lvals=lv, grad_norms=gn,
                           field_norms=fn, status=status, steps=taken,
                           sens=ys[:, n:].reshape(-1, n, p), directions=D, last_h=h)
    if jacobian_bound:
        rec.c_traj = _c_traj(model, cut, X)
    return rec


def second_variational(model, cut: Cutoff, u0, T: float, v, opts: FlowOptions | None = None,
                       steps=None) -> TrajectoryRecord:
    """Co-integrate tau, Psi = tau'_u and Phi = tau''_u[v, .] (all n x n).

    Phi' = g'(tau) Phi + g''(tau)[Psi v, Psi], Phi(0) = 0; column j of Phi
    is the second derivative of the flow in the directions v and e_j.
    """
    opts = opts or FlowOptions()
    u0 = np.asarray(u0, dtype=float)
    v = np.asarray(v, dtype=float)
    n = u0.shape[0]

    def rhs(t, y):
        x = y[:n]
        Psi = y[n : n + n * n].reshape(n, n)
        Phi = y[n + n * n :].reshape(n, n)
        lval = cut.l(x)
        if lval >= 1.0:
            return np.zeros_like(y)
        dx = field(model, cut, x)
        dPsi = field_jacobian_apply(model, cut, x, Psi)
        dPhi = field_jacobian_apply(model, cut, x, Phi) + field_second(model, cut, x, Psi @ v, Psi)
        return np.concatenate([dx, dPsi.ravel(), dPhi.ravel()])

    y0 = np.concatenate([u0, np.eye(n).ravel(), np.zeros(n * n)])
    ts, ys, taken, status, h = dopri45(rhs, 0.0, y0, T, opts.rtol, opts.atol, h_min=opts.h_min,
                                       max_steps=opts.max_steps, steps=steps,
                                       store_every=opts.store_every)
    X = ys[:, :n]
    J, lv, gn, fn = _diagnostics(model, cut, X)
    return TrajectoryRecord(times=ts, states=X, energies=J, lvals=lv, grad_norms=gn,
                            field_norms=fn, status=status, steps=taken,
                            sens=ys[:, n : n + n * n].reshape(-1, n, n), directions=np.eye(n),
                            second=ys[:, n + n * n :].reshape(-1, n, n), last_h=h)


# ----------------------------------------------------------------------------
# certificates


@dataclass
class CertificateReport:
    c_traj: float
    speed_ok: bool
    speed_worst: float  # most negative slack of the two-sided speed bound
    injectivity_ok: bool | None
    injectivity_worst: float | None
    non_arrival: str  # "pass", "fail" or "vacuous"
    energy_monotone: bool
    witness: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return (self.speed_ok and self.injectivity_ok is not False
                and self.non_arrival != "fail" and self.energy_monotone)

    def as_dict(self):
        return {
            "c_traj": self.c_traj, "speed_ok": self.speed_ok, "speed_worst": self.speed_worst,
            "injectivity_ok": self.injectivity_ok, "injectivity_worst": self.injectivity_worst,
            "non_arrival": self.non_arrival, "energy_monotone": self.energy_monotone,
            "passed": self.passed, "witness": self.witness,
        }


def certificates(record: TrajectoryRecord, tol: float = 1e-6, energy_tol: float = 1e-9) -> CertificateReport:
    """Check the speed bounds, sensitivity injectivity and non-arrival along a stored trajectory.

    speed:       |g(u)| e^{-C t} <= |g(tau(t,u))| <= |g(u)| e^{C t}
    injectivity: sigma_min(tau'_u restricted to the stored directions) >= e^{-C t}
    C is the empirical field-Jacobian bound C_traj of the record.
    """
    if record.c_traj is None:
        raise ValueError("record carries no C_traj; integrate with jacobian_bound=True")
    C = record.c_traj
    t = record.times - record.times[0]
    g0 = record.field_norms[0]
    gn = record.field_norms
    lo = g0 * np.exp(-C * t)
    hi = g0 * np.exp(C * t)
    slack = np.minimum(gn - lo, hi - gn) / max(g0, 1e-300)
    speed_ok = bool(np.all(slack >= -tol))
    witness = {}
    if not speed_ok:
        j = int(np.argmin(slack))
        witness["speed"] = {"t": float(t[j]), "state": record.states[j].tolist()}
    inj_ok = inj_worst = None
    if record.sens is not None:
        D = record.directions
        # normalise to X-unit, orthonormal directions so sigma_min compares with the bound for |xi| = 1
        Qd, Rd = np.linalg.qr(D)
        sig = np.array([np.linalg.svd(S @ np.linalg.inv(Rd), compute_uv=False)[-1] for S in record.sens])
        margin = sig - np.exp(-C * t)
        inj_worst = float(margin.min())
        inj_ok = bool(inj_worst >= -tol)
        if not inj_ok:
            j = int(np.argmin(margin))
            witness["injectivity"] = {"t": float(t[j]), "sigma_min": float(sig[j])}
    if g0 == 0.0:
        non_arrival = "vacuous"
    else:
        non_arrival = "pass" if bool(np.all(gn[np.isfinite(t)] > 0.0)) else "fail"
    free = record.lvals[:-1] == 0.0
    dJ = np.diff(record.energies)
    scale = np.maximum(1.0, np.abs(record.energies[:-1]))
    energy_ok = bool(np.all(dJ[free] <= energy_tol * scale[free]))
    return CertificateReport(c_traj=float(C), speed_ok=speed_ok, speed_worst=float(slack.min()),
                             injectivity_ok=inj_ok, injectivity_worst=inj_worst,
                             non_arrival=non_arrival, energy_monotone=energy_ok, witness=witness)
