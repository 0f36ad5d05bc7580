"""Independent ground truth.

* A shooting solver for -u'' = f(u) on (0, pi), u(0) = u(pi) = 0, that
  enumerates solutions by their initial slope and counts the zeros of the
  linearisation (the Sturm count, which equals the Morse index of a
  nondegenerate solution).
* A synthetic finite-dimensional functional
  Phi(x) = 1/2 |x|^2 - 1/4 sum a_i x_i^4 - 1/4 sum_{i<j} b_ij x_i^2 x_j^2
  whose critical points are known in closed form for b = 0, plus a
  brute-force enumerator and the cutoff-flow minimax run on it.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.integrate import simpson
from scipy.optimize import brentq

from .flow import Cutoff, StepFailure, dopri45
from .functional import geometry_probe, sup_on_subspace
from .minimax import (MinimaxOptions, NewtonDiverged, minimax_value, refine_critical,
                      sample_annulus)
from .morse import generalized_index
from .parallel import pmap

__all__ = [
    "BlowUp",
    "Mismatch",
    "ShootingSolution",
    "shoot",
    "shoot_enumerate",
    "SyntheticFunctional",
    "CriticalPoint",
    "brute_force_critical",
    "hypothesis_probes",
    "Thm45Report",
    "run_theorem_4_5",
    "remark_4_6",
]


class BlowUp(RuntimeError):
    pass


class Mismatch(RuntimeError):
    pass


# ----------------------------------------------------------------------------
# shooting


@dataclass
class ShootingSolution:
    slope: float
    x: np.ndarray
    profile: np.ndarray
    derivative: np.ndarray
    energy: float
    sturm_index: int
    nodes: int
    end_value: float
    residual: float  # max drift of the first integral u'^2/2 + F(u)
    degenerate: bool = False

    def as_dict(self):
        return {"slope": self.slope, "energy": self.energy, "sturm_index": self.sturm_index,
                "nodes": self.nodes, "end_value": self.end_value, "residual": self.residual,
                "degenerate": self.degenerate}


def _sign_changes(w):
    s = np.sign(w)
    s = s[s != 0]
    return int(np.sum(s[1:] != s[:-1]))


def _end_values(f, slopes, L, rtol, atol):
    """u(L) for every slope at once (one stacked system)."""
    slopes = np.asarray(slopes, dtype=float)
    S = slopes.shape[0]

    def rhs(t, y):
        u = y[:S]
        return np.concatenate([y[S:], -f(u)])

    _, ys, _, _, _ = dopri45(rhs, 0.0, np.concatenate([np.zeros(S), slopes]), L, rtol, atol,
                             h_min=1e-14, store_every=10**9)
    return ys[-1, :S]


def shoot(f, ft, slope: float, L: float = math.pi, points: int = 4001, rtol: float = 1e-12,
          atol: float = 1e-13):
    """Integrate u'' = -f(u) and the linearisation w'' = -f'(u) w on a fine grid."""
    x = np.linspace(0.0, L, points)

    def rhs(t, y):
        u, v, w, dw = y
        return np.array([v, -f(u), dw, -ft(u) * w])

    try:
        _, ys, _, _, _ = dopri45(rhs, 0.0, np.array([0.0, slope, 0.0, 1.0]), L, rtol, atol,
                                 h_min=1e-14, t_eval=x[1:])
    except StepFailure as exc:
        raise BlowUp(f"trajectory with slope {slope:g} escaped before x={L:g}") from exc
    return x, ys


def shoot_enumerate(f, ft, F, slope_range=(-50.0, 50.0), scan: int = 2000, refine_tol: float = 1e-12,
                    L: float = math.pi, points: int = 4001, threads: int | None = None):
    """All nontrivial solutions with u'(0) in slope_range, ordered by energy."""
    slopes = np.linspace(slope_range[0], slope_range[1], scan + 1)
    slopes = slopes[slopes != 0.0]
    ends = np.empty_like(slopes)
    # stacked integration in chunks keeps the step size set by similar slopes
    chunks = np.array_split(np.arange(slopes.shape[0]), max(1, slopes.shape[0] // 100))
    blown = np.zeros(slopes.shape[0], dtype=bool)

    def run(idx):
        try:
            return idx, _end_values(f, slopes[idx], L, 1e-8, 1e-10)
        except StepFailure:
            return idx, None

    for idx, vals in pmap(run, chunks, threads):
        if vals is None:
            blown[idx] = True
            ends[idx] = np.nan
        else:
            ends[idx] = vals
    brackets = []
    for j in range(slopes.shape[0] - 1):
        if blown[j] or blown[j + 1] or slopes[j] * slopes[j + 1] < 0:
            continue
        if ends[j] == 0.0 or ends[j] * ends[j + 1] < 0.0:
            brackets.append((slopes[j], slopes[j + 1]))

    def end(s):
        return _end_values(f, [s], L, 1e-11, 1e-13)[0]

    def solve(br):
        a, b = br
        try:
            s = brentq(end, a, b, xtol=refine_tol, rtol=4 * np.finfo(float).eps)
            x, ys = shoot(f, ft, s, L, points)
        except (BlowUp, StepFailure, ValueError):
            return None
        u, v, w = ys[:, 0], ys[:, 1], ys[:, 2]
        first = 0.5 * v * v + F(u)
        energy = float(simpson(0.5 * v * v - F(u), x=x))
        inner = w[1:-1]
        degenerate = abs(w[-1]) < 1e-8 * max(1.0, np.abs(w).max())
        return ShootingSolution(slope=float(s), x=x, profile=u, derivative=v, energy=energy,
                                sturm_index=_sign_changes(inner), nodes=_sign_changes(u[1:-1]),
                                end_value=float(u[-1]), residual=float(np.abs(first - first[0]).max()),
                                degenerate=bool(degenerate))

    sols = [s for s in pmap(solve, brackets, threads) if s is not None]
    sols.sort(key=lambda s: (s.energy, s.slope))
    return sols


# ----------------------------------------------------------------------------
# synthetic functional


@dataclass(frozen=True, eq=False)
class SyntheticFunctional:
    """Phi(x) = 1/2|x|^2 - 1/4 sum a_i x_i^4 - 1/4 sum_{i<j} b_ij x_i^2 x_j^2 on R^n."""

    a: np.ndarray
    b: np.ndarray | None = None  # symmetric, zero diagonal

    def __post_init__(self):
        a = np.asarray(self.a, dtype=float)
        object.__setattr__(self, "a", a)
        n = a.shape[0]
        b = np.zeros((n, n)) if self.b is None else np.asarray(self.b, dtype=float)
        b = 0.5 * (b + b.T)
        np.fill_diagonal(b, 0.0)
        object.__setattr__(self, "b", b)

    @classmethod
    def diagonal(cls, a):
        return cls(a=np.asarray(a, dtype=float))

    @classmethod
    def quadratic(cls, n: int):
        return cls(a=np.zeros(n))

    @property
    def n(self) -> int:
        return self.a.shape[0]

    nl = None

    def energy(self, x):
        x = np.asarray(x, dtype=float)
        x2 = x * x
        quart = np.sum(self.a * x2 * x2, axis=-1) + 0.5 * np.einsum("...i,ij,...j->...", x2, self.b, x2)
        return 0.5 * np.sum(x2, axis=-1) - 0.25 * quart

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        x2 = x * x
        return x - self.a * x2 * x - 0.5 * x * (x2 @ self.b)

    def energy_and_gradient(self, x):
        return self.energy(x), self.gradient(x)

    def hessian(self, x):
        x = np.asarray(x, dtype=float)
        x2 = x * x
        H = -self.b * np.outer(x, x)
        H[np.diag_indices(self.n)] = 1.0 - 3.0 * self.a * x2 - 0.5 * (self.b @ x2)
        return H

    def hessian_apply(self, x, V):
        return self.hessian(x) @ V

    def third_apply(self, x, u, v):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        v = np.asarray(v, dtype=float)
        if u.ndim == 2 or v.ndim == 2:
            U = u if u.ndim == 2 else np.repeat(u[:, None], v.shape[1], axis=1)
            Vv = v if v.ndim == 2 else np.repeat(v[:, None], u.shape[1], axis=1)
            return np.column_stack([self.third_apply(x, U[:, j], Vv[:, j]) for j in range(U.shape[1])])
        B = self.b
        return -(6.0 * self.a * x * u * v + u * (B @ (x * v)) + v * (B @ (x * u)) + x * (B @ (u * v)))

    def closed_form_critical(self):
        """Critical points of the uncoupled functional: x_i in {0, +-1/sqrt(a_i)}."""
        if self.b.any():
            raise ValueError("closed form only for the uncoupled functional")
        choices = [(0.0,) if ai <= 0 else (0.0, 1 / math.sqrt(ai), -1 / math.sqrt(ai)) for ai in self.a]
        pts = [np.array(c) for c in itertools.product(*choices)]
        return [CriticalPoint(p, float(self.energy(p)), int(np.sum(p != 0.0))) for p in pts]


@dataclass
class CriticalPoint:
    point: np.ndarray
    value: float
    index: int


def brute_force_critical(phi: SyntheticFunctional, box: float = 2.0, per_axis: int = 7,
                         dedup_tol: float = 1e-6, threads: int | None = None) -> list:
    """Multistart Newton from a uniform start grid over [-box, box]^n; deduplicated and sorted."""
    axis = np.linspace(-box, box, per_axis)
    starts = [np.array(s) for s in itertools.product(axis, repeat=phi.n)]

    def newton(x0):
        try:
            return refine_critical(phi, x0, newton_tol=1e-12, max_iter=100).coeffs
        except NewtonDiverged:
            return None

    found = []
    for x in pmap(newton, starts, threads):
        if x is None or not np.all(np.isfinite(x)):
            continue
        if any(np.linalg.norm(x - y) < dedup_tol for y in found):
            continue
        found.append(x)
    out = []
    for x in found:
        rep = generalized_index(phi.hessian(x), 1e-8)
        out.append(CriticalPoint(x, float(phi.energy(x)), rep.n_neg))
    out.sort(key=lambda c: (round(c.value, 10), tuple(np.round(c.point, 10))))
    return out


def hypothesis_probes(phi, r: float = 0.1, R: float = 20.0, directions: int = 256, seed: int = 0) -> dict:
    """Sampled checks of positivity near 0, negativity on a large sphere, and bounded superlevel sets."""
    rng = np.random.default_rng(seed)
    D = rng.normal(size=(directions, phi.n))
    D = np.vstack([np.eye(phi.n), -np.eye(phi.n), D / np.linalg.norm(D, axis=1, keepdims=True)])
    radii = np.linspace(r / 50.0, r, 50)
    small = np.min([phi.energy(rad * D) for rad in radii])
    big = float(np.max(phi.energy(R * D)))
    # bounded superlevel sets: along every probed ray Phi eventually stays below its value at 0
    ray_vals = np.array([phi.energy(s * D) for s in np.geomspace(R, 1e3 * R, 20)])
    bounded = bool(np.all(ray_vals[-1] < -1.0) and np.all(np.diff(ray_vals, axis=0)[-5:] <= 0))
    return {
        "positive_near_zero": bool(small > 0.0),
        "negative_far": bool(big < 0.0),
        "bounded_superlevel": bounded,
        "min_small": float(small),
        "max_far": big,
        "passed": bool(small > 0.0 and big < 0.0 and bounded),
    }


@dataclass
class Thm45Report:
    l: int
    d: float
    d_tilde: float
    matched_value: float
    matched_index: int
    refined_index: int
    value_error: float
    probes: dict
    geometry: dict
    passed: bool
    critical_values: list = dc_field(default_factory=list)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def run_theorem_4_5(phi: SyntheticFunctional, l: int, opts: MinimaxOptions | None = None,
                    samples: int = 32, tol: float = 1e-4, seed: int = 0,
                    threads: int | None = None) -> Thm45Report:
    """Cutoff-flow minimax on the first l coordinates, matched against brute-force critical values."""
    if not 1 <= l < phi.n:
        raise ValueError("need 1 <= l < n")
    probes = hypothesis_probes(phi)
    if not probes["passed"]:
        raise ValueError(f"hypothesis probes failed: {probes}")
    opts = opts or MinimaxOptions(samples=samples)
    geo = geometry_probe(phi, l, starts=64, seed=seed)
    cut = Cutoff.from_geometry(geo)
    ann = sample_annulus(l, geo.r_k, geo.R_k, max(samples, 2 * l + 8))
    d, witness, state = minimax_value(phi, cut, geo, ann, opts, threads=threads)
    cp = refine_critical(phi, witness, newton_tol=1e-12)
    oracle = brute_force_critical(phi, threads=threads)
    values = sorted({round(c.value, 12) for c in oracle})
    j = min(range(len(oracle)), key=lambda i: abs(oracle[i].value - cp.energy))
    match = oracle[j]
    # sup of Phi over the closed annulus in the first l coordinates
    d_tilde, _ = sup_on_subspace(phi, l, "ball", geo.R_k, starts=64, seed=seed)
    refined_index = generalized_index(phi.hessian(cp.coeffs), 1e-8).index
    err = abs(d - match.value)
    if abs(cp.energy - match.value) > tol:
        raise Mismatch(f"minimax value {d:.8g} is {abs(cp.energy - match.value):.3g} from every oracle value")
    passed = bool(match.index >= l and refined_index >= l and d <= d_tilde + 1e-12 and err <= tol)
    return Thm45Report(l=l, d=float(d), d_tilde=float(d_tilde), matched_value=float(match.value),
                       matched_index=int(match.index), refined_index=int(refined_index),
                       value_error=float(err), probes=probes, geometry=geo.as_dict(),
                       passed=passed, critical_values=[float(v) for v in values])


def remark_4_6(dims=(2, 3, 4, 5, 6), threads: int | None = None) -> list:
    """Diagonal family with l = n_E - 1: matched index grows with n_E, as does sup over the subspace.

    Rows hold (n_E, l, d, matched index, sup_{E~} Phi); both columns grow,
    which is the finite-dimensional shadow of the unbounded-index sequence.
    """
    rows = []
    for nE in dims:
        phi = SyntheticFunctional.diagonal(np.ones(nE))
        rep = run_theorem_4_5(phi, nE - 1, threads=threads)
        rows.append({"n_E": nE, "l": nE - 1, "d": rep.d, "index": rep.refined_index,
                     "sup_subspace": rep.geometry["sup_Xk"]})
    return rows
