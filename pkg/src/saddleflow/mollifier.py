"""Bump-kernel mollification of nonlinearities f(x, t) in the t variable.

The kernel is rho(t) = exp(1 / (t^2 - 1)) on |t| < 1, rescaled to
rho_m(t) = c m rho(m t) so that it integrates to one over [-1/m, 1/m].
Derivatives of the smoothed function are taken by moving them onto the
kernel, f_m^(i) = rho_m^(i) * f, which keeps the quadrature error from
compounding.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy.integrate import quad

__all__ = [
    "Nonlinearity",
    "BumpKernel",
    "SmoothedNonlinearity",
    "ARReport",
    "QuadratureWarning",
    "rho",
    "rho_deriv",
    "mollify",
    "mollified_primitive",
    "check_ar",
    "ar_threshold",
    "uniform_error",
    "preset",
    "PRESETS",
]

Func = Callable[[np.ndarray, np.ndarray], np.ndarray]


class QuadratureWarning(UserWarning):
    """Doubling the Gauss-Legendre node count moved the result noticeably."""


# ----------------------------------------------------------------------------
# kernel


def _rho_parts(t):
    t = np.asarray(t, dtype=float)
    inside = np.abs(t) < 1.0
    s = np.where(inside, t * t - 1.0, -1.0)  # s < 0 inside the support
    g = 1.0 / s
    # exp underflows long before the rational factors overflow; clamp to keep 0*inf away
    e = np.where(inside & (g > -700.0), np.exp(np.maximum(g, -700.0)), 0.0)
    return t, s, e


def rho(t):
    """Unnormalised bump exp(1/(t^2-1)), exactly zero for |t| >= 1."""
    _, _, e = _rho_parts(t)
    return e[()] if np.ndim(e) == 0 else e


def rho_deriv(t, i: int = 0):
    """i-th derivative (i <= 3) of the unnormalised bump, closed form."""
    if i == 0:
        return rho(t)
    if i not in (1, 2, 3):
        raise ValueError("derivative order must be 0..3")
    t, s, e = _rho_parts(t)
    with np.errstate(over="ignore", invalid="ignore"):
        g1 = -2.0 * t / s**2
        if i == 1:
            out = e * g1
        else:
            g2 = (6.0 * t * t + 2.0) / s**3
            if i == 2:
                out = e * (g1 * g1 + g2)
            else:
                g3 = -24.0 * t * (t * t + 1.0) / s**4
                out = e * (g1**3 + 3.0 * g1 * g2 + g3)
    out = np.where(e > 0.0, out, 0.0)
    return out[()] if out.ndim == 0 else out


def _normalisation() -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        val, _ = quad(lambda s: float(rho(s)), -1.0, 1.0, epsabs=1e-15, epsrel=1e-14, limit=200)
    return 1.0 / val


RHO_NORMALISATION = _normalisation()  # ~2.2523, i.e. 1 / 0.44399...


@lru_cache(maxsize=None)
def _leggauss(n: int):
    return np.polynomial.legendre.leggauss(n)


@lru_cache(maxsize=None)
def _rho_moments(c: float, top: int) -> np.ndarray:
    """mu_j = int c rho(s) s^j ds on [-1, 1], j = 0..top (odd moments vanish)."""
    mu = np.zeros(top + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for j in range(0, top + 1, 2):
            mu[j] = quad(lambda s: c * float(rho(s)) * s**j, -1.0, 1.0,
                         epsabs=1e-16, epsrel=1e-14, limit=200)[0]
    return mu


MOMENT_DEGREE = 7


@lru_cache(maxsize=256)
def _weighted(m: int, n_quad: int, c: float, i: int):
    """Nodes tau and weights ~ w rho_m^(i)(tau) on [-1/m, 1/m].

    The raw Gauss-Legendre products are nudged (minimal Euclidean change)
    so that the rule reproduces the exact moments int c rho^(i)(s) s^j ds,
    j <= MOMENT_DEGREE. Those follow from integrating by parts:
    (-1)^i j!/(j-i)! mu_(j-i). Without this the derivative kernels lose
    digits that are then amplified by m^i.
    """
    x, w = _leggauss(n_quad)
    raw = w * c * rho_deriv(x, i)
    L = min(MOMENT_DEGREE, n_quad - 1)
    mu = _rho_moments(c, L)
    exact = np.zeros(L + 1)
    for j in range(i, L + 1):
        exact[j] = (-1) ** i * math.factorial(j) / math.factorial(j - i) * mu[j - i]
    A = np.vander(x, L + 1, increasing=True).T  # (L+1, n_quad)
    resid = exact - A @ raw
    raw = raw + A.T @ np.linalg.solve(A @ A.T, resid)
    # back to the tau variable: tau = s/m, d tau = ds/m, rho_m^(i)(tau) = c m^(i+1) rho^(i)(s)
    return x / m, raw * float(m) ** i


@dataclass(frozen=True)
class BumpKernel:
    """rho_m(t) = c m rho(m t) together with a Gauss-Legendre rule on its support."""

    m: int
    n_quad: int = 64
    c: float = RHO_NORMALISATION

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("mollification level m must be a positive integer")
        if self.n_quad < 2:
            raise ValueError("n_quad must be at least 2")

    @property
    def support(self) -> tuple[float, float]:
        return (-1.0 / self.m, 1.0 / self.m)

    def __call__(self, t, i: int = 0):
        """rho_m^(i)(t) = c m^(i+1) rho^(i)(m t)."""
        return self.c * float(self.m) ** (i + 1) * rho_deriv(self.m * np.asarray(t, dtype=float), i)

    def rule(self, n_quad: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights mapped onto [-1/m, 1/m]."""
        x, w = _leggauss(n_quad or self.n_quad)
        return x / self.m, w / self.m

    def weighted(self, i: int = 0, n_quad: int | None = None) -> tuple[np.ndarray, np.ndarray]:
        """Nodes tau_j and products w_j rho_m^(i)(tau_j), cached per kernel."""
        return _weighted(self.m, n_quad or self.n_quad, self.c, i)

    def mass(self, n_quad: int | None = None) -> float:
        tau, w = self.rule(n_quad)
        return float(np.dot(w, self(tau)))

    def moment(self, order: int) -> float:
        """Raw moment of rho_m, from adaptive quadrature."""
        val, _ = quad(lambda s: s**order * float(self(s)), -1.0 / self.m, 1.0 / self.m,
                      epsabs=1e-15, epsrel=1e-13, limit=200)
        return val


# ----------------------------------------------------------------------------
# nonlinearities


@dataclass(frozen=True)
class Nonlinearity:
    """f(x, t) with its t-derivative and primitive, plus the growth data.

    `ftt` and `fttt` are optional higher t-derivatives; smooth presets
    provide them so the unmollified functional can feed the second
    variational equation as well.
    """

    f: Func
    ft: Func
    F: Func
    p: float
    C_growth: float
    theta: float
    M_ar: float
    ftt: Func | None = None
    fttt: Func | None = None
    name: str = "custom"
    params: dict = field(default_factory=dict)
    autonomous: bool = True  # f does not depend on x

    def value(self, x, t):
        return self.f(x, t)

    def primitive(self, x, t):
        return self.F(x, t)

    def deriv(self, x, t, i: int = 0):
        table = {0: self.f, 1: self.ft, 2: self.ftt, 3: self.fttt}
        fn = table.get(i)
        if fn is None:
            raise NotImplementedError(f"{self.name}: no t-derivative of order {i}")
        return fn(x, t)

    @property
    def max_order(self) -> int:
        return 3 if self.fttt is not None else (2 if self.ftt is not None else 1)


def _quad_eval(fn, kernel: BumpKernel, x, t, i: int, n_quad: int | None = None):
    tau, weights = kernel.weighted(i, n_quad)
    t = np.asarray(t, dtype=float)
    shifted = t[..., None] - tau
    xb = x if np.ndim(x) == 0 else np.asarray(x)[..., None]
    return np.sum(fn(xb, shifted) * weights, axis=-1)


def mollify(base: Nonlinearity, kernel: BumpKernel, x, t, i: int = 0, check: bool = False):
    """(f_m)^(i)(x, t) = integral of rho_m^(i)(tau) f(x, t - tau) over [-1/m, 1/m].

    With ``check=True`` the integral is recomputed with twice the nodes and a
    QuadratureWarning is raised if the two disagree by more than 1e-9.
    """
    if not 0 <= i <= 3:
        raise ValueError("derivative order must be 0..3")
    x = np.asarray(x, dtype=float)
    val = _quad_eval(base.f, kernel, x, t, i)
    if check:
        fine = _quad_eval(base.f, kernel, x, t, i, 2 * kernel.n_quad)
        gap = float(np.max(np.abs(fine - val)))
        if gap > 1e-9:
            warnings.warn(f"mollify: node doubling changed the result by {gap:.3e}",
                          QuadratureWarning, stacklevel=2)
    return val


def mollified_primitive(base: Nonlinearity, kernel: BumpKernel, x, t):
    """F_m(x, t) = int_0^t f_m(x, s) ds.

    Swapping the two integrals gives int rho_m(tau) [F(x, t - tau) - F(x, -tau)] dtau,
    which needs a single quadrature instead of a nested one.
    """
    tau, weights = kernel.weighted(0)
    t = np.asarray(t, dtype=float)
    x = np.asarray(x, dtype=float)
    xb = x if x.ndim == 0 else x[..., None]
    return np.sum((base.F(xb, t[..., None] - tau) - base.F(xb, -tau)) * weights, axis=-1)


class _QuinticTable:
    """Piecewise quintic Hermite interpolant on a uniform grid from (y, y', y'')."""

    def __init__(self, lo: float, h: float, y, d1, d2):
        self.lo, self.h = lo, h
        self.n = len(y) - 1
        P0, P1 = y[:-1], y[1:]
        V0, V1 = h * d1[:-1], h * d1[1:]
        A0, A1 = h * h * d2[:-1], h * h * d2[1:]
        dP = P1 - P0
        self.coef = np.stack([
            P0, V0, 0.5 * A0,
            10.0 * dP - 6.0 * V0 - 4.0 * V1 - 0.5 * (3.0 * A0 - A1),
            -15.0 * dP + 8.0 * V0 + 7.0 * V1 + 0.5 * (3.0 * A0 - 2.0 * A1),
            6.0 * dP - 3.0 * V0 - 3.0 * V1 - 0.5 * (A0 - A1),
        ])

    def __call__(self, t):
        z = (t - self.lo) / self.h
        j = np.clip(z.astype(np.int64), 0, self.n - 1)
        s = z - j
        c = self.coef[:, j]
        return c[0] + s * (c[1] + s * (c[2] + s * (c[3] + s * (c[4] + s * c[5]))))


class _TwoLevelTable:
    """Fine table near t = 0 (where a kink of f gets smoothed), coarse one further out."""

    def __init__(self, build, m: int, t_max: float):
        self.inner = 16.0 / m
        self.t_max = t_max
        h_in = 1.0 / (32.0 * m)
        h_out = min(1.0 / 64.0, self.inner / 4.0)
        n_in = int(round(2.0 * self.inner / h_in))
        n_out = int(math.ceil(2.0 * t_max / h_out))
        self.fine = build(-self.inner, 2.0 * self.inner / n_in, n_in)
        self.coarse = build(-t_max, 2.0 * t_max / n_out, n_out)

    def __call__(self, t, direct):
        t = np.asarray(t, dtype=float)
        a = np.abs(t)
        inner = a < self.inner
        if inner.all():
            return self.fine(t)
        out = self.coarse(t)
        if inner.any():
            out[inner] = self.fine(t[inner])
        far = a > self.t_max
        if far.any():
            out[far] = direct(t[far])
        return out


@dataclass(frozen=True)
class SmoothedNonlinearity:
    """f_m with its derivatives and primitive.

    For x-independent base nonlinearities the values f_m, f_m', f_m'' and
    F_m are cached as quintic Hermite tables on |t| <= t_table, each built
    from the kernel-derivative quadrature; arguments outside the table fall
    back to direct quadrature. Set ``tabulate=False`` to always integrate.
    """

    base: Nonlinearity
    kernel: BumpKernel
    theta_tilde: float | None = None
    tabulate: bool = True
    t_table: float = 64.0

    def __post_init__(self):
        if self.base.theta <= 2.0:
            # not superquadratic (linear presets): no AR exponent to preserve
            object.__setattr__(self, "theta_tilde", math.nan)
            return
        if self.theta_tilde is None:
            object.__setattr__(self, "theta_tilde", 0.5 * (2.0 + self.base.theta))
        if not 2.0 < self.theta_tilde < self.base.theta:
            raise ValueError("theta_tilde must lie in (2, theta)")

    @property
    def m(self) -> int:
        return self.kernel.m

    @property
    def M1(self) -> float:
        return self.base.M_ar + 1.0

    @property
    def max_order(self) -> int:
        return 3

    @property
    def name(self) -> str:
        return f"{self.base.name}@m={self.kernel.m}"

    @cached_property
    def _tables(self):
        if not (self.tabulate and self.base.autonomous):
            return None
        base, kernel = self.base, self.kernel

        def derivs(t, orders):
            return [mollify(base, kernel, 0.0, t, i) for i in orders]

        def build_f(order):
            def build(lo, h, n):
                t = lo + h * np.arange(n + 1)
                return _QuinticTable(lo, h, *derivs(t, (order, order + 1, order + 2)))
            return build

        def build_F(lo, h, n):
            t = lo + h * np.arange(n + 1)
            return _QuinticTable(lo, h, mollified_primitive(base, kernel, 0.0, t), *derivs(t, (0, 1)))

        return {
            "F": _TwoLevelTable(build_F, kernel.m, self.t_table),
            0: _TwoLevelTable(build_f(0), kernel.m, self.t_table),
            1: _TwoLevelTable(build_f(1), kernel.m, self.t_table),
        }

    def value(self, x, t):
        return self.deriv(x, t, 0)

    def deriv(self, x, t, i: int = 0):
        tables = self._tables
        if tables is not None and i in tables:
            return tables[i](t, lambda tt: mollify(self.base, self.kernel, 0.0, tt, i))
        return mollify(self.base, self.kernel, x, t, i)

    def primitive(self, x, t):
        tables = self._tables
        if tables is not None:
            return tables["F"](t, lambda tt: mollified_primitive(self.base, self.kernel, 0.0, tt))
        return mollified_primitive(self.base, self.kernel, x, t)


# ----------------------------------------------------------------------------
# Ambrosetti-Rabinowitz checks


@dataclass
class ARReport:
    passed: bool
    min_gap: float  # min of t f_m - theta_tilde F_m
    min_F: float
    theta_tilde: float
    M1: float
    violations: list[tuple[float, float]]

    def __bool__(self):
        return self.passed


def check_ar(sm: SmoothedNonlinearity, t_grid=None, x_grid=None, t_max: float = 50.0,
             n_t: int = 512, max_witnesses: int = 20) -> ARReport:
    """Sampled check of 0 < theta_tilde F_m(x, t) <= t f_m(x, t) for |t| in [M1, t_max].

    Both signs of t are tested. The report lists up to `max_witnesses`
    violating (x, t) pairs instead of raising.
    """
    if t_grid is None:
        t_grid = np.geomspace(sm.M1, t_max, n_t)
    if x_grid is None:
        x_grid = np.array([0.5])
    mags = np.asarray(t_grid, dtype=float)
    t = np.concatenate([mags, -mags])
    X, T = np.meshgrid(np.asarray(x_grid, dtype=float), t, indexing="ij")
    Fm = sm.primitive(X, T)
    gap = T * sm.value(X, T) - sm.theta_tilde * Fm
    bad = (gap <= 0.0) | (Fm <= 0.0)
    idx = np.argwhere(bad)[:max_witnesses]
    return ARReport(
        passed=not bool(bad.any()),
        min_gap=float(gap.min()),
        min_F=float(Fm.min()),
        theta_tilde=sm.theta_tilde,
        M1=sm.M1,
        violations=[(float(X[i, j]), float(T[i, j])) for i, j in idx],
    )


def ar_threshold(f: Func, F: Func, theta: float, t_max: float = 1e3, n: int = 20000) -> float:
    """Smallest sampled M with 0 < theta F <= t f on M <= |t| <= t_max (x-independent f)."""
    mags = np.geomspace(1e-3, t_max, n)
    ok = np.ones_like(mags, dtype=bool)
    for sgn in (1.0, -1.0):
        t = sgn * mags
        Ft = F(0.0, t)
        ok &= (Ft > 0.0) & (theta * Ft <= t * f(0.0, t))
    if ok.all():
        return 0.0
    if not ok[-1]:
        raise ValueError("AR inequality fails at the end of the scan; theta too large?")
    last_bad = np.nonzero(~ok)[0][-1]
    return float(mags[last_bad + 1])


def uniform_error(base: Nonlinearity, kernel: BumpKernel, box=(-5.0, 5.0), x_grid=None,
                  n_t: int = 401) -> float:
    """sup |f_m - f| over sampled (x, t) in x_grid x box."""
    if x_grid is None:
        x_grid = np.array([0.5])
    t = np.linspace(box[0], box[1], n_t)
    X, T = np.meshgrid(np.asarray(x_grid, dtype=float), t, indexing="ij")
    return float(np.max(np.abs(mollify(base, kernel, X, T) - base.f(X, T))))


# ----------------------------------------------------------------------------
# presets


def _cubic(**_):
    return Nonlinearity(
        f=lambda x, t: t**3,
        ft=lambda x, t: 3.0 * t**2,
        F=lambda x, t: 0.25 * t**4,
        ftt=lambda x, t: 6.0 * t,
        fttt=lambda x, t: 6.0 + 0.0 * t,
        p=4.0, C_growth=3.0, theta=4.0, M_ar=1.0, name="cubic",
    )


def _spow(t, a):
    # sign(t) |t|^a
    return np.sign(t) * np.abs(t) ** a


def _term(coef, fn):
    return (lambda t: coef * fn(t)) if coef != 0.0 else (lambda t: 0.0 * t)


def _thm12(p: float = 4.0, q: float = 3.0, **_):
    """f = |t|^(p-2) t + |t|^(q-1)."""
    p, q = float(p), float(q)
    if not 2.0 <= q < p:
        raise ValueError(f"thm12 preset needs 2 <= q < p, got p={p}, q={q}")

    def f(x, t):
        return _spow(t, p - 1.0) + np.abs(t) ** (q - 1.0)

    def ft(x, t):
        return (p - 1.0) * np.abs(t) ** (p - 2.0) + (q - 1.0) * _spow(t, q - 2.0)

    def F(x, t):
        return np.abs(t) ** p / p + _spow(t, q) / q

    ftt = fttt = None
    if p >= 4.0 and (q >= 4.0 or q == 3.0):
        a2 = _term((p - 1.0) * (p - 2.0), lambda t: _spow(t, p - 3.0))
        b2 = _term((q - 1.0) * (q - 2.0), lambda t: np.abs(t) ** (q - 3.0))
        a3 = _term((p - 1.0) * (p - 2.0) * (p - 3.0), lambda t: np.abs(t) ** (p - 4.0))
        b3 = _term((q - 1.0) * (q - 2.0) * (q - 3.0), lambda t: _spow(t, q - 4.0))

        def ftt(x, t):
            return a2(t) + b2(t)

        def fttt(x, t):
            return a3(t) + b3(t)

    theta = max(q, 0.5 * (2.0 + p))
    tt = np.geomspace(1e-3, 1e3, 4001)
    C = float(np.max(np.abs(ft(0.0, tt)) / (1.0 + tt ** (p - 2.0))))
    C = max(C, float(np.max(np.abs(ft(0.0, -tt)) / (1.0 + tt ** (p - 2.0)))))
    return Nonlinearity(f=f, ft=ft, F=F, ftt=ftt, fttt=fttt, p=p, C_growth=C, theta=theta,
                        M_ar=ar_threshold(f, F, theta), name="thm12", params={"p": p, "q": q})


def _linear_plus(lam: float = 0.5, **_):
    lam = float(lam)
    f = lambda x, t: lam * t + t**3
    F = lambda x, t: 0.5 * lam * t**2 + 0.25 * t**4
    return Nonlinearity(
        f=f, ft=lambda x, t: lam + 3.0 * t**2, F=F,
        ftt=lambda x, t: 6.0 * t, fttt=lambda x, t: 6.0 + 0.0 * t,
        p=4.0, C_growth=3.0 + abs(lam), theta=3.0, M_ar=ar_threshold(f, F, 3.0),
        name="linear_plus", params={"lam": lam},
    )


def _linear(lam: float = 0.5, **_):
    """f = lam t. Not superlinear: used for index sanity checks only."""
    lam = float(lam)
    return Nonlinearity(
        f=lambda x, t: lam * t, ft=lambda x, t: lam + 0.0 * t, F=lambda x, t: 0.5 * lam * t**2,
        ftt=lambda x, t: 0.0 * t, fttt=lambda x, t: 0.0 * t,
        p=2.0, C_growth=abs(lam), theta=2.0, M_ar=math.inf, name="linear", params={"lam": lam},
    )


PRESETS = {"cubic": _cubic, "thm12": _thm12, "linear_plus": _linear_plus, "linear": _linear}


def preset(name: str, **params) -> Nonlinearity:
    try:
        factory = PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown nonlinearity preset {name!r}; choose from {sorted(PRESETS)}") from None
    return factory(**params)
