"""Energy J(u) = 1/2 ||u||_X^2 - int F(x, u) restricted to a Galerkin space X_n.

All quantities are expressed in X-orthonormal coordinates, so the gradient
returned here is the Riesz representative of J'(u) in X_n and the Hessian
is the symmetric matrix I - int f_t(x, u) b_i b_j.

The geometry probe estimates the mountain-pass data used to build the
cutoff flow: a positivity sphere of radius rho0 with inf J = d0 there, and
radii r_k < rho0 < R_k such that J < d0/2 on the anchor set
K = closed ball(r_k) U sphere(R_k) inside X_k.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np

from .spectral import EigenBasis

__all__ = [
    "EnergyModel",
    "GeometryReport",
    "GeometryFailure",
    "anchor_distance",
    "positivity_sphere",
    "sup_on_subspace",
    "geometry_probe",
    "growth_fit",
]


class GeometryFailure(RuntimeError):
    """The preset does not exhibit mountain-pass geometry in the probed range."""


class EnergyModel:
    """J_{m,n} for a (possibly mollified) nonlinearity on a sine basis.

    `nl` is anything with value/deriv/primitive methods taking (x, t):
    a Nonlinearity or a SmoothedNonlinearity.
    """

    def __init__(self, nl, basis: EigenBasis):
        self.nl = nl
        self.basis = basis
        self.n = basis.n
        self._B = basis.xbasis  # (n, Q)
        self._WB = basis.weighted_xbasis
        self._w = basis.weights
        self._x = basis.points[:, 0]

    def __repr__(self):
        return f"EnergyModel({getattr(self.nl, 'name', self.nl)!r}, n={self.n})"

    def values(self, c):
        return np.asarray(c, dtype=float) @ self._B

    def energy(self, c):
        c = np.asarray(c, dtype=float)
        u = c @ self._B
        return 0.5 * np.sum(c * c, axis=-1) - self.nl.primitive(self._x, u) @ self._w

    def gradient(self, c):
        c = np.asarray(c, dtype=float)
        u = c @ self._B
        return c - self.nl.value(self._x, u) @ self._WB.T

    def energy_and_gradient(self, c):
        c = np.asarray(c, dtype=float)
        u = c @ self._B
        J = 0.5 * np.sum(c * c, axis=-1) - self.nl.primitive(self._x, u) @ self._w
        G = c - self.nl.value(self._x, u) @ self._WB.T
        return J, G

    def hessian(self, c):
        u = np.asarray(c, dtype=float) @ self._B
        ft = self.nl.deriv(self._x, u, 1)
        return np.eye(self.n) - (self._WB * ft) @ self._B.T

    def hessian_apply(self, c, V):
        """H(c) V for a vector or an (n, p) block of columns."""
        u = np.asarray(c, dtype=float) @ self._B
        ft = self.nl.deriv(self._x, u, 1)
        V = np.asarray(V, dtype=float)
        return V - self._WB @ (ft[:, None] * (self._B.T @ V)) if V.ndim == 2 else \
            V - self._WB @ (ft * (V @ self._B))

    def third_apply(self, c, a, b):
        """Second derivative of the gradient, G''(c)[a, b]; a, b vectors or matching (n, p) blocks."""
        u = np.asarray(c, dtype=float) @ self._B
        ftt = self.nl.deriv(self._x, u, 2)
        a = np.asarray(a, dtype=float)
        b = np.asarray(b, dtype=float)
        if a.ndim == 2 or b.ndim == 2:
            A = self._B.T @ (a if a.ndim == 2 else a[:, None])
            Bv = self._B.T @ (b if b.ndim == 2 else b[:, None])
            return -self._WB @ (ftt[:, None] * A * Bv)
        return -self._WB @ (ftt * (a @ self._B) * (b @ self._B))


# ----------------------------------------------------------------------------
# batched projected gradient ascent


def _ascend(value_grad, X, project, iters=400, tol=1e-10):
    """Maximise row-wise by projected gradient with per-row step control."""
    X = project(np.array(X, dtype=float))
    vals, grads = value_grad(X)
    step = np.ones(X.shape[0])
    active = np.ones(X.shape[0], dtype=bool)
    for _ in range(iters):
        if not active.any():
            break
        trial = project(X + step[:, None] * grads)
        tv, tg = value_grad(trial)
        move = np.linalg.norm(trial - X, axis=1)
        ok = active & (tv >= vals + 1e-4 * np.sum(grads * (trial - X), axis=1))
        X[ok], vals[ok], grads[ok] = trial[ok], tv[ok], tg[ok]
        step = np.where(ok, step * 1.6, step * 0.5)
        active &= ~((move < tol * (1.0 + np.linalg.norm(X, axis=1))) | (step < 1e-14))
    return X, vals


def _unit_rows(rng, count, dim):
    V = rng.standard_normal((count, dim))
    return V / np.linalg.norm(V, axis=1, keepdims=True)


def anchor_distance(x, k, r, R):
    """Distance from x (..., n) to K = closed ball(r) U sphere(R) of X_k."""
    x = np.asarray(x, dtype=float)
    p = np.linalg.norm(x[..., :k], axis=-1)
    q2 = np.sum(x[..., k:] ** 2, axis=-1)
    d_ball = np.sqrt(np.maximum(p - r, 0.0) ** 2 + q2)
    d_sphere = np.sqrt((p - R) ** 2 + q2)
    return np.minimum(d_ball, d_sphere)


# ----------------------------------------------------------------------------
# geometry


def _sphere_min(model, rho, D, iters=400):
    """Minimise J on the X-sphere of radius rho from unit start directions D."""
    def vg(X):
        J, G = model.energy_and_gradient(X)
        return -J, -G

    def proj(X):
        return rho * X / np.linalg.norm(X, axis=1, keepdims=True)

    X, v = _ascend(vg, rho * D, proj, iters=iters)
    return -v, X / rho


def positivity_sphere(model, starts: int = 32, seed: int = 0, rho_lo: float = 1e-3,
                      rho_hi: float = 1e4, growth: float = 1.5):
    """Radius rho0 maximising the sampled sphere infimum of J, and that infimum d0.

    The infimum on each sphere is an upper estimate from multistart
    projected descent; the returned d0 is therefore an estimate from above.
    Returns (rho0, d0, directions) where directions are the minimisers found.
    """
    rng = np.random.default_rng(seed)
    n = model.n
    D = _unit_rows(rng, starts, n)
    rhos, mins, dirs = [], [], []
    rho = rho_lo
    while rho <= rho_hi:
        vals, Dn = _sphere_min(model, rho, np.vstack([D, _unit_rows(rng, 4, n)]))
        j = int(np.argmin(vals))
        rhos.append(rho)
        mins.append(float(vals[j]))
        dirs.append(Dn)
        # warm start from the best minimisers on the next sphere
        order = np.argsort(vals, kind="stable")
        D = Dn[order[:starts]]
        if len(mins) > 3 and mins[-1] < 0.0 and max(mins) > 0.0:
            break
        rho *= growth
    mins = np.array(mins)
    best = int(np.argmax(mins))
    if mins[best] <= 0.0:
        raise GeometryFailure("no sphere with positive infimum of J was found")
    if best == len(mins) - 1:
        # still increasing at the scan limit: coercive, no mountain-pass geometry
        return rhos[best], float(mins[best]), dirs[best]
    # golden-section refinement of rho on the bracket around the best grid point
    lo = rhos[max(best - 1, 0)]
    hi = rhos[best + 1]
    D = dirs[best]
    gr = (math.sqrt(5.0) - 1.0) / 2.0

    def m_of(r):
        vals, _ = _sphere_min(model, r, D)
        return float(vals.min())

    a, b = math.log(lo), math.log(hi)
    c1, c2 = b - gr * (b - a), a + gr * (b - a)
    f1, f2 = m_of(math.exp(c1)), m_of(math.exp(c2))
    for _ in range(20):
        if f1 > f2:
            b, c2, f2 = c2, c1, f1
            c1 = b - gr * (b - a)
            f1 = m_of(math.exp(c1))
        else:
            a, c1, f1 = c1, c2, f2
            c2 = a + gr * (b - a)
            f2 = m_of(math.exp(c2))
    rho0 = math.exp(c1 if f1 > f2 else c2)
    vals, Dn = _sphere_min(model, rho0, np.vstack([D, dirs[best]]))
    d0 = float(vals.min())
    if d0 < mins[best]:
        rho0, d0 = rhos[best], float(mins[best])
    return rho0, d0, Dn


def sup_on_subspace(model, k: int, region: str, radius: float = math.inf, starts: int = 32,
                    seed: int = 0, scale: float | None = None):
    """Multistart estimate of sup J over a region of X_k.

    region: "ball" (closed ball of the given radius), "sphere" (its boundary)
    or "all" (the whole of X_k; starts are drawn at radius `scale`).
    Returns (value, maximiser).
    """
    rng = np.random.default_rng(seed)
    n = model.n

    def embed(Y):
        X = np.zeros((Y.shape[0], n))
        X[:, :k] = Y
        return X

    def vg(Y):
        J, G = model.energy_and_gradient(embed(Y))
        return J, G[:, :k]

    if region == "sphere":
        Y0 = radius * _unit_rows(rng, starts, k) if k > 1 else radius * np.array([[1.0], [-1.0]])

        def proj(Y):
            return radius * Y / np.linalg.norm(Y, axis=1, keepdims=True)
    elif region == "ball":
        Y0 = _unit_rows(rng, starts, k) * radius * rng.uniform(0.0, 1.0, (starts, 1)) ** (1.0 / k)
        Y0 = np.vstack([Y0, radius * _unit_rows(rng, max(starts // 4, 2), k)])

        def proj(Y):
            nrm = np.linalg.norm(Y, axis=1, keepdims=True)
            return np.where(nrm > radius, radius * Y / np.maximum(nrm, 1e-300), Y)
    elif region == "all":
        s = scale if scale is not None else 1.0
        Y0 = _unit_rows(rng, starts, k) * s * rng.uniform(0.05, 1.0, (starts, 1))

        def proj(Y):
            return Y
    else:
        raise ValueError(f"unknown region {region!r}")
    Y, vals = _ascend(vg, Y0, proj)
    j = int(np.argmax(vals))
    return float(vals[j]), embed(Y[j : j + 1])[0]


@dataclass
class GeometryReport:
    k: int
    n: int
    rho0: float
    d0: float
    r_k: float
    R_k: float
    sup_K: float
    mu: float
    sup_K2mu: float
    sup_Xk: float

    def as_dict(self):
        return asdict(self)


def _sup_near_anchor(model, k, r, R, mu, rng, samples=256):
    """Sampled sup of J over the 2 mu-neighbourhood of K, refined by projected ascent."""
    n = model.n
    half = samples // 2
    Y = _unit_rows(rng, samples, k)
    rad = np.concatenate([r * rng.uniform(0.0, 1.0, half) ** (1.0 / k), np.full(samples - half, R)])
    Z = np.zeros((samples, n))
    Z[:, :k] = Y * rad[:, None]
    P = _unit_rows(rng, samples, n) * (2.0 * mu * rng.uniform(0.0, 1.0, (samples, 1)))
    X = Z + P
    vals = model.energy(X)
    top = np.argsort(-vals, kind="stable")[:16]

    def proj(X):
        d = anchor_distance(X, k, r, R)
        bad = d > 2.0 * mu * 0.999
        if not bad.any():
            return X
        # pull back towards the nearest anchor point
        Xb = X[bad]
        p = Xb[:, :k]
        pn = np.linalg.norm(p, axis=1, keepdims=True)
        target_r = np.where(np.abs(pn - R) < np.maximum(pn - r, 0.0), R, np.minimum(pn, r))
        near = np.zeros_like(Xb)
        near[:, :k] = p / np.maximum(pn, 1e-300) * target_r
        off = Xb - near
        X = X.copy()
        X[bad] = near + off * (2.0 * mu * 0.999 / np.linalg.norm(off, axis=1, keepdims=True))
        return X

    Xa, va = _ascend(model.energy_and_gradient, X[top], proj, iters=200)
    return float(max(vals.max(), va.max()))


def geometry_probe(model, k: int, starts: int = 32, seed: int = 0, sphere=None,
                   R_growth: float = 1.25, R_cap_factor: float = 1e3) -> GeometryReport:
    """Fix rho0, d0, r_k, R_k and the cutoff margin mu for the k-th minimax level.

    `sphere` may carry a precomputed (rho0, d0) pair, which does not depend on k.
    """
    n = model.n
    if not 1 <= k < n:
        raise ValueError("geometry probe needs 1 <= k < n")
    if sphere is None:
        rho0, d0, _ = positivity_sphere(model, starts=starts, seed=seed)
    else:
        rho0, d0 = sphere[:2]
    target = 0.4 * d0
    r = 0.5 * rho0
    for _ in range(60):
        sup_ball, _ = sup_on_subspace(model, k, "ball", r, starts=starts, seed=seed + 1)
        if sup_ball < target:
            break
        r *= 0.5
    else:
        raise GeometryFailure("could not find r_k with sup J < d0/2 on the small ball")
    R = R_growth * rho0
    while True:
        sup_sph, _ = sup_on_subspace(model, k, "sphere", R, starts=starts, seed=seed + 2)
        if sup_sph < target:
            break
        R *= R_growth
        if R > R_cap_factor * rho0:
            raise GeometryFailure(
                f"no R_k found: sup of J on spheres of X_{k} stays above d0/2 up to R={R:.3g}")
    sup_K = max(sup_ball, sup_sph)
    mu = min(r, R - rho0) / 8.0
    rng = np.random.default_rng(seed + 3)
    for _ in range(12):
        s2 = _sup_near_anchor(model, k, r, R, mu, rng)
        if s2 < 0.5 * d0:
            break
        mu *= 0.5
    else:
        raise GeometryFailure("could not pick mu with sup J < d0/2 on K^(2 mu)")
    sup_Xk, _ = sup_on_subspace(model, k, "all", starts=starts, seed=seed + 4, scale=R)
    sup_Xk = max(sup_Xk, sup_K)
    return GeometryReport(k=k, n=n, rho0=float(rho0), d0=float(d0), r_k=float(r), R_k=float(R),
                          sup_K=float(sup_K), mu=float(mu), sup_K2mu=float(s2), sup_Xk=float(sup_Xk))


def growth_fit(nl, eps: float, p: float | None = None, t_grid=None, x=0.5):
    """Smallest sampled C_eps with |f(x,t)| <= eps|t| + C_eps |t|^(p-1) on the grid."""
    if t_grid is None:
        mags = np.geomspace(1e-4, 1e3, 2000)
        t_grid = np.concatenate([mags, -mags])
    p = nl.p if p is None else p
    t = np.asarray(t_grid, dtype=float)
    slack = np.abs(nl.value(x, t)) - eps * np.abs(t)
    return float(max(np.max(slack / np.abs(t) ** (p - 1.0)), 0.0))
