"""Dirichlet-Laplacian sine bases on intervals and rectangles.

Coefficient vectors are plain float arrays holding the coordinates of u in
the X-orthonormal basis b_i = e_i / sqrt(lambda_i), so the Euclidean norm
of a coefficient vector is the Dirichlet norm (int |grad u|^2)^(1/2).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

__all__ = ["Domain", "EigenBasis", "eigenpairs", "synth", "analyze", "evaluate", "pad"]


def _size(value) -> float:
    if isinstance(value, str):
        if value.strip().lower() in {"pi", "π"}:
            return math.pi
        return float(value)
    return float(value)


@dataclass(frozen=True)
class Domain:
    """Interval (0, L) or rectangle (0, Lx) x (0, Ly)."""

    kind: str = "interval"
    size: tuple[float, ...] = (math.pi,)

    def __post_init__(self):
        size = self.size if isinstance(self.size, (tuple, list)) else (self.size,)
        size = tuple(_size(s) for s in size)
        if self.kind == "interval":
            if len(size) != 1:
                raise ValueError("interval domain takes a single length")
        elif self.kind == "rectangle":
            if len(size) == 1:
                size = size * 2
            if len(size) != 2:
                raise ValueError("rectangle domain takes two lengths")
        else:
            raise ValueError(f"unknown domain kind {self.kind!r}")
        if any(s <= 0 for s in size):
            raise ValueError("domain lengths must be positive")
        object.__setattr__(self, "size", size)

    @classmethod
    def interval(cls, L=math.pi):
        return cls("interval", (L,))

    @classmethod
    def rectangle(cls, Lx=math.pi, Ly=None):
        return cls("rectangle", (Lx, Lx if Ly is None else Ly))

    @property
    def dim(self) -> int:
        return len(self.size)

    @property
    def volume(self) -> float:
        return float(np.prod(self.size))


def _axis_grid(L: float, max_mode: int, per_mode_factor: int):
    # composite trapezoid on a uniform grid; endpoint weights are irrelevant (e_i vanishes there)
    N = per_mode_factor * max_mode + 1
    x = np.linspace(0.0, L, N)
    w = np.full(N, L / (N - 1))
    w[0] = w[-1] = 0.5 * L / (N - 1)
    return x, w


@dataclass(frozen=True, eq=False)
class EigenBasis:
    domain: Domain
    n: int
    lam: np.ndarray  # ascending eigenvalues
    modes: np.ndarray  # (n, dim) integer mode indices
    points: np.ndarray  # (Q, dim) quadrature nodes
    weights: np.ndarray  # (Q,)
    samples: np.ndarray  # (n, Q) L2-orthonormal e_i on the grid

    @cached_property
    def xbasis(self) -> np.ndarray:
        """(n, Q) samples of the X-orthonormal functions b_i = e_i / sqrt(lambda_i)."""
        return self.samples / np.sqrt(self.lam)[:, None]

    @cached_property
    def weighted_xbasis(self) -> np.ndarray:
        return self.xbasis * self.weights

    @property
    def x(self) -> np.ndarray:
        """Quadrature nodes, squeezed to 1-D on intervals."""
        return self.points[:, 0] if self.domain.dim == 1 else self.points

    def mode_functions(self, pts) -> np.ndarray:
        """L2-orthonormal e_i at arbitrary points; returns (n, P)."""
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        if self.domain.dim == 1 and pts.shape[0] == 1 and pts.shape[1] != 1:
            pts = pts.T
        out = np.ones((self.n, pts.shape[0]))
        for axis, L in enumerate(self.domain.size):
            k = self.modes[:, axis][:, None]
            out *= math.sqrt(2.0 / L) * np.sin(k * math.pi * pts[:, axis][None, :] / L)
        return out


def eigenpairs(domain: Domain, n: int, per_mode_factor: int = 8) -> EigenBasis:
    """The n smallest Dirichlet eigenpairs, ties broken by lexicographic mode index."""
    if n < 1:
        raise ValueError("basis dimension n must be >= 1")
    if domain.kind == "interval":
        (L,) = domain.size
        modes = np.arange(1, n + 1)[:, None]
        lam = (modes[:, 0] * math.pi / L) ** 2
    else:
        Lx, Ly = domain.size
        # enough candidates: any of the n smallest has each index <= n
        cand = [((i * math.pi / Lx) ** 2 + (j * math.pi / Ly) ** 2, i, j)
                for i in range(1, n + 1) for j in range(1, n + 1)]
        cand.sort()
        chosen = cand[:n]
        lam = np.array([c[0] for c in chosen])
        modes = np.array([[c[1], c[2]] for c in chosen])
    axes = []
    for axis, L in enumerate(domain.size):
        axes.append(_axis_grid(L, int(modes[:, axis].max()), per_mode_factor))
    if domain.dim == 1:
        points = axes[0][0][:, None]
        weights = axes[0][1]
    else:
        (x, wx), (y, wy) = axes
        X, Y = np.meshgrid(x, y, indexing="ij")
        points = np.column_stack([X.ravel(), Y.ravel()])
        weights = np.outer(wx, wy).ravel()
    basis = EigenBasis(domain=domain, n=n, lam=np.asarray(lam, dtype=float), modes=modes,
                       points=points, weights=weights, samples=np.empty((0, 0)))
    object.__setattr__(basis, "samples", basis.mode_functions(points))
    return basis


def synth(c, basis: EigenBasis) -> np.ndarray:
    """Grid values of u = sum c_i b_i. Accepts stacked coefficient arrays (..., n)."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != basis.n:
        raise ValueError(f"coefficient length {c.shape[-1]} does not match basis n={basis.n}")
    return c @ basis.xbasis


def analyze(values, basis: EigenBasis) -> np.ndarray:
    """a_i = int g e_i by quadrature, for grid values g (..., Q)."""
    values = np.asarray(values, dtype=float)
    if values.shape[-1] != basis.weights.shape[0]:
        raise ValueError("values are not sampled on this basis grid")
    return (values * basis.weights) @ basis.samples.T


def evaluate(c, basis: EigenBasis, pts) -> np.ndarray:
    """u(pts) for arbitrary points (off-grid evaluation for plotting and oracle comparison)."""
    c = np.asarray(c, dtype=float)
    if c.shape[-1] != basis.n:
        raise ValueError(f"coefficient length {c.shape[-1]} does not match basis n={basis.n}")
    return (c / np.sqrt(basis.lam)) @ basis.mode_functions(pts)


def pad(c, n_new: int) -> np.ndarray:
    """Embed X_n coefficients into X_{n_new} (zero padding)."""
    c = np.asarray(c, dtype=float)
    if n_new < c.shape[-1]:
        raise ValueError("pad cannot shrink a coefficient vector")
    out = np.zeros(c.shape[:-1] + (n_new,))
    out[..., : c.shape[-1]] = c
    return out
