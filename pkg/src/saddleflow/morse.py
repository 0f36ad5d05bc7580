"""Generalized Morse index (negative plus null eigenspace dimension) and its certification."""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

__all__ = ["RankDeficient", "MorseReport", "generalized_index", "tangent_negativity", "certify"]


class RankDeficient(RuntimeError):
    pass


@dataclass
class MorseReport:
    eigenvalues: np.ndarray
    n_neg: int
    n_null: int
    n_pos: int
    zero_tol: float
    certified_k: int
    borderline: bool = False

    @property
    def index(self) -> int:
        return self.n_neg + self.n_null

    def as_dict(self):
        d = asdict(self)
        d["eigenvalues"] = [float(v) for v in self.eigenvalues]
        return d


def _counts(lam, band):
    neg = int(np.sum(lam < -band))
    null = int(np.sum(np.abs(lam) <= band))
    return neg, null, lam.shape[0] - neg - null


def generalized_index(H, zero_tol: float = 1e-8, target: int | None = None,
                      robust_band=(1e-9, 1e-7)) -> MorseReport:
    """Count eigenvalues of H below, inside and above the band |lambda| <= zero_tol * max|lambda|.

    The point is flagged borderline when the counts change as the relative
    band runs over `robust_band`.
    """
    H = np.asarray(H, dtype=float)
    if H.ndim != 2 or H.shape[0] != H.shape[1]:
        raise ValueError("Hessian must be square")
    if np.max(np.abs(H - H.T), initial=0.0) > 1e-10 * max(1.0, np.max(np.abs(H), initial=0.0)):
        raise ValueError("Hessian is not symmetric")
    lam = np.linalg.eigvalsh(0.5 * (H + H.T))
    scale = max(float(np.max(np.abs(lam), initial=0.0)), np.finfo(float).tiny)
    neg, null, pos = _counts(lam, zero_tol * scale)
    borderline = _counts(lam, robust_band[0] * scale) != _counts(lam, robust_band[1] * scale)
    idx = neg + null
    certified_k = idx if target is None else min(idx, target)
    return MorseReport(eigenvalues=lam, n_neg=neg, n_null=null, n_pos=pos, zero_tol=zero_tol,
                       certified_k=certified_k, borderline=bool(borderline))


def tangent_negativity(model, state, sensitivities, cond_max: float = 1e12) -> float:
    """Largest Rayleigh quotient of J''(state) on the span of the sensitivity columns."""
    S = np.asarray(sensitivities, dtype=float)
    if S.ndim == 1:
        S = S[:, None]
    U, sv, _ = np.linalg.svd(S, full_matrices=False)
    if sv[-1] == 0.0 or sv[0] / sv[-1] > cond_max:
        cond = np.inf if sv[-1] == 0.0 else sv[0] / sv[-1]
        raise RankDeficient(f"sensitivity columns have condition number {cond:.3e}")
    Hq = U.T @ model.hessian_apply(state, U)
    return float(np.linalg.eigvalsh(0.5 * (Hq + Hq.T))[-1])


def certify(model, cp, k: int, zero_tol: float = 1e-8, newton_tol: float = 1e-10) -> bool:
    """True iff n_neg + n_null >= k at the critical point; attaches the report to cp."""
    if cp.residual >= newton_tol:
        raise ValueError(f"critical point residual {cp.residual:.3e} is not below {newton_tol:g}")
    report = generalized_index(model.hessian(cp.coeffs), zero_tol, target=k)
    cp.morse = report
    cp.certified = report.index >= k
    return cp.certified
