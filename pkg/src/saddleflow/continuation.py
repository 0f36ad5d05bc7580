"""Warm-started passage m -> infinity (mollification removed) and n -> larger Galerkin spaces."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field as dc_field

import numpy as np

from .functional import EnergyModel
from .minimax import CriticalPointRecord, NewtonDiverged, refine_critical
from .mollifier import BumpKernel, SmoothedNonlinearity
from .spectral import Domain, eigenpairs, pad

__all__ = [
    "DivergedAcrossM",
    "DivergedAcrossN",
    "ContinuationRun",
    "continue_in_m",
    "continue_in_n",
    "SolutionRow",
    "SolutionTable",
    "assemble_table",
    "CSV_COLUMNS",
]

CSV_COLUMNS = ("k", "energy", "residual", "n_neg", "n_null", "norm_X", "certified")


class DivergedAcrossM(RuntimeError):
    pass


class DivergedAcrossN(RuntimeError):
    pass


@dataclass
class ContinuationRun:
    k: int
    stages: list = dc_field(default_factory=list)  # (m or None, n) per stage
    records: list = dc_field(default_factory=list)
    deltas: list = dc_field(default_factory=list)
    padded_residuals: list = dc_field(default_factory=list)
    converged: bool | None = None

    @property
    def final(self) -> CriticalPointRecord:
        return self.records[-1]

    def as_dict(self):
        return {
            "k": self.k,
            "stages": [{"m": m, "n": n} for m, n in self.stages],
            "energies": [r.energy for r in self.records],
            "residuals": [r.residual for r in self.records],
            "norms": [r.norm_X for r in self.records],
            "deltas": self.deltas,
            "padded_residuals": self.padded_residuals,
            "converged": self.converged,
        }


def _check_deltas(deltas, exc, what):
    # three consecutive increases means the stages are not settling
    ups = 0
    for a, b in zip(deltas, deltas[1:]):
        ups = ups + 1 if b > a else 0
        if ups >= 3:
            raise exc(f"{what} deltas increased over three consecutive stages: {deltas}")


def continue_in_m(base, basis, start, m_schedule, k: int, newton_tol: float = 1e-10,
                  n_quad: int = 64, smooth: bool = False, final_unmollified: bool = True,
                  run: ContinuationRun | None = None) -> ContinuationRun:
    """Newton-refine the k-th solution along the m schedule, each stage warm-started from the last.

    With final_unmollified the chain ends on J_n itself. In smooth mode the
    same unmollified functional is used at every stage (deltas are then 0).
    """
    run = run or ContinuationRun(k=k)
    x = np.asarray(start.coeffs if isinstance(start, CriticalPointRecord) else start, dtype=float)
    stages = list(m_schedule) + ([None] if final_unmollified else [])
    deltas = []
    for m in stages:
        if smooth or m is None:
            nl = base
        else:
            nl = SmoothedNonlinearity(base, BumpKernel(int(m), n_quad=n_quad))
        model = EnergyModel(nl, basis)
        try:
            rec = refine_critical(model, x, newton_tol=newton_tol, k=k)
        except NewtonDiverged as exc:
            raise DivergedAcrossM(f"Newton failed at m={m}: {exc}") from exc
        rec.m = None if (smooth or m is None) else int(m)
        if run.records and run.records[-1].n == rec.n:
            deltas.append(float(np.linalg.norm(rec.coeffs - x)))
            run.deltas.append(deltas[-1])
        run.records.append(rec)
        run.stages.append((rec.m, basis.n))
        x = rec.coeffs
    _check_deltas(deltas, DivergedAcrossM, "m-continuation")
    return run


def continue_in_n(base, domain: Domain, start, n_schedule, k: int, newton_tol: float = 1e-10,
                  per_mode_factor: int = 8, tol: float = 1e-6,
                  run: ContinuationRun | None = None) -> ContinuationRun:
    """Pad the solution into each larger X_n and Newton-refine the unmollified J_n there."""
    run = run or ContinuationRun(k=k)
    x = np.asarray(start.coeffs if isinstance(start, CriticalPointRecord) else start, dtype=float)
    deltas, padded = [], []
    for n in n_schedule:
        if n < x.shape[0]:
            raise ValueError("n schedule must be non-decreasing")
        basis = eigenpairs(domain, int(n), per_mode_factor)
        model = EnergyModel(base, basis)
        xp = pad(x, int(n))
        padded.append(float(np.linalg.norm(model.gradient(xp))))
        try:
            rec = refine_critical(model, xp, newton_tol=newton_tol, k=k)
        except NewtonDiverged as exc:
            raise DivergedAcrossN(f"Newton failed at n={n}: {exc}") from exc
        rec.m = None
        if n != x.shape[0] or not run.records:
            deltas.append(float(np.linalg.norm(rec.coeffs - xp)))
        run.records.append(rec)
        run.stages.append((None, int(n)))
        x = rec.coeffs
    run.deltas.extend(deltas)
    run.padded_residuals.extend(padded)
    _check_deltas(deltas, DivergedAcrossN, "n-continuation")
    if len(deltas) >= 1 and len(n_schedule) >= 2:
        run.converged = bool(deltas[-1] < tol and padded[-1] < tol)
    return run


@dataclass
class SolutionRow:
    k: int
    coeffs: np.ndarray
    energy: float
    residual: float
    n_neg: int
    n_null: int
    certified: bool
    borderline: bool = False

    @property
    def norm_X(self) -> float:
        return float(np.linalg.norm(self.coeffs))

    @classmethod
    def from_record(cls, rec: CriticalPointRecord):
        rep = rec.morse
        return cls(k=int(rec.k), coeffs=np.asarray(rec.coeffs), energy=float(rec.energy),
                   residual=float(rec.residual), n_neg=int(rep.n_neg), n_null=int(rep.n_null),
                   certified=bool(rec.certified), borderline=bool(rep.borderline))


@dataclass
class SolutionTable:
    rows: list
    duplicates: list = dc_field(default_factory=list)  # (kept k, dropped k)
    energy_increasing: bool = True
    norm_increasing: bool = True
    index_ok: bool = True
    failure: str | None = None

    @property
    def passed(self) -> bool:
        return self.failure is None and self.energy_increasing and self.index_ok and bool(self.rows)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for r in self.rows:
            w.writerow([r.k, f"{r.energy:.12e}", f"{r.residual:.6e}", r.n_neg, r.n_null,
                        f"{r.norm_X:.12e}", int(r.certified)])
        return buf.getvalue()

    def flags(self) -> dict:
        return {"energy_increasing": self.energy_increasing, "norm_increasing": self.norm_increasing,
                "index_ok": self.index_ok, "duplicates": self.duplicates, "failure": self.failure,
                "norms": [r.norm_X for r in self.rows]}


def assemble_table(records, dedup_tol: float = 1e-4) -> SolutionTable:
    """Deduplicate by X-distance, sort by energy and check the escalation flags."""
    recs = [r for r in records if r is not None]
    if not recs:
        return SolutionTable(rows=[], energy_increasing=False, index_ok=False, failure="no solutions")
    recs.sort(key=lambda r: (r.k, r.energy))
    kept, dups = [], []
    for r in recs:
        twin = next((q for q in kept if q.n == r.n and np.linalg.norm(q.coeffs - r.coeffs) < dedup_tol), None)
        if twin is not None:
            dups.append((int(twin.k), int(r.k)))
            continue
        kept.append(r)
    rows = sorted((SolutionRow.from_record(r) for r in kept), key=lambda row: (row.energy, row.k))
    e = [r.energy for r in rows]
    nrm = [r.norm_X for r in rows]
    return SolutionTable(
        rows=rows,
        duplicates=dups,
        energy_increasing=all(b > a for a, b in zip(e, e[1:])),
        norm_increasing=all(b > a for a, b in zip(nrm, nrm[1:])),
        index_ok=all(r.certified and r.n_neg + r.n_null >= r.k for r in rows),
    )
