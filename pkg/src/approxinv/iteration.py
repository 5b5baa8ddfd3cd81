"""The outer loop: correct, update ``u' = (u - v) / |u - v|_0``, record, stop."""

from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field, fields
from typing import List, Optional, Sequence

import numpy as np

from .bounds import BoundInputs, lemma34_constant, q_factor
from .correction import (
    PerturbationPolicy,
    exact_correction,
    is_fixed_point,
    perturbed_correction,
    truncated_cg_correction,
)
from .errors import ApproxInvError, MissingMetadata, PreconditionError, StepError
from .forms import (
    Eigenproblem,
    SpectralMetadata,
    complement_project,
    energy_norm,
    m_normalize,
    mass_norm,
    rayleigh_quotient,
)

SOLVER_MODES = ("exact", "perturbed", "truncated-cg")
STOP_REASONS = ("tol_reached", "eigenvector_fixed_point", "max_steps")
CSV_HEADER = (
    "k",
    "lambda",
    "lambda_next",
    "w_norm",
    "v_norm",
    "v_norm_mass",
    "u_minus_w_norm",
    "u_minus_v_norm",
    "u_diff_norm",
    "subspace_dist",
    "eta_used",
)
MONOTONE_RTOL = 1e-12


@dataclass
class RunConfig:
    eta: float = 0.0
    solver_mode: str = "exact"
    policy: PerturbationPolicy = field(default_factory=PerturbationPolicy)
    max_steps: int = 500
    stop_tol: float = 1e-10
    record_subspace_distance: bool = True
    cg_max_iter: int = 1000
    budget_fraction: float = 1.0
    eta_schedule: Optional[List[float]] = None

    def __post_init__(self):
        if self.solver_mode not in SOLVER_MODES:
            raise ValueError(f"unknown solver_mode {self.solver_mode!r}; expected {SOLVER_MODES}")
        if isinstance(self.policy, dict):
            self.policy = PerturbationPolicy.from_dict(self.policy)
        for e in [self.eta] + list(self.eta_schedule or []):
            if not (0.0 <= e < 1.0):
                raise ValueError(f"eta must lie in [0, 1), got {e}")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")
        if not self.stop_tol > 0:
            raise ValueError("stop_tol must be positive")

    def eta_at(self, k: int) -> float:
        if self.solver_mode == "exact":
            return 0.0
        if self.eta_schedule:
            return float(self.eta_schedule[min(k, len(self.eta_schedule) - 1)])
        return float(self.eta)

    def to_dict(self):
        d = asdict(self)
        d["policy"] = self.policy.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown run config keys: {sorted(unknown)}")
        return cls(**d)


@dataclass
class StepRecord:
    k: int
    lambda_: float
    lambda_next: float
    w_norm: float
    v_norm: float
    v_norm_mass: float
    u_minus_w_norm: float
    u_minus_v_norm: float
    u_diff_norm: float
    subspace_dist: Optional[float]
    eta_used: float
    fixed_point: bool = False
    eta_actual: Optional[float] = None
    cg_iterations: Optional[int] = None

    def _field(self, column):
        # ``lambda`` is a Python keyword, stored as ``lambda_``
        return self.lambda_ if column == "lambda" else getattr(self, column)

    def csv_row(self):
        vals = [self._field(c) for c in CSV_HEADER]
        return [str(v) if isinstance(v, int) else ("" if v is None else f"{v:.17g}") for v in vals]

    def to_dict(self):
        d = {c: self._field(c) for c in CSV_HEADER}
        d.update(fixed_point=self.fixed_point, eta_actual=self.eta_actual, cg_iterations=self.cg_iterations)
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            k=int(d["k"]),
            lambda_=float(d["lambda"]),
            lambda_next=float(d["lambda_next"]),
            w_norm=float(d["w_norm"]),
            v_norm=float(d["v_norm"]),
            v_norm_mass=float(d["v_norm_mass"]),
            u_minus_w_norm=float(d["u_minus_w_norm"]),
            u_minus_v_norm=float(d["u_minus_v_norm"]),
            u_diff_norm=float(d["u_diff_norm"]),
            subspace_dist=None if d.get("subspace_dist") in (None, "") else float(d["subspace_dist"]),
            eta_used=float(d["eta_used"]),
            fixed_point=bool(d.get("fixed_point", False)),
            eta_actual=d.get("eta_actual"),
            cg_iterations=d.get("cg_iterations"),
        )


@dataclass
class Trajectory:
    records: List[StepRecord]
    final_u: np.ndarray
    stop_reason: str
    config: RunConfig
    stop_detail: str = ""
    metadata: Optional[SpectralMetadata] = field(default=None, repr=False)
    iterates: Optional[List[np.ndarray]] = field(default=None, repr=False)

    @property
    def lambdas(self) -> np.ndarray:
        """``lambda(u_0), ..., lambda(u_K)``."""
        if not self.records:
            return np.zeros(0)
        return np.array([r.lambda_ for r in self.records] + [self.records[-1].lambda_next])

    @property
    def steps(self) -> int:
        return len(self.records)

    def is_monotone(self, rtol: float = MONOTONE_RTOL) -> bool:
        return all(r.lambda_next <= r.lambda_ + rtol * abs(r.lambda_) for r in self.records)

    def to_csv(self) -> str:
        return records_to_csv(self.records)

    def to_dict(self):
        return {
            "schema_version": 1,
            "config": self.config.to_dict(),
            "stop_reason": self.stop_reason,
            "stop_detail": self.stop_detail,
            "steps": self.steps,
            "records": [r.to_dict() for r in self.records],
            "final_u": [float(x) for x in self.final_u],
        }


def records_to_csv(records: Sequence[StepRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for r in records:
        writer.writerow(r.csv_row())
    return buf.getvalue()


def records_from_csv(text: str) -> List[StepRecord]:
    """Strict reader for trajectory CSV. ``subspace_dist`` may be absent."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = tuple(next(reader))
    except StopIteration:
        raise ValueError("empty trajectory CSV") from None
    optional = tuple(c for c in CSV_HEADER if c != "subspace_dist")
    if header not in (CSV_HEADER, optional):
        raise ValueError(f"unexpected trajectory CSV header: {header}")
    out = []
    for lineno, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(header):
            raise ValueError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            out.append(StepRecord.from_dict(dict(zip(header, row))))
        except ValueError as exc:
            raise ValueError(f"line {lineno}: {exc}") from None
    return out


def step(p: Eigenproblem, u, cfg: RunConfig, k: int = 0):
    """One approximate inverse iteration step; returns ``(u_next, record)``."""
    lam = rayleigh_quotient(p, u)
    meta = p.metadata
    if meta is not None and lam >= meta.lambda2:
        raise PreconditionError(f"lambda(u) = {lam!r} is not below lambda2 = {meta.lambda2!r}")
    exact = exact_correction(p, u)
    w = exact.w_ref
    eta = cfg.eta_at(k)
    sub = None
    if meta is not None and cfg.record_subspace_distance:
        sub = energy_norm(p, complement_project(p, u))
    w_norm = energy_norm(p, w)
    u_minus_w = energy_norm(p, u - w)

    if is_fixed_point(p, u, w):
        rec = StepRecord(
            k, lam, lam, w_norm, 0.0, 0.0, u_minus_w, energy_norm(p, u), 0.0, sub, eta,
            fixed_point=True, eta_actual=0.0,
        )
        return np.array(u, dtype=float), rec

    cg_iters = None
    if cfg.solver_mode == "exact":
        res = exact
    elif cfg.solver_mode == "perturbed":
        res = perturbed_correction(
            p, u, eta, cfg.policy, step=k, budget_fraction=cfg.budget_fraction, exact=exact
        )
    else:
        res = truncated_cg_correction(p, u, eta, cfg.cg_max_iter, exact=exact)
        cg_iters = res.iterations
    v = res.v
    u_next = m_normalize(p, u - v)
    rec = StepRecord(
        k=k,
        lambda_=lam,
        lambda_next=rayleigh_quotient(p, u_next),
        w_norm=w_norm,
        v_norm=energy_norm(p, v),
        v_norm_mass=mass_norm(p, v),
        u_minus_w_norm=u_minus_w,
        u_minus_v_norm=energy_norm(p, u - v),
        u_diff_norm=energy_norm(p, u - u_next),
        subspace_dist=sub,
        eta_used=eta,
        eta_actual=res.eta_actual,
        cg_iterations=cg_iters,
    )
    return u_next, rec


def run(p: Eigenproblem, u0, cfg: RunConfig, *, keep_iterates: bool = False) -> Trajectory:
    """Iterate until the stopping tolerance, an exact fixed point, or ``max_steps``.

    With metadata the stop test is ``lambda_k - lambda1 <= stop_tol``; without
    it, the per-step decrease ``lambda_{k-1} - lambda_k <= stop_tol``.
    ``keep_iterates`` stores every ``u_k`` (including the final one).
    """
    u = m_normalize(p, u0)
    iterates = [u] if keep_iterates else None
    meta = p.metadata
    if meta is not None and rayleigh_quotient(p, u) >= meta.lambda2:
        raise PreconditionError("starting vector must have Rayleigh quotient below lambda2")
    records: List[StepRecord] = []
    reason, detail = "max_steps", ""
    for k in range(cfg.max_steps):
        try:
            u, rec = step(p, u, cfg, k)
        except ApproxInvError as exc:
            raise StepError(k, exc) from exc
        records.append(rec)
        if iterates is not None:
            iterates.append(u)
        if rec.fixed_point:
            reason, detail = "eigenvector_fixed_point", "correction vanished"
            break
        if meta is not None:
            if rec.lambda_next - meta.lambda1 <= cfg.stop_tol:
                reason, detail = "tol_reached", "lambda - lambda1"
                break
        elif rec.lambda_ - rec.lambda_next <= cfg.stop_tol:
            reason, detail = "tol_reached", "decrement"
            break
    return Trajectory(records, u, reason, cfg, detail, meta, iterates)


def cauchy_tail_check(t: Trajectory, meta: Optional[SpectralMetadata] = None) -> bool:
    """``|u_k - u_{k+1}|^2 <= c (lambda_k - lambda1)`` wherever ``|v_k|^2 <= lambda1/4``."""
    meta = meta if meta is not None else t.metadata
    if meta is None:
        raise MissingMetadata("cauchy_tail_check needs lambda1 and lambda2")
    for r in t.records:
        if r.v_norm**2 > meta.lambda1 / 4:
            continue
        c = lemma34_constant(BoundInputs(meta.lambda1, meta.lambda2, r.eta_used))
        lhs = r.u_diff_norm**2
        rhs = c * (r.lambda_ - meta.lambda1)
        if not lhs <= rhs * (1 + 1e-9) + 1e-12:
            return False
    return True


def tail_sums(t: Trajectory, meta: Optional[SpectralMetadata] = None):
    """Observed tails ``sum_{j>=k} |u_j - u_{j+1}|`` next to the geometric
    envelope ``sum_{j>=k} sqrt(c q0^j (lambda_0 - lambda1))`` (reporting only)."""
    meta = meta if meta is not None else t.metadata
    if meta is None:
        raise MissingMetadata("tail_sums needs lambda1 and lambda2")
    diffs = np.array([r.u_diff_norm for r in t.records])
    observed = np.cumsum(diffs[::-1])[::-1]
    if not t.records:
        return observed, observed
    eta = max(r.eta_used for r in t.records)
    b = BoundInputs(meta.lambda1, meta.lambda2, eta)
    lam0 = max(t.records[0].lambda_, meta.lambda1)
    q0 = q_factor(b, lam0)
    c = lemma34_constant(b)
    k = np.arange(len(diffs))
    gap0 = lam0 - meta.lambda1
    # sum_{j>=k} sqrt(c gap0) q0^{j/2} = sqrt(c gap0) q0^{k/2} / (1 - sqrt(q0))
    envelope = math.sqrt(c * gap0) * np.sqrt(q0) ** k / (1.0 - math.sqrt(q0))
    return observed, envelope
