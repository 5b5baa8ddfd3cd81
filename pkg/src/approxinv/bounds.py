"""Closed-form convergence bounds for approximate inverse iteration and a
per-step verifier that certifies a recorded trajectory against them.

Every evaluator takes a :class:`BoundInputs` (``lambda1 < lambda2`` and the
accuracy ``eta < 1``) plus the current Rayleigh quotient where relevant.

Check identifiers used in reports:

====== ==========================================================
T3.1   ``lambda' - lambda1 <= q(lambda) (lambda - lambda1)``
L3.1   ``|w|^2 >= ((lambda2 - lambda)/lambda2)^2 (lambda - lambda1)``
L3.2   ``lambda - lambda' >= lambda (1-eta^2)|w|^2 / (lambda + (1-eta^2)|w|^2)``
L3.3   ``|v|^2 <= (1+eta)/(1-eta) (lambda2/lambda1) (lambda - lambda1)``
L3.4   ``|u - u'|^2 <= c (lambda - lambda1)`` whenever ``|v|^2 <= lambda1/4``
T3.2   ``|u - P1 u|^2 <= lambda2/(lambda2 - lambda1) (lambda - lambda1)``
E2.5   ``|u - w|^2 = |u|^2 + |w|^2``
E2.7   ``|u - v| >= (1 - eta) |u - w|``
E3.8   ``lambda_k - lambda1 <= q(lambda_0)^k (lambda_0 - lambda1)``
====== ==========================================================
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import MissingMetadata, PreconditionError

REL_SLACK = 1e-9
ABS_SLACK = 1e-12
PYTHAGORAS_TOL = 1e-10
ETA_POLE = 1.0 - 1e-12

CHECK_IDS = ("T3.1", "L3.1", "L3.2", "L3.3", "L3.4", "T3.2", "E2.5", "E2.7", "E3.8")


@dataclass(frozen=True)
class BoundInputs:
    lambda1: float
    lambda2: float
    eta: float = 0.0

    def __post_init__(self):
        if not (0.0 < self.lambda1 < self.lambda2):
            raise ValueError(f"need 0 < lambda1 < lambda2, got {self.lambda1}, {self.lambda2}")
        if not (0.0 <= self.eta < 1.0):
            raise ValueError(f"eta must lie in [0, 1), got {self.eta}")


def _in_range(b: BoundInputs, lam: float, *, closed_right: bool = True, name: str = "lambda"):
    hi_ok = lam <= b.lambda2 if closed_right else lam < b.lambda2
    if not (b.lambda1 <= lam and hi_ok):
        bracket = "]" if closed_right else ")"
        raise ValueError(f"{name}={lam!r} outside [{b.lambda1}, {b.lambda2}{bracket}")


def q_factor(b: BoundInputs, lam: float) -> float:
    """Per-step contraction factor for ``lambda - lambda1``."""
    _in_range(b, lam)
    return 1.0 - _g(b, lam)


def q_derivative(b: BoundInputs, lam: float) -> float:
    """Analytic ``dq/dlambda``; positive on the open interval (lambda1, lambda2)."""
    s = 1.0 - b.eta**2
    l1, l2 = b.lambda1, b.lambda2
    den = l2**2 * lam + s * (l2 - lam) ** 2 * (lam - l1)
    return s * (l2 - lam) * (s * l1 * (l2 - lam) ** 3 + 2 * l2**2 * lam**2) / den**2


def q_limit(b: BoundInputs) -> float:
    """Asymptotic contraction factor, ``q(lambda1)``."""
    return 1.0 - (1.0 - b.eta**2) * ((b.lambda2 - b.lambda1) / b.lambda2) ** 2


def kn_optimal_rate(b: BoundInputs) -> float:
    """The sharp asymptotic rate for the matrix case; a reporting comparator only."""
    return (1.0 - (1.0 - b.eta) * (b.lambda2 - b.lambda1) / b.lambda2) ** 2


def lemma31_bound(b: BoundInputs, lam: float) -> float:
    """Lower bound for ``|w|^2``."""
    _in_range(b, lam, closed_right=False)
    return ((b.lambda2 - lam) / b.lambda2) ** 2 * (lam - b.lambda1)


def lemma32_bound(b: BoundInputs, lam: float, w_norm_sq: float) -> float:
    """Lower bound for the Rayleigh quotient decrease ``lambda - lambda'``."""
    if w_norm_sq < 0:
        raise ValueError(f"w_norm_sq must be >= 0, got {w_norm_sq}")
    x = (1.0 - b.eta**2) * w_norm_sq
    return lam * x / (lam + x)


def lemma33_bound(b: BoundInputs, lam: float) -> float:
    """Upper bound for ``|v|^2``; ``inf`` once eta is within 1e-12 of 1."""
    _in_range(b, lam)
    if b.eta > ETA_POLE:
        return math.inf
    return (1.0 + b.eta) / (1.0 - b.eta) * (b.lambda2 / b.lambda1) * (lam - b.lambda1)


def lemma34_constant(b: BoundInputs) -> float:
    """``c`` in ``|u - u'|^2 <= c (lambda - lambda1)`` while ``|v|^2 <= lambda1/4``.

    From ``|u - u'| <= 2 (1 + sqrt(lambda2/lambda1)) |v|`` squared and the
    ``|v|^2`` bound of :func:`lemma33_bound`.
    """
    ratio = b.lambda2 / b.lambda1
    return 4.0 * (1.0 + math.sqrt(ratio)) ** 2 * (1.0 + b.eta) / (1.0 - b.eta) * ratio


def thm32_bound(b: BoundInputs, lam: float) -> float:
    """Upper bound for ``|u - P1 u|^2`` of a mass-normalized ``u``."""
    _in_range(b, lam, closed_right=False)
    return b.lambda2 / (b.lambda2 - b.lambda1) * (lam - b.lambda1)


def envelope_steps(q0: float, gap0: float, target: float) -> int:
    """Smallest ``k`` with ``q0^k gap0 <= target``."""
    if gap0 <= target:
        return 0
    return math.ceil(math.log(target / gap0) / math.log(q0))


def q_monotonicity_errors(b: BoundInputs, n_samples: int):
    """Samples of ``q`` and the max relative gap between the analytic
    derivative and a central difference at interior sample points."""
    lam = np.linspace(b.lambda1, b.lambda2, n_samples)
    q = np.array([q_factor(b, x) for x in lam])
    interior = lam[1:-1]
    # five-point central difference with a step scaled to the distance from
    # the nearer endpoint; differencing the subtracted fraction g (q = 1 - g)
    # keeps the low digits of g when q is close to 1
    h = 5e-3 * np.minimum(interior - b.lambda1, b.lambda2 - interior)
    fd = np.array(
        [
            -(8 * (_g(b, x + s) - _g(b, x - s)) - (_g(b, x + 2 * s) - _g(b, x - 2 * s))) / (12 * s)
            for x, s in zip(interior, h)
        ]
    )
    an = np.array([q_derivative(b, x) for x in interior])
    rel = np.abs(an - fd) / np.abs(an) if interior.size else np.zeros(0)
    return q, an, rel


def _g(b, lam):
    s = 1.0 - b.eta**2
    d2 = (b.lambda2 - lam) ** 2
    return s * lam * d2 / (b.lambda2**2 * lam + s * d2 * (lam - b.lambda1))


def q_monotonicity_check(b: BoundInputs, n_samples: int, fd_rtol: float = 1e-6) -> bool:
    if n_samples < 2:
        raise ValueError("n_samples must be >= 2")
    q, an, rel = q_monotonicity_errors(b, n_samples)
    return bool(
        np.all(np.diff(q) > 0)
        and np.all(an > 0)
        and (rel.size == 0 or rel.max() <= fd_rtol)
    )


# ---------------------------------------------------------------------------
# trajectory verification


@dataclass
class CheckEntry:
    step: int
    id: str
    lhs: float
    rhs: float
    applicable: bool = True
    passed: bool = True

    @property
    def margin(self) -> float:
        return self.rhs - self.lhs

    def to_dict(self):
        return {
            "id": self.id,
            "lhs": _num(self.lhs),
            "rhs": _num(self.rhs),
            "margin": _num(self.margin) if self.applicable else None,
            "applicable": self.applicable,
            "pass": self.passed,
        }


def _num(x):
    if x is None or not math.isfinite(x):
        return None if x is None or math.isnan(x) else ("inf" if x > 0 else "-inf")
    return float(x)


def holds(lhs: float, rhs: float) -> bool:
    """``lhs <= rhs`` up to the ledger's roundoff slack."""
    return lhs <= rhs * (1.0 + REL_SLACK) + ABS_SLACK


@dataclass
class VerificationReport:
    lambda1: float
    lambda2: float
    eta: float
    entries: List[CheckEntry] = field(default_factory=list)

    @property
    def all_pass(self) -> bool:
        return all(e.passed for e in self.entries)

    @property
    def first_failure(self):
        for e in self.entries:
            if not e.passed:
                return (e.step, e.id)
        return None

    def for_id(self, check_id: str) -> List[CheckEntry]:
        return [e for e in self.entries if e.id == check_id]

    def min_margin(self, check_id: str) -> Optional[float]:
        margins = [e.margin for e in self.for_id(check_id) if e.applicable]
        return min(margins) if margins else None

    def summary(self):
        rows = []
        for cid in CHECK_IDS:
            es = self.for_id(cid)
            app = [e for e in es if e.applicable]
            rows.append(
                {
                    "id": cid,
                    "applicable": len(app),
                    "passed": sum(e.passed for e in app),
                    "min_margin": min((e.margin for e in app), default=None),
                }
            )
        return rows

    def to_dict(self):
        steps = {}
        for e in self.entries:
            steps.setdefault(e.step, []).append(e.to_dict())
        ff = self.first_failure
        return {
            "schema_version": 1,
            "lambda1": self.lambda1,
            "lambda2": self.lambda2,
            "eta": self.eta,
            "all_pass": self.all_pass,
            "first_failure": None if ff is None else {"step": ff[0], "id": ff[1]},
            "summary": [
                {**r, "min_margin": _num(r["min_margin"]) if r["min_margin"] is not None else None}
                for r in self.summary()
            ],
            "steps": [{"k": k, "checks": checks} for k, checks in sorted(steps.items())],
        }

    def format_table(self) -> str:
        lines = [f"{'check':<6} {'applicable':>10} {'passed':>8} {'min margin':>14}"]
        for r in self.summary():
            mm = "-" if r["min_margin"] is None else f"{r['min_margin']:.6e}"
            lines.append(f"{r['id']:<6} {r['applicable']:>10d} {r['passed']:>8d} {mm:>14}")
        ff = self.first_failure
        lines.append("all_pass: " + ("yes" if self.all_pass else f"NO (first failure {ff})"))
        return "\n".join(lines)


def _required(rec, name):
    val = getattr(rec, name, None)
    if val is None:
        raise ValueError(f"step {rec.k}: field {name!r} is required but missing")
    return float(val)


def verify_records(
    records: Sequence,
    lambda1: float,
    lambda2: float,
    eta: Optional[float] = None,
) -> VerificationReport:
    """Check every bound at every recorded step.

    ``records`` are objects with the StepRecord attributes. Each step is
    checked against its own ``eta_used``; the geometric envelope uses
    ``eta`` (default: the largest ``eta_used`` in the run).
    """
    records = list(records)
    if eta is None:
        eta = max((float(r.eta_used) for r in records), default=0.0)
    b_run = BoundInputs(lambda1, lambda2, eta)
    report = VerificationReport(lambda1, lambda2, eta)
    if not records:
        return report
    lam0 = _required(records[0], "lambda_")
    if lam0 >= lambda2:
        raise PreconditionError(f"lambda_0 = {lam0!r} is not below lambda2 = {lambda2!r}")
    q0 = q_factor(b_run, max(lam0, lambda1))
    gap0 = lam0 - lambda1

    for rec in records:
        k = int(rec.k)
        lam = _required(rec, "lambda_")
        lam_next = _required(rec, "lambda_next")
        if lam >= lambda2:
            raise PreconditionError(f"step {k}: lambda = {lam!r} is not below lambda2 = {lambda2!r}")
        b = BoundInputs(lambda1, lambda2, float(rec.eta_used))
        lam_c = max(lam, lambda1)  # roundoff can put lambda a hair below lambda1
        w_sq = _required(rec, "w_norm") ** 2
        v_sq = _required(rec, "v_norm") ** 2
        umw = _required(rec, "u_minus_w_norm")
        umv = _required(rec, "u_minus_v_norm")
        diff_sq = _required(rec, "u_diff_norm") ** 2

        def add(cid, lhs, rhs, applicable=True):
            report.entries.append(
                CheckEntry(k, cid, lhs, rhs, applicable, (not applicable) or holds(lhs, rhs))
            )

        add("T3.1", lam_next - lambda1, q_factor(b, lam_c) * (lam - lambda1))
        add("L3.1", lemma31_bound(b, lam_c), w_sq)
        add("L3.2", lemma32_bound(b, lam, w_sq), lam - lam_next)
        add("L3.3", v_sq, lemma33_bound(b, lam_c))
        c = lemma34_constant(b)
        add("L3.4", diff_sq, c * (lam - lambda1), applicable=v_sq <= lambda1 / 4)
        sd = getattr(rec, "subspace_dist", None)
        if sd is None:
            add("T3.2", math.nan, math.nan, applicable=False)
        else:
            add("T3.2", float(sd) ** 2, thm32_bound(b, lam_c))
        add("E2.5", abs(umw**2 - lam - w_sq), PYTHAGORAS_TOL * lam)
        add("E2.7", (1.0 - b.eta) * umw, umv)
        add("E3.8", lam_next - lambda1, q0 ** (k + 1) * gap0)
    return report


def verify_trajectory(t, meta, eta: Optional[float] = None) -> VerificationReport:
    """Certify a :class:`~approxinv.iteration.Trajectory` against ``meta``."""
    if meta is None:
        raise MissingMetadata("verification needs lambda1 and lambda2")
    return verify_records(t.records, meta.lambda1, meta.lambda2, eta)
