"""The correction equation ``A w = A u - lambda(u) M u`` and its inexact solutions.

Every inexact mode also solves the equation exactly (desk scale), so the
returned ``eta_actual`` is a certified relative energy-norm error rather
than an estimate. The one exception is the residual-based CG stopping rule,
whose result is flagged ``certified=False``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .errors import CGNotCertified, FixedPointReached, PreconditionError
from .forms import Eigenproblem, as_vector

NORMALIZATION_TOL = 1e-10
FIXED_POINT_TOL = 1e-14
POLICY_KINDS = ("random", "worst-of-N", "aligned")


@dataclass(frozen=True)
class PerturbationPolicy:
    kind: str = "random"
    n_candidates: int = 16
    seed: int = 0

    def __post_init__(self):
        if self.kind not in POLICY_KINDS:
            raise ValueError(f"unknown perturbation kind {self.kind!r}; expected {POLICY_KINDS}")
        if self.n_candidates < 1:
            raise ValueError("n_candidates must be >= 1")

    def to_dict(self):
        return {"kind": self.kind, "n_candidates": self.n_candidates, "seed": self.seed}

    @classmethod
    def from_dict(cls, d):
        return cls(d.get("kind", "random"), int(d.get("n_candidates", 16)), int(d.get("seed", 0)))


@dataclass
class CorrectionResult:
    v: np.ndarray
    w_ref: Optional[np.ndarray]
    eta_actual: float
    mode: str
    iterations: int = 0
    certified: bool = True
    eta_history: List[float] = field(default_factory=list)


def _check_start(p: Eigenproblem, u) -> tuple:
    u = as_vector(u, p.dim)
    mu = p.M.apply(u)
    mass_sq = float(u @ mu)
    if abs(mass_sq - 1.0) > 2 * NORMALIZATION_TOL:
        raise PreconditionError(f"u must be mass-normalized, got |u|_0^2 = {mass_sq!r}")
    au = p.A.apply(u)
    lam = float(u @ au) / mass_sq
    if p.metadata is not None and lam >= p.metadata.lambda2:
        raise PreconditionError(
            f"Rayleigh quotient {lam!r} is not below lambda2 = {p.metadata.lambda2!r}"
        )
    return u, au, mu, lam


def correction_rhs(p: Eigenproblem, u) -> np.ndarray:
    u, au, mu, lam = _check_start(p, u)
    return au - lam * mu


def exact_correction(p: Eigenproblem, u) -> CorrectionResult:
    """Solve the correction equation with the stored factorization of ``A``."""
    u, au, mu, lam = _check_start(p, u)
    w = p.A.solve(au - lam * mu)
    return CorrectionResult(v=w.copy(), w_ref=w, eta_actual=0.0, mode="exact")


def solution_operator(p: Eigenproblem, f) -> np.ndarray:
    """``G f``, the solution of ``A (G f) = M f``."""
    f = as_vector(f, p.dim)
    return p.A.solve(p.M.apply(f))


def galerkin_residual(p: Eigenproblem, u, w) -> float:
    """Relative residual ``|A w - (A u - lambda M u)| / |A u|`` (Euclidean norms)."""
    u, au, mu, lam = _check_start(p, u)
    w = as_vector(w, p.dim)
    return float(np.linalg.norm(p.A.apply(w) - (au - lam * mu)) / np.linalg.norm(au))


def _energy_norm(p, x):
    return float(np.sqrt(max(p.A.inner(x, x), 0.0)))


def is_fixed_point(p: Eigenproblem, u, w) -> bool:
    return _energy_norm(p, w) <= FIXED_POINT_TOL * _energy_norm(p, u)


def _check_eta(eta):
    if not (0.0 <= eta < 1.0):
        raise ValueError(f"eta must lie in [0, 1), got {eta}")


def perturbed_correction(
    p: Eigenproblem,
    u,
    eta: float,
    policy: PerturbationPolicy,
    *,
    step: int = 0,
    budget_fraction: float = 1.0,
    exact: Optional[CorrectionResult] = None,
) -> CorrectionResult:
    """Return ``v = w + delta`` with ``|delta| = budget_fraction * eta * |w|`` (energy norm).

    With the default ``budget_fraction=1`` the accuracy budget is saturated.
    Randomness is drawn from ``default_rng([policy.seed, step])`` so that each
    outer step of a run gets its own reproducible stream.
    """
    _check_eta(eta)
    if not (0.0 <= budget_fraction <= 1.0):
        raise ValueError(f"budget_fraction must lie in [0, 1], got {budget_fraction}")
    if exact is None:
        exact = exact_correction(p, u)
    u = as_vector(u, p.dim)
    w = exact.w_ref
    w_norm = _energy_norm(p, w)
    if w_norm <= FIXED_POINT_TOL * _energy_norm(p, u):
        raise FixedPointReached("correction vanished: u is an eigenvector")
    radius = budget_fraction * eta * w_norm
    if radius == 0.0:
        return CorrectionResult(v=w.copy(), w_ref=w, eta_actual=0.0, mode="perturbed")

    aligned = u / _energy_norm(p, u)
    if policy.kind == "aligned":
        direction = aligned
    else:
        rng = np.random.default_rng([policy.seed, step])
        n_draw = 1 if policy.kind == "random" else policy.n_candidates
        D = rng.standard_normal((p.dim, n_draw))
        if policy.kind == "worst-of-N":
            D = np.column_stack([D, aligned])
        AD = p.A.matrix @ D
        D = D / np.sqrt(np.einsum("ij,ij->j", D, AD))
        if policy.kind == "random":
            direction = D[:, 0]
        else:
            # maximize the Rayleigh quotient of u - v over the candidates
            X = (u - w)[:, None] - radius * D
            num = np.einsum("ij,ij->j", X, np.asarray(p.A.matrix @ X))
            den = np.einsum("ij,ij->j", X, np.asarray(p.M.matrix @ X))
            direction = D[:, int(np.argmax(num / den))]
    v = w + radius * direction
    return CorrectionResult(v=v, w_ref=w, eta_actual=budget_fraction * eta, mode="perturbed")


def _lanczos_min_ritz(alphas, betas) -> float:
    # CG coefficients define the Lanczos tridiagonal of A on the Krylov space
    k = len(alphas)
    diag = np.empty(k)
    off = np.empty(max(k - 1, 0))
    for i in range(k):
        diag[i] = 1.0 / alphas[i] + (betas[i - 1] / alphas[i - 1] if i > 0 else 0.0)
        if i < k - 1:
            off[i] = np.sqrt(betas[i]) / alphas[i]
    T = np.diag(diag) + np.diag(off, 1) + np.diag(off, -1)
    return float(np.linalg.eigvalsh(T)[0])


def truncated_cg_correction(
    p: Eigenproblem,
    u,
    eta: float,
    max_iter: int = 1000,
    *,
    certify: str = "reference",
    amin_estimate: Optional[float] = None,
    exact: Optional[CorrectionResult] = None,
) -> CorrectionResult:
    """Conjugate gradients on the correction equation from a zero start.

    ``certify="reference"`` stops at the first iterate whose energy error
    relative to the direct solution is at most ``eta``. ``certify="residual"``
    instead stops when ``|r| <= eta * sqrt(amin) * |x|_A`` with ``amin`` the
    smallest Ritz value of the CG Lanczos matrix (or ``amin_estimate``); that
    result is marked uncertified, though ``eta_actual`` is still exact.
    """
    _check_eta(eta)
    if certify not in ("reference", "residual"):
        raise ValueError(f"certify must be 'reference' or 'residual', got {certify!r}")
    if exact is None:
        exact = exact_correction(p, u)
    u = as_vector(u, p.dim)
    w = exact.w_ref
    w_norm = _energy_norm(p, w)
    if w_norm <= FIXED_POINT_TOL * _energy_norm(p, u):
        raise FixedPointReached("correction vanished: u is an eigenvector")

    b = correction_rhs(p, u)
    x = np.zeros(p.dim)
    r = b.copy()
    d = r.copy()
    rr = float(r @ r)
    history = [1.0]
    alphas, betas = [], []
    best_eta = 1.0
    for it in range(1, max_iter + 1):
        Ad = p.A.apply(d)
        alpha = rr / float(d @ Ad)
        x = x + alpha * d
        r = r - alpha * Ad
        rr_new = float(r @ r)
        beta = rr_new / rr
        alphas.append(alpha)
        betas.append(beta)
        err = _energy_norm(p, x - w) / w_norm
        history.append(err)
        best_eta = min(best_eta, err)
        if certify == "reference":
            done = err <= eta
        else:
            amin = amin_estimate if amin_estimate is not None else _lanczos_min_ritz(alphas, betas)
            done = np.sqrt(rr_new) <= eta * np.sqrt(amin) * _energy_norm(p, x)
        if done or rr_new == 0.0:
            return CorrectionResult(
                v=x,
                w_ref=w,
                eta_actual=err,
                mode="truncated-cg",
                iterations=it,
                certified=(certify == "reference"),
                eta_history=history,
            )
        d = r + beta * d
        rr = rr_new
    raise CGNotCertified(
        f"CG did not reach eta={eta} within {max_iter} iterations (best {best_eta:.3e})",
        best_eta=best_eta,
        iterations=max_iter,
    )
