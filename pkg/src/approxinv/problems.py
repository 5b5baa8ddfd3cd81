"""Test eigenproblems with known spectral data, and admissible start vectors."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Dict, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp

from . import mmio
from .errors import MissingMetadata, NotPositiveDefinite, SpectralGapError
from .forms import (
    Eigenproblem,
    SpectralMetadata,
    SymmetricForm,
    complement_project,
    m_normalize,
    rayleigh_quotient,
)

ORACLE_MAX_DIM = 2000
LAPLACIAN_2D_MAX_DIM = 10000
CLUSTER_RTOL = 1e-8
GAP_FLOOR = 1e-6

KINDS = ("diagonal", "laplacian1d", "laplacian2d", "fem1d", "matrix-market")


def _identity(n):
    return sp.identity(n, format="csr") if n > ORACLE_MAX_DIM else np.eye(n)


def diagonal_problem(eigs) -> Eigenproblem:
    """``A = diag(sorted eigs)``, ``M = I``, with exact metadata."""
    vals = np.sort(np.asarray(eigs, dtype=float).ravel())
    if vals.size == 0:
        raise ValueError("need at least one eigenvalue")
    if not np.all(np.isfinite(vals)) or vals[0] <= 0:
        raise ValueError("diagonal eigenvalues must be finite and strictly positive")
    lam1 = vals[0]
    above = vals[vals > lam1]
    if above.size == 0:
        raise SpectralGapError("all eigenvalues equal: lambda2 is undefined")
    n = vals.size
    A = sp.diags(vals, format="csr") if n > ORACLE_MAX_DIM else np.diag(vals)
    basis = np.eye(n)[:, vals == lam1]
    meta = SpectralMetadata(float(lam1), float(above[0]), basis)
    return Eigenproblem(SymmetricForm(A), SymmetricForm(_identity(n)), meta)


def _tridiag(n, lower, diag, upper):
    return sp.diags([[lower] * (n - 1), [diag] * n, [upper] * (n - 1)], [-1, 0, 1], format="csr")


def _check_grid(n, name):
    if int(n) != n or n < 3:
        raise ValueError(f"{name}: grid size must be an integer >= 3, got {n}")
    return int(n)


def fd_eigenvalues_1d(n: int) -> np.ndarray:
    """Closed-form eigenvalues ``4/h^2 sin^2(k pi h / 2)``, k = 1..n, of the 1D FD Laplacian."""
    h = 1.0 / (n + 1)
    k = np.arange(1, n + 1)
    return 4.0 / h**2 * np.sin(k * np.pi * h / 2) ** 2


def _sine_mode(n, k):
    x = np.arange(1, n + 1) / (n + 1)
    s = np.sin(k * np.pi * x)
    return s / np.linalg.norm(s)


def laplacian_1d(n: int) -> Eigenproblem:
    """Dirichlet finite differences on (0, 1) with ``h = 1/(n+1)``, ``M = I``."""
    n = _check_grid(n, "laplacian_1d")
    A = (n + 1) ** 2 * _tridiag(n, -1.0, 2.0, -1.0)
    p = Eigenproblem(SymmetricForm(A), SymmetricForm(_identity(n)))
    if n <= ORACLE_MAX_DIM:
        return p.with_metadata(spectral_oracle(p))
    lam = fd_eigenvalues_1d(n)
    return p.with_metadata(SpectralMetadata(lam[0], lam[1], _sine_mode(n, 1)))


def laplacian_2d(n: int) -> Eigenproblem:
    """5-point stencil on the ``n x n`` interior grid of the unit square, ``M = I``."""
    n = _check_grid(n, "laplacian_2d")
    if n * n > LAPLACIAN_2D_MAX_DIM:
        raise ValueError(f"laplacian_2d: dimension {n * n} exceeds {LAPLACIAN_2D_MAX_DIM}")
    T = _tridiag(n, -1.0, 2.0, -1.0)
    I = sp.identity(n, format="csr")
    A = ((n + 1) ** 2 * (sp.kron(I, T) + sp.kron(T, I))).tocsr()
    N = n * n
    p = Eigenproblem(SymmetricForm(A), SymmetricForm(sp.identity(N, format="csr")))
    if N <= ORACLE_MAX_DIM:
        return p.with_metadata(spectral_oracle(p))
    # tensor-product sine modes: lambda_{jk} = mu_j + mu_k
    mu = fd_eigenvalues_1d(n)
    s1 = _sine_mode(n, 1)
    return p.with_metadata(SpectralMetadata(2 * mu[0], mu[0] + mu[1], np.kron(s1, s1)))


def fem1d_problem(n: int) -> Eigenproblem:
    """Linear finite elements on (0, 1) with ``n`` interior nodes.

    Stiffness ``(1/h) tridiag(-1, 2, -1)``, consistent mass ``(h/6) tridiag(1, 4, 1)``.
    """
    n = _check_grid(n, "fem1d_problem")
    h = 1.0 / (n + 1)
    A = (1.0 / h) * _tridiag(n, -1.0, 2.0, -1.0)
    M = (h / 6.0) * _tridiag(n, 1.0, 4.0, 1.0)
    p = Eigenproblem(SymmetricForm(A), SymmetricForm(M))
    return p.with_metadata(spectral_oracle(p))


def spectral_oracle(p: Eigenproblem) -> SpectralMetadata:
    """Dense generalized symmetric eigendecomposition of ``(A, M)``.

    The minimum eigenspace collects every eigenvalue within ``1e-8 * lambda1``
    of the minimum; its basis is M-orthonormalized and refined by one
    Rayleigh-Ritz pass so the residual invariant holds.
    """
    if p.dim > ORACLE_MAX_DIM:
        raise ValueError(f"spectral_oracle: dim {p.dim} exceeds {ORACLE_MAX_DIM}")
    if p.dim < 2:
        raise SpectralGapError("a 1-dimensional problem has no lambda2")
    A = p.A.to_dense()
    M = p.M.to_dense()
    try:
        vals, vecs = sla.eigh(A, M)
    except sla.LinAlgError as exc:
        raise NotPositiveDefinite(f"generalized eigensolver failed: {exc}") from None
    lam1 = vals[0]
    if lam1 <= 0:
        raise NotPositiveDefinite(f"minimum eigenvalue {lam1} is not positive")
    in_cluster = np.abs(vals - lam1) <= CLUSTER_RTOL * abs(lam1)
    m = int(np.count_nonzero(in_cluster))
    if m == vals.size:
        raise SpectralGapError("all eigenvalues coincide: lambda2 is undefined")
    lam2 = vals[m]
    if lam2 - lam1 < GAP_FLOOR * lam1:
        raise SpectralGapError(
            f"gap lambda2 - lambda1 = {lam2 - lam1:.3e} below {GAP_FLOOR} * lambda1"
        )
    basis = _refine_basis(A, M, vecs[:, :m])
    lam1 = float(np.mean(np.diag(basis.T @ A @ basis))) if m > 1 else float(
        (basis[:, 0] @ A @ basis[:, 0])
    )
    return SpectralMetadata(lam1, float(lam2), basis)


def _refine_basis(A, M, V):
    # One block inverse-iteration sweep + M-orthonormalization + Rayleigh-Ritz.
    # Tightens residuals of the LAPACK vectors without changing the eigenspace.
    X = sla.solve(A, M @ V, assume_a="pos")
    X = _m_orthonormalize(M, X)
    H = X.T @ A @ X
    H = (H + H.T) / 2
    _, Y = np.linalg.eigh(H)
    return _m_orthonormalize(M, X @ Y)


def _m_orthonormalize(M, V):
    G = V.T @ M @ V
    G = (G + G.T) / 2
    L = np.linalg.cholesky(G)
    out = sla.solve_triangular(L, V.T, lower=True).T
    # a second pass removes the residual Gram error left by the first
    G = out.T @ M @ out
    L = np.linalg.cholesky((G + G.T) / 2)
    return sla.solve_triangular(L, out.T, lower=True).T


def admissible_start(p: Eigenproblem, gap_fraction: float, seed: int = 0) -> np.ndarray:
    """Mass-normalized start with Rayleigh quotient ``lambda1 + g (lambda2 - lambda1)``.

    Built as ``cos(t) chi + sin(t) z`` with ``chi`` the first basis vector of E1
    and ``z`` a seeded random unit vector in the complement. Because the two
    parts are orthogonal in both inner products the quotient is
    ``cos^2 lambda1 + sin^2 lambda(z)``, which fixes ``t`` in closed form.
    """
    if p.metadata is None:
        raise MissingMetadata("admissible_start needs spectral metadata")
    if not (0.0 < gap_fraction < 1.0):
        raise ValueError(f"gap_fraction must lie in (0, 1), got {gap_fraction}")
    meta = p.metadata
    chi = meta.e1_basis[:, 0]
    rng = np.random.default_rng(seed)
    z = complement_project(p, rng.standard_normal(p.dim))
    z = m_normalize(p, complement_project(p, z))
    lam_z = rayleigh_quotient(p, z)
    target = meta.lambda1 + gap_fraction * (meta.lambda2 - meta.lambda1)
    s2 = (target - meta.lambda1) / (lam_z - meta.lambda1)
    u0 = math.sqrt(1.0 - s2) * chi + math.sqrt(s2) * z
    return m_normalize(p, u0)


@dataclass
class GeneratorSpec:
    """Serializable recipe for an eigenproblem (JSON keys: kind, params, seed)."""

    kind: str
    params: Dict[str, Any] = field(default_factory=dict)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown generator kind {self.kind!r}; expected one of {KINDS}")
        if self.kind == "diagonal":
            eigs = self.params.get("eigenvalues")
            if not eigs:
                raise ValueError("diagonal generator needs a non-empty 'eigenvalues' list")
            if min(eigs) <= 0:
                raise ValueError("diagonal eigenvalues must be strictly positive")
            if len(set(float(e) for e in eigs)) < 2:
                raise SpectralGapError("diagonal generator needs at least 2 distinct values")
        elif self.kind in ("laplacian1d", "laplacian2d", "fem1d"):
            n = self.params.get("n")
            if not isinstance(n, int) or n < 3:
                raise ValueError(f"{self.kind} generator needs integer 'n' >= 3")
        elif "A" not in self.params:
            raise ValueError("matrix-market generator needs an 'A' path")

    @classmethod
    def from_dict(cls, d: Dict[str, Any]) -> "GeneratorSpec":
        unknown = set(d) - {"kind", "params", "seed"}
        if unknown:
            raise ValueError(f"unknown generator keys: {sorted(unknown)}")
        return cls(d["kind"], dict(d.get("params", {})), int(d.get("seed", 0)))

    def to_dict(self) -> Dict[str, Any]:
        return {"kind": self.kind, "params": dict(self.params), "seed": self.seed}

    def build(self, base_dir: Optional[str] = None) -> Eigenproblem:
        if self.kind == "diagonal":
            return diagonal_problem(self.params["eigenvalues"])
        if self.kind == "laplacian1d":
            return laplacian_1d(self.params["n"])
        if self.kind == "laplacian2d":
            return laplacian_2d(self.params["n"])
        if self.kind == "fem1d":
            return fem1d_problem(self.params["n"])
        return matrix_market_problem(self.params["A"], self.params.get("M"), base_dir)


def matrix_market_problem(a_path, m_path=None, base_dir=None) -> Eigenproblem:
    """Load ``A`` (and optionally ``M``, default identity) and attach oracle metadata."""
    from pathlib import Path

    def resolve(x):
        path = Path(x)
        return path if path.is_absolute() or base_dir is None else Path(base_dir) / path

    A = mmio.read_matrix_market(resolve(a_path))
    n = A.shape[0]
    dense = n <= ORACLE_MAX_DIM
    M = mmio.read_matrix_market(resolve(m_path)) if m_path else sp.identity(n, format="csr")
    p = Eigenproblem(
        SymmetricForm(A.toarray() if dense else A),
        SymmetricForm(M.toarray() if dense else M),
    )
    return p.with_metadata(spectral_oracle(p)) if dense else p


__all__ = [
    "GeneratorSpec",
    "admissible_start",
    "diagonal_problem",
    "fd_eigenvalues_1d",
    "fem1d_problem",
    "laplacian_1d",
    "laplacian_2d",
    "matrix_market_problem",
    "spectral_oracle",
]
