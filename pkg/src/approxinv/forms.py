"""Symmetric positive-definite forms, the eigenproblem container and the
basic geometry built on them (inner products, norms, Rayleigh quotient,
projections onto the minimum eigenspace and its complement).

Vectors are plain one-dimensional float64 numpy arrays.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import (
    DimensionMismatch,
    MissingMetadata,
    NotPositiveDefinite,
    ZeroVectorError,
)

RESIDUAL_TOL = 1e-10
GRAM_TOL = 1e-12
FLOOR_FACTOR = 16.0


def as_vector(u, dim: Optional[int] = None) -> np.ndarray:
    """Coerce ``u`` to a finite 1-D float array, optionally of length ``dim``."""
    arr = np.asarray(u, dtype=float)
    if arr.ndim != 1 or arr.size == 0:
        raise DimensionMismatch(f"expected a non-empty 1-D vector, got shape {arr.shape}")
    if dim is not None and arr.size != dim:
        raise DimensionMismatch(f"vector has length {arr.size}, expected {dim}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("vector has non-finite entries")
    return arr


class SymmetricForm:
    """An SPD matrix, dense or CSR, factorized once at construction.

    The stored matrix is symmetrized as ``(X + X.T) / 2`` which is exactly
    symmetric in floating point. Positive definiteness is established by a
    symmetric factorization; the factor is kept for later solves.
    """

    def __init__(self, entries):
        if sp.issparse(entries):
            mat = sp.csr_matrix(entries, dtype=float)
            if mat.shape[0] != mat.shape[1]:
                raise DimensionMismatch(f"form must be square, got {mat.shape}")
            mat = ((mat + mat.T) * 0.5).tocsr()
            mat.sort_indices()
            self._sparse = True
        else:
            mat = np.array(entries, dtype=float)
            if mat.ndim != 2 or mat.shape[0] != mat.shape[1]:
                raise DimensionMismatch(f"form must be square, got {mat.shape}")
            mat = (mat + mat.T) * 0.5
            self._sparse = False
        if mat.shape[0] < 1:
            raise DimensionMismatch("form must have dimension >= 1")
        if self._sparse:
            if not np.all(np.isfinite(mat.data)):
                raise ValueError("form has non-finite entries")
        elif not np.all(np.isfinite(mat)):
            raise ValueError("form has non-finite entries")
        self._matrix = mat
        self._factor = self._factorize()

    def _factorize(self):
        if not self._sparse:
            try:
                return sla.cho_factor(self._matrix, lower=True, check_finite=False)
            except sla.LinAlgError as exc:
                raise NotPositiveDefinite(f"Cholesky factorization failed: {exc}") from None
        # Symmetric-mode sparse LU with diagonal pivoting is an LDL^T
        # factorization; SPD iff the permutation is symmetric and all pivots > 0.
        try:
            lu = spla.splu(
                self._matrix.tocsc(),
                permc_spec="MMD_AT_PLUS_A",
                diag_pivot_thresh=0.0,
                options={"SymmetricMode": True},
            )
        except RuntimeError as exc:
            raise NotPositiveDefinite(f"sparse factorization failed: {exc}") from None
        pivots = lu.U.diagonal()
        if not np.array_equal(lu.perm_r, lu.perm_c) or not np.all(pivots > 0):
            raise NotPositiveDefinite("sparse symmetric factorization has non-positive pivots")
        return lu

    @property
    def dim(self) -> int:
        return self._matrix.shape[0]

    @property
    def is_sparse(self) -> bool:
        return self._sparse

    @property
    def matrix(self):
        return self._matrix

    def to_dense(self) -> np.ndarray:
        return self._matrix.toarray() if self._sparse else self._matrix.copy()

    def apply(self, u: np.ndarray) -> np.ndarray:
        return np.asarray(self._matrix @ u, dtype=float)

    def inner(self, u: np.ndarray, v: np.ndarray) -> float:
        return float(u @ self.apply(v))

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Return ``X^{-1} rhs`` using the construction-time factor."""
        if self._sparse:
            return self._factor.solve(np.asarray(rhs, dtype=float))
        return sla.cho_solve(self._factor, rhs, check_finite=False)

    def __repr__(self):
        kind = "sparse" if self._sparse else "dense"
        return f"SymmetricForm(dim={self.dim}, {kind})"


@dataclass(frozen=True)
class SpectralMetadata:
    """Minimum eigenvalue, the next spectral point and an M-orthonormal
    basis of the minimum eigenspace (stored as columns)."""

    lambda1: float
    lambda2: float
    e1_basis: np.ndarray = field(repr=False)

    def __post_init__(self):
        basis = np.asarray(self.e1_basis, dtype=float)
        if basis.ndim == 1:
            basis = basis[:, None]
        if basis.ndim != 2 or basis.shape[1] < 1:
            raise ValueError("e1_basis must hold at least one vector")
        object.__setattr__(self, "e1_basis", basis)
        if not (0 < self.lambda1 < self.lambda2):
            raise ValueError(
                f"need 0 < lambda1 < lambda2, got {self.lambda1}, {self.lambda2}"
            )

    @property
    def multiplicity(self) -> int:
        return self.e1_basis.shape[1]

    def basis_vectors(self) -> list:
        return [self.e1_basis[:, i].copy() for i in range(self.multiplicity)]

    def residuals(self, A: SymmetricForm, M: SymmetricForm) -> np.ndarray:
        """Relative residuals ``|A chi - lambda1 M chi| / |A chi|`` per basis vector."""
        out = []
        for chi in self.basis_vectors():
            Achi = A.apply(chi)
            out.append(np.linalg.norm(Achi - self.lambda1 * M.apply(chi)) / np.linalg.norm(Achi))
        return np.array(out)

    def residual_floor(self, A: SymmetricForm, M: SymmetricForm) -> np.ndarray:
        """Roundoff level of :meth:`residuals` for each basis vector.

        Forming ``A chi`` in floating point already costs about
        ``eps (|A|_1 + lambda1 |M|_1) |chi|``; relative to ``|A chi|`` this
        exceeds 1e-10 for badly conditioned forms such as fine FD grids.
        """
        scale = _norm1(A.matrix) + self.lambda1 * _norm1(M.matrix)
        return np.array([
            FLOOR_FACTOR * np.finfo(float).eps * scale * np.linalg.norm(chi)
            / np.linalg.norm(A.apply(chi))
            for chi in self.basis_vectors()
        ])

    def validate(self, A: SymmetricForm, M: SymmetricForm) -> None:
        if self.e1_basis.shape[0] != A.dim:
            raise DimensionMismatch(
                f"basis vectors have length {self.e1_basis.shape[0]}, problem has {A.dim}"
            )
        res = self.residuals(A, M)
        tol = np.maximum(RESIDUAL_TOL, self.residual_floor(A, M))
        if np.any(res > tol):
            raise ValueError(f"eigenspace basis residual {res.max():.3e} exceeds {tol.max():.3e}")
        MB = np.column_stack([M.apply(c) for c in self.basis_vectors()])
        gram = self.e1_basis.T @ MB
        err = np.max(np.abs(gram - np.eye(self.multiplicity)))
        if err > GRAM_TOL:
            raise ValueError(f"eigenspace basis is not M-orthonormal (Gram error {err:.3e})")


def _norm1(X) -> float:
    return float(spla.norm(X, 1) if sp.issparse(X) else np.linalg.norm(X, 1))


@dataclass(frozen=True)
class Eigenproblem:
    """Generalized symmetric eigenproblem ``A x = lambda M x``."""

    A: SymmetricForm
    M: SymmetricForm
    metadata: Optional[SpectralMetadata] = None

    def __post_init__(self):
        if self.A.dim != self.M.dim:
            raise DimensionMismatch(f"A has dim {self.A.dim}, M has dim {self.M.dim}")
        if self.metadata is not None:
            self.metadata.validate(self.A, self.M)

    @property
    def dim(self) -> int:
        return self.A.dim

    def with_metadata(self, metadata: Optional[SpectralMetadata]) -> "Eigenproblem":
        return Eigenproblem(self.A, self.M, metadata)

    def require_metadata(self) -> SpectralMetadata:
        if self.metadata is None:
            raise MissingMetadata("operation needs spectral metadata (lambda1, lambda2, E1)")
        return self.metadata


def _pair(p: Eigenproblem, u, v):
    return as_vector(u, p.dim), as_vector(v, p.dim)


def energy_inner(p: Eigenproblem, u, v) -> float:
    u, v = _pair(p, u, v)
    return p.A.inner(u, v)


def mass_inner(p: Eigenproblem, u, v) -> float:
    u, v = _pair(p, u, v)
    return p.M.inner(u, v)


def energy_norm(p: Eigenproblem, u) -> float:
    u = as_vector(u, p.dim)
    return float(np.sqrt(max(p.A.inner(u, u), 0.0)))


def mass_norm(p: Eigenproblem, u) -> float:
    u = as_vector(u, p.dim)
    return float(np.sqrt(max(p.M.inner(u, u), 0.0)))


def rayleigh_quotient(p: Eigenproblem, u) -> float:
    u = as_vector(u, p.dim)
    den = p.M.inner(u, u)
    if den <= 0.0:
        raise ZeroVectorError("Rayleigh quotient of the zero vector")
    return p.A.inner(u, u) / den


def m_normalize(p: Eigenproblem, u) -> np.ndarray:
    u = as_vector(u, p.dim)
    nrm = mass_norm(p, u)
    if nrm == 0.0:
        raise ZeroVectorError("cannot normalize the zero vector")
    return u / nrm


def project_e1(p: Eigenproblem, u) -> np.ndarray:
    """``P1 u = sum_i (u, chi_i) chi_i`` over the stored M-orthonormal basis."""
    meta = p.require_metadata()
    u = as_vector(u, p.dim)
    basis = meta.e1_basis
    coeffs = basis.T @ p.M.apply(u)
    return basis @ coeffs


def complement_project(p: Eigenproblem, u) -> np.ndarray:
    u = as_vector(u, p.dim)
    return u - project_e1(p, u)
