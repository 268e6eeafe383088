"""Sparse symmetric storage, shifted products, norms and small dense solves.

Matrices are ``scipy.sparse.csr_matrix`` instances with sorted indices. A mass
matrix of ``None`` stands for the identity, so shifted products with finite
difference or graph operators cost one spmv plus one axpy.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.linalg
import scipy.sparse as sp

from .errors import DimensionError, InvalidArgument, NumericError

__all__ = [
    "as_csr",
    "is_symmetric",
    "spmv",
    "mass_apply",
    "shifted_apply",
    "shifted_matrix",
    "NormDescriptor",
    "norm",
    "dense_solve_spd",
    "project",
    "read_matrix_market",
    "write_matrix_market",
    "read_vector",
    "write_vector",
]


def as_csr(A):
    """Return ``A`` as a square float64 CSR matrix with sorted column indices."""
    A = sp.csr_matrix(A, dtype=np.float64)
    if A.shape[0] != A.shape[1]:
        raise DimensionError(f"matrix must be square, got shape {A.shape}")
    A.sum_duplicates()
    A.sort_indices()
    return A


def is_symmetric(A, rtol=1e-12):
    A = sp.csr_matrix(A)
    scale = abs(A).max() if A.nnz else 0.0
    if scale == 0.0:
        return True
    defect = abs(A - A.T).max()
    return defect <= rtol * scale


def _check_vector(n, x, name="x"):
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (n,):
        raise DimensionError(f"{name} has shape {x.shape}, expected ({n},)")
    return x


def spmv(A, x):
    x = _check_vector(A.shape[1], x)
    return A @ x


def mass_apply(M, x):
    if M is None:
        return np.array(x, dtype=np.float64, copy=True)
    return spmv(M, x)


def shifted_apply(A, M, t, x):
    """Compute ``(A + t M) x`` without forming the sum."""
    if t < 0:
        raise InvalidArgument(f"shift must be nonnegative, got {t}")
    x = _check_vector(A.shape[1], x)
    if M is not None and M.shape != A.shape:
        raise DimensionError(f"mass shape {M.shape} does not match {A.shape}")
    y = A @ x
    if t != 0.0:
        y += t * (x if M is None else M @ x)
    return y


def shifted_matrix(A, M, t):
    """Explicit ``A + t M`` in CSR form (used for preconditioner setup)."""
    n = A.shape[0]
    B = A + t * (sp.identity(n, format="csr") if M is None else M)
    return as_csr(B)


@dataclass(frozen=True)
class NormDescriptor:
    """Which norm a problem family reports its errors in.

    ``kind`` is one of ``"euclidean"``, ``"scaled"``, ``"mass"`` or
    ``"operator"``; ``weight`` holds the SPD matrix for the last two (``None``
    meaning identity).
    """

    kind: str = "euclidean"
    factor: float = 1.0
    weight: object = None

    def __post_init__(self):
        if self.kind not in ("euclidean", "scaled", "mass", "operator"):
            raise InvalidArgument(f"unknown norm kind {self.kind!r}")
        if not self.factor > 0:
            raise InvalidArgument(f"norm factor must be positive, got {self.factor}")

    @classmethod
    def euclidean(cls):
        return cls("euclidean")

    @classmethod
    def scaled(cls, factor):
        return cls("scaled", factor=float(factor))

    @classmethod
    def mass_weighted(cls, M):
        return cls("mass", weight=M)

    @classmethod
    def operator_weighted(cls, A):
        return cls("operator", weight=A)

    def __call__(self, x):
        return norm(x, self)


def norm(x, d):
    x = np.asarray(x, dtype=np.float64)
    if d.kind in ("euclidean", "scaled"):
        return d.factor * float(np.sqrt(x @ x))
    q = float(x @ mass_apply(d.weight, x))
    if q < 0:
        # roundoff on a near-null vector is clipped; anything larger means W is not SPD
        scale = float(x @ x) * (abs(d.weight).max() if d.weight is not None else 1.0)
        if q < -1e-14 * scale:
            raise NumericError(f"negative quadratic form {q}: weight is not SPD")
        q = 0.0
    return d.factor * float(np.sqrt(q))


def dense_solve_spd(G, b):
    """Solve a small symmetric system ``G y = b``.

    Tries a Cholesky factorization first and falls back to the min-norm
    least-squares solution when a non-positive pivot shows up. Returns
    ``(y, fell_back)``.
    """
    G = np.asarray(G, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if not (np.all(np.isfinite(G)) and np.all(np.isfinite(b))):
        raise NumericError("non-finite entries in dense system")
    if G.ndim != 2 or G.shape[0] != G.shape[1] or b.shape != (G.shape[0],):
        raise DimensionError(f"incompatible shapes {G.shape} and {b.shape}")
    try:
        factor = scipy.linalg.cho_factor(G, lower=True, check_finite=False)
        return scipy.linalg.cho_solve(factor, b, check_finite=False), False
    except np.linalg.LinAlgError:
        y, *_ = np.linalg.lstsq(G, b, rcond=1e-13)
        return y, True


def project(P, A, M, f):
    """Return ``(P^T A P, P^T M P, P^T f)`` with both matrices symmetrized."""
    P = np.asarray(P, dtype=np.float64)
    if P.ndim != 2 or P.shape[0] != A.shape[0]:
        raise DimensionError(f"basis shape {P.shape} does not conform to {A.shape}")
    f = _check_vector(A.shape[0], f, "f")
    PtAP = P.T @ (A @ P)
    PtMP = P.T @ (P if M is None else M @ P)
    PtAP = 0.5 * (PtAP + PtAP.T)
    PtMP = 0.5 * (PtMP + PtMP.T)
    return PtAP, PtMP, P.T @ f


def read_matrix_market(path):
    try:
        A = scipy.io.mmread(str(path))
    except (OSError, ValueError) as exc:
        raise OSError(f"cannot read Matrix Market file {path}: {exc}") from exc
    return as_csr(A)


def write_matrix_market(path, A, symmetric=True):
    scipy.io.mmwrite(str(path), sp.coo_matrix(A), symmetry="symmetric" if symmetric else "general",
                     precision=17)


def read_vector(path):
    return np.loadtxt(Path(path), dtype=np.float64, ndmin=1)


def write_vector(path, x):
    np.savetxt(Path(path), np.asarray(x, dtype=np.float64), fmt="%.17g")
