"""SPD preconditioners ``B ~ (A + sigma M)^{-1}``.

Five kinds are provided: identity, Jacobi, an "exact" shifted inverse realized
by an inner CG solve, a geometric multigrid V-cycle on the structured cube
grid, and an unsmoothed-aggregation multilevel cycle for unstructured
operators. Both multilevel kinds share :class:`Hierarchy` and differ only in
how interlevel transfers are built.
"""

import logging
from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .errors import InvalidArgument, NumericError, UnsupportedConfiguration
from .pcg import cg_solve
from .sparse import as_csr, shifted_matrix

log = logging.getLogger(__name__)

KINDS = ("identity", "jacobi", "exact", "mg", "aml")
COARSE_SIZE = 512

# (sweeps, damping) per multilevel kind. Jacobi with 6/7 is the optimal damping
# for the 3D 7-point stencil; with 2/3 and two sweeps the asymptotic energy
# contraction of the cube V-cycle is about 0.34, with 6/7 and three about 0.12.
SMOOTHER_DEFAULTS = {"mg": (3, 6.0 / 7.0), "aml": (2, 2.0 / 3.0)}


@dataclass(frozen=True)
class PreconditionerSpec:
    kind: str = "identity"
    sigma: float = 0.0
    inner_tol: float = 1e-12
    inner_method: str = "cg"
    levels: int | None = None
    sweeps: int | None = None       # None: per-kind default from SMOOTHER_DEFAULTS
    omega: float | None = None
    cycle: str = "V"
    theta: float = 0.08
    coarse_size: int = COARSE_SIZE

    def __post_init__(self):
        if self.kind not in KINDS:
            raise InvalidArgument(f"unknown preconditioner kind {self.kind!r}; choose from {KINDS}")
        if self.sigma < 0:
            raise InvalidArgument(f"preconditioner shift must be >= 0, got {self.sigma}")
        if not 0 < self.inner_tol < 1:
            raise InvalidArgument(f"inner_tol must lie in (0, 1), got {self.inner_tol}")
        if self.inner_method not in ("cg", "direct"):
            raise InvalidArgument(f"inner_method must be 'cg' or 'direct', got {self.inner_method!r}")
        if self.sweeps is not None and self.sweeps < 1:
            raise InvalidArgument(f"need at least one smoothing sweep, got {self.sweeps}")
        if self.omega is not None and not 0 < self.omega <= 1:
            raise InvalidArgument(f"damping must lie in (0, 1], got {self.omega}")
        if self.cycle not in ("V", "W"):
            raise InvalidArgument(f"cycle must be 'V' or 'W', got {self.cycle!r}")

    @property
    def smoother(self):
        """``(sweeps, omega)`` with per-kind defaults filled in."""
        sweeps, omega = SMOOTHER_DEFAULTS.get(self.kind, (2, 2.0 / 3.0))
        return (self.sweeps or sweeps, self.omega or omega)

    def label(self):
        nu = self.smoother[0]
        extra = {"exact": f"sigma={self.sigma:g}",
                 "mg": f"sigma={self.sigma:g},V({nu},{nu})",
                 "aml": f"sigma={self.sigma:g},{self.cycle}({nu},{nu})"}
        return f"{self.kind}({extra[self.kind]})" if self.kind in extra else self.kind


class Preconditioner:
    """Linear SPD map ``r -> B r``."""

    kind = "abstract"

    def __init__(self, n):
        self.n = n

    def apply(self, r):
        r = np.asarray(r, dtype=np.float64)
        if r.shape != (self.n,):
            raise InvalidArgument(f"residual has shape {r.shape}, expected ({self.n},)")
        if not np.all(np.isfinite(r)):
            raise NumericError("non-finite residual passed to preconditioner")
        return self._apply(r)

    __call__ = apply

    def _apply(self, r):
        raise NotImplementedError


class IdentityPreconditioner(Preconditioner):
    kind = "identity"

    def _apply(self, r):
        return r.copy()


class JacobiPreconditioner(Preconditioner):
    kind = "jacobi"

    def __init__(self, operator):
        super().__init__(operator.shape[0])
        diag = operator.diagonal()
        if np.any(diag <= 0):
            raise NumericError("Jacobi preconditioner needs a positive diagonal")
        self.inv_diag = 1.0 / diag

    def _apply(self, r):
        return self.inv_diag * r


class ExactShiftInverse(Preconditioner):
    """``(A + sigma M)^{-1}`` via inner CG (default) or a sparse LU factorization."""

    kind = "exact"

    def __init__(self, operator, tol=1e-12, method="cg", maxiter=20000):
        super().__init__(operator.shape[0])
        self.operator = operator
        self.tol = tol
        self.maxiter = maxiter
        self.method = method
        if method == "direct":
            self._lu = spla.splu(sp.csc_matrix(operator))
        else:
            self._jacobi = JacobiPreconditioner(operator)

    def _apply(self, r):
        if self.method == "direct":
            return self._lu.solve(r)
        x, _ = cg_solve(self.operator.dot, r, self._jacobi, tol=self.tol, maxiter=self.maxiter)
        return x


# -- multilevel machinery ------------------------------------------------------

@dataclass
class Level:
    A: sp.csr_matrix
    inv_diag: np.ndarray
    P: sp.csr_matrix | None = None      # coarse -> this level
    R: sp.csr_matrix | None = None      # this level -> coarse


class Hierarchy:
    """Operators and transfers from fine (level 0) to coarse; dense solve at the bottom."""

    def __init__(self, levels, sweeps=2, omega=2.0 / 3.0, cycle="V"):
        sizes = [lvl.A.shape[0] for lvl in levels]
        if any(b >= a for a, b in zip(sizes, sizes[1:])):
            raise InvalidArgument(f"level sizes must strictly decrease, got {sizes}")
        self.levels = levels
        self.sweeps = sweeps
        self.omega = omega
        self.cycle = cycle
        coarse = levels[-1].A.toarray()
        try:
            self._coarse = ("chol", scipy.linalg.cho_factor(coarse, lower=True))
        except np.linalg.LinAlgError:
            log.warning("coarsest operator is not positive definite; using pseudo-inverse")
            self._coarse = ("pinv", np.linalg.pinv(coarse, hermitian=True))

    @property
    def sizes(self):
        return [lvl.A.shape[0] for lvl in self.levels]

    def coarse_solve(self, b):
        how, data = self._coarse
        if how == "chol":
            return scipy.linalg.cho_solve(data, b)
        return data @ b

    def smooth(self, level, x, b):
        lvl = self.levels[level]
        for _ in range(self.sweeps):
            x = x + self.omega * lvl.inv_diag * (b - lvl.A @ x)
        return x

    def cycle_at(self, level, b):
        if level == len(self.levels) - 1:
            return self.coarse_solve(b)
        lvl = self.levels[level]
        x = self.smooth(level, np.zeros_like(b), b)
        rc = lvl.R @ (b - lvl.A @ x)
        ec = self.cycle_at(level + 1, rc)
        if self.cycle == "W" and level + 1 < len(self.levels) - 1:
            ec = ec + self.cycle_at(level + 1, rc - self.levels[level + 1].A @ ec)
        x = x + lvl.P @ ec
        return self.smooth(level, x, b)


def mg_vcycle(hierarchy, level, rhs):
    """One multilevel cycle from ``level`` with zero initial guess; returns the correction."""
    return hierarchy.cycle_at(level, np.asarray(rhs, dtype=np.float64))


def _make_level(A):
    A = as_csr(A)
    diag = A.diagonal()
    if np.any(diag <= 0):
        raise NumericError("multilevel smoother needs a positive diagonal on every level")
    return Level(A, 1.0 / diag)


def galerkin_hierarchy(A, transfers, **cycle_opts):
    """Build levels from fine operator ``A`` and a list of ``(P, R)`` pairs, coarse op ``R A P``."""
    levels = [_make_level(A)]
    for P, R in transfers:
        fine = levels[-1]
        fine.P, fine.R = as_csr_rect(P), as_csr_rect(R)
        levels.append(_make_level(fine.R @ fine.A @ fine.P))
    return Hierarchy(levels, **cycle_opts)


def as_csr_rect(T):
    T = sp.csr_matrix(T, dtype=np.float64)
    T.sort_indices()
    return T


def interpolation_1d(k_fine):
    """Linear interpolation from the ``k_fine/2 - 1`` coarse interior nodes to the ``k_fine - 1`` fine ones."""
    if k_fine % 2 or k_fine < 4:
        raise InvalidArgument(f"fine interval count must be even and >= 4, got {k_fine}")
    nc, nf = k_fine // 2 - 1, k_fine - 1
    rows, cols, vals = [], [], []
    for J in range(nc):
        centre = 2 * J + 1      # fine index of coarse node J (0-based interior numbering)
        rows += [centre - 1, centre, centre + 1]
        cols += [J, J, J]
        vals += [0.5, 1.0, 0.5]
    return sp.csr_matrix((vals, (rows, cols)), shape=(nf, nc))


def geometric_transfers(k_intervals, dim=3, coarse_size=COARSE_SIZE, max_levels=None):
    """Trilinear prolongation / full-weighting restriction pairs for a uniform cube grid."""
    transfers = []
    k = k_intervals
    while (k - 1) ** dim > coarse_size and k % 2 == 0 and k >= 4:
        if max_levels is not None and len(transfers) + 1 >= max_levels:
            break
        P1 = interpolation_1d(k)
        P = P1
        for _ in range(dim - 1):
            P = sp.kron(P1, P, format="csr")
        transfers.append((P, P.T / 2 ** dim))
        k //= 2
    return transfers


def build_aggregates(A, theta=0.08):
    """Greedy strength-based aggregation.

    ``j`` is a strong neighbour of ``i`` when ``|a_ij| >= theta * max_k |a_ik|``
    (off-diagonal). Pass 1 makes an aggregate of every node whose strong
    neighbours are all free; pass 2 attaches leftovers to the aggregate of their
    strongest aggregated neighbour; pass 3 turns anything still free into a
    singleton. Returns ``(labels, n_aggregates)``.
    """
    A = as_csr(A)
    n = A.shape[0]
    indptr, indices, data = A.indptr, A.indices, np.abs(A.data)
    strong = []
    for i in range(n):
        cols = indices[indptr[i]:indptr[i + 1]]
        vals = data[indptr[i]:indptr[i + 1]]
        off = cols != i
        cols, vals = cols[off], vals[off]
        if vals.size == 0 or vals.max() == 0:
            strong.append((cols[:0], vals[:0]))
            continue
        keep = vals >= theta * vals.max()
        strong.append((cols[keep], vals[keep]))

    labels = np.full(n, -1, dtype=np.int64)
    count = 0
    for i in range(n):
        cols, _ = strong[i]
        if labels[i] == -1 and cols.size and np.all(labels[cols] == -1):
            labels[i] = count
            labels[cols] = count
            count += 1
    for i in range(n):
        if labels[i] != -1:
            continue
        cols, vals = strong[i]
        taken = labels[cols] >= 0
        if np.any(taken):
            labels[i] = labels[cols[taken][np.argmax(vals[taken])]]
    for i in range(n):
        if labels[i] == -1:
            labels[i] = count
            count += 1
    return labels, count


def aggregation_transfers(A, theta=0.08, coarse_size=COARSE_SIZE, max_levels=None):
    transfers = []
    current = as_csr(A)
    while current.shape[0] > coarse_size:
        if max_levels is not None and len(transfers) + 1 >= max_levels:
            break
        labels, count = build_aggregates(current, theta)
        if count >= current.shape[0]:
            log.warning("aggregation stalled at %d unknowns", count)
            break
        n = current.shape[0]
        P = sp.csr_matrix((np.ones(n), (np.arange(n), labels)), shape=(n, count))
        transfers.append((P, P.T.tocsr()))
        current = as_csr(P.T @ current @ P)
    return transfers


class MultilevelPreconditioner(Preconditioner):
    def __init__(self, hierarchy, kind):
        super().__init__(hierarchy.levels[0].A.shape[0])
        self.hierarchy = hierarchy
        self.kind = kind

    def _apply(self, r):
        return self.hierarchy.cycle_at(0, r)


def build_preconditioner(spec, A, M=None, grid=None):
    """Build the preconditioner described by ``spec`` for the pair ``(A, M)``.

    ``grid`` is the structured-grid handle of a cube problem (an object with
    ``intervals`` and ``dim``); it is required for ``kind="mg"``.
    """
    if spec.kind == "identity":
        return IdentityPreconditioner(A.shape[0])
    operator = shifted_matrix(A, M, spec.sigma)
    if spec.kind == "jacobi":
        return JacobiPreconditioner(operator)
    if spec.kind == "exact":
        return ExactShiftInverse(operator, spec.inner_tol, spec.inner_method)
    sweeps, omega = spec.smoother
    opts = dict(sweeps=sweeps, omega=omega)
    if spec.kind == "mg":
        if grid is None:
            raise UnsupportedConfiguration("geometric multigrid needs a structured grid hierarchy")
        transfers = geometric_transfers(grid.intervals, grid.dim, spec.coarse_size, spec.levels)
        return MultilevelPreconditioner(galerkin_hierarchy(operator, transfers, cycle="V", **opts), "mg")
    transfers = aggregation_transfers(operator, spec.theta, spec.coarse_size, spec.levels)
    return MultilevelPreconditioner(galerkin_hierarchy(operator, transfers, cycle=spec.cycle, **opts), "aml")
