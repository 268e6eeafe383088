"""Assemblers for the three experiment families plus user-supplied matrices.

Every family returns a :class:`DiscreteProblem` carrying the stiffness and
mass matrices, the load, an upper bound ``lam`` for the generalized spectrum
of ``(A, M)``, the norm errors are reported in, and, where one is known, the
exact solution sampled at the degrees of freedom.
"""

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np
import scipy.sparse as sp

from .errors import InvalidArgument, UnsupportedConfiguration
from .sparse import NormDescriptor, as_csr, is_symmetric, mass_apply, norm

MAX_LEVEL = 7


@dataclass(frozen=True)
class CubeGrid:
    """Structured grid handle: ``intervals`` cells per axis on the unit cube."""

    intervals: int
    dim: int = 3

    @property
    def h(self):
        return 1.0 / self.intervals


@dataclass(frozen=True, eq=False)
class DiscreteProblem:
    A: sp.csr_matrix
    M: sp.csr_matrix | None
    f: np.ndarray
    lam: float
    norm: NormDescriptor
    family: str = "custom"
    params: dict = field(default_factory=dict)
    exact: Callable[[], np.ndarray] | None = None
    discrete_exact: Callable[[], np.ndarray] | None = None
    grid: CubeGrid | None = None
    zero_mean: bool = False

    def __post_init__(self):
        if not self.lam > 0:
            raise InvalidArgument(f"spectral bound must be positive, got {self.lam}")
        if not np.all(np.isfinite(self.f)):
            raise InvalidArgument("load vector has non-finite entries")
        if self.f.shape != (self.A.shape[0],):
            raise InvalidArgument(f"load has shape {self.f.shape}, expected ({self.A.shape[0]},)")

    @property
    def size(self):
        return self.A.shape[0]

    @cached_property
    def scaled_A(self):
        """Stiffness divided by the spectral bound, so the spectrum of (A, M) lies in (0, 1]."""
        return as_csr(self.A / self.lam)

    def with_load(self, f):
        """Same operator, different right-hand side (exact solutions dropped)."""
        return DiscreteProblem(self.A, self.M, np.asarray(f, dtype=np.float64), self.lam, self.norm,
                               self.family, dict(self.params), None, None, self.grid, self.zero_mean)

    def with_bound(self, lam):
        return DiscreteProblem(self.A, self.M, self.f, float(lam), self.norm, self.family,
                               dict(self.params), self.exact, self.discrete_exact, self.grid,
                               self.zero_mean)


def _check_level(level, lo):
    if not isinstance(level, (int, np.integer)) or not lo <= level <= MAX_LEVEL:
        raise InvalidArgument(f"level must be an integer in [{lo}, {MAX_LEVEL}], got {level!r}")


# -- cube ---------------------------------------------------------------------

def laplacian_fd(k_intervals, dim=3):
    """``dim``-dimensional 7-point (for dim=3) Dirichlet Laplacian on the interior nodes, scaled by 1/h^2."""
    n = k_intervals - 1
    h = 1.0 / k_intervals
    T = sp.diags([-np.ones(n - 1), 2 * np.ones(n), -np.ones(n - 1)], [-1, 0, 1], format="csr") / h**2
    I = sp.identity(n, format="csr")
    A = T
    for _ in range(dim - 1):
        A = sp.kron(I, A) + sp.kron(T, sp.identity(A.shape[0]))
    return as_csr(A)


def cube_nodes(k_intervals):
    """Interior node coordinates ordered with x fastest, then y, then z."""
    x = np.arange(1, k_intervals) / k_intervals
    Z, Y, X = np.meshgrid(x, x, x, indexing="ij")
    return X.ravel(), Y.ravel(), Z.ravel()


def cube_eigenvalue(h):
    """Discrete eigenvalue of sin(pi x) sin(pi y) sin(pi z) under the 7-point stencil."""
    return 3.0 * (2.0 - 2.0 * math.cos(math.pi * h)) / h**2


def cube_fd(level):
    """Fractional Laplacian on the unit cube, ``K = 2**(level + 2)`` intervals per axis.

    The exact solution is ``sin(pi x) sin(pi y) sin(pi z)`` with load
    ``sqrt(3 pi^2)`` times the same function; the sampled mode is an exact
    eigenvector of the stencil, so the discrete fractional solution is known
    in closed form.
    """
    _check_level(level, 0)
    K = 2 ** (level + 2)
    h = 1.0 / K
    A = laplacian_fd(K)
    X, Y, Z = cube_nodes(K)
    mode = np.sin(np.pi * X) * np.sin(np.pi * Y) * np.sin(np.pi * Z)
    lam_h = cube_eigenvalue(h)
    f = math.sqrt(3 * math.pi**2) * mode
    return DiscreteProblem(
        A=A, M=None, f=f, lam=20.0 / h**2, norm=NormDescriptor.scaled(h**1.5),
        family="cube", params={"level": level, "intervals": K, "h": h},
        exact=lambda: mode.copy(),
        discrete_exact=lambda: math.sqrt(3 * math.pi**2 / lam_h) * mode,
        grid=CubeGrid(K))


# -- sphere -------------------------------------------------------------------

@dataclass(frozen=True)
class SurfaceMesh:
    vertices: np.ndarray   # (NV, 3), on the unit sphere
    triangles: np.ndarray  # (NT, 3), counter-clockwise seen from outside

    @property
    def areas(self):
        v = self.vertices[self.triangles]
        return 0.5 * np.linalg.norm(np.cross(v[:, 1] - v[:, 0], v[:, 2] - v[:, 0]), axis=1)

    def edges(self):
        e = np.sort(self.triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2), axis=1)
        return np.unique(e, axis=0)


def octahedron():
    v = np.array([[1, 0, 0], [-1, 0, 0], [0, 1, 0], [0, -1, 0], [0, 0, 1], [0, 0, -1]], float)
    t = np.array([[0, 2, 4], [2, 1, 4], [1, 3, 4], [3, 0, 4],
                  [2, 0, 5], [1, 2, 5], [3, 1, 5], [0, 3, 5]])
    return SurfaceMesh(v, t)


def red_refine(mesh):
    """Split every triangle into four, pushing new edge midpoints onto the unit sphere."""
    tri = mesh.triangles
    nv = mesh.vertices.shape[0]
    pairs = np.sort(tri[:, [1, 2, 2, 0, 0, 1]].reshape(-1, 3, 2), axis=2)  # edge opposite each corner
    flat = pairs.reshape(-1, 2)
    edges, inverse = np.unique(flat, axis=0, return_inverse=True)
    mid = mesh.vertices[edges[:, 0]] + mesh.vertices[edges[:, 1]]
    mid /= np.linalg.norm(mid, axis=1, keepdims=True)
    m = nv + inverse.reshape(-1, 3)     # m[:, k] = midpoint opposite corner k
    a, b, c = tri[:, 0], tri[:, 1], tri[:, 2]
    ma, mb, mc = m[:, 0], m[:, 1], m[:, 2]
    new = np.concatenate([np.stack([a, mc, mb], 1), np.stack([mc, b, ma], 1),
                          np.stack([mb, ma, c], 1), np.stack([ma, mb, mc], 1)])
    return SurfaceMesh(np.vstack([mesh.vertices, mid]), new)


def sphere_mesh(level):
    mesh = octahedron()
    for _ in range(level):
        mesh = red_refine(mesh)
    return mesh


def p1_matrices(mesh):
    """Cotangent stiffness and consistent mass of P1 elements on the flat triangles."""
    v = mesh.vertices[mesh.triangles]
    # edge opposite corner k
    e = np.stack([v[:, 2] - v[:, 1], v[:, 0] - v[:, 2], v[:, 1] - v[:, 0]], axis=1)
    area = 0.5 * np.linalg.norm(np.cross(e[:, 0], e[:, 1]), axis=1)
    K = np.einsum("tid,tjd->tij", e, e) / (4.0 * area)[:, None, None]
    local_mass = (np.ones((3, 3)) + np.eye(3)) / 12.0
    Mloc = area[:, None, None] * local_mass[None]
    rows = np.repeat(mesh.triangles, 3, axis=1).ravel()
    cols = np.tile(mesh.triangles, (1, 3)).ravel()
    n = mesh.vertices.shape[0]
    A = sp.csr_matrix((K.ravel(), (rows, cols)), shape=(n, n))
    M = sp.csr_matrix((Mloc.ravel(), (rows, cols)), shape=(n, n))
    return as_csr(A), as_csr(M)


def sphere_fem(level):
    """Fractional Laplace-Beltrami problem on the unit sphere with exact solution x + 2y + 3z."""
    _check_level(level, 0)
    mesh = sphere_mesh(level)
    A, M = p1_matrices(mesh)
    x, y, z = mesh.vertices.T
    u = x + 2 * y + 3 * z
    f = M @ (math.sqrt(2.0) * u)
    h2 = float(mesh.areas.min())
    return DiscreteProblem(
        A=A, M=M, f=f, lam=14.0 / h2, norm=NormDescriptor.mass_weighted(M),
        family="sphere", params={"level": level, "vertices": mesh.vertices.shape[0], "h2": h2},
        exact=lambda: u.copy(), zero_mean=True)


def zero_mean_shift(problem, u):
    """Remove the M-weighted mean: ``u - (1^T M u / 1^T M 1) 1``."""
    if not problem.zero_mean:
        raise UnsupportedConfiguration(f"zero-mean shift applies to the sphere family, not {problem.family}")
    ones = np.ones(problem.size)
    Mones = mass_apply(problem.M, ones)
    return u - (Mones @ u) / (Mones @ ones)


# -- graph --------------------------------------------------------------------

def _decode_pairs(k):
    """Map linear indices over the strict lower triangle to (row, col), row > col."""
    k = np.asarray(k, dtype=np.int64)
    i = ((np.sqrt(8.0 * k + 1.0) + 1.0) // 2).astype(np.int64)
    # repair float rounding at triangular-number boundaries
    i = np.where(i * (i - 1) // 2 > k, i - 1, i)
    i = np.where((i + 1) * i // 2 <= k, i + 1, i)
    j = k - i * (i - 1) // 2
    return i, j


def graph_random(n, avg_degree=5.0, seed=0):
    """Weighted random graph Laplacian shifted by I/n.

    Each unordered vertex pair becomes an edge with probability ``avg_degree/n``
    and weight uniform in (0, 1); the edge count is drawn from the matching
    binomial and the pairs are drawn without replacement, which has the same
    law as independent coin flips but scales to large ``n``.
    """
    if not isinstance(n, (int, np.integer)) or n < 16:
        raise InvalidArgument(f"graph size must be an integer >= 16, got {n!r}")
    rng = np.random.default_rng(seed)
    n_pairs = n * (n - 1) // 2
    n_edges = int(rng.binomial(n_pairs, min(1.0, avg_degree / n)))
    picks = np.sort(rng.choice(n_pairs, size=n_edges, replace=False))
    i, j = _decode_pairs(picks)
    w = rng.uniform(0.0, 1.0, size=n_edges)
    W = sp.coo_matrix((np.concatenate([w, w]), (np.concatenate([i, j]), np.concatenate([j, i]))),
                      shape=(n, n)).tocsr()
    L = sp.diags(np.asarray(W.sum(axis=1)).ravel()) - W
    A = as_csr(L + sp.identity(n) / n)
    f = rng.standard_normal(n)
    lam = float(abs(A).sum(axis=1).max())
    return DiscreteProblem(A=A, M=None, f=f, lam=lam, norm=NormDescriptor.euclidean(),
                           family="graph", params={"n": n, "seed": seed, "edges": n_edges})


# -- user input ---------------------------------------------------------------

def custom_problem(A, f, lam, M=None):
    A = as_csr(A)
    if not is_symmetric(A):
        raise InvalidArgument("stiffness matrix must be symmetric")
    if M is not None:
        M = as_csr(M)
        if not is_symmetric(M):
            raise InvalidArgument("mass matrix must be symmetric")
    nd = NormDescriptor.euclidean() if M is None else NormDescriptor.mass_weighted(M)
    return DiscreteProblem(A=A, M=M, f=np.asarray(f, dtype=np.float64), lam=float(lam), norm=nd,
                           family="custom", params={"n": A.shape[0]})


def build_problem(family, level=None, n=None, seed=0):
    if family == "cube":
        return cube_fd(2 if level is None else level)
    if family == "sphere":
        return sphere_fem(5 if level is None else level)
    if family == "graph":
        return graph_random(4096 if n is None else n, seed=seed)
    raise InvalidArgument(f"unknown problem family {family!r}")


def discretization_error(problem, u_num):
    """Distance to the sampled exact solution and, for the cube, to the closed-form discrete one."""
    if problem.exact is None:
        raise UnsupportedConfiguration(f"{problem.family} problem has no exact solution")
    to_exact = norm(u_num - problem.exact(), problem.norm)
    to_discrete = None
    if problem.discrete_exact is not None:
        to_discrete = norm(u_num - problem.discrete_exact(), problem.norm)
    return to_exact, to_discrete
