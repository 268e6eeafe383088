"""Preconditioned conjugate gradients that keep their search directions.

:func:`pcg` follows the textbook recurrence with zero (or shifted) initial guess
and returns every direction ``p_k`` together with its energy
``l_k = p_k^T (A + d M) p_k``; those directions are the raw material of the
reduced basis. :func:`cg_solve` is the lean variant used for inner solves and
high-fidelity reference solutions.
"""

import logging
from dataclasses import dataclass, field

import numpy as np

from .sparse import shifted_apply

log = logging.getLogger(__name__)

MAX_ITERS = "max_iters"
TOL_REACHED = "tol_reached"
BREAKDOWN = "breakdown"


def _identity(r):
    return r.copy()


def _as_apply(B):
    if B is None:
        return _identity
    return B.apply if hasattr(B, "apply") else B


@dataclass
class PcgResult:
    x: np.ndarray
    directions: np.ndarray           # N x k, un-normalized
    energies: np.ndarray             # l_k = p_k^T A_d p_k
    alphas: np.ndarray
    betas: np.ndarray
    residual_norms: np.ndarray       # ||r_0||, ||r_1||, ...
    reason: str
    iterates: list = field(default_factory=list)

    @property
    def iterations(self):
        return self.directions.shape[1]


def pcg(A, b, B=None, *, M=None, d=0.0, max_iters=10, tol=None, x0=None,
        keep_iterates=False, reorthogonalize=False):
    """Run PCG on ``(A + d M) x = b`` for at most ``max_iters`` steps.

    Each step consumes one direction, so ``k`` steps leave ``p_0 .. p_{k-1}``.
    Stops early when ``||r_k|| <= tol * ||b||`` (if ``tol`` is given), when the
    residual is exactly zero, or on breakdown, i.e. a non-positive ``r^T z`` or ``p^T A_d p``; a breakdown is
    reported through ``reason`` with the history gathered so far.

    With ``reorthogonalize`` every new direction is made ``A_d``-conjugate to
    all earlier ones (two Gram-Schmidt passes) and the step length becomes the
    exact line search ``p^T r / p^T A_d p``. In exact arithmetic nothing
    changes; in floating point it keeps the directions conjugate after Ritz
    values have converged, which plain PCG does not.
    """
    precond = _as_apply(B)
    b = np.asarray(b, dtype=np.float64)
    n = b.shape[0]
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - shifted_apply(A, M, d, x) if x0 is not None else b.copy()
    bnorm = float(np.linalg.norm(b))

    directions, energies, alphas, betas = [], [], [], []
    images = []      # A_d p_k, kept only for reorthogonalization
    rnorms = [float(np.linalg.norm(r))]
    iterates = [x.copy()] if keep_iterates else []

    def result(reason):
        P = np.column_stack(directions) if directions else np.zeros((n, 0))
        return PcgResult(x, P, np.array(energies), np.array(alphas), np.array(betas),
                         np.array(rnorms), reason, iterates)

    if rnorms[0] == 0.0:
        return result(TOL_REACHED)
    if max_iters < 1:
        return result(MAX_ITERS)

    z = precond(r)
    rz = float(r @ z)
    if rz <= 0:
        return result(BREAKDOWN)
    p = z
    Ap = shifted_apply(A, M, d, p)
    energy = float(p @ Ap)
    if energy <= 0:
        return result(BREAKDOWN)

    for k in range(1, max_iters + 1):
        directions.append(p)
        energies.append(energy)
        alpha = float(p @ r) / energy if reorthogonalize else rz / energy
        if reorthogonalize:
            images.append(Ap)
        alphas.append(alpha)
        x = x + alpha * p
        r = r - alpha * Ap
        rnorms.append(float(np.linalg.norm(r)))
        if keep_iterates:
            iterates.append(x.copy())
        if rnorms[-1] == 0.0 or (tol is not None and rnorms[-1] <= tol * bnorm):
            return result(TOL_REACHED)
        if k == max_iters:
            break
        z = precond(r)
        rz_new = float(r @ z)
        if rz_new <= 0:
            log.warning("PCG breakdown at step %d: r^T z = %.3e", k, rz_new)
            return result(BREAKDOWN)
        beta = rz_new / rz
        betas.append(beta)
        rz = rz_new
        p = z + beta * p
        if reorthogonalize:
            p = _conjugate(p, directions, images, energies)
        Ap = shifted_apply(A, M, d, p)
        energy = float(p @ Ap)
        if energy <= 0:
            log.warning("PCG breakdown at step %d: p^T A p = %.3e", k, energy)
            return result(BREAKDOWN)
    return result(MAX_ITERS)


def _conjugate(p, directions, images, energies):
    P = np.column_stack(directions)
    AP = np.column_stack(images)
    scale = np.asarray(energies)
    for _ in range(2):
        p = p - P @ ((AP.T @ p) / scale)
    return p


@dataclass
class SolveInfo:
    iterations: int
    converged: bool
    relative_residual: float


def cg_solve(apply_op, b, precond=None, tol=1e-12, maxiter=10000, x0=None):
    """Plain PCG without history; returns ``(x, SolveInfo)``.

    ``apply_op`` is any callable computing the SPD matrix-vector product.
    Convergence is declared on the recursively updated residual.
    """
    precond = _as_apply(precond)
    b = np.asarray(b, dtype=np.float64)
    bnorm = float(np.linalg.norm(b))
    if bnorm == 0.0:
        return np.zeros_like(b), SolveInfo(0, True, 0.0)
    x = np.zeros_like(b) if x0 is None else np.array(x0, dtype=np.float64)
    r = b - apply_op(x) if x0 is not None else b.copy()
    z = precond(r)
    p = z.copy()
    rz = float(r @ z)
    target = tol * bnorm
    rnorm = float(np.linalg.norm(r))
    k = 0
    while rnorm > target and k < maxiter:
        Ap = apply_op(p)
        pAp = float(p @ Ap)
        if pAp <= 0 or rz <= 0:
            break
        alpha = rz / pAp
        x += alpha * p
        r -= alpha * Ap
        rnorm = float(np.linalg.norm(r))
        k += 1
        if rnorm <= target:
            break
        z = precond(r)
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    converged = rnorm <= target
    if not converged:
        log.warning("CG stopped after %d iterations at relative residual %.3e", k, rnorm / bnorm)
    return x, SolveInfo(k, converged, rnorm / bnorm)
