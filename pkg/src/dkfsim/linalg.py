"""Small dense SPD helpers shared by the filters and the weight solver."""

import logging

import numpy as np
import scipy.linalg as la

log = logging.getLogger(__name__)


class NumericalError(ArithmeticError):
    """A covariance that must be positive definite is not."""


def symmetrize(P):
    return 0.5 * (P + np.swapaxes(P, -1, -2))


def cholesky(P, what="matrix"):
    """Lower Cholesky factor of ``P``.

    On failure, retries once with a jitter of ``1e-12 * tr(P) / n`` on the
    diagonal and logs the event. Raises :class:`NumericalError` if that
    also fails.
    """
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        return la.cholesky(P, lower=True)
    except la.LinAlgError:
        pass
    n = P.shape[0]
    jitter = 1e-12 * max(np.trace(P), 0.0) / n
    if jitter > 0:
        log.warning("cholesky of %s failed; retrying with jitter %.3g", what, jitter)
        try:
            return la.cholesky(P + jitter * np.eye(n), lower=True)
        except la.LinAlgError:
            pass
    raise NumericalError(f"{what} is not positive definite "
                         f"(min eig {np.linalg.eigvalsh(P).min():.3g})")


def is_pd(P, shift=0.0):
    """True if ``P - shift*I`` admits a Cholesky factorization."""
    P = symmetrize(np.asarray(P, dtype=float))
    try:
        np.linalg.cholesky(P - shift * np.eye(P.shape[0]))
    except np.linalg.LinAlgError:
        return False
    return True


def spd_inv(P, what="matrix"):
    L = cholesky(P, what)
    Linv = la.solve_triangular(L, np.eye(L.shape[0]), lower=True)
    return symmetrize(Linv.T @ Linv)


def spd_solve(P, B, what="matrix"):
    """Solve ``P X = B`` for SPD ``P``."""
    L = cholesky(P, what)
    return la.cho_solve((L, True), B)


def min_eig(P):
    return float(np.linalg.eigvalsh(symmetrize(np.asarray(P, dtype=float)))[0])
