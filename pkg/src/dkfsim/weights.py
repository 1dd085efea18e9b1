"""Covariance-intersection weight strategies for the local fusion stage.

The adaptive strategy looks for simplex weights ``w`` whose information gain
over the constant weights ``a``,

    Delta(w) = sum_j (w_j - a_j) P_j^{-1},

is positive definite, and among those minimizes ``tr(Delta(w)^{-1})``.
Equivalently (by a Schur complement) one can minimize ``tr(M)`` subject to
``[[Delta, I], [I, M]] > 0``; we solve the trace-of-inverse form directly by
projected gradient and use the block LMI only as a certificate.
"""

from dataclasses import dataclass, field
import logging

import numpy as np
from scipy.optimize import linprog

from .linalg import min_eig

log = logging.getLogger(__name__)

FEAS_RTOL = 1e-10


class WeightContractError(ValueError):
    """Weights off the simplex or with support outside the neighbor set."""


@dataclass
class DeltaMatrix:
    delta: np.ndarray
    feasible: bool


@dataclass
class WeightSolution:
    w: np.ndarray
    objective: float
    start_objective: float
    iterations: int
    n_feasible_probes: int
    certificate: bool = True

    fallback = False


@dataclass
class Fallback:
    """No feasible adaptive weights; fusion keeps the constant weights ``a``."""
    w: np.ndarray
    reason: str
    iterations: int = 0
    n_feasible_probes: int = 0

    fallback = True
    objective = np.inf


def _scale(infos):
    n = infos.shape[-1]
    return float(max(np.trace(P) for P in infos)) / n


def delta(w, a, infos, rtol=FEAS_RTOL) -> DeltaMatrix:
    """``sum_j (w_j - a_j) P_j^{-1}`` and whether it is positive definite.

    Feasibility means ``Delta - rtol * scale * I`` has a Cholesky factor, with
    ``scale`` the largest ``tr(P_j^{-1}) / n``.
    """
    w = np.asarray(w, dtype=float)
    a = np.asarray(a, dtype=float)
    infos = np.asarray(infos, dtype=float)
    if not (len(w) == len(a) == len(infos)):
        raise ValueError("w, a and infos must have one entry per neighbor")
    D = np.tensordot(w - a, infos, axes=1)
    D = 0.5 * (D + D.T)
    return DeltaMatrix(D, _chol_inv(D, rtol * _scale(infos)) is not None)


def _chol_inv(D, shift):
    n = len(D)
    try:
        np.linalg.cholesky(D - shift * np.eye(n))
        L = np.linalg.cholesky(D)
    except np.linalg.LinAlgError:
        return None
    Linv = np.linalg.solve(L, np.eye(n))
    return Linv.T @ Linv


def project_simplex(v):
    """Euclidean projection onto ``{w >= 0, sum w = 1}`` (sort-based)."""
    v = np.asarray(v, dtype=float)
    u = np.sort(v)[::-1]
    css = np.cumsum(u) - 1.0
    idx = np.arange(1, len(v) + 1)
    rho = np.nonzero(u - css / idx > 0)[0][-1]
    theta = css[rho] / (rho + 1.0)
    w = np.maximum(v - theta, 0.0)
    return w / w.sum()


def lmi_certificate(D) -> bool:
    """Check ``[[D, I], [I, M]] > 0`` for a diagonal slack ``M``.

    ``M`` takes the absolute row sums of ``D^{-1}`` plus a relative 1e-9 margin,
    which makes ``M - D^{-1}`` diagonally dominant, so the block matrix is PD
    whenever ``D`` is. The block is diagonally rescaled (a congruence) before
    the Cholesky test.
    """
    n = len(D)
    try:
        Dinv = np.linalg.inv(D)
    except np.linalg.LinAlgError:
        return False
    absinv = np.abs(Dinv)
    M = np.diag(absinv.sum(axis=1) + 1e-9 * max(1.0, absinv.max()))
    block = np.block([[D, np.eye(n)], [np.eye(n), M]])
    d = np.diag(block)
    if (d <= 0).any():
        return False
    s = 1.0 / np.sqrt(d)
    block = s[:, None] * block * s[None, :]
    try:
        np.linalg.cholesky(0.5 * (block + block.T))
    except np.linalg.LinAlgError:
        return False
    return True


class _Problem:
    def __init__(self, a, infos, rtol):
        self.a = np.asarray(a, dtype=float)
        self.infos = np.asarray(infos, dtype=float)
        self.base = np.tensordot(self.a, self.infos, axes=1)
        self.shift = rtol * _scale(self.infos)
        self.evals = 0

    def delta(self, w):
        D = np.tensordot(w, self.infos, axes=1) - self.base
        return 0.5 * (D + D.T)

    def value(self, w):
        """``(f, Delta^{-1})`` or ``(inf, None)`` outside the feasible set."""
        self.evals += 1
        Dinv = _chol_inv(self.delta(w), self.shift)
        if Dinv is None:
            return np.inf, None
        return float(np.trace(Dinv)), Dinv

    def grad(self, Dinv):
        return -np.tensordot(self.infos, Dinv @ Dinv, axes=([1, 2], [1, 0]))


def _feasibility_cuts(prob, probes, max_iter=200):
    """Cutting-plane search for ``w`` with ``Delta(w) > 0``.

    For any unit ``v``, ``lambda_min(Delta(w)) <= v^T Delta(w) v`` and the
    right side is linear in ``w``, so eigenvectors collected along the way
    give an LP whose optimum bounds ``max_w lambda_min`` from above. Returns
    a feasible ``w``, or None once that bound drops to the tolerance.
    """
    d = len(prob.a)
    cuts = []

    def add_cuts(w):
        ev, V = np.linalg.eigh(prob.delta(w))
        for v in V.T:
            cuts.append((np.einsum("a,jab,b->j", v, prob.infos, v), v @ prob.base @ v))
        return ev[0]

    for p in probes:
        add_cuts(p)
    bounds = [(0.0, 1.0)] * d + [(None, None)]
    c = np.zeros(d + 1)
    c[-1] = -1.0
    A_eq = np.append(np.ones(d), 0.0)[None, :]
    for _ in range(max_iter):
        G = np.array([np.append(-g, 1.0) for g, _ in cuts])
        h = np.array([-b for _, b in cuts])
        res = linprog(c, A_ub=G, b_ub=h, A_eq=A_eq, b_eq=[1.0], bounds=bounds,
                      method="highs")
        if res.status != 0 or -res.fun <= prob.shift:
            return None
        w = project_simplex(res.x[:d])
        if add_cuts(w) > prob.shift and np.isfinite(prob.value(w)[0]):
            return w
    return None


def solve_adaptive(a, infos, tol=1e-8, max_iter=200, n_probes=32, seed=0,
                   rtol=FEAS_RTOL):
    """Minimize ``tr(Delta(w)^{-1})`` over simplex weights with ``Delta(w) > 0``.

    ``a`` is the constant-weight row restricted to the neighbors and
    ``infos`` the matching information matrices ``P_j^{-1}``. Returns a
    :class:`WeightSolution`, or :class:`Fallback` (carrying ``w = a``) when no
    feasible start is found or the LMI certificate fails.
    Deterministic for fixed inputs and settings.
    """
    a = np.asarray(a, dtype=float)
    d = len(a)
    if d == 1:
        return Fallback(a.copy(), "single neighbor")
    prob = _Problem(a, infos, rtol)

    rng = np.random.Generator(np.random.Philox(seed))
    probes = np.vstack([np.eye(d), rng.dirichlet(np.ones(d), size=n_probes)])
    vals = [prob.value(p)[0] for p in probes]
    n_feas = int(np.isfinite(vals).sum())
    if n_feas:
        w = probes[int(np.argmin(vals))]
    else:
        w = _feasibility_cuts(prob, probes)
        if w is None:
            return Fallback(a.copy(), "no feasible probe", n_feasible_probes=0)

    f, Dinv = prob.value(w)
    f0 = f
    g = prob.grad(Dinv)
    t = 1.0 / max(np.linalg.norm(g), 1e-300)
    it = 0
    for it in range(1, max_iter + 1):
        while True:
            w_new = project_simplex(w - t * g)
            f_new, Dinv_new = prob.value(w_new)
            step = w_new - w
            if np.isfinite(f_new) and f_new <= f + g @ step + step @ step / (2 * t):
                break
            t *= 0.5
            if t < 1e-30:
                f_new, step = f, np.zeros(d)
                break
        if not step.any():
            break
        g_new = prob.grad(Dinv_new)
        sy = step @ (g_new - g)
        t = (step @ step) / sy if sy > 0 else 2 * t
        done = abs(f - f_new) <= tol * abs(f)
        w, f, g = w_new, f_new, g_new
        if done:
            break

    D = prob.delta(w)
    if not lmi_certificate(D):
        log.warning("LMI certificate failed at w=%s; keeping constant weights", w)
        return Fallback(a.copy(), "certificate failed", it, n_feas)
    return WeightSolution(w, f, f0, it, n_feas)


def oracle_scan(a, infos, n_samples=1000, seed=0, rtol=FEAS_RTOL):
    """Brute-force reference: best ``tr(Delta^{-1})`` over vertices and
    Dirichlet samples. Returns ``(w_best, f_best)``; ``f_best`` is ``inf``
    when no sample is feasible."""
    a = np.asarray(a, dtype=float)
    infos = np.asarray(infos, dtype=float)
    d = len(a)
    rng = np.random.default_rng(seed)
    pts = np.vstack([np.eye(d), rng.dirichlet(np.ones(d), size=n_samples)])
    base = np.tensordot(a, infos, axes=1)
    shift = rtol * _scale(infos)
    best = (None, np.inf)
    for p in pts:
        ev = np.linalg.eigvalsh(np.tensordot(p, infos, axes=1) - base)
        if ev[0] > shift:
            f = float(np.sum(1.0 / ev))
            if f < best[1]:
                best = (p, f)
    return best


def fused_p_order_check(P_w, P_a) -> float:
    """Minimum eigenvalue of ``P_a - P_w``; nonnegative when adaptive fusion dominates."""
    return min_eig(np.asarray(P_a) - np.asarray(P_w))


class ConstantWeights:
    kind = "constant"

    def __call__(self, a, infos):
        return WeightSolution(np.asarray(a, dtype=float).copy(), np.nan, np.nan, 0, 0)

    def __repr__(self):
        return "ConstantWeights()"


@dataclass
class AdaptiveWeights:
    tol: float = 1e-8
    max_iter: int = 200
    n_probes: int = 32
    seed: int = 0
    kind: str = field(default="adaptive", init=False)

    def __call__(self, a, infos):
        return solve_adaptive(a, infos, self.tol, self.max_iter, self.n_probes, self.seed)


def check_simplex(w, atol=1e-10):
    w = np.asarray(w)
    if (w < -atol).any() or abs(w.sum() - 1.0) > atol:
        raise WeightContractError(f"weights {w} are not on the simplex")


def make_strategy(kind: str, **settings):
    if kind == "constant":
        return ConstantWeights()
    if kind == "adaptive":
        return AdaptiveWeights(**settings)
    raise ValueError(f"unknown weight strategy {kind!r}")
