"""State-transition products and the stacked observability Gramian."""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from .model import SensorModel, SystemModel


@dataclass
class GramianReport:
    window_start: int
    window: int
    gramian: np.ndarray
    alpha_hat: float
    beta_hat: float

    @property
    def cond(self) -> float:
        return self.beta_hat / self.alpha_hat if self.alpha_hat > 0 else np.inf


@dataclass
class UCOResult:
    ok: bool
    worst_k: int
    alpha_min: float
    beta_max: float
    reports: list


def transition(model: SystemModel, j: int, k: int) -> np.ndarray:
    """``A_{j-1} ... A_k``, the identity when ``j == k``."""
    if j < k:
        raise ValueError(f"transition needs j >= k, got j={j}, k={k}")
    Phi = np.eye(model.state_dim)
    for t in range(k, j):
        Phi = model.A(t) @ Phi
    return Phi


def stack(sensors: Sequence[SensorModel], k: int):
    """Stacked observation matrix and block-diagonal noise covariance at step ``k``."""
    H = np.vstack([s.H(k) for s in sensors])
    R = la.block_diag(*[s.R(k) for s in sensors])
    return H, R


def gramian(model: SystemModel, sensors: Sequence[SensorModel], k: int,
            window: int) -> GramianReport:
    n = model.state_dim
    G = np.zeros((n, n))
    Phi = np.eye(n)
    for j in range(k, k + window + 1):
        H, R = stack(sensors, j)
        C = H @ Phi
        G += C.T @ la.solve(R, C, assume_a="pos")
        Phi = model.A(j) @ Phi
    G = 0.5 * (G + G.T)
    ev = np.linalg.eigvalsh(G)
    return GramianReport(k, window, G, float(max(ev[0], 0.0)), float(ev[-1]))


def check_uco(model: SystemModel, sensors: Sequence[SensorModel], window: int,
              k_range, alpha: Optional[float] = None,
              beta: Optional[float] = None) -> UCOResult:
    """Sweep Gramian windows starting at every ``k`` in ``k_range``.

    Without a declared ``alpha`` the lower bound must merely be positive
    (relative to ``beta_hat``, at 1e-12).
    """
    reports = [gramian(model, sensors, k, window) for k in k_range]
    alphas = np.array([r.alpha_hat for r in reports])
    betas = np.array([r.beta_hat for r in reports])
    worst = int(np.argmin(alphas))
    lo = alpha if alpha is not None else 1e-12 * max(betas.max(), 1.0)
    ok = alphas.min() >= lo if alpha is not None else alphas.min() > lo
    if beta is not None:
        ok = ok and betas.max() <= beta
    return UCOResult(bool(ok), reports[worst].window_start, float(alphas.min()),
                     float(betas.max()), reports)


def smallest_uco_window(model, sensors, k_range, max_window=24, alpha=None):
    """Smallest window in ``1..max_window`` passing :func:`check_uco`, or None."""
    for w in range(1, max_window + 1):
        if check_uco(model, sensors, w, k_range, alpha).ok:
            return w
    return None


def invertible_window_gramian(model, sensors, k, window):
    """Gramian mapped back to the window's end state through inverse transitions.

    Diagnostic only. Requires every ``A`` in the window to be invertible;
    returns ``(matrix, min_eig)``.
    """
    n = model.state_dim
    end = k + window
    G = np.zeros((n, n))
    for j in range(k, end + 1):
        H, R = stack(sensors, j)
        # x_j = Phi(end, j)^{-1} x_end
        Back = la.solve(transition(model, end, j), np.eye(n))
        C = H @ Back
        G += C.T @ la.solve(R, C, assume_a="pos")
    G = 0.5 * (G + G.T)
    return G, float(np.linalg.eigvalsh(G)[0])
