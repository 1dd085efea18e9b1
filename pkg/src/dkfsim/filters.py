"""Kalman predict/update kernels and the three network filters.

* ``ckf``: centralized Kalman filter on the stacked measurement model.
* ``table1``: networked filter with optimal local gains and the full
  cross-covariance table between sensors. Fusion matrices default to the
  trace-minimizing choice given that table (``fusion="optimal"``);
  ``fusion="scalar"`` uses ``W_ij = a_ij I``.
* ``cdkf``: consistent distributed filter fusing neighbors' updates by
  covariance intersection with constant or adaptive weights.

Estimates may carry leading batch axes (Monte Carlo trials). Covariances,
gains and fusion weights never depend on the measurements, so they are
computed once per step and shared by the whole batch.
"""

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np
import scipy.linalg as la

from .linalg import spd_inv, spd_solve, symmetrize
from .model import SensorModel, SystemModel
from .observability import stack
from .topology import NetworkTopology
from .weights import ConstantWeights, check_simplex, make_strategy


@dataclass
class NodeEstimate:
    x_hat: np.ndarray
    P: np.ndarray
    k: int = 0
    sensor_id: int = 0


@dataclass
class PredictedEstimate:
    x_bar: np.ndarray
    P_bar: np.ndarray


@dataclass
class UpdatedEstimate:
    phi: np.ndarray
    P_tilde: np.ndarray
    K: np.ndarray
    info: np.ndarray    # P_tilde^{-1}, factored once and reused by the fusion


@dataclass
class NetworkState:
    """Per-sensor estimates at step ``k``.

    ``x_hat`` has shape ``(..., N, n)``, ``P`` has shape ``(N, n, n)``.
    ``cross`` holds the ``(N, N, n, n)`` table ``P_{k,i,j}`` and is only
    used by the ``table1`` filter.
    """
    k: int
    x_hat: np.ndarray
    P: np.ndarray
    cross: Optional[np.ndarray] = None

    def node(self, i: int) -> NodeEstimate:
        return NodeEstimate(self.x_hat[..., i, :], self.P[i], self.k, i)

    @property
    def N(self):
        return self.P.shape[0]


def predict(est: NodeEstimate, A, Q) -> PredictedEstimate:
    return PredictedEstimate(est.x_hat @ A.T, symmetrize(A @ est.P @ A.T + Q))


def update(pred: PredictedEstimate, y, H, R) -> UpdatedEstimate:
    """Measurement update ``P~ = (I - K H) P-``, ``K = P- H^T S^{-1}``."""
    P_bar = pred.P_bar
    n = P_bar.shape[0]
    HP = H @ P_bar
    S = symmetrize(HP @ H.T + R)
    K = spd_solve(S, HP, "innovation covariance").T
    innov = np.asarray(y, dtype=float) - pred.x_bar @ H.T
    phi = pred.x_bar + innov @ K.T
    P_tilde = symmetrize((np.eye(n) - K @ H) @ P_bar)
    return UpdatedEstimate(phi, P_tilde, K, spd_inv(P_tilde, "updated covariance"))


def ci_fuse(neighbors: Sequence[UpdatedEstimate], w):
    """Covariance-intersection fusion of the neighbors' updates.

    Returns ``(x_hat, P)`` with ``P = (sum w_j P~_j^{-1})^{-1}``.
    """
    check_simplex(w)
    Y = sum(wj * nb.info for wj, nb in zip(w, neighbors))
    P = spd_inv(Y, "fused information")
    z = sum(wj * (nb.phi @ nb.info) for wj, nb in zip(w, neighbors))
    return z @ P, P


def init_network(P0, N: int, batch_shape=(), inflation: float = 1.0,
                 with_cross: bool = False) -> NetworkState:
    P0 = np.asarray(P0, dtype=float) * inflation
    n = P0.shape[0]
    P = np.broadcast_to(P0, (N, n, n)).copy()
    cross = np.broadcast_to(P0, (N, N, n, n)).copy() if with_cross else None
    return NetworkState(0, np.zeros(tuple(batch_shape) + (N, n)), P, cross)


def cdkf_step(net: NetworkState, measurements, model: SystemModel,
              sensors: Sequence[SensorModel], topology: NetworkTopology,
              strategy=None, weight_log: Optional[list] = None) -> NetworkState:
    """One predict / update / CI-fuse step of the consistent distributed filter.

    ``measurements[i]`` is sensor ``i``'s observation at step ``net.k + 1``.
    Each node's fusion sees only its neighbors' ``(phi, P~)`` pairs, and
    fusion starts after every node has published its update.
    """
    strategy = strategy or ConstantWeights()
    k = net.k + 1
    A, Q = model.A(k - 1), model.Q(k - 1)
    updates = []
    for i, s in enumerate(sensors):
        pred = predict(net.node(i), A, Q)
        updates.append(update(pred, measurements[i], s.H(k), s.R(k)))

    x_new = np.empty_like(net.x_hat)
    P_new = np.empty_like(net.P)
    for i in range(net.N):
        nbrs = topology.neighbors(i)
        a = topology.adjacency[i, nbrs]
        sol = strategy(a, [updates[j].info for j in nbrs])
        x_new[..., i, :], P_new[i] = ci_fuse([updates[j] for j in nbrs], sol.w)
        if weight_log is not None:
            weight_log.append({"k": k, "sensor": i, "neighbors": nbrs.tolist(),
                               "w": sol.w.tolist(), "fallback": bool(sol.fallback),
                               "iterations": sol.iterations})
    return NetworkState(k, x_new, P_new)


def networked_optimal_step(net: NetworkState, measurements, model: SystemModel,
                           sensors: Sequence[SensorModel],
                           topology: NetworkTopology,
                           fusion: str = "optimal") -> NetworkState:
    """One step of the networked filter with optimal local gains.

    Propagates the full cross-covariance table, so memory is ``O(N^2 n^2)``.
    See :func:`fusion_matrices` for the ``fusion`` choices.
    """
    if net.cross is None:
        raise ValueError("networked optimal filter needs the cross-covariance table")
    k = net.k + 1
    A, Q = model.A(k - 1), model.Q(k - 1)
    N, n = net.N, net.P.shape[-1]
    big_A = np.kron(np.eye(N), A)
    C_bar = big_A @ _flat(net.cross) @ big_A.T + np.kron(np.ones((N, N)), Q)

    phis = np.empty_like(net.x_hat)
    IKH = np.empty((N, n, n))
    for i, s in enumerate(sensors):
        blk = slice(i * n, (i + 1) * n)
        upd = update(PredictedEstimate(net.x_hat[..., i, :] @ A.T, symmetrize(C_bar[blk, blk])),
                     measurements[i], s.H(k), s.R(k))
        phis[..., i, :] = upd.phi
        IKH[i] = np.eye(n) - upd.K @ s.H(k)
    D = la.block_diag(*IKH)
    C_tilde = D @ C_bar @ D.T
    for j in range(N):
        # diagonal blocks also carry the sensor's own measurement noise;
        # with the optimal gain they reduce to (I - K H) P-
        blk = slice(j * n, (j + 1) * n)
        C_tilde[blk, blk] = symmetrize(IKH[j] @ C_bar[blk, blk])

    W = fusion_matrices(_unflat(C_tilde, N, n), topology, fusion)
    x_new = np.einsum("ijab,...jb->...ia", W, phis)
    big_W = _flat(W)
    cross = symmetrize(big_W @ C_tilde @ big_W.T)
    cross = _unflat(cross, N, n)
    P = np.array([cross[i, i] for i in range(N)])
    return NetworkState(k, x_new, P, cross)


def _flat(blocks):
    N, M, n, m = blocks.shape
    return blocks.transpose(0, 2, 1, 3).reshape(N * n, M * m)


def _unflat(mat, N, n):
    return mat.reshape(N, n, N, n).transpose(0, 2, 1, 3).copy()


def fusion_matrices(C_tilde, topology: NetworkTopology, fusion="optimal"):
    """Fusion matrices ``W[i, j]`` (shape ``(N, N, n, n)``) with ``sum_j W_ij = I``.

    ``"scalar"`` uses ``W_ij = a_ij I``. ``"optimal"`` minimizes the trace of
    the fused covariance over the neighbors of each node given their joint
    covariance, by solving the KKT system of the equality-constrained
    quadratic program (least squares, so perfectly correlated neighbors are
    allowed).
    """
    N, n = C_tilde.shape[0], C_tilde.shape[-1]
    if fusion == "scalar":
        return np.einsum("ij,ab->ijab", topology.adjacency, np.eye(n))
    if fusion != "optimal":
        raise ValueError(f"unknown fusion {fusion!r}")
    W = np.zeros((N, N, n, n))
    for i in range(N):
        nbrs = topology.neighbors(i)
        d = len(nbrs)
        S = C_tilde[np.ix_(nbrs, nbrs)].transpose(0, 2, 1, 3).reshape(d * n, d * n)
        E = np.tile(np.eye(n), (d, 1))
        kkt = np.block([[symmetrize(S), E], [E.T, np.zeros((n, n))]])
        rhs = np.vstack([np.zeros((d * n, n)), np.eye(n)])
        sol = np.linalg.lstsq(kkt, rhs, rcond=None)[0]
        Wt = sol[:d * n].reshape(d, n, n)          # blocks of W_i^T
        W[i, nbrs] = Wt.transpose(0, 2, 1)
    return W


@dataclass
class CentralState:
    k: int
    x_hat: np.ndarray
    P: np.ndarray


def ckf_step(state: CentralState, y_stacked, model: SystemModel,
             sensors: Sequence[SensorModel]) -> CentralState:
    k = state.k + 1
    pred = predict(NodeEstimate(state.x_hat, state.P), model.A(k - 1), model.Q(k - 1))
    H, R = stack(sensors, k)
    upd = update(pred, y_stacked, H, R)
    return CentralState(k, upd.phi, upd.P_tilde)


class CentralizedKF:
    name = "ckf"

    def __init__(self, model, sensors, topology=None):
        self.model, self.sensors = model, sensors

    def init(self, P0, batch_shape=(), inflation=1.0):
        P0 = np.asarray(P0, dtype=float) * inflation
        return CentralState(0, np.zeros(tuple(batch_shape) + (P0.shape[0],)), P0.copy())

    def step(self, state, measurements):
        return ckf_step(state, np.concatenate(measurements, axis=-1), self.model, self.sensors)

    def node_view(self, state):
        """Per-sensor ``(x_hat, P)``: every sensor sees the global estimate."""
        N = len(self.sensors)
        x = np.repeat(state.x_hat[..., None, :], N, axis=-2)
        return x, np.broadcast_to(state.P, (N,) + state.P.shape)


class NetworkedOptimalKF:
    name = "table1"

    def __init__(self, model, sensors, topology, fusion="optimal"):
        self.model, self.sensors, self.topology = model, sensors, topology
        self.fusion = fusion

    def init(self, P0, batch_shape=(), inflation=1.0):
        return init_network(P0, len(self.sensors), batch_shape, inflation, with_cross=True)

    def step(self, state, measurements):
        return networked_optimal_step(state, measurements, self.model, self.sensors,
                                      self.topology, self.fusion)

    def node_view(self, state):
        return state.x_hat, state.P


class CDKF:
    def __init__(self, model, sensors, topology, strategy=None):
        self.model, self.sensors, self.topology = model, sensors, topology
        self.strategy = strategy or ConstantWeights()
        self.name = f"cdkf-{self.strategy.kind}"
        self.weight_log = []

    def init(self, P0, batch_shape=(), inflation=1.0):
        return init_network(P0, len(self.sensors), batch_shape, inflation)

    def step(self, state, measurements):
        return cdkf_step(state, measurements, self.model, self.sensors, self.topology,
                         self.strategy, self.weight_log)

    def node_view(self, state):
        return state.x_hat, state.P


FILTER_NAMES = ("ckf", "table1", "cdkf-constant", "cdkf-adaptive")


def make_filter(name, model, sensors, topology, weight_settings=None):
    if name == "ckf":
        return CentralizedKF(model, sensors, topology)
    if name == "table1":
        return NetworkedOptimalKF(model, sensors, topology)
    if name == "cdkf-constant":
        return CDKF(model, sensors, topology, make_strategy("constant"))
    if name == "cdkf-adaptive":
        return CDKF(model, sensors, topology, make_strategy("adaptive", **(weight_settings or {})))
    raise ValueError(f"unknown filter {name!r}; expected one of {FILTER_NAMES}")
