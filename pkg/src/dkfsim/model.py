"""Linear time-varying plant, per-sensor observation models and trajectory simulation.

Time-indexed matrices are given as providers: a constant array, a sequence
of per-step arrays, or a callable ``k -> array``. They are evaluated lazily.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np

MatrixProvider = Union[np.ndarray, Sequence, Callable[[int], np.ndarray]]


class DimensionError(ValueError):
    pass


class ModelError(ValueError):
    """A model matrix violates a standing assumption (e.g. Q or R not PD)."""


def _as_provider(value, name):
    if callable(value):
        return lambda k: np.asarray(value(k), dtype=float)
    arr = np.asarray(value, dtype=float)
    if arr.ndim == 2:
        arr.setflags(write=False)
        return lambda k: arr
    if arr.ndim == 3:
        arr.setflags(write=False)

        def table(k):
            if not 0 <= k < len(arr):
                raise IndexError(f"{name} table has no entry for k={k}")
            return arr[k]
        return table
    raise DimensionError(f"{name} must be a matrix, a per-step table or a callable")


def _chol_noise_factor(C, what):
    C = np.asarray(C, dtype=float)
    if not C.any():
        return np.zeros_like(C)
    try:
        return np.linalg.cholesky(0.5 * (C + C.T))
    except np.linalg.LinAlgError:
        raise ModelError(f"{what} is not positive definite") from None


class SystemModel:
    """Plant ``x_{k+1} = A_k x_k + w_k`` with ``w_k ~ N(0, Q_k)``.

    ``beta1`` optionally declares the bound on ``lambda_max(A_k A_k^T)`` that
    :func:`validate_assumptions` checks against.
    """

    def __init__(self, state_dim: int, A: MatrixProvider, Q: MatrixProvider,
                 horizon: Optional[int] = None, beta1: Optional[float] = None,
                 name: str = "custom"):
        if state_dim < 1:
            raise DimensionError("state_dim must be positive")
        self.state_dim = int(state_dim)
        self._A = _as_provider(A, "A")
        self._Q = _as_provider(Q, "Q")
        self.horizon = horizon
        self.beta1 = beta1
        self.name = name

    def A(self, k: int) -> np.ndarray:
        A = self._A(k)
        if A.shape != (self.state_dim, self.state_dim):
            raise DimensionError(f"A_{k} has shape {A.shape}, expected {(self.state_dim,) * 2}")
        return A

    def Q(self, k: int) -> np.ndarray:
        Q = self._Q(k)
        if Q.shape != (self.state_dim, self.state_dim):
            raise DimensionError(f"Q_{k} has shape {Q.shape}, expected {(self.state_dim,) * 2}")
        return Q

    def __repr__(self):
        return f"SystemModel(name={self.name!r}, n={self.state_dim}, horizon={self.horizon})"


class SensorModel:
    """Sensor ``y_{k,i} = H_{k,i} x_k + v_{k,i}``, ``v ~ N(0, R_{k,i})``.

    An all-zero ``H`` is legal: such a sensor observes nothing on its own.
    """

    def __init__(self, sensor_id: int, H: MatrixProvider, R: MatrixProvider,
                 meas_dim: Optional[int] = None):
        self.sensor_id = int(sensor_id)
        self._H = _as_provider(H, "H")
        self._R = _as_provider(R, "R")
        self.meas_dim = int(meas_dim) if meas_dim is not None else self._H(0).shape[0]

    def H(self, k: int) -> np.ndarray:
        H = self._H(k)
        if H.ndim != 2 or H.shape[0] != self.meas_dim:
            raise DimensionError(f"H_{k},{self.sensor_id} has shape {H.shape}")
        return H

    def R(self, k: int) -> np.ndarray:
        R = self._R(k)
        if R.shape != (self.meas_dim, self.meas_dim):
            raise DimensionError(f"R_{k},{self.sensor_id} has shape {R.shape}")
        return R

    def __repr__(self):
        return f"SensorModel(id={self.sensor_id}, m={self.meas_dim})"


@dataclass(frozen=True)
class RegularityWindow:
    """Anchors ``k_l`` after which ``L`` consecutive ``A_k`` are uniformly nonsingular."""
    anchors: tuple
    window_len: int
    lower_bound: float


@dataclass
class TrajectoryRecord:
    states: np.ndarray                      # (K+1, n)
    measurements: list                      # per sensor, (K+1, m_i)
    seed: int
    trial: int = 0

    @property
    def horizon(self) -> int:
        return len(self.states) - 1


def step_state(model: SystemModel, k: int, x, rng: np.random.Generator):
    x = np.asarray(x, dtype=float)
    if x.shape != (model.state_dim,):
        raise DimensionError(f"state has shape {x.shape}, expected ({model.state_dim},)")
    if model.horizon is not None and k >= model.horizon:
        raise IndexError(f"k={k} beyond model horizon {model.horizon}")
    L = _chol_noise_factor(model.Q(k), f"Q_{k}")
    return model.A(k) @ x + L @ rng.standard_normal(model.state_dim)


def observe(sensor: SensorModel, k: int, x, rng: np.random.Generator):
    x = np.asarray(x, dtype=float)
    H = sensor.H(k)
    if x.shape != (H.shape[1],):
        raise DimensionError(f"state has shape {x.shape}, H_{k},{sensor.sensor_id} expects {H.shape[1]}")
    L = _chol_noise_factor(sensor.R(k), f"R_{k},{sensor.sensor_id}")
    return H @ x + L @ rng.standard_normal(sensor.meas_dim)


def trial_streams(seed: int, trial: int, n_sensors: int):
    """Independent generators for one trial: index 0 drives x_0 and the
    process noise, index ``i`` drives sensor ``i``'s measurement noise.

    Streams are keyed by ``(trial, stream)`` so any trial can be regenerated
    on its own, in any order.
    """
    return [np.random.Generator(np.random.Philox(
                np.random.SeedSequence(seed, spawn_key=(trial, s))))
            for s in range(n_sensors + 1)]


def simulate_batch(model: SystemModel, sensors: Sequence[SensorModel], K: int,
                   seed: int, trials: int, P0=None, first_trial: int = 0):
    """Simulate ``trials`` independent trajectories over steps ``0..K``.

    Returns ``(states, measurements)`` with ``states`` of shape
    ``(trials, K+1, n)`` and one ``(trials, K+1, m_i)`` array per sensor.
    """
    if K < 0:
        raise ValueError("horizon must be nonnegative")
    n = model.state_dim
    P0 = np.eye(n) if P0 is None else np.asarray(P0, dtype=float)
    L0 = _chol_noise_factor(P0, "P0")
    LQ = np.array([_chol_noise_factor(model.Q(k), f"Q_{k}") for k in range(K)]).reshape(K, n, n)
    A = np.array([model.A(k) for k in range(K)]).reshape(K, n, n)
    H = [np.array([s.H(k) for k in range(K + 1)]) for s in sensors]
    LR = [np.array([_chol_noise_factor(s.R(k), f"R_{k},{s.sensor_id}") for k in range(K + 1)])
          for s in sensors]
    for s, h in zip(sensors, H):
        if h.shape[2] != n:
            raise DimensionError(f"sensor {s.sensor_id} H has {h.shape[2]} columns, expected {n}")

    z_proc = np.empty((trials, K + 1, n))
    z_meas = [np.empty((trials, K + 1, s.meas_dim)) for s in sensors]
    for t in range(trials):
        streams = trial_streams(seed, first_trial + t, len(sensors))
        z_proc[t] = streams[0].standard_normal((K + 1, n))
        for i, s in enumerate(sensors):
            z_meas[i][t] = streams[i + 1].standard_normal((K + 1, s.meas_dim))

    states = np.empty((trials, K + 1, n))
    states[:, 0] = z_proc[:, 0] @ L0.T
    for k in range(K):
        states[:, k + 1] = states[:, k] @ A[k].T + z_proc[:, k + 1] @ LQ[k].T
    measurements = [np.einsum("kmn,tkn->tkm", H[i], states)
                    + np.einsum("kml,tkl->tkm", LR[i], z_meas[i])
                    for i in range(len(sensors))]
    return states, measurements


def simulate(model: SystemModel, sensors: Sequence[SensorModel], K: int, seed: int,
             P0=None, trial: int = 0) -> TrajectoryRecord:
    states, meas = simulate_batch(model, sensors, K, seed, 1, P0, first_trial=trial)
    return TrajectoryRecord(states[0], [m[0] for m in meas], seed, trial)


@dataclass
class Finding:
    name: str
    passed: bool
    detail: str
    witness_k: Optional[int] = None
    value: Optional[float] = None


@dataclass
class ValidationReport:
    findings: list = field(default_factory=list)
    singular_steps: list = field(default_factory=list)
    Q_bounds: tuple = (None, None)

    @property
    def passed(self) -> bool:
        return all(f.passed for f in self.findings)

    @property
    def hard_failures(self):
        return [f for f in self.findings if not f.passed and f.name in HARD_CHECKS]

    def get(self, name):
        for f in self.findings:
            if f.name == name:
                return f
        raise KeyError(name)

    def to_dict(self):
        return {
            "passed": self.passed,
            "findings": [vars(f) for f in self.findings],
            "singular_steps": list(self.singular_steps),
            "Q_bounds": list(self.Q_bounds),
        }


HARD_CHECKS = {"noise_Q_pd", "noise_R_pd", "dimensions"}


def validate_assumptions(model: SystemModel, sensors: Sequence[SensorModel],
                         window: Optional[RegularityWindow] = None,
                         horizon: Optional[int] = None) -> ValidationReport:
    """Check the standing assumptions over ``k = 0..horizon``.

    Singular ``A_k`` at isolated steps is recorded but is not a failure.
    """
    K = horizon if horizon is not None else model.horizon
    if K is None:
        raise ValueError("a horizon is required")
    rep = ValidationReport()
    n = model.state_dim

    try:
        As = [model.A(k) for k in range(K + 1)]
        Qs = [model.Q(k) for k in range(K + 1)]
        for s in sensors:
            for k in range(K + 1):
                if s.H(k).shape[1] != n:
                    raise DimensionError(f"sensor {s.sensor_id} H_{k} has wrong column count")
                s.R(k)
    except DimensionError as exc:
        rep.findings.append(Finding("dimensions", False, str(exc)))
        return rep
    rep.findings.append(Finding("dimensions", True, "all matrix shapes agree"))

    qmin, qmax, bad_q = np.inf, -np.inf, None
    for k, Q in enumerate(Qs):
        ev = np.linalg.eigvalsh(0.5 * (Q + Q.T))
        if bad_q is None and (ev[0] <= 0 or not np.allclose(Q, Q.T)):
            bad_q = (k, ev[0])
        qmin, qmax = min(qmin, ev[0]), max(qmax, ev[-1])
    if bad_q is None:
        rep.findings.append(Finding("noise_Q_pd", True,
                                    f"{qmin:.6g} I <= Q_k <= {qmax:.6g} I", value=qmin))
        rep.Q_bounds = (float(qmin), float(qmax))
    else:
        rep.findings.append(Finding("noise_Q_pd", False, "Q_k not positive definite",
                                    witness_k=bad_q[0], value=float(bad_q[1])))

    bad_r = None
    for s in sensors:
        for k in range(K + 1):
            R = s.R(k)
            ev = np.linalg.eigvalsh(0.5 * (R + R.T))[0]
            if ev <= 0 or not np.allclose(R, R.T):
                bad_r = (s.sensor_id, k, ev)
                break
        if bad_r:
            break
    if bad_r is None:
        rep.findings.append(Finding("noise_R_pd", True, "all R_k,i positive definite"))
    else:
        rep.findings.append(Finding("noise_R_pd", False,
                                    f"R_k,{bad_r[0]} not positive definite",
                                    witness_k=bad_r[1], value=float(bad_r[2])))

    lam_max = np.array([np.linalg.eigvalsh(A @ A.T)[-1] for A in As])
    kmax = int(np.argmax(lam_max))
    if model.beta1 is None:
        rep.findings.append(Finding("A_bounded", True,
                                    f"max lambda_max(A A^T) = {lam_max[kmax]:.6g} (no declared bound)",
                                    witness_k=kmax, value=float(lam_max[kmax])))
    else:
        over = np.nonzero(lam_max > model.beta1)[0]
        if len(over):
            k0 = int(over[0])
            rep.findings.append(Finding("A_bounded", False,
                                        f"lambda_max(A A^T) = {lam_max[k0]:.6g} exceeds {model.beta1}",
                                        witness_k=k0, value=float(lam_max[k0])))
        else:
            rep.findings.append(Finding("A_bounded", True,
                                        f"max lambda_max(A A^T) = {lam_max[kmax]:.6g} <= {model.beta1}",
                                        witness_k=kmax, value=float(lam_max[kmax])))

    for k, A in enumerate(As):
        scale = max(np.abs(A).max(), 1.0) ** n
        if abs(np.linalg.det(A)) <= 1e-12 * scale:
            rep.singular_steps.append(k)

    if window is not None:
        worst = (np.inf, None)
        for kl in window.anchors:
            for s in range(window.window_len):
                k = kl + s
                if k > K:
                    break
                lam = np.linalg.eigvalsh(As[k] @ As[k].T)[0]
                if lam < worst[0]:
                    worst = (lam, k)
        gaps = np.diff(window.anchors)
        ok_gaps = len(gaps) == 0 or gaps.min() > 0
        ok = ok_gaps and worst[0] >= window.lower_bound
        rep.findings.append(Finding(
            "A_regular_window", bool(ok),
            f"min lambda_min(A A^T) over windows = {worst[0]:.6g}, required >= {window.lower_bound}",
            witness_k=worst[1], value=float(worst[0])))
    return rep
