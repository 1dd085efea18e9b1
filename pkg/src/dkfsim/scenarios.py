"""The two simulation studies as code-defined presets."""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .model import RegularityWindow, SensorModel, SystemModel
from .topology import NetworkTopology, preset as topology_preset


@dataclass
class Scenario:
    """Everything a run needs: plant, sensors, network, prior, horizon and run settings."""
    model: SystemModel
    sensors: list
    topology: NetworkTopology
    P0: np.ndarray
    horizon: int
    trials: int = 500
    seed: int = 0
    filters: tuple = ("ckf", "table1", "cdkf-constant", "cdkf-adaptive")
    weight_settings: dict = field(default_factory=dict)
    P0_inflation: float = 1.0
    window: Optional[RegularityWindow] = None
    uco_window: Optional[int] = None
    name: str = "custom"
    observability: dict = field(default_factory=dict)
    output: Optional[str] = None
    extra: dict = field(default_factory=dict)


def example1_A(k):
    return np.array([[1.1, 0.05], [1.1, 0.1 * np.sin(k * np.pi / 6)]])


def example1_model(horizon=100):
    return SystemModel(2, example1_A, np.diag([0.5, 0.7]), horizon=horizon,
                       beta1=10.0, name="paper_example_1")


def example1_sensors():
    R = [0.5, 0.6, 0.4, 0.3]
    H = [
        lambda k: np.array([[1 + np.sin(k * np.pi / 12), 0.0]]),
        np.zeros((1, 2)),
        lambda k: np.array([[-1.0, 1 + np.cos(k * np.pi / 12)]]),
        np.zeros((1, 2)),
    ]
    return [SensorModel(i + 1, H[i], [[R[i]]], meas_dim=1) for i in range(4)]


def example1_window(horizon):
    # A_k is singular at k = 1, 5 (mod 12); steps 6..12 of every period are not
    anchors = tuple(range(6, horizon + 1, 12))
    return RegularityWindow(anchors, 7, 1e-3)


def paper_example_1(horizon=100, trials=500, seed=2024) -> Scenario:
    return Scenario(example1_model(horizon), example1_sensors(),
                    topology_preset("fig2_4cycle"), np.eye(2), horizon, trials, seed,
                    window=example1_window(horizon), uco_window=12,
                    name="paper_example_1")


EXAMPLE2_H_CHOICES = ((1.0, 1.0), (0.0, 0.0), (0.0, 0.0), (1.0, 0.0))


def draw_example2_rows(seed, N=20):
    """Observation rows drawn uniformly from ``EXAMPLE2_H_CHOICES``, once per seed."""
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=(2 ** 32 - 1,))))
    idx = rng.integers(0, len(EXAMPLE2_H_CHOICES), size=N)
    return [EXAMPLE2_H_CHOICES[i] for i in idx]


def paper_example_2(horizon=100, trials=500, seed=2024, rows=None) -> Scenario:
    rows = rows or draw_example2_rows(seed)
    model = SystemModel(2, np.array([[1.0, 0.05], [0.0, 1.0]]), np.eye(2),
                        horizon=horizon, beta1=10.0, name="paper_example_2")
    sensors = [SensorModel(i + 1, np.array([r]), [[1.0]], meas_dim=1)
               for i, r in enumerate(rows)]
    return Scenario(model, sensors, topology_preset("fig7_20node"), np.eye(2),
                    horizon, trials, seed, uco_window=2, name="paper_example_2",
                    extra={"H_rows": [list(r) for r in rows]})


PRESETS = {"paper_example_1": paper_example_1, "paper_example_2": paper_example_2}
