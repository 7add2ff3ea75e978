"""Constant-velocity Kalman filter over box state ``(u, v, s, r, du, dv, ds)``.

``(u, v)`` is the box center, ``s`` its area and ``r`` its aspect ratio
(width / height, held constant). The measurement is ``(u, v, s, r)``. The
default noise levels are the conventional SORT values.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from egotrack.geometry import BBox

STATE_DIM = 7
MEAS_DIM = 4


@dataclass(frozen=True)
class KalmanNoise:
    measurement: tuple[float, ...] = (1.0, 1.0, 10.0, 10.0)
    process: tuple[float, ...] = (1.0, 1.0, 1.0, 1.0, 1e-2, 1e-2, 1e-4)
    initial: tuple[float, ...] = (10.0, 10.0, 10.0, 10.0, 1e4, 1e4, 1e4)

    def __post_init__(self):
        if len(self.measurement) != MEAS_DIM or len(self.process) != STATE_DIM or len(self.initial) != STATE_DIM:
            raise ValueError("noise vectors have wrong lengths")
        if min(self.measurement) <= 0:
            raise ValueError("measurement noise must be positive")
        if min(self.process) < 0 or min(self.initial) < 0:
            raise ValueError("process and initial variances must be non-negative")


@dataclass
class KalmanState:
    mean: np.ndarray
    covariance: np.ndarray
    # set when the last prediction had to zero the area velocity
    clamped: bool = field(default=False)

    def copy(self) -> "KalmanState":
        return KalmanState(self.mean.copy(), self.covariance.copy(), self.clamped)


def box_to_measurement(box: BBox) -> np.ndarray:
    w, h = box.width, box.height
    return np.array([box.x_min + w / 2.0, box.y_min + h / 2.0, w * h, w / h])


def measurement_to_box(z: np.ndarray) -> BBox:
    u, v, s, r = (float(x) for x in z[:4])
    w = np.sqrt(s * r)
    h = s / w
    return BBox(u - w / 2.0, v - h / 2.0, u + w / 2.0, v + h / 2.0)


def initiate(box: BBox, noise: KalmanNoise = KalmanNoise()) -> KalmanState:
    mean = np.zeros(STATE_DIM)
    mean[:4] = box_to_measurement(box)
    return KalmanState(mean, np.diag(np.asarray(noise.initial, dtype=float)))


def predict(state: KalmanState, noise: KalmanNoise = KalmanNoise()) -> tuple[KalmanState, BBox]:
    """Constant-velocity time update.

    If the predicted area would become non-positive, the area velocity is
    zeroed for this step and ``clamped`` is set on the returned state.
    """
    mean = state.mean.copy()
    clamped = mean[2] + mean[6] <= 0
    if clamped:
        mean[6] = 0.0
    mean[:3] += mean[4:]

    # F P F^T with F = [[I, B], [0, I]] where B maps (du, dv, ds) onto (u, v, s)
    p = state.covariance
    fp = p.copy()
    fp[:3, :] += p[4:, :]
    fpf = fp.copy()
    fpf[:, :3] += fp[:, 4:]
    fpf[np.diag_indices(STATE_DIM)] += noise.process
    fpf = 0.5 * (fpf + fpf.T)
    new = KalmanState(mean, fpf, clamped)
    return new, measurement_to_box(mean)


def update(state: KalmanState, box: BBox, noise: KalmanNoise = KalmanNoise()) -> KalmanState:
    """Measurement correction with the observed ``box``."""
    p = state.covariance
    z = box_to_measurement(box)
    innovation = z - state.mean[:MEAS_DIM]
    # H selects the first four state components
    s = p[:MEAS_DIM, :MEAS_DIM] + np.diag(noise.measurement)
    pht = p[:, :MEAS_DIM]
    try:
        gain = np.linalg.solve(s, pht.T).T
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("singular innovation covariance") from exc
    mean = state.mean + gain @ innovation
    cov = p - gain @ pht.T
    cov = 0.5 * (cov + cov.T)
    return KalmanState(mean, cov, state.clamped)
