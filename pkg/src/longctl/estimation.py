"""Constant-acceleration Kalman filter for neighbour velocity/acceleration.

The filter math is written elementwise so the same functions run on a single
track (mean shape ``(3,)``) or a batch of independent tracks (``(N, 3)``) and
give bit-identical results either way.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .errors import DomainError


@dataclass(frozen=True)
class KalmanState:
    mean: np.ndarray  # (..., 3): position, velocity, acceleration
    cov: np.ndarray  # (..., 3, 3)
    process_noise: float = 5.0  # white-jerk spectral density
    meas_noise: float = 0.04  # measurement variance m^2


def kf_init(x0, p0: Sequence[float], *, v0=0.0, a0=0.0, process_noise: float = 5.0, meas_noise: float = 0.04) -> KalmanState:
    p0 = np.asarray(p0, dtype=np.float64)
    if p0.shape != (3,) or np.any(p0 <= 0):
        raise DomainError(f"initial variances must be three positive numbers, got {p0}")
    if process_noise < 0 or meas_noise <= 0:
        raise DomainError("noise parameters must be positive")
    x0 = np.asarray(x0, dtype=np.float64)
    mean = np.zeros(x0.shape + (3,))
    mean[..., 0] = x0
    mean[..., 1] = v0
    mean[..., 2] = a0
    cov = np.zeros(mean.shape + (3,))
    for i in range(3):
        cov[..., i, i] = p0[i]
    return KalmanState(mean, cov, process_noise, meas_noise)


def white_jerk_q(dt: float, q: float) -> np.ndarray:
    return q * np.array(
        [
            [dt**5 / 20, dt**4 / 8, dt**3 / 6],
            [dt**4 / 8, dt**3 / 3, dt**2 / 2],
            [dt**3 / 6, dt**2 / 2, dt],
        ]
    )


def _f_rows(m: np.ndarray, dt: float) -> np.ndarray:
    # F @ m along axis -2 for F = [[1, dt, dt^2/2], [0, 1, dt], [0, 0, 1]]
    r0, r1, r2 = m[..., 0, :], m[..., 1, :], m[..., 2, :]
    return np.stack([r0 + dt * r1 + (0.5 * dt * dt) * r2, r1 + dt * r2, r2], axis=-2)


def kf_predict(s: KalmanState, dt: float) -> KalmanState:
    if not dt > 0:
        raise DomainError("dt must be positive")
    m = s.mean
    x, v, a = m[..., 0], m[..., 1], m[..., 2]
    mean = np.stack([x + dt * v + (0.5 * dt * dt) * a, v + dt * a, a], axis=-1)
    fp = _f_rows(s.cov, dt)
    fpf = np.swapaxes(_f_rows(np.swapaxes(fp, -1, -2), dt), -1, -2)
    cov = fpf + white_jerk_q(dt, s.process_noise)
    return replace(s, mean=mean, cov=cov)


def kf_update(s: KalmanState, z) -> KalmanState:
    z = np.asarray(z, dtype=np.float64)
    if not np.all(np.isfinite(z)):
        raise DomainError("measurement must be finite")
    P = s.cov
    r = s.meas_noise
    S = P[..., 0, 0] + r
    K = P[..., :, 0] / S[..., None]
    innov = z - s.mean[..., 0]
    mean = s.mean + K * innov[..., None]
    # Joseph form with H = [1, 0, 0]
    AP = P - K[..., :, None] * P[..., 0, None, :]
    APA = AP - AP[..., :, 0, None] * K[..., None, :]
    cov = APA + r * K[..., :, None] * K[..., None, :]
    return replace(s, mean=mean, cov=cov)


def innovation(s: KalmanState, z) -> tuple[np.ndarray, np.ndarray]:
    """Innovation and its variance for a predicted state."""
    return np.asarray(z) - s.mean[..., 0], s.cov[..., 0, 0] + s.meas_noise


def estimate_neighbor(
    history: Sequence[float],
    dt: float,
    *,
    p0: Sequence[float] = (0.04, 4.0, 4.0),
    process_noise: float = 5.0,
    meas_std: float = 0.2,
    v0: float = 0.0,
) -> tuple[float, float]:
    """Filter a position stream and return the final (velocity, acceleration)."""
    if len(history) == 0:
        raise DomainError("empty measurement history")
    s = kf_init(history[0], p0, v0=v0, process_noise=process_noise, meas_noise=meas_std**2)
    for z in history[1:]:
        s = kf_update(kf_predict(s, dt), z)
    return float(s.mean[1]), float(s.mean[2])


class TrackedNeighbors:
    """Per-vehicle filters feeding :func:`longctl.dynamics.observe`.

    Each neighbour is tracked in absolute position (ego position plus the
    measured gap), so the ego's own manoeuvres do not leak into the estimates.
    Measurement noise is read from the scenario's pre-drawn stream so runs stay
    reproducible.
    """

    def __init__(self, meas_noise: np.ndarray, dt: float, *, jerk_psd=5.0, meas_std=0.2, init_var=(0.04, 4.0, 4.0)):
        self.meas_noise = meas_noise
        self.dt = dt
        self.jerk_psd = jerk_psd
        self.meas_std = meas_std
        self.init_var = init_var
        self.filters: dict[int, KalmanState] = {}
        self.last_step: dict[int, int] = {}

    def track(self, vid: int, true_x: float, step: int, v_prior: float) -> KalmanState:
        noise = self.meas_noise[min(step, len(self.meas_noise) - 1), vid]
        z = true_x + self.meas_std * noise
        s = self.filters.get(vid)
        if s is None:
            s = kf_init(z, self.init_var, v0=v_prior, process_noise=self.jerk_psd, meas_noise=self.meas_std**2)
        elif self.last_step[vid] < step:
            for _ in range(step - self.last_step[vid]):
                s = kf_predict(s, self.dt)
            s = kf_update(s, z)
        self.filters[vid] = s
        self.last_step[vid] = step
        return s

    def estimate(self, p, ego: int, step: int):
        veh = p.vehicles
        me = veh[ego]
        out = []
        for j in (ego - 1, ego + 1):
            if 0 <= j < len(veh):
                s = self.track(veh[j].vid, veh[j].x, step, me.v)
                out.append((float(s.mean[1]), float(s.mean[2])))
            else:
                out.append((me.v, 0.0))
        return out[0], out[1]


def make_tracker(instance) -> TrackedNeighbors:
    k = instance.kalman
    return TrackedNeighbors(
        instance.meas_noise, instance.platoon.dt, jerk_psd=k.jerk_psd, meas_std=k.meas_std, init_var=k.init_var
    )
