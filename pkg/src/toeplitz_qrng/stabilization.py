"""Interferometer operating-point stabilisation.

The monitored port sees normalised power ``(1 - cos(theta)) / 2`` with
``theta = phi0 + actuator``. A positional PID drives the phase shifter so
the power sits at the setpoint (0.5 = quadrature, ``theta = pi/2``).
The plant is normalised; gains below are tuned for it, they are not
device constants.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

QUADRATURE = math.pi / 2


@dataclass(frozen=True)
class PidConfig:
    kp: float = 0.4
    ki: float = 800.0
    kd: float = 0.0
    setpoint: float = 0.5
    output_limits: tuple[float, float] = (-2 * math.pi, 2 * math.pi)
    loop_period: float = 1e-3
    anti_windup: bool = True

    def __post_init__(self):
        lo, hi = self.output_limits
        if not lo < hi:
            raise ValueError("output_limits must satisfy lo < hi")
        if self.loop_period <= 0:
            raise ValueError("loop_period must be positive")
        if not 0 < self.setpoint < 1:
            raise ValueError("setpoint must lie in (0, 1)")


@dataclass
class PidState:
    integral: float = 0.0
    prev_error: float | None = None
    output: float = 0.0


def pid_step(config: PidConfig, state: PidState, measurement: float) -> tuple[float, PidState]:
    """One positional PID update; returns the clamped command and new state."""
    if not 0.0 <= measurement <= 1.0:
        raise ValueError(f"measurement {measurement} outside [0, 1]")
    dt = config.loop_period
    lo, hi = config.output_limits
    error = config.setpoint - measurement

    integral = state.integral + error * dt
    derivative = 0.0 if state.prev_error is None else (error - state.prev_error) / dt
    raw = config.kp * error + config.ki * integral + config.kd * derivative
    command = min(max(raw, lo), hi)

    if config.anti_windup:
        if raw != command and (raw - command) * error > 0:
            # saturated and still pushing outward: freeze the integrator
            integral = state.integral
        if config.ki:
            integral = min(max(integral, lo / config.ki), hi / config.ki)
    return command, PidState(integral, error, command)


@dataclass
class PlantState:
    phi0: float = QUADRATURE
    drift_rate_std: float = 0.0
    actuator_phase: float = 0.0

    @property
    def theta(self) -> float:
        return self.phi0 + self.actuator_phase

    @property
    def power(self) -> float:
        return (1.0 - math.cos(self.theta)) / 2.0


@dataclass
class LoopTrace:
    measurement: np.ndarray
    command: np.ndarray
    phase_error: np.ndarray
    integral: np.ndarray = field(default_factory=lambda: np.empty(0))

    def rms_error(self, skip: int = 0) -> float:
        return float(np.sqrt(np.mean(self.phase_error[skip:] ** 2)))

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["step", "measurement", "command", "phase_error"])
            for i, (m, c, e) in enumerate(zip(self.measurement, self.command, self.phase_error)):
                w.writerow([i, f"{m:.9g}", f"{c:.9g}", f"{e:.9g}"])


def run_loop(
    pid: PidConfig,
    plant: PlantState,
    iterations: int,
    disturbances: dict[int, float] | Iterable[tuple[int, float]] = (),
    rng_seed: int = 0,
) -> LoopTrace:
    """Simulate ``iterations`` control periods.

    Each period: apply scheduled step disturbances and the drift random
    walk to ``phi0``, read the monitor, update the PID, move the actuator.
    ``phase_error`` is ``theta - pi/2`` measured after the actuator moves,
    unwrapped so open-loop drift shows up as growth.
    """
    steps = dict(disturbances)
    rng = np.random.default_rng(rng_seed)
    walk_std = plant.drift_rate_std * math.sqrt(pid.loop_period)
    walk = rng.normal(0.0, walk_std, iterations) if walk_std else np.zeros(iterations)

    phi0 = plant.phi0
    actuator = plant.actuator_phase
    state = PidState(output=actuator)
    meas = np.empty(iterations)
    cmd = np.empty(iterations)
    err = np.empty(iterations)
    integ = np.empty(iterations)
    for i in range(iterations):
        phi0 += walk[i] + steps.get(i, 0.0)
        power = (1.0 - math.cos(phi0 + actuator)) / 2.0
        actuator, state = pid_step(pid, state, power)
        meas[i] = power
        cmd[i] = actuator
        err[i] = phi0 + actuator - QUADRATURE
        integ[i] = state.integral
    return LoopTrace(meas, cmd, err, integ)


def read_disturbances(path) -> dict[int, float]:
    """Disturbance schedule CSV with ``step,delta`` columns (header optional)."""
    out: dict[int, float] = {}
    with open(path, newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().startswith("#"):
                continue
            try:
                step, delta = int(row[0]), float(row[1])
            except ValueError:
                continue  # header
            out[step] = out.get(step, 0.0) + delta
    return out
