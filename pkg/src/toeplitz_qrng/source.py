"""Simulated laser-phase-noise entropy source.

The laser phase is a Wiener process on a fine substep grid. An unbalanced
interferometer with delay ``tau`` turns the phase difference
``dphi(t) = phi(t) - phi(t - tau)`` into ``A * sin(dphi)`` about the
quadrature point; Gaussian classical noise is added at a power ratio
``gamma`` and the sum is digitised by a saturating ADC.

Consecutive samples are correlated exactly when their differencing
windows ``[t - tau, t]`` overlap, i.e. when the sampling interval is
shorter than ``tau``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from .entropy import AdcGeometry

PILOT_SAMPLES = 100_000


@dataclass(frozen=True)
class SimConfig:
    sample_rate: float = 1e9
    tau: float = 0.8e-9
    substeps_per_sample: int = 10
    # Var[dphi] = 2 * D * tau = 0.5 rad^2 at the default delay
    phase_diffusion: float = 3.125e8
    # with D above, A^2 Var[sin dphi] * (1 + 1/gamma) ~= 8311 mV^2
    amplitude: float = 151.5
    gamma: float = 6.87
    detector_bandwidth: float | None = None
    adc: AdcGeometry = AdcGeometry()
    rng_seed: int = 0

    def __post_init__(self):
        if self.substeps_per_sample < 2:
            raise ValueError("substeps_per_sample must be >= 2")
        for name in ("sample_rate", "tau", "gamma"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.phase_diffusion < 0 or self.amplitude < 0:
            raise ValueError("phase_diffusion and amplitude must be non-negative")
        if self.detector_bandwidth is not None and self.detector_bandwidth <= 0:
            raise ValueError("detector_bandwidth must be positive or None")
        ratio = self.tau / self.dt
        if abs(ratio - round(ratio)) > 1e-6 * max(1.0, ratio) or round(ratio) < 1:
            raise ValueError(
                f"tau={self.tau:g} s is not a whole number of substeps of {self.dt:g} s"
            )

    @property
    def dt(self) -> float:
        return 1.0 / (self.sample_rate * self.substeps_per_sample)

    @property
    def delay_substeps(self) -> int:
        return int(round(self.tau / self.dt))

    @property
    def phase_variance(self) -> float:
        """Variance of ``dphi`` in rad^2."""
        return 2.0 * self.phase_diffusion * self.tau

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "SimConfig":
        d = dict(d)
        if isinstance(d.get("adc"), dict):
            d["adc"] = AdcGeometry(**d["adc"])
        return cls(**d)

    def digest(self) -> str:
        return config_digest(self.to_dict())


def config_digest(obj) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


def quantum_variance(config: SimConfig) -> float:
    """Closed-form variance of ``A sin(dphi)`` for Gaussian ``dphi``."""
    return config.amplitude ** 2 * (1.0 - math.exp(-2.0 * config.phase_variance)) / 2.0


@dataclass
class RawRecord:
    samples: np.ndarray
    config_hash: str
    count: int = field(init=False)

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.uint8)
        self.count = len(self.samples)

    def tobytes(self) -> bytes:
        return self.samples.tobytes()


class _QuantumPath:
    """Phase walk, interferometer and optional detector low-pass."""

    def __init__(self, config: SimConfig, rng: np.random.Generator):
        self.config = config
        self.rng = rng
        self.step_std = math.sqrt(2.0 * config.phase_diffusion * config.dt)
        lag = config.delay_substeps
        warmup = rng.normal(0.0, self.step_std, lag) if self.step_std else np.zeros(lag)
        self.history = np.cumsum(warmup)
        self.lowpass = None
        if config.detector_bandwidth is not None:
            alpha = 1.0 - math.exp(-2.0 * math.pi * config.detector_bandwidth * config.dt)
            self.lowpass = (np.array([alpha]), np.array([1.0, alpha - 1.0]))
            self.lp_state = np.zeros(1)

    def chunk(self, count: int) -> tuple[np.ndarray, np.ndarray]:
        """``(dphi, quantum term)`` for the next ``count`` sample instants."""
        cfg = self.config
        s, lag = cfg.substeps_per_sample, cfg.delay_substeps
        total = count * s
        incs = self.rng.normal(0.0, self.step_std, total) if self.step_std else np.zeros(total)
        phase = np.empty(lag + total)
        phase[:lag] = self.history
        np.cumsum(incs, out=phase[lag:])
        phase[lag:] += self.history[-1]
        # rebase to keep magnitudes small; only differences matter
        self.history = phase[-lag:] - phase[-lag]

        at = np.arange(1, count + 1) * s - 1
        if self.lowpass is None:
            dphi = phase[lag + at] - phase[at]
            return dphi, cfg.amplitude * np.sin(dphi)
        dphi_sub = phase[lag:] - phase[:total]
        b, a = self.lowpass
        quantum_sub, self.lp_state = lfilter(
            b, a, cfg.amplitude * np.sin(dphi_sub), zi=self.lp_state
        )
        return dphi_sub[at], quantum_sub[at]


class RawSource:
    """Stateful sample generator; repeated reads continue one stream.

    Randomness is drawn in fixed-size chunks from generators derived from
    ``config.rng_seed``, so the stream content does not depend on how the
    caller slices its reads.
    """

    def __init__(self, config: SimConfig, chunk_samples: int = 1 << 16):
        self.config = config
        self.chunk_samples = chunk_samples
        phase_ss, noise_ss, pilot_ss = np.random.SeedSequence(config.rng_seed).spawn(3)
        self._path = _QuantumPath(config, np.random.default_rng(phase_ss))
        self._noise_rng = np.random.default_rng(noise_ss)
        self.classical_std = self._calibrate_noise(pilot_ss)
        self._buffer: dict[str, np.ndarray] | None = None
        self._pos = 0

    def _calibrate_noise(self, pilot_ss) -> float:
        if self.config.detector_bandwidth is None:
            qvar = quantum_variance(self.config)
        else:
            # filtered sin(dphi) has no handy closed form: measure a pilot block
            pilot = _QuantumPath(self.config, np.random.default_rng(pilot_ss))
            pilot.chunk(PILOT_SAMPLES // 10)
            qvar = float(np.var(pilot.chunk(PILOT_SAMPLES)[1]))
        if math.isinf(self.config.gamma):
            return 0.0
        return math.sqrt(qvar / self.config.gamma)

    def _next_chunk(self) -> dict[str, np.ndarray]:
        dphi, quantum = self._path.chunk(self.chunk_samples)
        classical = self._noise_rng.normal(0.0, 1.0, self.chunk_samples) * self.classical_std
        volts = self.config.adc.mid_scale + quantum + classical
        return {
            "dphi": dphi,
            "quantum": quantum,
            "classical": classical,
            "codes": self.config.adc.quantize(volts),
        }

    def read_taps(self, count: int, taps=("dphi", "quantum", "classical", "codes")) -> dict[str, np.ndarray]:
        """Next ``count`` samples of each requested internal signal."""
        parts: dict[str, list] = {t: [] for t in taps}
        need = count
        while need:
            if self._buffer is None or self._pos == self.chunk_samples:
                self._buffer, self._pos = self._next_chunk(), 0
            take = min(need, self.chunk_samples - self._pos)
            for t in taps:
                parts[t].append(self._buffer[t][self._pos:self._pos + take])
            self._pos += take
            need -= take
        return {t: (np.concatenate(v) if v else np.empty(0)) for t, v in parts.items()}

    def read(self, count: int) -> np.ndarray:
        return self.read_taps(count, taps=("codes",))["codes"].astype(np.uint8, copy=False)


def simulate_phase(config: SimConfig, n_samples: int) -> np.ndarray:
    """Interferometer phase differences ``dphi`` (rad) at each sample instant."""
    return RawSource(config).read_taps(n_samples, taps=("dphi",))["dphi"]


def simulate_raw(config: SimConfig, n_samples: int) -> RawRecord:
    return RawRecord(RawSource(config).read(n_samples), config.digest())


def empirical_autocorrelation_profile(record: RawRecord, max_lag: int) -> np.ndarray:
    from .randtests import autocorrelation

    return autocorrelation(record.samples, max_lag)
