"""Min-entropy budget for a Gaussian quantum-noise source behind an ADC.

The chain is: quantum share of the measured signal power -> per-code
probabilities of a saturating quantiser -> min-entropy per sample ->
worst-case bit-discard accounting -> output length allowed by the
leftover hash lemma.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import ndtr

from .bits import DEFAULT_KEEP_MASK, kept_positions

#: Bin mass above which the quantised distribution is treated as a point mass.
DEGENERATE_MASS = 1.0 - 2.0 ** -64

#: Default ADC input range in mV. Chosen so that a 85.2 mV Gaussian centred
#: on the mid-scale code yields a most-likely-code probability of 0.011:
#: the bin width is p_max * sigma * sqrt(2*pi) ~= 2.349 mV, times 256 codes.
DEFAULT_FULL_SCALE_MV = 601.0


class DegenerateDistributionWarning(UserWarning):
    """Nearly all probability mass falls into a single ADC code."""


class EntropyBudgetError(ValueError):
    """Requested security bound cannot be met with the available entropy."""


@dataclass(frozen=True)
class AdcGeometry:
    bits: int = 8
    full_scale: float = DEFAULT_FULL_SCALE_MV
    offset: float = -DEFAULT_FULL_SCALE_MV / 2

    def __post_init__(self):
        if self.bits < 1:
            raise ValueError("adc bits must be >= 1")
        if self.full_scale <= 0:
            raise ValueError("adc full_scale must be positive")

    @property
    def codes(self) -> int:
        return 1 << self.bits

    @property
    def lsb(self) -> float:
        return self.full_scale / self.codes

    @property
    def mid_scale(self) -> float:
        """Centre voltage of code ``2**(bits-1)``."""
        return self.offset + (self.codes // 2 + 0.5) * self.lsb

    def edges(self) -> np.ndarray:
        """Inner bin edges u_1..u_{codes-1}; the outer bins are unbounded."""
        return self.offset + self.lsb * np.arange(1, self.codes)

    def quantize(self, volts: np.ndarray) -> np.ndarray:
        codes = np.floor((np.asarray(volts) - self.offset) / self.lsb)
        return np.clip(codes, 0, self.codes - 1).astype(np.uint8 if self.bits <= 8 else np.uint16)

    def to_mv(self, codes: np.ndarray) -> np.ndarray:
        """Bin-centre voltage of each code."""
        return self.offset + (np.asarray(codes, dtype=np.float64) + 0.5) * self.lsb


@dataclass(frozen=True)
class EntropyModel:
    gamma: float = 6.87
    mean_square_voltage: float = 8311.0
    adc: AdcGeometry = AdcGeometry()

    def __post_init__(self):
        if self.gamma <= 0:
            raise ValueError("gamma must be positive")
        if self.mean_square_voltage <= 0:
            raise ValueError("mean_square_voltage must be positive")

    @property
    def sigma_q(self) -> float:
        return sigma_q(self)


def sigma_q(model: EntropyModel) -> float:
    """Standard deviation (mV) of the quantum part of the detector signal."""
    g = model.gamma
    return math.sqrt(g / (g + 1.0) * model.mean_square_voltage)


def gaussian_code_distribution(sigma: float, adc: AdcGeometry, mean: float | None = None) -> np.ndarray:
    """Probability of each ADC code for a Gaussian input, tails saturating."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    mu = adc.mid_scale if mean is None else mean
    cdf = ndtr((adc.edges() - mu) / sigma)
    cdf = np.concatenate([[0.0], cdf, [1.0]])
    return np.diff(cdf)


def min_entropy_gaussian(sigma: float, adc: AdcGeometry = AdcGeometry(), mean: float | None = None) -> float:
    """Min-entropy in bits per sample of a quantised Gaussian.

    Emits :class:`DegenerateDistributionWarning` when one code holds
    essentially all of the mass; the returned value is then ~0.
    """
    p_max = float(gaussian_code_distribution(sigma, adc, mean).max())
    if p_max >= DEGENERATE_MASS:
        warnings.warn(
            f"sigma={sigma:g} mV puts {p_max:.17g} of the mass in one code",
            DegenerateDistributionWarning,
            stacklevel=2,
        )
    return max(0.0, -math.log2(p_max))


def max_code_probability(sigma: float, adc: AdcGeometry = AdcGeometry(), mean: float | None = None) -> float:
    return float(gaussian_code_distribution(sigma, adc, mean).max())


def budget_after_discard(h: float, keep_mask: int = DEFAULT_KEEP_MASK) -> tuple[float, float]:
    """Worst-case entropy left after dropping the bits outside ``keep_mask``.

    Each dropped bit is charged a full bit of entropy. Returns
    ``(bits per sample, bits per kept raw bit)``.
    """
    if h < 0:
        raise ValueError("h must be non-negative")
    kept = len(kept_positions(keep_mask))
    remaining = max(h - (8 - kept), 0.0)
    return remaining, remaining / kept


def leftover_hash_m(n: int, h_per_bit: float, epsilon_exponent: int) -> int:
    """Output length ``floor(n * h - 2 * log2(1/eps))`` for ``eps = 2**-epsilon_exponent``."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if not 0 < h_per_bit <= 1:
        raise ValueError("h_per_bit must lie in (0, 1]")
    if epsilon_exponent < 1:
        raise ValueError("epsilon_exponent must be >= 1")
    # the 1e-9 absorbs float error in products like 1520 * 0.7
    m = math.floor(n * h_per_bit - 2 * epsilon_exponent + 1e-9)
    if m < 1:
        raise EntropyBudgetError(
            f"entropy budget too small for security bound: n={n}, h={h_per_bit}, "
            f"epsilon=2^-{epsilon_exponent} leaves m={m}"
        )
    return m


def extraction_efficiency(m: int, n: int, h_per_bit: float) -> float:
    return m / (n * h_per_bit)


@dataclass(frozen=True)
class EntropyBudget:
    gamma: float
    sigma_q: float
    p_max: float
    h_min_per_sample: float
    kept_bits_per_sample: int
    h_min_after_discard: float
    h_min_per_raw_bit: float
    n: int
    epsilon_exponent: int
    m: int
    m_max: int
    extraction_efficiency: float

    def report_lines(self) -> list[str]:
        return [
            f"gamma: {self.gamma:g}",
            f"sigma_q: {self.sigma_q:.4f}",
            f"p_max: {self.p_max:.6f}",
            f"h_min_sample: {self.h_min_per_sample:.4f}",
            f"kept_bits: {self.kept_bits_per_sample}",
            f"h_min_after_discard: {self.h_min_after_discard:.4f}",
            f"h_min_bit: {self.h_min_per_raw_bit:.4f}",
            f"n: {self.n}",
            f"m: {self.m}",
            f"m_max: {self.m_max}",
            f"epsilon_exponent: {self.epsilon_exponent}",
            f"efficiency: {self.extraction_efficiency:.4f}",
        ]


def compute_budget(
    model: EntropyModel,
    n: int = 1520,
    epsilon_exponent: int = 20,
    keep_mask: int = DEFAULT_KEEP_MASK,
    m: int | None = None,
    resolution: float | None = 0.1,
) -> EntropyBudget:
    """Run the whole chain for ``model``.

    ``resolution`` floors the per-sample min-entropy to that many bits
    before discard accounting (0.1 reproduces the one-decimal figure
    the rest of the budget is quoted against); ``None`` disables it.
    ``m`` defaults to the largest length the lemma allows.
    """
    sq = sigma_q(model)
    p_max = max_code_probability(sq, model.adc)
    h = min_entropy_gaussian(sq, model.adc)
    if resolution:
        h = math.floor(h / resolution + 1e-9) * resolution
        h = round(h, 12)
    after, per_bit = budget_after_discard(h, keep_mask)
    m_max = leftover_hash_m(n, per_bit, epsilon_exponent) if per_bit > 0 else 0
    if m_max < 1:
        raise EntropyBudgetError("no entropy left after bit discard")
    m = m_max if m is None else m
    return EntropyBudget(
        gamma=model.gamma,
        sigma_q=sq,
        p_max=p_max,
        h_min_per_sample=h,
        kept_bits_per_sample=len(kept_positions(keep_mask)),
        h_min_after_discard=after,
        h_min_per_raw_bit=per_bit,
        n=n,
        epsilon_exponent=epsilon_exponent,
        m=m,
        m_max=m_max,
        extraction_efficiency=extraction_efficiency(m, n, per_bit),
    )
