"""Statistical checks for raw and extracted streams.

A handful of SP 800-22 style tests (frequency, block frequency, runs),
a lagged-autocorrelation test and the Kolmogorov-Smirnov second-level
check used to aggregate p-values over many sub-blocks. The full suite
is out of scope; export packed bits and run the reference tool for that.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import gammaincc
from scipy.stats import kstwo

from .bits import BitBlock

ALPHA = 0.01


@dataclass
class TestReport:
    name: str
    statistic: float
    p_value: float
    alpha: float = ALPHA
    status: str = ""
    sub_results: list["TestReport"] = field(default_factory=list)
    detail: dict = field(default_factory=dict)

    __test__ = False  # not a pytest class

    def __post_init__(self):
        self.p_value = float(min(max(self.p_value, 0.0), 1.0))
        if not self.status:
            self.status = "pass" if self.p_value >= self.alpha else "fail"

    @property
    def passed(self) -> bool:
        return self.status == "pass"


def _bits(bits) -> np.ndarray:
    if isinstance(bits, BitBlock):
        return bits.to_array()
    return np.asarray(bits, dtype=np.uint8).ravel()


def autocorrelation(series, max_lag: int) -> np.ndarray:
    """Sample autocorrelation ``r(1..max_lag)`` about the global mean.

    The lagged cross sum is normalised by the norms of the two overlapping
    segments, so ``|r| <= 1`` exactly and a perfectly alternating series
    gives ``r(1) = -1``. For long series this agrees with the plain
    ``C(l) / C(0)`` ratio to O(l / N).
    """
    x = np.asarray(series, dtype=np.float64).ravel()
    if max_lag < 1:
        raise ValueError("max_lag must be >= 1")
    if len(x) <= 10 * max_lag:
        raise ValueError(f"need more than {10 * max_lag} values for max_lag={max_lag}")
    d = x - x.mean()
    sq = d * d
    total = float(sq.sum())
    if total == 0.0:
        raise ValueError("zero variance: autocorrelation undefined")
    head = total - np.cumsum(sq[::-1])[:max_lag]  # sum over d[:-lag]
    tail = total - np.cumsum(sq)[:max_lag]  # sum over d[lag:]
    out = np.empty(max_lag)
    for lag in range(1, max_lag + 1):
        denom = math.sqrt(head[lag - 1] * tail[lag - 1])
        if denom == 0.0:
            raise ValueError(f"zero variance in a lag-{lag} segment")
        out[lag - 1] = float(d[:-lag] @ d[lag:]) / denom
    return out


def frequency_test(bits, alpha: float = ALPHA) -> TestReport:
    x = _bits(bits)
    n = len(x)
    if n < 100:
        raise ValueError(f"frequency test needs >= 100 bits, got {n}")
    s_obs = abs(2 * int(x.sum()) - n) / math.sqrt(n)
    return TestReport("frequency", s_obs, math.erfc(s_obs / math.sqrt(2)), alpha)


def block_frequency_test(bits, block_len: int = 10_000, alpha: float = ALPHA) -> TestReport:
    x = _bits(bits)
    n_blocks = len(x) // block_len
    if n_blocks < 20:
        raise ValueError(f"block frequency test needs >= 20 blocks, got {n_blocks}")
    ones = x[: n_blocks * block_len].reshape(n_blocks, block_len).sum(axis=1, dtype=np.int64)
    pi = ones / block_len
    chi2 = 4.0 * block_len * float(((pi - 0.5) ** 2).sum())
    return TestReport(
        "block_frequency", chi2, float(gammaincc(n_blocks / 2, chi2 / 2)), alpha,
        detail={"blocks": n_blocks, "block_len": block_len},
    )


def runs_test(bits, alpha: float = ALPHA) -> TestReport:
    x = _bits(bits)
    n = len(x)
    if n < 100:
        raise ValueError(f"runs test needs >= 100 bits, got {n}")
    pi = float(x.mean())
    if abs(pi - 0.5) >= 2 / math.sqrt(n):
        return TestReport("runs", float("nan"), 0.0, alpha, status="not_applicable",
                          detail={"proportion": pi})
    v_obs = 1 + int(np.count_nonzero(x[1:] != x[:-1]))
    num = abs(v_obs - 2 * n * pi * (1 - pi))
    den = 2 * math.sqrt(2 * n) * pi * (1 - pi)
    return TestReport("runs", float(v_obs), math.erfc(num / den), alpha)


def autocorrelation_test(bits, max_lag: int = 100, alpha: float = ALPHA) -> TestReport:
    """Max |r(lag)| over ``1..max_lag``, Sidak-corrected against N(0, 1/N)."""
    x = _bits(bits)
    r = autocorrelation(x, max_lag)
    n = len(x)
    z = float(np.abs(r).max()) * math.sqrt(n)
    single = math.erfc(z / math.sqrt(2))
    p = -math.expm1(max_lag * math.log1p(-single)) if single < 1 else 1.0
    bound = 4 / math.sqrt(n)
    return TestReport(
        "autocorrelation", float(np.abs(r).max()), p, alpha,
        detail={"exceedances_4sigma": int((np.abs(r) >= bound).sum()), "max_lag": max_lag},
    )


def ks_uniformity(p_values, alpha: float = ALPHA) -> TestReport:
    """One-sample KS test of ``p_values`` against Uniform[0, 1].

    The p-value uses the exact finite-n distribution of D, which tends to
    the asymptotic Kolmogorov law for large n but is noticeably stricter
    at n ~ 10.
    """
    p = np.sort(np.asarray(p_values, dtype=np.float64))
    n = len(p)
    if n < 10:
        raise ValueError(f"KS uniformity needs >= 10 p-values, got {n}")
    i = np.arange(1, n + 1)
    d = float(max((i / n - p).max(), (p - (i - 1) / n).max()))
    return TestReport("ks_uniformity", d, float(kstwo.sf(d, n)), alpha)


def proportion_bounds(sub_blocks: int, alpha: float = ALPHA) -> tuple[float, float]:
    """Three-sigma acceptance band for the fraction of passing sub-blocks."""
    p_hat = 1 - alpha
    half = 3 * math.sqrt(p_hat * alpha / sub_blocks)
    return p_hat - half, min(1.0, p_hat + half)


@dataclass(frozen=True)
class SuiteConfig:
    sub_block_len: int = 1_000_000
    block_len: int = 10_000
    max_lag: int = 100
    alpha: float = ALPHA
    tests: tuple[str, ...] = ("frequency", "block_frequency", "runs", "autocorrelation")


def _run_one(name: str, bits: np.ndarray, cfg: SuiteConfig) -> TestReport:
    try:
        if name == "frequency":
            return frequency_test(bits, cfg.alpha)
        if name == "block_frequency":
            return block_frequency_test(bits, cfg.block_len, cfg.alpha)
        if name == "runs":
            return runs_test(bits, cfg.alpha)
        if name == "autocorrelation":
            return autocorrelation_test(bits, cfg.max_lag, cfg.alpha)
    except ValueError as exc:
        return TestReport(name, float("nan"), 0.0, cfg.alpha, status="error", detail={"error": str(exc)})
    raise KeyError(f"unknown test {name!r}")


def run_suite(bits, config: SuiteConfig = SuiteConfig()) -> list[TestReport]:
    """Run every configured test over sub-blocks and aggregate.

    Each returned report summarises one test: ``statistic`` is the pass
    proportion over sub-blocks and ``p_value`` the KS uniformity p-value of
    the sub-block p-values (or the single p-value when there is only one
    sub-block). A test passes when its proportion sits inside the
    confidence band and, with ten or more sub-blocks, the KS check passes.
    """
    x = _bits(bits)
    if len(x) < 1_000_000:
        raise ValueError(f"suite needs >= 10^6 bits, got {len(x)}")
    n_sub = max(1, len(x) // config.sub_block_len)
    subs = [x[i * config.sub_block_len:(i + 1) * config.sub_block_len] for i in range(n_sub)] \
        if n_sub > 1 else [x]
    lo, _ = proportion_bounds(n_sub, config.alpha)

    reports = []
    for name in config.tests:
        results = [_run_one(name, s, config) for s in subs]
        proportion = sum(r.passed for r in results) / n_sub
        ps = [r.p_value for r in results if r.status in ("pass", "fail")]
        detail = {"sub_blocks": n_sub, "proportion": proportion, "proportion_min": lo}
        if n_sub == 1:
            only = results[0]
            reports.append(TestReport(name, proportion, only.p_value, config.alpha,
                                      status=only.status, sub_results=results, detail=detail))
            continue
        ok = proportion >= lo
        if len(ps) >= 10:
            ks = ks_uniformity(ps, config.alpha)
            detail["ks_statistic"] = ks.statistic
            p_agg = ks.p_value
            ok = ok and ks.passed
        else:
            p_agg = 0.0
            ok = False
        reports.append(TestReport(name, proportion, p_agg, config.alpha,
                                  status="pass" if ok else "fail", sub_results=results, detail=detail))
    return reports


def suite_passed(reports: list[TestReport]) -> bool:
    return all(r.passed for r in reports)
