"""Acceptance criteria, one test each.

Every check prints a single ``C<n> PASS|FAIL: ...`` line. Under pytest the
lines are collected and repeated in the terminal summary; running this
file directly (``python tests/test_acceptance.py``) prints them as it goes.
"""

import io
import math
import sys
import time

import numpy as np
import pytest

from toeplitz_qrng.bits import BitBlock, select_bits_array, xor_accumulate
from toeplitz_qrng.entropy import (
    EntropyModel,
    budget_after_discard,
    compute_budget,
    leftover_hash_m,
    max_code_probability,
    min_entropy_gaussian,
    sigma_q,
)
from toeplitz_qrng.pipeline import PipelineConfig, bench_end_to_end, bench_extractor, run_pipeline
from toeplitz_qrng.randtests import autocorrelation, run_suite
from toeplitz_qrng.source import SimConfig, simulate_phase, simulate_raw
from toeplitz_qrng.stabilization import PidConfig, PlantState, run_loop
from toeplitz_qrng.toeplitz import (
    PipelinedExtractor,
    ToeplitzParams,
    build_matrix,
    extract_dense_batch,
    random_seed,
)

RESULTS: list[str] = []


def record(tag, ok, detail):
    line = f"{tag} {'PASS' if ok else 'FAIL'}: {detail}"
    RESULTS.append(line)
    print(line, flush=True)
    return ok


def lag1_cov(x):
    x = x - x.mean()
    return float(np.dot(x[:-1], x[1:]) / len(x))


def extracted_bits(cfg, n_bits):
    samples = math.ceil(n_bits / cfg.extractor.m) * cfg.extractor.n // 5 + 304
    buf = io.BytesIO()
    run_pipeline(cfg, samples, buf)
    bits = np.unpackbits(np.frombuffer(buf.getvalue(), np.uint8), bitorder="little")
    assert len(bits) >= n_bits
    return bits[:n_bits]


def check_c1():
    model = EntropyModel(gamma=6.87, mean_square_voltage=8311.0)
    sq = sigma_q(model)
    p = max_code_probability(sq, model.adc)
    h = min_entropy_gaussian(sq, model.adc)
    b = compute_budget(model)
    after, per_bit = budget_after_discard(b.h_min_per_sample)
    m = leftover_hash_m(1520, 0.7, 20)
    ok = (
        abs(sq - 85.2) <= 0.1
        and abs(model.adc.full_scale - 601) < 1e-9
        and abs(p - 0.011) <= 5e-4
        and abs(h - 6.5) <= 0.1
        and (after, per_bit) == (3.5, 0.7)
        and (b.h_min_after_discard, b.h_min_per_raw_bit) == (3.5, 0.7)
        and m == 1024 and b.m == 1024
        and abs(b.extraction_efficiency - 0.96) <= 0.005
    )
    return record(
        "C1", ok,
        f"sigma_q={sq:.3f} p_max={p:.5f} H={h:.3f} -> {b.h_min_per_sample} after={after} "
        f"per_bit={per_bit} m={m} eff={b.extraction_efficiency:.4f}",
    )


def check_c2():
    rng = np.random.default_rng(20240601)
    cases = {(32, 48, 8): 1000, (1024, 1520, 80): 100}
    mismatches = 0
    for (m, n, k), count in cases.items():
        p = ToeplitzParams(m, n, k)
        for _ in range(count):
            seed = random_seed(p, rng)
            x = rng.integers(0, 2, (1, n), dtype=np.uint8)
            got = PipelinedExtractor(seed, p).extract_bits(x)
            mismatches += not np.array_equal(got, extract_dense_batch(build_matrix(seed, p), x))

    p = ToeplitzParams()
    seed = random_seed(p, rng)
    ext = PipelinedExtractor(seed, p)
    mat = build_matrix(seed, p)
    linear = True
    for _ in range(50):
        x = BitBlock.from_bits(rng.integers(0, 2, p.n, dtype=np.uint8))
        y = BitBlock.from_bits(rng.integers(0, 2, p.n, dtype=np.uint8))
        fx, fy = (ext.extract_bits(v.to_array()[None])[0] for v in (x, y))
        fxy = ext.extract_bits(xor_accumulate(x, y).to_array()[None])[0]
        linear &= np.array_equal(fxy, fx ^ fy)
    eye = np.eye(p.n, dtype=np.uint8)
    one_hot = np.array_equal(ext.extract_bits(eye).T, mat.to_dense())
    ok = mismatches == 0 and linear and one_hot
    return record("C2", ok, f"1100 cases, mismatches={mismatches}, linearity={linear}, one_hot_all_columns={one_hot}")


def check_c3():
    cfg = PipelineConfig(sim=SimConfig(sample_rate=2e9, rng_seed=2024))
    n = 10**7
    raw = simulate_raw(cfg.sim, n).samples
    r_raw = np.abs(autocorrelation(raw, 100))
    bits = extracted_bits(cfg, n)
    r_out = np.abs(autocorrelation(bits, 100))
    bound = 4 / math.sqrt(n)
    exceed = int((r_out >= bound).sum())
    ok = r_raw.max() > 0.05 and exceed <= 1 and r_out.max() * 10 <= r_raw.max()
    return record(
        "C3", ok,
        f"raw max|r|={r_raw.max():.4f} (r1={r_raw[0]:.4f}); extracted max|r|={r_out.max():.2e}, "
        f"bound={bound:.2e}, exceedances={exceed}",
    )


def check_c4():
    n = 10**6
    base = SimConfig(rng_seed=404)
    dphi = simulate_phase(base, n)
    target = base.phase_variance
    se_var = math.sqrt(2.0 / n) * target
    var_ok = abs(dphi.var() - target) < 3 * se_var

    c_disjoint = lag1_cov(dphi)
    se0 = target / math.sqrt(n)
    disjoint_ok = abs(c_disjoint) < 4 * se0

    over = SimConfig(sample_rate=2e9, rng_seed=405)
    d2 = simulate_phase(over, n)
    g1 = 2 * over.phase_diffusion * 0.3e-9
    se1 = math.sqrt((target**2 + 3 * g1**2) / n)
    c_over = lag1_cov(d2)
    over_ok = abs(c_over - g1) < 4 * se1
    ok = var_ok and disjoint_ok and over_ok
    return record(
        "C4", ok,
        f"Var={dphi.var():.4f} vs {target} (3SE={3 * se_var:.4f}); cov1 disjoint={c_disjoint:.5f}; "
        f"cov1 overlap={c_over:.4f} vs {g1:.4f} (4SE={4 * se1:.4f})",
    )


def check_c5():
    n = 10**8
    bits = extracted_bits(PipelineConfig(), n)
    reports = run_suite(bits)
    parts = []
    ok = True
    for r in reports:
        ks = r.detail.get("ks_statistic")
        parts.append(f"{r.name}={r.status}(prop={r.statistic:.2f},ks_p={r.p_value:.3f})")
        ok &= r.passed and r.detail["proportion"] >= r.detail["proportion_min"] and ks is not None
    return record("C5", ok, f"{n} bits, {reports[0].detail['sub_blocks']} sub-blocks: " + " ".join(parts))


def check_c6():
    step = run_loop(PidConfig(), PlantState(), 500, {0: 0.3})
    settled = abs(step.phase_error[-1]) < 0.01
    first = int(np.argmax(np.abs(step.phase_error) < 0.01))
    stays = bool(np.all(np.abs(step.phase_error[first:]) < 0.01))
    per_step = 1e-3
    plant = PlantState(drift_rate_std=per_step / math.sqrt(PidConfig().loop_period))
    drift = run_loop(PidConfig(), plant, 10**4, rng_seed=6)
    rms = drift.rms_error()
    ok = settled and stays and rms < 0.05
    return record("C6", ok, f"step settles at iteration {first}, final={step.phase_error[-1]:.2e}; drift rms={rms:.2e}")


def check_c7():
    cfg = PipelineConfig()
    rep = bench_extractor(cfg, duration=5.0, workers=1)
    ratio = rep["out_rate"] / rep["in_rate"]
    e2e = bench_end_to_end(cfg, duration=3.0)
    target = 1024 / 1520
    ok = rep["out_rate"] >= 100e6 and abs(ratio / target - 1) <= 0.01 and abs(e2e["ratio"] / target - 1) <= 0.01
    return record(
        "C7", ok,
        f"extractor-only out={rep['out_rate'] / 1e6:.1f} Mbit/s (1 worker), ratio={ratio:.5f}, "
        f"end-to-end ratio={e2e['ratio']:.5f} (target {target:.5f})",
    )


def check_c8():
    cfg = PipelineConfig(sim=SimConfig(rng_seed=77), seed_rng_seed=5, refresh_period=500)
    n = 304 * 5000 + 123
    outs, hashes = [], []
    for workers in (1, 1, 2, 8):
        buf = io.BytesIO()
        mf = run_pipeline(cfg, n, buf, workers=workers)
        outs.append(buf.getvalue())
        hashes.append(mf.config_hash)
    ok = len(set(hashes)) == 1 and all(o == outs[0] for o in outs) and len(outs[0]) == 5000 * 128
    return record("C8", ok, f"{len(outs[0])} bytes identical across runs and workers 1,1,2,8; hash {hashes[0][:12]}")


CHECKS = [check_c1, check_c2, check_c3, check_c4, check_c5, check_c6, check_c7, check_c8]


@pytest.mark.parametrize("check", CHECKS, ids=[f"C{i}" for i in range(1, 9)])
def test_acceptance(check):
    assert check()


if __name__ == "__main__":
    results = []
    for c in CHECKS:
        t0 = time.perf_counter()
        results.append(c())
        print(f"   ({time.perf_counter() - t0:.1f} s)")
    sys.exit(0 if all(results) else 1)
