"""Command line entry point: ``qrng <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .bits import select_bits_array
from .pipeline import (
    Extraction,
    PipelineConfig,
    PipelineError,
    bench,
    default_config_text,
    load_config,
    packed_file_bits,
    run_pipeline,
    sample_file_chunks,
)
from .randtests import SuiteConfig, autocorrelation, run_suite, suite_passed
from .source import RawSource
from .stabilization import PidConfig, PlantState, read_disturbances, run_loop
from .toeplitz import prng_seeds

log = logging.getLogger("toeplitz_qrng")

ALL_TESTS = ("frequency", "block_frequency", "runs", "autocorrelation")


def _write_meta(path: Path, meta: dict) -> None:
    Path(f"{path}.meta.yaml").write_text(yaml.safe_dump(meta, sort_keys=False))


def _open_out(path: str, stage: str):
    try:
        return open(path, "wb")
    except OSError as exc:
        raise PipelineError(stage, f"cannot open {path}: {exc}") from exc


def cmd_simulate(args) -> None:
    cfg = load_config(args.config)
    sim = cfg.sim if args.seed is None else dataclasses.replace(cfg.sim, rng_seed=args.seed)
    source = RawSource(sim)
    with _open_out(args.out, "simulate") as fh:
        left = args.samples
        while left:
            take = min(left, 1 << 20)
            fh.write(source.read(take).tobytes())
            left -= take
    _write_meta(Path(args.out), {
        "kind": "raw_samples",
        "count": args.samples,
        "config_hash": sim.digest(),
        "config": dataclasses.asdict(sim),
        "tool_version": __version__,
    })
    print(f"wrote {args.samples} samples to {args.out}")


def _finish_run(manifest, out: str, cfg: PipelineConfig) -> None:
    Path(f"{out}.manifest.yaml").write_text(manifest.to_text())
    print(f"samples: {manifest.samples}")
    print(f"kept_bits: {manifest.kept_bits}")
    print(f"blocks: {manifest.blocks}")
    print(f"residual_bits: {manifest.residual_bits}")
    print(f"bits_out: {manifest.bits_out}")
    print(f"config_hash: {manifest.config_hash}")


def cmd_run(args) -> None:
    cfg = load_config(args.config)
    with _open_out(args.out, "output") as fh:
        mf = run_pipeline(cfg, args.samples, fh, workers=args.workers)
    _finish_run(mf, args.out, cfg)


def cmd_extract(args) -> None:
    cfg = load_config(args.config)
    run = Extraction(cfg, args.workers)
    try:
        if args.format == "samples":
            stream = run.output_from_samples(sample_file_chunks(args.input))
        else:
            stream = run.output_from_bits(packed_file_bits(args.input))
        with _open_out(args.out, "output") as fh:
            for chunk in stream:
                fh.write(chunk)
    except OSError as exc:
        raise PipelineError("input", str(exc)) from exc
    _finish_run(run.manifest, args.out, cfg)


def cmd_budget(args) -> None:
    cfg = load_config(args.config)
    b = cfg.budget()
    print("\n".join(b.report_lines()))


def cmd_gen_seed(args) -> None:
    cfg = load_config(args.config)
    params = cfg.extractor
    seeds = prng_seeds(params, args.rng_seed)
    with _open_out(args.out, "seed") as fh:
        for _ in range(args.count):
            fh.write(next(seeds).data)
    _write_meta(Path(args.out), {"kind": "toeplitz_seed", "m": params.m, "n": params.n,
                                 "seeds": args.count, "source": f"prng:{args.rng_seed}"})
    print(f"wrote {args.count} seed(s) of {params.seed_length} bits to {args.out}")


def cmd_analyze(args) -> None:
    cfg = load_config(args.config)
    try:
        data = np.fromfile(args.input, dtype=np.uint8)
    except OSError as exc:
        raise PipelineError("input", str(exc)) from exc
    if args.format == "samples":
        series = data
        bits = select_bits_array(data, cfg.keep_mask)
    else:
        bits = np.unpackbits(data, bitorder="little")
        series = bits
    tests = ALL_TESTS if args.tests == "all" else tuple(t.strip() for t in args.tests.split(","))
    unknown = set(tests) - set(ALL_TESTS)
    if unknown:
        raise PipelineError("analyze", f"unknown tests: {sorted(unknown)}")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    try:
        r = autocorrelation(series, args.max_lag)
    except ValueError as exc:
        raise PipelineError("analyze", str(exc)) from exc
    with open(out / "autocorrelation.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["lag", "r"])
        for lag, val in enumerate(r, 1):
            w.writerow([lag, f"{val:.9g}"])

    lines = [
        f"input: {args.input}",
        f"format: {args.format}",
        f"values: {len(series)}",
        f"bits: {len(bits)}",
        f"max_abs_r: {float(np.abs(r).max()):.6g}",
        f"r_bound_4sigma: {4 / math.sqrt(len(series)):.6g}",
    ]
    rows = []
    if len(bits) >= 1_000_000:
        suite = SuiteConfig(sub_block_len=args.sub_block_len, max_lag=args.max_lag, tests=tests)
        reports = run_suite(bits, suite)
        for rep in reports:
            lines.append(f"{rep.name}: {rep.status} proportion={rep.statistic:.4f} p={rep.p_value:.6g}")
            rows.append([rep.name, rep.status, rep.statistic, rep.p_value,
                         rep.detail.get("sub_blocks"), rep.detail.get("proportion_min")])
        lines.append(f"suite: {'pass' if suite_passed(reports) else 'fail'}")
    else:
        lines.append("suite: skipped (needs >= 10^6 bits)")
    with open(out / "report.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["test", "status", "proportion", "p_value", "sub_blocks", "proportion_min"])
        w.writerows(rows)
    (out / "report.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))


def cmd_stabilize(args) -> None:
    pid = PidConfig(**{k: getattr(args, k) for k in ("kp", "ki", "kd") if getattr(args, k) is not None})
    disturbances = read_disturbances(args.disturbance) if args.disturbance else {}
    plant = PlantState(drift_rate_std=args.drift / math.sqrt(pid.loop_period))
    trace = run_loop(pid, plant, args.steps, disturbances, rng_seed=args.seed)
    trace.write_csv(args.out)
    print(f"steps: {args.steps}")
    print(f"rms_phase_error: {trace.rms_error():.6g}")
    print(f"final_phase_error: {trace.phase_error[-1]:.6g}")


def cmd_bench(args) -> None:
    cfg = load_config(args.config)
    if args.rate_cap:
        cfg = cfg.with_(rate_cap=args.rate_cap)
    report = bench(cfg, args.duration)
    ext, e2e = report["extractor_only"], report["end_to_end"]
    print(f"extractor_only_in_rate: {ext['in_rate'] / 1e6:.1f} Mbit/s")
    print(f"extractor_only_out_rate: {ext['out_rate'] / 1e6:.1f} Mbit/s")
    print(f"end_to_end_out_rate: {e2e['out_rate'] / 1e6:.2f} Mbit/s")
    print(f"end_to_end_ratio: {e2e['ratio']:.5f} (m/n = {cfg.extractor.ratio:.5f})")
    if "capped" in report:
        cap = report["capped"]
        print(f"capped_rate: {cap['delivered_rate'] / 1e6:.2f} Mbit/s (cap {cap['rate_cap'] / 1e6:.2f})")
    ref = report["reference"]
    print(f"reference_fpga_output_limit: {ref['fpga_output_limit'] / 1e9:.2f} Gbit/s (hardware, informational)")
    if args.json:
        Path(args.json).write_text(json.dumps(report, indent=2))


def cmd_serve(args) -> None:
    from .pipeline import QrngServer

    cfg = load_config(args.config)
    if args.rate_cap:
        cfg = cfg.with_(rate_cap=args.rate_cap)
    server = QrngServer(cfg, (args.host, args.port))
    host, port = server.server_address[:2]
    print(f"serving on {host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()


def cmd_config(args) -> None:
    text = default_config_text()
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="qrng", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def with_config(sp):
        sp.add_argument("--config", help="YAML config file (defaults built in)")
        return sp

    sp = with_config(sub.add_parser("simulate", help="generate raw ADC samples"))
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = with_config(sub.add_parser("run", help="simulate and extract in one pass"))
    sp.add_argument("--samples", type=int, required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_run)

    sp = with_config(sub.add_parser("extract", help="extract a raw sample or packed-bit file"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--format", choices=("samples", "bits"), default="samples")
    sp.add_argument("--out", required=True)
    sp.add_argument("--workers", type=int)
    sp.set_defaults(func=cmd_extract)

    sp = with_config(sub.add_parser("budget", help="print the min-entropy budget"))
    sp.set_defaults(func=cmd_budget)

    sp = with_config(sub.add_parser("gen-seed", help="write a Toeplitz seed file"))
    sp.add_argument("--out", required=True)
    sp.add_argument("--rng-seed", type=int, default=1)
    sp.add_argument("--count", type=int, default=1)
    sp.set_defaults(func=cmd_gen_seed)

    sp = with_config(sub.add_parser("analyze", help="randomness analysis of a file"))
    sp.add_argument("--in", dest="input", required=True)
    sp.add_argument("--format", choices=("bits", "samples"), default="bits")
    sp.add_argument("--tests", default="all")
    sp.add_argument("--max-lag", type=int, default=100)
    sp.add_argument("--sub-block-len", type=int, default=1_000_000)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("stabilize", help="simulate the interferometer PID loop")
    sp.add_argument("--steps", type=int, required=True)
    sp.add_argument("--disturbance", help="CSV of step,delta phase kicks")
    sp.add_argument("--drift", type=float, default=0.0, help="random-walk std per step (rad)")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--kp", type=float)
    sp.add_argument("--ki", type=float)
    sp.add_argument("--kd", type=float)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_stabilize)

    sp = with_config(sub.add_parser("bench", help="measure throughput"))
    sp.add_argument("--duration", type=float, default=6.0)
    sp.add_argument("--rate-cap", type=float, help="bits/s")
    sp.add_argument("--json", help="also write the full report here")
    sp.set_defaults(func=cmd_bench)

    sp = with_config(sub.add_parser("serve", help="stream extracted bytes over TCP"))
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=5555)
    sp.add_argument("--rate-cap", type=float, help="bits/s per client")
    sp.set_defaults(func=cmd_serve)

    sp = sub.add_parser("config", help="print the default config file")
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_config)
    return p


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    try:
        args.func(args)
    except PipelineError as exc:
        print(f"error{exc}", file=sys.stderr)
        return 2
    except OSError as exc:
        print(f"error[{args.command}] {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
