"""End-to-end generator: simulate -> select bits -> frame -> extract -> deliver."""

from __future__ import annotations

import dataclasses
import logging
import socket
import socketserver
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator

import numpy as np
import yaml

from . import __version__
from .bits import DEFAULT_KEEP_MASK, kept_positions, select_bits_array
from .entropy import AdcGeometry, EntropyBudget, EntropyModel, compute_budget
from .source import RawSource, SimConfig, config_digest
from .toeplitz import (
    SeedSchedule,
    ToeplitzParams,
    extract_batches,
    iter_seed_file,
    prng_seeds,
    random_seed,
)

log = logging.getLogger(__name__)

#: Reference rates (bits/s) of the hardware module, reported for comparison only.
FPGA_INPUT_LIMIT = 5e9
REFERENCE_RATES = {
    "sfp": 3.2e9,
    "ethernet": 968.7e6,
    "usb2": 259.5e6,
}

BATCH_BLOCKS = 256


class PipelineError(RuntimeError):
    """Failure tagged with the pipeline stage it came from."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


@dataclass(frozen=True)
class PipelineConfig:
    sim: SimConfig = SimConfig()
    entropy: EntropyModel = EntropyModel()
    extractor: ToeplitzParams = ToeplitzParams()
    seed_file: str | None = None
    seed_rng_seed: int = 1
    refresh_period: int | None = None
    keep_mask: int = DEFAULT_KEEP_MASK
    h_min_resolution: float | None = 0.1
    rate_cap: float | None = None
    workers: int = 1

    def budget(self) -> EntropyBudget:
        return compute_budget(
            self.entropy,
            n=self.extractor.n,
            epsilon_exponent=self.extractor.epsilon_exponent,
            keep_mask=self.keep_mask,
            m=self.extractor.m,
            resolution=self.h_min_resolution,
        )

    def validate(self) -> "PipelineConfig":
        try:
            kept_positions(self.keep_mask)
            budget = self.budget()
        except ValueError as exc:
            raise PipelineError("config", str(exc)) from exc
        if self.extractor.m >= self.extractor.n:
            raise PipelineError("config", f"m={self.extractor.m} must be smaller than n={self.extractor.n}")
        if self.extractor.m > budget.m_max:
            raise PipelineError(
                "config",
                f"m={self.extractor.m} exceeds the leftover-hash limit {budget.m_max} "
                f"for n={self.extractor.n}, h={budget.h_min_per_raw_bit:.4f} bits/bit, "
                f"epsilon=2^-{self.extractor.epsilon_exponent}",
            )
        if self.adc_mismatch():
            raise PipelineError("config", "simulator and entropy model use different ADC geometry")
        if self.workers < 1:
            raise PipelineError("config", "workers must be >= 1")
        if self.rate_cap is not None and self.rate_cap <= 0:
            raise PipelineError("config", "rate_cap must be positive")
        return self

    def adc_mismatch(self) -> bool:
        return self.sim.adc != self.entropy.adc

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d.pop("workers")  # does not affect output
        return d

    def digest(self) -> str:
        return config_digest(self.to_dict())

    def with_(self, **changes) -> "PipelineConfig":
        return dataclasses.replace(self, **changes)


_SECTIONS = {"sim", "adc", "entropy", "extractor", "pipeline"}


def config_from_mapping(raw: dict | None) -> PipelineConfig:
    """Build a config from the nested mapping used in config files.

    Recognised sections: ``sim``, ``adc``, ``entropy``, ``extractor`` and
    ``pipeline``; the ADC section is shared by simulator and entropy model.
    """
    raw = dict(raw or {})
    unknown = set(raw) - _SECTIONS
    if unknown:
        raise PipelineError("config", f"unknown sections: {sorted(unknown)}")
    try:
        adc = AdcGeometry(**raw.get("adc", {}))
        if "adc" in raw and "offset" not in raw["adc"]:
            adc = dataclasses.replace(adc, offset=-adc.full_scale / 2)
        sim = SimConfig(adc=adc, **raw.get("sim", {}))
        ent_raw = dict(raw.get("entropy", {}))
        resolution = ent_raw.pop("h_min_resolution", 0.1)
        entropy = EntropyModel(adc=adc, **ent_raw)
        ext_raw = dict(raw.get("extractor", {}))
        seed_file = ext_raw.pop("seed_file", None)
        seed_rng_seed = ext_raw.pop("seed_rng_seed", 1)
        refresh = ext_raw.pop("refresh_period", None)
        extractor = ToeplitzParams(**ext_raw)
        pipe = dict(raw.get("pipeline", {}))
        cfg = PipelineConfig(
            sim=sim,
            entropy=entropy,
            extractor=extractor,
            seed_file=seed_file,
            seed_rng_seed=seed_rng_seed,
            refresh_period=refresh,
            h_min_resolution=resolution,
            **pipe,
        )
    except (TypeError, ValueError) as exc:
        raise PipelineError("config", str(exc)) from exc
    return cfg.validate()


def load_config(path: str | Path | None) -> PipelineConfig:
    if path is None:
        return PipelineConfig().validate()
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise PipelineError("config", f"cannot read {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise PipelineError("config", f"bad config syntax: {exc}") from exc
    return config_from_mapping(raw)


def default_config_text() -> str:
    cfg = PipelineConfig()
    d = {
        "sim": {k: v for k, v in dataclasses.asdict(cfg.sim).items() if k != "adc"},
        "adc": dataclasses.asdict(cfg.sim.adc),
        "entropy": {
            "gamma": cfg.entropy.gamma,
            "mean_square_voltage": cfg.entropy.mean_square_voltage,
            "h_min_resolution": cfg.h_min_resolution,
        },
        "extractor": {
            **dataclasses.asdict(cfg.extractor),
            "seed_file": cfg.seed_file,
            "seed_rng_seed": cfg.seed_rng_seed,
            "refresh_period": cfg.refresh_period,
        },
        "pipeline": {"keep_mask": cfg.keep_mask, "rate_cap": cfg.rate_cap, "workers": cfg.workers},
    }
    return yaml.safe_dump(d, sort_keys=False)


def seed_schedule(config: PipelineConfig) -> tuple[SeedSchedule, str]:
    """Seed schedule plus a provenance string for the manifest."""
    params = config.extractor
    try:
        if config.seed_file:
            seeds = iter_seed_file(Path(config.seed_file).read_bytes(), params)
            provenance = f"file:{config.seed_file}"
        else:
            seeds = prng_seeds(params, config.seed_rng_seed)
            provenance = f"prng:{config.seed_rng_seed} (simulation only, not a secret seed)"
        first = next(seeds)
        return SeedSchedule(first, params, config.refresh_period,
                            seeds if config.refresh_period else None), provenance
    except (OSError, ValueError, StopIteration) as exc:
        raise PipelineError("seed", str(exc)) from exc


class Framer:
    """Cuts a bit stream into packed ``n``-bit blocks, carrying the remainder."""

    def __init__(self, n: int):
        self.n = n
        self._carry = np.empty(0, dtype=np.uint8)
        self.bits_in = 0

    def push(self, bits: np.ndarray) -> np.ndarray:
        self.bits_in += len(bits)
        bits = np.concatenate([self._carry, bits]) if len(self._carry) else bits
        blocks = len(bits) // self.n
        self._carry = bits[blocks * self.n:].copy()
        whole = bits[: blocks * self.n].reshape(blocks, self.n)
        return np.packbits(whole, axis=1, bitorder="little")

    @property
    def residual(self) -> int:
        return len(self._carry)


class BitPacker:
    """Concatenates ``m``-bit output blocks into a continuous byte stream."""

    def __init__(self, m: int):
        self.m = m
        self._carry = np.empty(0, dtype=np.uint8)

    def push(self, packed: np.ndarray) -> bytes:
        if self.m % 8 == 0:
            return packed.tobytes()
        bits = np.unpackbits(packed, axis=1, count=self.m, bitorder="little").ravel()
        bits = np.concatenate([self._carry, bits])
        whole = len(bits) // 8 * 8
        self._carry = bits[whole:]
        return np.packbits(bits[:whole], bitorder="little").tobytes()

    def flush(self) -> bytes:
        out = np.packbits(self._carry, bitorder="little").tobytes() if len(self._carry) else b""
        self._carry = np.empty(0, dtype=np.uint8)
        return out


@dataclass
class RunManifest:
    config: dict
    config_hash: str
    tool_version: str = __version__
    seed_provenance: str = ""
    samples: int = 0
    kept_bits: int = 0
    blocks: int = 0
    residual_bits: int = 0
    bits_out: int = 0
    seeds_used: int = 0
    elapsed_s: float = 0.0
    throughput: dict = field(default_factory=dict)
    workers: int = 1

    def check_counts(self, m: int, n: int) -> bool:
        return self.bits_out == (self.kept_bits // n) * m

    def to_text(self) -> str:
        return yaml.safe_dump(dataclasses.asdict(self), sort_keys=False)


class _Counter:
    def __init__(self):
        self.samples = 0


def _sample_chunks(source_chunks: Iterable[np.ndarray], counter: _Counter) -> Iterator[np.ndarray]:
    for chunk in source_chunks:
        counter.samples += len(chunk)
        yield chunk


def simulated_samples(config: PipelineConfig, n_samples: int | None, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    """Raw ADC codes from the simulator, in chunks; endless if ``n_samples`` is None."""
    source = RawSource(config.sim, chunk_samples=chunk)
    remaining = n_samples
    while remaining is None or remaining > 0:
        take = chunk if remaining is None else min(chunk, remaining)
        yield source.read(take)
        if remaining is not None:
            remaining -= take


def sample_file_chunks(path: str | Path, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    with open(path, "rb") as fh:
        while data := fh.read(chunk):
            yield np.frombuffer(data, dtype=np.uint8)


def packed_file_bits(path: str | Path, chunk: int = 1 << 16) -> Iterator[np.ndarray]:
    with open(path, "rb") as fh:
        while data := fh.read(chunk):
            yield np.unpackbits(np.frombuffer(data, dtype=np.uint8), bitorder="little")


class Extraction:
    """One configured run: feeds raw bit chunks through framing and extraction.

    Iterating :meth:`output` yields packed output bytes in stream order
    and keeps the counters in :attr:`manifest` current.
    """

    def __init__(self, config: PipelineConfig, workers: int | None = None):
        self.config = config
        self.workers = workers if workers is not None else config.workers
        self.schedule, provenance = seed_schedule(config)
        self.framer = Framer(config.extractor.n)
        self.packer = BitPacker(config.extractor.m)
        self.counter = _Counter()
        self.manifest = RunManifest(
            config=config.to_dict(),
            config_hash=config.digest(),
            seed_provenance=provenance,
            workers=self.workers,
        )

    def _batches(self, bit_chunks: Iterable[np.ndarray]) -> Iterator[np.ndarray]:
        pending = []
        count = 0
        for bits in bit_chunks:
            blocks = self.framer.push(bits)
            if len(blocks):
                pending.append(blocks)
                count += len(blocks)
            if count >= BATCH_BLOCKS:
                yield np.concatenate(pending)
                pending, count = [], 0
        if pending:
            yield np.concatenate(pending)

    def output_from_bits(self, bit_chunks: Iterable[np.ndarray]) -> Iterator[bytes]:
        m = self.config.extractor.m
        t0 = time.perf_counter()
        try:
            for out in extract_batches(self.schedule, self._batches(bit_chunks), workers=self.workers,
                                       first_block=self.manifest.blocks):
                self.manifest.blocks += len(out)
                self.manifest.bits_out += len(out) * m
                self._sync(t0)
                yield self.packer.push(out)
        except (ValueError, RuntimeError) as exc:
            if isinstance(exc, PipelineError):
                raise
            raise PipelineError("extract", str(exc)) from exc
        tail = self.packer.flush()
        self._sync(t0)
        if tail:
            yield tail

    def output_from_samples(self, sample_chunks: Iterable[np.ndarray]) -> Iterator[bytes]:
        mask = self.config.keep_mask
        bits = (select_bits_array(c, mask) for c in _sample_chunks(sample_chunks, self.counter))
        return self.output_from_bits(bits)

    def _sync(self, t0: float) -> None:
        mf = self.manifest
        mf.samples = self.counter.samples
        mf.kept_bits = self.framer.bits_in
        mf.residual_bits = self.framer.residual
        mf.seeds_used = self.schedule.seeds_used
        mf.elapsed_s = time.perf_counter() - t0


def run_pipeline(
    config: PipelineConfig,
    n_samples: int,
    sink: BinaryIO | None = None,
    workers: int | None = None,
) -> RunManifest:
    """Simulate ``n_samples`` raw samples and write extracted bytes to ``sink``."""
    config.validate()
    run = Extraction(config, workers)
    t0 = time.perf_counter()
    for chunk in run.output_from_samples(simulated_samples(config, n_samples)):
        if sink is not None:
            try:
                sink.write(chunk)
            except OSError as exc:
                raise PipelineError("output", str(exc)) from exc
    elapsed = time.perf_counter() - t0
    mf = run.manifest
    mf.elapsed_s = elapsed
    mf.throughput = {
        "samples_per_s": mf.samples / elapsed if elapsed else 0.0,
        "bits_out_per_s": mf.bits_out / elapsed if elapsed else 0.0,
    }
    return mf


def iter_stream(config: PipelineConfig, workers: int | None = None) -> Iterator[bytes]:
    """Endless extracted byte stream from the simulated source."""
    run = Extraction(config, workers)
    return run.output_from_samples(simulated_samples(config, None))


class RateLimiter:
    """Paces delivery so cumulative bits never run ahead of ``rate`` bits/s."""

    def __init__(self, rate: float | None, clock=time.monotonic, sleep=time.sleep):
        self.rate = rate
        self.clock = clock
        self.sleep = sleep
        self.sent = 0
        self.t0: float | None = None

    def wait(self, nbits: int) -> None:
        if self.t0 is None:
            self.t0 = self.clock()
        if self.rate:
            delay = self.t0 + self.sent / self.rate - self.clock()
            if delay > 0:
                self.sleep(delay)
        self.sent += nbits

    def chunk_bytes(self, default: int = 1 << 16) -> int:
        """Send size giving about 100 pacing steps per second."""
        if not self.rate:
            return default
        return int(min(default, max(64, self.rate / 8 / 100)))


def paced(chunks: Iterable[bytes], limiter: RateLimiter) -> Iterator[bytes]:
    size = limiter.chunk_bytes()
    for chunk in chunks:
        for off in range(0, len(chunk), size):
            piece = chunk[off:off + size]
            limiter.wait(8 * len(piece))
            yield piece


# --- throughput ---------------------------------------------------------


def bench_extractor(config: PipelineConfig, duration: float = 2.0, workers: int | None = None,
                    batch_blocks: int = 4096) -> dict:
    """Extractor-only throughput on pre-generated raw blocks."""
    params = config.extractor
    schedule = SeedSchedule(random_seed(params, 0), params)
    rng = np.random.default_rng(12345)
    raw = rng.integers(0, 256, (batch_blocks, -(-params.n // 8)), dtype=np.uint8)
    workers = workers or config.workers
    list(extract_batches(schedule, [raw[:8]]))  # compile
    blocks = 0
    t0 = time.perf_counter()
    while time.perf_counter() - t0 < duration:
        parts = np.array_split(raw, max(1, workers)) if workers > 1 else [raw]
        for out in extract_batches(schedule, parts, workers=workers):
            blocks += len(out)
    elapsed = time.perf_counter() - t0
    return {
        "workers": workers,
        "blocks": blocks,
        "elapsed_s": elapsed,
        "bits_in": blocks * params.n,
        "bits_out": blocks * params.m,
        "in_rate": blocks * params.n / elapsed,
        "out_rate": blocks * params.m / elapsed,
        "ratio": params.m / params.n,
    }


def bench_end_to_end(config: PipelineConfig, duration: float = 2.0, workers: int | None = None) -> dict:
    run = Extraction(config, workers)
    out_bits = 0
    t0 = time.perf_counter()
    for chunk in run.output_from_samples(simulated_samples(config, None)):
        out_bits += 8 * len(chunk)
        if time.perf_counter() - t0 >= duration:
            break
    elapsed = time.perf_counter() - t0
    mf = run.manifest
    consumed = mf.kept_bits - mf.residual_bits
    return {
        "elapsed_s": elapsed,
        "samples": mf.samples,
        "bits_in": consumed,
        "bits_out": mf.bits_out,
        "in_rate": consumed / elapsed,
        "out_rate": mf.bits_out / elapsed,
        "ratio": mf.bits_out / consumed if consumed else float("nan"),
    }


def bench_capped(config: PipelineConfig, rate_cap: float, duration: float = 2.0) -> dict:
    """Deliver extractor output to a null sink through the rate limiter."""
    params = config.extractor
    ext = SeedSchedule(random_seed(params, 0), params).extractor_for(0)
    raw = np.random.default_rng(7).integers(0, 256, (BATCH_BLOCKS, -(-params.n // 8)), dtype=np.uint8)

    def produce():
        while True:
            yield ext.extract_packed(raw).tobytes()

    limiter = RateLimiter(rate_cap)
    delivered = 0
    t_start = None
    for piece in paced(produce(), limiter):
        if t_start is None:
            t_start = limiter.t0
        delivered += 8 * len(piece)
        if time.monotonic() - t_start >= duration:
            break
    elapsed = time.monotonic() - t_start
    return {"rate_cap": rate_cap, "delivered_bits": delivered, "elapsed_s": elapsed,
            "delivered_rate": delivered / elapsed}


def bench(config: PipelineConfig, duration: float = 6.0) -> dict:
    """Throughput report; hardware rates are included as reference lines."""
    slot = duration / (3 if config.rate_cap else 2)
    report = {
        "extractor_only": bench_extractor(config, slot),
        "end_to_end": bench_end_to_end(config, slot),
        "reference": {
            "fpga_input_limit": FPGA_INPUT_LIMIT,
            "fpga_output_limit": FPGA_INPUT_LIMIT * config.extractor.ratio,
            **REFERENCE_RATES,
        },
    }
    measured_in = report["extractor_only"]["in_rate"]
    report["extractor_only"]["theoretical_out_rate"] = measured_in * config.extractor.ratio
    if config.rate_cap:
        report["capped"] = bench_capped(config, config.rate_cap, slot)
    return report


# --- TCP delivery -------------------------------------------------------


class _StreamHandler(socketserver.BaseRequestHandler):
    def handle(self):
        server: QrngServer = self.server  # type: ignore[assignment]
        server.clients_served += 1
        limiter = RateLimiter(server.config.rate_cap)
        try:
            for piece in paced(iter_stream(server.config), limiter):
                self.request.sendall(piece)
                server.bytes_sent += len(piece)
        except (BrokenPipeError, ConnectionResetError, ConnectionAbortedError, socket.timeout):
            log.info("client %s disconnected", self.client_address)
        except OSError as exc:
            log.warning("client %s: %s", self.client_address, exc)


class QrngServer(socketserver.ThreadingTCPServer):
    """Streams extracted bytes to every client.

    Each connection runs its own pipeline from the shared config, so every
    client sees the same deterministic stream from its start. Nothing is
    generated until a client connects; a slow reader blocks its sender
    instead of losing bits.
    """

    daemon_threads = True
    allow_reuse_address = True

    def __init__(self, config: PipelineConfig, address: tuple[str, int]):
        self.config = config.validate()
        self.clients_served = 0
        self.bytes_sent = 0
        try:
            super().__init__(address, _StreamHandler)
        except OSError as exc:
            raise PipelineError("serve", f"cannot bind {address}: {exc}") from exc


def serve(config: PipelineConfig, host: str = "127.0.0.1", port: int = 0) -> QrngServer:
    """Start a server on a background thread and return it (call ``shutdown`` to stop)."""
    server = QrngServer(config, (host, port))
    threading.Thread(target=server.serve_forever, daemon=True).start()
    return server
