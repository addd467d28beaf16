"""Toeplitz-hashing randomness extraction over GF(2).

An ``m x n`` Toeplitz matrix is fixed by ``m + n - 1`` seed bits through
``T[i, j] = seed[(n - 1) + i - j]``: row 0 is the seed prefix reversed,
column 0 runs up the seed from ``seed[n - 1]``, and column ``j`` is the
contiguous seed window starting at ``n - 1 - j``.

Two independent evaluation routes are provided:

* :func:`extract_dense` materialises the matrix and does an integer
  mat-vec reduced mod 2. It is slow and exists as a reference.
* :class:`PipelinedExtractor` follows the three-stage hardware layout.
  Matrix building precomputes, for every byte-wide group of columns, the
  XOR of each of the 256 column subsets as machine words. Submatrix
  multiplication folds the ``k`` columns of one step into a temporary
  ``m``-bit vector, and vector accumulation XORs the ``n / k`` temporaries.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Iterator

import numba
import numpy as np

from .bits import BitBlock, pack_bits, unpack_bits


class SeedExhaustedError(RuntimeError):
    """A seed refresh was due but the seed source had nothing left."""


@dataclass(frozen=True)
class ToeplitzParams:
    m: int = 1024
    n: int = 1520
    k: int = 80
    epsilon_exponent: int = 20

    def __post_init__(self):
        if min(self.m, self.n, self.k) < 1:
            raise ValueError("m, n and k must all be >= 1")
        if self.m > self.n:
            raise ValueError(f"m={self.m} must not exceed n={self.n}")
        if self.n % self.k:
            raise ValueError(f"k={self.k} does not divide n={self.n}")
        if self.epsilon_exponent < 1:
            raise ValueError("epsilon_exponent must be >= 1")

    @property
    def seed_length(self) -> int:
        return self.m + self.n - 1

    @property
    def steps(self) -> int:
        return self.n // self.k

    @property
    def ratio(self) -> float:
        return self.m / self.n


def _check_seed(seed: BitBlock, params: ToeplitzParams) -> None:
    if seed.length != params.seed_length:
        raise ValueError(
            f"seed has {seed.length} bits, expected m + n - 1 = {params.seed_length}"
        )


def random_seed(params: ToeplitzParams, rng: np.random.Generator | int | None = None) -> BitBlock:
    rng = np.random.default_rng(rng)
    return BitBlock.from_bits(rng.integers(0, 2, params.seed_length, dtype=np.uint8))


class ToeplitzMatrix:
    """Lazy view of the matrix defined by a seed; only the seed is stored."""

    def __init__(self, seed: BitBlock, params: ToeplitzParams):
        _check_seed(seed, params)
        self.seed = seed
        self.params = params
        self._seed_bits = seed.to_array()

    @property
    def shape(self) -> tuple[int, int]:
        return self.params.m, self.params.n

    def __getitem__(self, ij: tuple[int, int]) -> int:
        i, j = ij
        m, n = self.shape
        if not (0 <= i < m and 0 <= j < n):
            raise IndexError(ij)
        return int(self._seed_bits[(n - 1) + i - j])

    def to_dense(self) -> np.ndarray:
        m, n = self.shape
        idx = (n - 1) + np.arange(m)[:, None] - np.arange(n)[None, :]
        return self._seed_bits[idx]

    def column(self, j: int) -> np.ndarray:
        m, n = self.shape
        start = n - 1 - j
        return self._seed_bits[start:start + m]


def build_matrix(seed: BitBlock, params: ToeplitzParams) -> ToeplitzMatrix:
    return ToeplitzMatrix(seed, params)


def extract_dense(mat: ToeplitzMatrix, data: BitBlock) -> BitBlock:
    """Reference extraction: ``T @ x mod 2`` on a materialised matrix."""
    if data.length != mat.params.n:
        raise ValueError(f"input has {data.length} bits, expected n={mat.params.n}")
    x = data.to_array().astype(np.int64)
    return BitBlock.from_bits((mat.to_dense().astype(np.int64) @ x) & 1)


def extract_dense_batch(mat: ToeplitzMatrix, bits: np.ndarray) -> np.ndarray:
    """Dense route for a ``(blocks, n)`` bit array; returns ``(blocks, m)``."""
    bits = np.asarray(bits, dtype=np.int64)
    return ((bits @ mat.to_dense().T.astype(np.int64)) & 1).astype(np.uint8)


@numba.njit(nogil=True, cache=True)
def _pipeline_kernel(chunks, tables, steps, chunks_per_step, out):
    n_blocks = chunks.shape[0]
    words = tables.shape[2]
    temp = np.empty(words, dtype=np.uint64)
    for b in range(n_blocks):
        for w in range(words):
            out[b, w] = 0
        for t in range(steps):
            # submatrix multiplication: k columns -> one temporary vector
            for w in range(words):
                temp[w] = 0
            base = t * chunks_per_step
            for c in range(chunks_per_step):
                row = tables[base + c, chunks[b, base + c]]
                for w in range(words):
                    temp[w] ^= row[w]
            # vector accumulation
            for w in range(words):
                out[b, w] ^= temp[w]


class PipelinedExtractor:
    """Word-parallel pipelined extractor bound to one seed.

    Construction performs the matrix-building stage; :meth:`extract_packed`
    then runs submatrix multiplication and accumulation for a batch.
    """

    def __init__(self, seed: BitBlock, params: ToeplitzParams):
        _check_seed(seed, params)
        self.seed = seed
        self.params = params
        self.chunks_per_step = -(-params.k // 8)
        self.words = -(-params.m // 64)
        self.out_bytes = -(-params.m // 8)
        self.in_bytes = -(-params.n // 8)
        self.tables = self._build_tables()

    def _build_tables(self) -> np.ndarray:
        m, n, k = self.params.m, self.params.n, self.params.k
        seed_bits = self.seed.to_array()
        # windows[s] = seed[s:s+m]; column j is window n-1-j
        windows = np.lib.stride_tricks.sliding_window_view(seed_bits, m)[: n][::-1]
        packed = np.packbits(windows, axis=1, bitorder="little")
        padded = np.zeros((n, self.words * 8), dtype=np.uint8)
        padded[:, : packed.shape[1]] = packed
        columns = padded.view("<u8")

        n_chunks = self.params.steps * self.chunks_per_step
        tables = np.zeros((n_chunks, 256, self.words), dtype=np.uint64)
        for t in range(self.params.steps):
            for c in range(self.chunks_per_step):
                j0 = t * k + 8 * c
                width = min(8, k - 8 * c)
                table = tables[t * self.chunks_per_step + c]
                for b in range(width):
                    table[1 << b: 2 << b] = table[: 1 << b] ^ columns[j0 + b]
        return tables

    def _chunk_values(self, bits: np.ndarray) -> np.ndarray:
        steps, k, cps = self.params.steps, self.params.k, self.chunks_per_step
        grouped = bits.reshape(bits.shape[0], steps, k)
        if k % 8:
            pad = np.zeros((bits.shape[0], steps, cps * 8 - k), dtype=np.uint8)
            grouped = np.concatenate([grouped, pad], axis=2)
        return np.packbits(grouped, axis=2, bitorder="little").reshape(bits.shape[0], -1)

    def _run(self, chunks: np.ndarray) -> np.ndarray:
        out = np.empty((chunks.shape[0], self.words), dtype=np.uint64)
        _pipeline_kernel(
            np.ascontiguousarray(chunks), self.tables, self.params.steps, self.chunks_per_step, out
        )
        return out.view("<u1")[:, : self.out_bytes]

    def extract_packed(self, blocks: np.ndarray) -> np.ndarray:
        """Extract a ``(B, ceil(n/8))`` array of packed input blocks.

        Returns ``(B, ceil(m/8))`` packed output bytes, LSB-first.
        """
        blocks = np.asarray(blocks, dtype=np.uint8)
        if blocks.ndim != 2 or blocks.shape[1] != self.in_bytes:
            raise ValueError(f"expected packed blocks of shape (B, {self.in_bytes})")
        if self.params.k % 8 == 0:
            return self._run(blocks)
        bits = np.unpackbits(blocks, axis=1, count=self.params.n, bitorder="little")
        return self._run(self._chunk_values(bits))

    def extract_bits(self, bits: np.ndarray) -> np.ndarray:
        """Extract a ``(B, n)`` 0/1 array; returns ``(B, m)`` bits."""
        bits = np.asarray(bits, dtype=np.uint8)
        if bits.ndim != 2 or bits.shape[1] != self.params.n:
            raise ValueError(f"expected bits of shape (B, {self.params.n})")
        out = self._run(self._chunk_values(bits))
        return np.unpackbits(out, axis=1, count=self.params.m, bitorder="little")


def extract_pipelined(seed: BitBlock, params: ToeplitzParams, data: BitBlock) -> BitBlock:
    if data.length != params.n:
        raise ValueError(f"input has {data.length} bits, expected n={params.n}")
    out = PipelinedExtractor(seed, params).extract_bits(data.to_array()[None, :])
    return BitBlock.from_bits(out[0])


@dataclass
class StreamStats:
    blocks_in: int = 0
    blocks_out: int = 0
    dropped_blocks: int = 0
    dropped_bits: int = 0
    seeds_used: int = 0
    bits_in: int = 0
    bits_out: int = 0

    @property
    def ratio(self) -> float:
        return self.bits_out / self.bits_in if self.bits_in else float("nan")


@dataclass
class SeedSchedule:
    """Hands out the seed for each block index, refreshing every ``period`` blocks."""

    first: BitBlock
    params: ToeplitzParams
    period: int | None = None
    source: Iterator[BitBlock] | None = None
    _extractors: list[PipelinedExtractor] = field(default_factory=list, repr=False)

    def __post_init__(self):
        if self.period is not None and self.period < 1:
            raise ValueError("refresh period must be >= 1 or None")
        if self.period is not None and self.source is None:
            raise ValueError("seed refresh requires a seed source")
        self._extractors.append(PipelinedExtractor(self.first, self.params))

    def extractor_for(self, block_index: int) -> PipelinedExtractor:
        epoch = 0 if self.period is None else block_index // self.period
        while len(self._extractors) <= epoch:
            try:
                seed = next(self.source)
            except StopIteration:
                raise SeedExhaustedError(
                    f"no seed available for refresh at block {block_index}"
                ) from None
            self._extractors.append(PipelinedExtractor(seed, self.params))
        return self._extractors[epoch]

    @property
    def seeds_used(self) -> int:
        return len(self._extractors)


def extract_batches(
    schedule: SeedSchedule,
    batches: Iterable[np.ndarray],
    workers: int = 1,
    first_block: int = 0,
) -> Iterator[np.ndarray]:
    """Extract an iterable of packed ``(B, n/8)`` batches in order.

    Batches are split at seed-refresh boundaries and may be processed by
    ``workers`` threads; results are always yielded in input order.
    """

    def jobs():
        index = first_block
        for batch in batches:
            start = 0
            while start < len(batch):
                ext = schedule.extractor_for(index)
                stop = len(batch)
                if schedule.period is not None:
                    stop = min(stop, start + schedule.period - index % schedule.period)
                yield ext, batch[start:stop]
                index += stop - start
                start = stop

    if workers <= 1:
        for ext, part in jobs():
            yield ext.extract_packed(part)
        return
    with ThreadPoolExecutor(max_workers=workers) as pool:
        it = jobs()
        while True:
            window = list(itertools.islice(it, 2 * workers))
            if not window:
                return
            futures = [pool.submit(ext.extract_packed, part) for ext, part in window]
            for fut in futures:
                yield fut.result()


def extract_stream(
    seed: BitBlock,
    params: ToeplitzParams,
    raw: Iterable[BitBlock],
    refresh_period: int | None = None,
    seed_source: Iterable[BitBlock] | None = None,
    stats: StreamStats | None = None,
    workers: int = 1,
    batch_blocks: int = 256,
) -> Iterator[BitBlock]:
    """Extract a stream of ``n``-bit blocks into ``m``-bit blocks, in order.

    Blocks shorter than ``n`` are dropped and counted in ``stats``. With a
    ``refresh_period`` the seed changes every that many blocks, drawing
    new seeds from ``seed_source``.
    """
    stats = stats if stats is not None else StreamStats()
    schedule = SeedSchedule(
        seed, params, refresh_period, iter(seed_source) if seed_source is not None else None
    )
    in_bytes = -(-params.n // 8)

    def batches():
        buf = []
        for block in raw:
            if block.length > params.n:
                raise ValueError(f"block of {block.length} bits exceeds n={params.n}")
            if block.length < params.n:
                stats.dropped_blocks += 1
                stats.dropped_bits += block.length
                continue
            stats.blocks_in += 1
            stats.bits_in += params.n
            buf.append(block.data)
            if len(buf) == batch_blocks:
                yield np.frombuffer(b"".join(buf), dtype=np.uint8).reshape(-1, in_bytes)
                buf = []
        if buf:
            yield np.frombuffer(b"".join(buf), dtype=np.uint8).reshape(-1, in_bytes)

    for out in extract_batches(schedule, batches(), workers=workers):
        for row in out:
            stats.blocks_out += 1
            stats.bits_out += params.m
            yield BitBlock(row.tobytes(), params.m)
    stats.seeds_used = schedule.seeds_used


def seed_from_bytes(data: bytes, params: ToeplitzParams) -> BitBlock:
    nbytes = -(-params.seed_length // 8)
    if len(data) != nbytes:
        raise ValueError(f"seed needs {nbytes} bytes, got {len(data)}")
    return BitBlock.from_bits(unpack_bits(data, params.seed_length))


def iter_seed_file(data: bytes, params: ToeplitzParams) -> Iterator[BitBlock]:
    """Consecutive seeds from a file holding one or more padded seed records."""
    nbytes = -(-params.seed_length // 8)
    if not data or len(data) % nbytes:
        raise ValueError(f"seed file size {len(data)} is not a multiple of {nbytes} bytes")
    for off in range(0, len(data), nbytes):
        yield seed_from_bytes(data[off:off + nbytes], params)


def prng_seeds(params: ToeplitzParams, rng_seed: int) -> Iterator[BitBlock]:
    """Endless seed sequence from a seeded PRNG (simulation use only)."""
    rng = np.random.default_rng(rng_seed)
    while True:
        yield random_seed(params, rng)


__all__ = [
    "SeedExhaustedError",
    "ToeplitzParams",
    "ToeplitzMatrix",
    "PipelinedExtractor",
    "SeedSchedule",
    "StreamStats",
    "build_matrix",
    "extract_dense",
    "extract_dense_batch",
    "extract_pipelined",
    "extract_batches",
    "extract_stream",
    "random_seed",
    "seed_from_bytes",
    "iter_seed_file",
    "prng_seeds",
    "pack_bits",
]
