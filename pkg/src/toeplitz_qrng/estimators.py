"""scikit-learn compatible wrappers.

Rows are blocks: :class:`SampleBitSelector` turns ``(blocks, samples)`` ADC
codes into ``(blocks, samples * kept_bits)`` raw bits and
:class:`ToeplitzExtractor` hashes ``(blocks, n)`` raw bits into
``(blocks, m)`` output bits, so the two chain in a ``Pipeline``::

    make_pipeline(SampleBitSelector(), ToeplitzExtractor(random_state=0))
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .bits import DEFAULT_KEEP_MASK, BitBlock, kept_positions, select_bits_array
from .toeplitz import PipelinedExtractor, ToeplitzParams, random_seed, seed_from_bytes


def check_bits(X, n_features: int | None = None) -> np.ndarray:
    """Validate a 2-D array of 0/1 values and return it as uint8."""
    X = check_array(X, dtype=None, ensure_all_finite=True)
    if X.size and (X.min() < 0 or X.max() > 1):
        raise ValueError("bit matrix must contain only 0 and 1")
    if n_features is not None and X.shape[1] != n_features:
        raise ValueError(f"X has {X.shape[1]} bits per row, expected {n_features}")
    return X.astype(np.uint8, copy=False)


def check_samples(X) -> np.ndarray:
    X = check_array(X, dtype=None)
    if X.size and (X.min() < 0 or X.max() > 255):
        raise ValueError("ADC samples must lie in [0, 255]")
    return X.astype(np.uint8, copy=False)


class SampleBitSelector(TransformerMixin, BaseEstimator):
    """Keep the bits of each 8-bit sample selected by ``keep_mask``."""

    def __init__(self, keep_mask: int = DEFAULT_KEEP_MASK):
        self.keep_mask = keep_mask

    def fit(self, X, y=None):
        X = check_samples(X)
        self.bits_per_sample_ = len(kept_positions(self.keep_mask))
        self.n_features_in_ = X.shape[1]
        return self

    def transform(self, X):
        check_is_fitted(self, "bits_per_sample_")
        X = check_samples(X)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} samples per row, expected {self.n_features_in_}")
        return select_bits_array(X.ravel(), self.keep_mask).reshape(X.shape[0], -1)


class ToeplitzExtractor(TransformerMixin, BaseEstimator):
    """Toeplitz-hashing extractor with the pipelined word-parallel kernel.

    Parameters
    ----------
    m, n, k : int
        Output bits, input bits and submatrix width per block.
    epsilon_exponent : int
        Security bound exponent, carried for reporting.
    seed : BitBlock, bytes or array-like of bits, optional
        The ``m + n - 1`` matrix seed. Drawn from ``random_state`` if omitted.
    random_state : int or Generator, optional
        Only used when ``seed`` is None.
    """

    def __init__(self, m=1024, n=1520, k=80, epsilon_exponent=20, seed=None, random_state=None):
        self.m = m
        self.n = n
        self.k = k
        self.epsilon_exponent = epsilon_exponent
        self.seed = seed
        self.random_state = random_state

    def _resolve_seed(self, params: ToeplitzParams) -> BitBlock:
        if self.seed is None:
            return random_seed(params, self.random_state)
        if isinstance(self.seed, BitBlock):
            return self.seed
        if isinstance(self.seed, (bytes, bytearray)):
            return seed_from_bytes(bytes(self.seed), params)
        return BitBlock.from_bits(self.seed)

    def fit(self, X=None, y=None):
        """Build the matrix tables; ``X`` is only shape-checked."""
        self.params_ = ToeplitzParams(self.m, self.n, self.k, self.epsilon_exponent)
        self.seed_ = self._resolve_seed(self.params_)
        self.extractor_ = PipelinedExtractor(self.seed_, self.params_)
        if X is not None:
            check_bits(X, self.n)
        self.n_features_in_ = self.n
        return self

    def transform(self, X):
        check_is_fitted(self, "extractor_")
        return self.extractor_.extract_bits(check_bits(X, self.n))

    def transform_packed(self, X):
        """Packed variant: ``(B, ceil(n/8))`` bytes in, ``(B, ceil(m/8))`` out."""
        check_is_fitted(self, "extractor_")
        return self.extractor_.extract_packed(np.asarray(X, dtype=np.uint8))

    def get_feature_names_out(self, input_features=None):
        return np.array([f"bit{i}" for i in range(self.m)], dtype=object)
