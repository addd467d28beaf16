import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError
from sklearn.pipeline import make_pipeline

from toeplitz_qrng.bits import select_bits_array
from toeplitz_qrng.estimators import SampleBitSelector, ToeplitzExtractor
from toeplitz_qrng.toeplitz import (
    ToeplitzParams,
    build_matrix,
    extract_dense_batch,
    random_seed,
)


def test_get_params_and_clone():
    est = ToeplitzExtractor(m=32, n=48, k=8, random_state=3)
    params = est.get_params()
    assert params == dict(m=32, n=48, k=8, epsilon_exponent=20, seed=None, random_state=3)
    twin = clone(est)
    assert twin.get_params() == params
    assert not hasattr(twin, "extractor_")


def test_unfitted_raises():
    with pytest.raises(NotFittedError):
        ToeplitzExtractor().transform(np.zeros((1, 1520), dtype=np.uint8))


def test_matches_dense_reference():
    p = ToeplitzParams(32, 48, 8)
    seed = random_seed(p, 5)
    x = np.random.default_rng(5).integers(0, 2, (50, 48), dtype=np.uint8)
    est = ToeplitzExtractor(32, 48, 8, seed=seed).fit(x)
    assert np.array_equal(est.transform(x), extract_dense_batch(build_matrix(seed, p), x))


def test_seed_forms_agree():
    p = ToeplitzParams()
    seed = random_seed(p, 9)
    x = np.random.default_rng(1).integers(0, 2, (4, p.n), dtype=np.uint8)
    outs = [
        ToeplitzExtractor(seed=s).fit().transform(x)
        for s in (seed, seed.data, seed.to_array())
    ]
    assert all(np.array_equal(outs[0], o) for o in outs[1:])
    same_state = ToeplitzExtractor(random_state=9).fit().transform(x)
    assert np.array_equal(same_state, outs[0])


def test_packed_transform():
    est = ToeplitzExtractor(random_state=0).fit()
    x = np.random.default_rng(2).integers(0, 2, (3, 1520), dtype=np.uint8)
    packed = est.transform_packed(np.packbits(x, axis=1, bitorder="little"))
    assert np.array_equal(np.unpackbits(packed, axis=1, bitorder="little"), est.transform(x))
    assert est.get_feature_names_out().shape == (1024,)


def test_input_validation():
    est = ToeplitzExtractor(m=32, n=48, k=8, random_state=0).fit()
    with pytest.raises(ValueError):
        est.transform(np.zeros((2, 40)))
    with pytest.raises(ValueError):
        est.transform(np.full((2, 48), 2))


def test_bit_selector_matches_core():
    samples = np.random.default_rng(0).integers(0, 256, (6, 304), dtype=np.uint8)
    sel = SampleBitSelector().fit(samples)
    out = sel.transform(samples)
    assert out.shape == (6, 1520)
    assert np.array_equal(out[2], select_bits_array(samples[2]))
    with pytest.raises(ValueError):
        sel.transform(samples[:, :10])
    with pytest.raises(ValueError):
        SampleBitSelector().fit(np.full((1, 3), 300))


def test_pipeline_chains_selector_and_extractor():
    samples = np.random.default_rng(1).integers(0, 256, (8, 304), dtype=np.uint8)
    pipe = make_pipeline(SampleBitSelector(), ToeplitzExtractor(random_state=4))
    out = pipe.fit_transform(samples)
    assert out.shape == (8, 1024)
    ext = pipe[-1]
    expected = extract_dense_batch(build_matrix(ext.seed_, ext.params_), select_bits_array(samples.ravel()).reshape(8, -1))
    assert np.array_equal(out, expected)
    assert pipe.get_params()["toeplitzextractor__m"] == 1024
