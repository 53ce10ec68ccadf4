"""4-bit direction codes, magnitude levels, alpha / w metadata"""

import numpy as np
import pytest
from numpy.testing import assert_allclose

from src.data.codebook import assign_rows
from src.data.quantizer import (
    ALPHA_FLOOR,
    alpha,
    build_metadata,
    build_metadata_batch,
    dequantize,
    dequantize_nibbles,
    design_levels,
    design_radius_levels,
    encode,
    levels_for,
    pack_nibbles,
    quantize_nibbles,
    scaling_factor,
    unpack_nibbles,
)
from src.data.transform import transform_rows
from src.utils.config import RetrievalConfig
from src.utils.errors import DegenerateInputError


def _unit_rows(rng, n, m):
    u = rng.standard_normal((n, m))
    return u / np.linalg.norm(u, axis=1, keepdims=True)


@pytest.mark.parametrize("m", [2, 4, 8, 16])
def test_levels_shape_and_order(m):
    levels = design_levels(m, 128)
    assert levels.values.shape == (8,)
    assert levels.values[0] >= 0.0
    assert np.all(np.diff(levels.values) > 0)
    assert levels.values[-1] <= 1.0


def test_levels_are_conditional_means(rng):
    m = 8
    levels = design_levels(m, 128)
    mags = np.abs(_unit_rows(rng, 200_000, m)).ravel()
    edges = np.quantile(mags, np.linspace(0.0, 1.0, 9))
    bins = np.clip(np.searchsorted(edges, mags, side="right") - 1, 0, 7)
    empirical = np.array([mags[bins == i].mean() for i in range(8)])
    assert_allclose(levels.values, empirical, atol=5e-3)


def test_levels_require_m_at_least_two():
    with pytest.raises(ValueError):
        design_levels(1, 128)


def test_nibble_layout():
    packed = pack_nibbles(np.array([1, 2, 15, 0], dtype=np.uint8))
    assert packed.tolist() == [0x21, 0x0F]
    assert unpack_nibbles(packed).tolist() == [1, 2, 15, 0]
    with pytest.raises(ValueError):
        pack_nibbles(np.array([1, 2, 3], dtype=np.uint8))


def test_quantize_sign_and_nearest_level(rng):
    levels = design_levels(8, 128)
    u = _unit_rows(rng, 50, 8)
    nib = quantize_nibbles(u, levels)
    assert np.array_equal((nib & 0x8) != 0, u < 0)
    nearest = np.argmin(np.abs(np.abs(u)[..., None] - levels.values), axis=-1)
    assert np.array_equal(nib & 0x7, nearest)


def test_zero_coordinate_is_positive():
    levels = design_levels(4, 32)
    nib = quantize_nibbles(np.array([0.0, 1.0, 0.0, 0.0]), levels)
    assert np.all((nib & 0x8) == 0)


def test_dequantize_is_unit(rng):
    levels = design_levels(8, 128)
    u = _unit_rows(rng, 100, 8)
    v, degenerate = dequantize_nibbles(quantize_nibbles(u, levels), levels)
    assert not degenerate.any()
    assert_allclose(np.linalg.norm(v, axis=-1), 1.0, atol=1e-5)
    # reconstruction stays close to the source direction
    assert np.all(np.sum(u * v, axis=-1) > 0.8)


def test_encode_centroid_pattern_is_exact():
    levels = design_levels(8, 128)
    omega = np.array([1, -1, 1, 1, -1, -1, 1, -1], dtype=np.float64) / np.sqrt(8)
    v = dequantize(encode(omega, levels), levels)
    assert float(v @ omega) == pytest.approx(1.0, abs=1e-5)
    code = encode(omega, levels)
    assert np.all(code.magnitude_index == code.magnitude_index[0])
    assert_allclose(code.signs, np.sign(omega))


def test_alpha_floor():
    u = np.array([1.0, 0.0])
    assert alpha(u, np.array([0.0, 1.0])) == ALPHA_FLOOR
    assert alpha(u, -u) == ALPHA_FLOOR
    assert alpha(u, u) == pytest.approx(1.0)


def test_scaling_factor():
    assert scaling_factor(2.0, 0.5, 0.25) == pytest.approx(4.0)
    assert scaling_factor(2.0, 0.0, ALPHA_FLOOR) == 0.0
    w = scaling_factor(np.array([[1.0], [2.0]]), np.array([[0.5, 0.0], [1.0, 0.2]]), np.ones((2, 2)))
    assert_allclose(w, [[0.5, 0.0], [2.0, 0.4]])


def test_metadata_batch_shapes(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8)
    keys = rng.standard_normal((20, 32)).astype(np.float32)
    batch = build_metadata_batch(keys, cfg, levels_for(cfg))
    assert len(batch) == 20
    assert batch.centroid_ids.shape == (20, 8) and batch.centroid_ids.dtype == np.uint16
    assert batch.codes.shape == (20, 8, 2) and batch.codes.dtype == np.uint8
    assert batch.weights.shape == (20, 8) and batch.weights.dtype == np.float32
    assert batch.directions is None and batch.radius_codes is None
    assert np.all(batch.weights >= 0)

    _, _, dirs = transform_rows(keys, cfg)
    assert np.array_equal(batch.centroid_ids, assign_rows(dirs))


def test_alpha_inflates_weights(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8)
    keys = rng.standard_normal((20, 32)).astype(np.float32)
    norms, radii, _ = transform_rows(keys, cfg)
    plain = build_metadata_batch(keys, cfg.replace(alpha_correction=False), levels_for(cfg))
    corrected = build_metadata_batch(keys, cfg, levels_for(cfg))
    assert_allclose(plain.weights, norms[:, None] * radii, rtol=1e-5)
    assert np.all(corrected.weights >= plain.weights * (1 - 1e-6))


def test_exact_codes_store_directions(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8, exact_codes=True)
    keys = rng.standard_normal((5, 32)).astype(np.float32)
    norms, radii, dirs = transform_rows(keys, cfg)
    batch = build_metadata_batch(keys, cfg, levels_for(cfg))
    assert_allclose(batch.directions, dirs)
    assert_allclose(batch.weights, norms[:, None] * radii, rtol=1e-5)


def test_half_precision_weights(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8, weight_dtype="float16")
    batch = build_metadata_batch(rng.standard_normal((4, 32)), cfg, levels_for(cfg))
    assert batch.weights.dtype == np.float16


def test_radius_codes(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8, radius_centroid_count=4)
    r_levels = design_radius_levels(4, 32, 4)
    assert r_levels.shape == (4,)
    assert np.all(np.diff(r_levels) > 0)
    assert 0.0 < r_levels[0] and r_levels[-1] < 1.0
    batch = build_metadata_batch(rng.standard_normal((6, 32)), cfg, levels_for(cfg))
    assert batch.radius_codes.shape == (6, 8)
    assert batch.radius_codes.max() < 4


def test_single_key_metadata(rng):
    cfg = RetrievalConfig(dim=32, subspace_count=8)
    key = rng.standard_normal(32).astype(np.float32)
    meta = build_metadata(key, cfg, levels_for(cfg))
    assert meta.centroid_ids.shape == (8,)
    with pytest.raises(DegenerateInputError):
        build_metadata(np.zeros(32), cfg, levels_for(cfg))
