from __future__ import annotations

import numpy as np
import pytest

from conftest import latent_for
from decoder import DecoderSpec, decode, init_weights
from errors import RecCheckError, ShapeError
from measurements import (
    MeasurementOperator, apply, apply_adjoint, apply_magnitude, identity_operator,
    make_operator, nested_operators, orthonormal_operator, rec_check,
)
from numeric import SeededRng

REC_N_GRID = (20, 50, 100, 200, 400)


# ── Operators ────────────────────────────────────────────────────────────────

def test_operator_variance_and_column_norms():
    op = make_operator(100, 100, SeededRng(1))
    assert op.matrix.var() == pytest.approx(1.0 / 100, rel=0.05)
    assert np.mean(np.sum(op.matrix ** 2, axis=0)) == pytest.approx(1.0, abs=0.05)


def test_operator_deterministic():
    a, b = make_operator(20, 30, SeededRng(4)), make_operator(20, 30, SeededRng(4))
    np.testing.assert_array_equal(a.matrix, b.matrix)
    assert a.seed == 4


def test_operator_is_read_only_copy():
    source = np.ones((2, 3))
    op = MeasurementOperator(source)
    source[0, 0] = 5.0
    assert op.matrix[0, 0] == 1.0
    with pytest.raises(ValueError):
        op.matrix[0, 0] = 2.0


def test_operator_bad_shapes():
    with pytest.raises(ShapeError):
        make_operator(0, 10, SeededRng(0))
    with pytest.raises(ShapeError):
        MeasurementOperator(np.ones(4))


def test_measurement_count_for_digit_sweeps():
    from harness import measurement_count

    assert measurement_count(0.1, 784) == 78
    assert measurement_count(0.25, 784) == 196
    assert measurement_count(3.0, 784) == 2352


def test_orthonormal_operator_is_isometry():
    op = orthonormal_operator(16, SeededRng(3))
    np.testing.assert_allclose(op.matrix.T @ op.matrix, np.eye(16), atol=1e-12)


def test_nested_operators_share_rows():
    ops = nested_operators([5, 2, 8], 6, SeededRng(9))
    assert sorted(ops) == [2, 5, 8]
    np.testing.assert_allclose(ops[2].matrix * np.sqrt(2), ops[8].matrix[:2] * np.sqrt(8))
    np.testing.assert_allclose(ops[5].matrix * np.sqrt(5), ops[8].matrix[:5] * np.sqrt(8))


# ── Application ──────────────────────────────────────────────────────────────

def test_apply_zero_and_identity(rng):
    op = make_operator(5, 8, rng)
    np.testing.assert_array_equal(apply(op, np.zeros(8)), np.zeros(5))
    np.testing.assert_array_equal(apply_magnitude(op, np.zeros(8)), np.zeros(5))
    x = np.arange(8.0)
    np.testing.assert_array_equal(apply(identity_operator(5, 8), x), x[:5])


def test_adjoint_identity(rng):
    op = make_operator(30, 50, rng)
    x, r = rng.generator.normal(size=50), rng.generator.normal(size=30)
    assert apply(op, x) @ r == pytest.approx(x @ apply_adjoint(op, r), abs=1e-10)


def test_magnitude_sign_invariant(rng):
    op = make_operator(12, 20, rng)
    x = rng.generator.normal(size=20)
    np.testing.assert_array_equal(apply_magnitude(op, -x), apply_magnitude(op, x))
    np.testing.assert_array_equal(apply_magnitude(op, x), np.abs(apply(op, x)))
    assert np.all(apply_magnitude(op, x) >= 0)


def test_apply_dimension_mismatch(rng):
    op = make_operator(4, 6, rng)
    with pytest.raises(ShapeError):
        apply(op, np.ones(5))
    with pytest.raises(ShapeError):
        apply_adjoint(op, np.ones(6))


def test_ratio_unbiased_over_fresh_draws(rec_spec):
    h = decode(rec_spec, init_weights(rec_spec, SeededRng(1)), latent_for(rec_spec))
    ratios = []
    for seed in range(200):
        ah = apply(make_operator(100, rec_spec.d, SeededRng(seed)), h)
        ratios.append(float(ah @ ah) / float(h @ h))
    assert np.mean(ratios) == pytest.approx(1.0, rel=0.05)


# ── Set-REC ──────────────────────────────────────────────────────────────────

def test_rec_isometry_always_passes(rec_spec):
    op = orthonormal_operator(rec_spec.d, SeededRng(2))
    report = rec_check(op, rec_spec, latent_for(rec_spec), 0.01, 20, SeededRng(3))
    assert report.pass_rate == 1.0
    assert report.min_ratio == pytest.approx(1.0, abs=1e-9)


def test_rec_single_measurement_fails(rec_spec):
    op = make_operator(1, rec_spec.d, SeededRng(2))
    report = rec_check(op, rec_spec, latent_for(rec_spec), 0.1, 200, SeededRng(3), mode="difference")
    assert report.pass_rate < 0.2
    assert 0.0 <= report.min_ratio <= report.max_ratio


def test_rec_pass_rate_monotone_over_nested_grid(rec_spec):
    latent = latent_for(rec_spec)
    ops = nested_operators(REC_N_GRID, rec_spec.d, SeededRng(11))
    rates = [rec_check(ops[n], rec_spec, latent, 0.5, 200, SeededRng(11), "difference").pass_rate
             for n in REC_N_GRID]
    assert all(a <= b for a, b in zip(rates, rates[1:]))
    assert rates[-1] >= 0.95


def test_rec_difference_and_range_modes_agree_on_isometry(rec_spec):
    op = orthonormal_operator(rec_spec.d, SeededRng(5))
    latent = latent_for(rec_spec)
    for mode in ("range", "difference"):
        assert rec_check(op, rec_spec, latent, 0.5, 10, SeededRng(6), mode).pass_rate == 1.0


def test_rec_reproducible(rec_spec):
    op = make_operator(50, rec_spec.d, SeededRng(7))
    latent = latent_for(rec_spec)
    assert rec_check(op, rec_spec, latent, 0.5, 30, SeededRng(8)) == rec_check(op, rec_spec, latent, 0.5, 30, SeededRng(8))


def test_rec_rejects_sigmoid_decoder(mnist_spec):
    op = make_operator(10, mnist_spec.d, SeededRng(0))
    with pytest.raises(RecCheckError):
        rec_check(op, mnist_spec, latent_for(mnist_spec), 0.5, 5, SeededRng(0))


def test_rec_argument_checks(rec_spec):
    op = make_operator(10, rec_spec.d, SeededRng(0))
    latent = latent_for(rec_spec)
    with pytest.raises(ValueError):
        rec_check(op, rec_spec, latent, 1.5, 5, SeededRng(0))
    with pytest.raises(ValueError):
        rec_check(op, rec_spec, latent, 0.5, 0, SeededRng(0))
    with pytest.raises(ValueError):
        rec_check(op, rec_spec, latent, 0.5, 5, SeededRng(0), mode="sideways")
    small = DecoderSpec(layer_channels=(3, 3, 1), latent_side=2, channel_norm=False, sigmoid=False)
    with pytest.raises(ShapeError):
        rec_check(op, small, latent_for(small), 0.5, 5, SeededRng(0))


def test_rec_counts_degenerate_draws():
    # single channel with a nonnegative latent: h = 0 whenever W_1 < 0
    spec = DecoderSpec(layer_channels=(1, 1, 1), latent_side=2, channel_norm=False, sigmoid=False, dims=1)
    op = orthonormal_operator(spec.d, SeededRng(0))
    report = rec_check(op, spec, latent_for(spec), 0.5, 50, SeededRng(1))
    assert report.discarded > 0
    assert report.pass_rate == 1.0
