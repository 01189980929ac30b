from __future__ import annotations

import numpy as np
import pytest

from conftest import in_range_image
from decoder import DecoderSpec
from errors import ShapeError, SolverError
from measurements import apply, apply_magnitude, identity_operator, make_operator
from numeric import SeededRng
from solvers import SolverConfig, ista_dct, net_gd, net_pgd_cpr, net_pgd_cs, nmse


@pytest.fixture
def quick_cfg() -> SolverConfig:
    return SolverConfig(max_outer_iters=5, inner_iters=20, seed=3)


# ── nMSE ─────────────────────────────────────────────────────────────────────

def test_nmse_values():
    x = np.array([1.0, -2.0, 3.0])
    assert nmse(x, x) == 0.0
    assert nmse(np.zeros(3), x) == 1.0
    assert nmse(-x, x) == pytest.approx(4.0)
    assert nmse(-x, x, sign_resolve=True) == 0.0


def test_nmse_errors():
    with pytest.raises(ValueError):
        nmse(np.ones(3), np.zeros(3))
    with pytest.raises(ShapeError):
        nmse(np.ones(3), np.ones(4))


# ── Config ───────────────────────────────────────────────────────────────────

def test_config_defaults():
    cfg = SolverConfig.with_overrides(eta=None, max_outer_iters=7)
    assert cfg.eta is None and cfg.eta_gain == 1.5 and cfg.max_outer_iters == 7
    assert cfg.tol == 1e-6 and cfg.inner_iters == 200 and cfg.inner_lr == 0.01


def test_step_sizes_follow_operator_norm():
    op = make_operator(200, 100, SeededRng(0))
    norm_sq = np.linalg.norm(op.matrix, 2) ** 2
    cfg = SolverConfig()
    # power iteration approaches ‖A‖² from below
    assert 1.5 / norm_sq * (1 - 1e-9) <= cfg.outer_step(op) <= 1.5 / (0.9 * norm_sq)
    assert cfg.weight_step(op) == pytest.approx(cfg.outer_step(op) * 0.01 / 1.5)
    assert SolverConfig(eta=0.3).outer_step(op) == 0.3
    assert SolverConfig().outer_step(identity_operator(16, 16)) == pytest.approx(1.5)


def test_config_validation():
    with pytest.raises(ValueError):
        SolverConfig(eta=0.0)
    with pytest.raises(ValueError):
        SolverConfig(eta_gain=2.0)
    with pytest.raises(ValueError):
        SolverConfig(max_outer_iters=0)
    with pytest.raises(ValueError):
        SolverConfig(tol=-1.0)


# ── Net-PGD ──────────────────────────────────────────────────────────────────

def test_cs_feasible_optimum_stops_immediately(small_spec, quick_cfg):
    xstar, w_star, latent = in_range_image(small_spec)
    op = make_operator(32, small_spec.d, SeededRng(1))
    trace = net_pgd_cs(apply(op, xstar), op, small_spec, latent, quick_cfg, w0=w_star)
    assert trace.converged
    assert trace.iterations == 0
    assert trace.final_loss == 0.0
    np.testing.assert_array_equal(trace.x_hat.values, xstar)


def test_cpr_feasible_optimum_stops_immediately(small_spec, quick_cfg):
    xstar, w_star, latent = in_range_image(small_spec)
    op = make_operator(64, small_spec.d, SeededRng(1))
    trace = net_pgd_cpr(apply_magnitude(op, xstar), op, small_spec, latent, quick_cfg, w0=w_star, xstar=xstar)
    assert trace.converged and trace.iterations == 0
    assert trace.records[0].phase_error == 0.0
    assert trace.records[0].nmse == 0.0


def test_cpr_phase_error_below_distance_near_solution(mnist_spec):
    xstar, w_star, latent = in_range_image(mnist_spec, weight_seed=1000)
    g = SeededRng(77).generator
    w0 = [w + 0.005 * g.normal(size=w.shape) for w in w_star]
    op = make_operator(392, mnist_spec.d, SeededRng(5))
    cfg = SolverConfig(max_outer_iters=4, inner_iters=30, tol=0.0, seed=5)
    trace = net_pgd_cpr(apply_magnitude(op, xstar), op, mnist_spec, latent, cfg, w0=w0, xstar=xstar)

    norm = np.linalg.norm(xstar)
    near = [r for r in trace.records if 0.0 < r.nmse <= 0.01]
    assert near
    for r in near:
        # ‖ε_p‖ < ‖x^t − x*‖ whenever x^t is within 0.1‖x*‖
        assert r.phase_error / (np.sqrt(r.nmse) * norm) < 1.0


def test_cs_trace_shape_and_projection_gaps(small_spec, quick_cfg):
    xstar, _, latent = in_range_image(small_spec)
    op = make_operator(32, small_spec.d, SeededRng(2))
    trace = net_pgd_cs(apply(op, xstar), op, small_spec, latent, quick_cfg, xstar=xstar)
    assert len(trace.records) <= quick_cfg.max_outer_iters + 1
    assert all(np.isfinite(r.measurement_loss) for r in trace.records)
    assert all(r.nmse is not None and r.nmse >= 0 for r in trace.records)
    stepped = [r for r in trace.records if r.gap_before is not None]
    assert stepped
    for r in stepped:
        assert r.gap_after <= r.gap_before + 1e-9
        assert r.step_size == quick_cfg.outer_step(op)
    assert trace.contraction_ratios().shape == (len(trace.records) - 1,)


def test_cs_deterministic(small_spec, quick_cfg):
    xstar, _, latent = in_range_image(small_spec)
    op = make_operator(32, small_spec.d, SeededRng(2))
    y = apply(op, xstar)
    a = net_pgd_cs(y, op, small_spec, latent, quick_cfg)
    b = net_pgd_cs(y, op, small_spec, latent, quick_cfg)
    np.testing.assert_array_equal(a.x_hat.values, b.x_hat.values)
    assert [r.measurement_loss for r in a.records] == [r.measurement_loss for r in b.records]


def test_cs_does_not_mutate_w0(small_spec, quick_cfg):
    xstar, _, latent = in_range_image(small_spec)
    op = make_operator(32, small_spec.d, SeededRng(2))
    from decoder import copy_weights, init_weights

    w0 = init_weights(small_spec, SeededRng(5))
    saved = copy_weights(w0)
    net_pgd_cs(apply(op, xstar), op, small_spec, latent, quick_cfg, w0=w0)
    for a, b in zip(w0, saved):
        np.testing.assert_array_equal(a, b)


def test_cpr_rejects_negative_measurements(small_spec, quick_cfg):
    _, _, latent = in_range_image(small_spec)
    op = make_operator(8, small_spec.d, SeededRng(0))
    y = np.ones(8)
    y[3] = -0.1
    with pytest.raises(SolverError):
        net_pgd_cpr(y, op, small_spec, latent, quick_cfg)


def test_solver_shape_checks(small_spec, tiny_spec, quick_cfg):
    _, _, latent = in_range_image(small_spec)
    op = make_operator(8, small_spec.d, SeededRng(0))
    with pytest.raises(ShapeError):
        net_pgd_cs(np.ones(7), op, small_spec, latent, quick_cfg)
    with pytest.raises(ShapeError):
        net_pgd_cs(np.ones(8), op, tiny_spec, latent, quick_cfg)


# ── Net-GD ───────────────────────────────────────────────────────────────────

@pytest.mark.parametrize("mode", ["linear", "magnitude"])
def test_net_gd_feasible_optimum_does_not_move(small_spec, quick_cfg, mode):
    xstar, w_star, latent = in_range_image(small_spec)
    op = make_operator(40, small_spec.d, SeededRng(4))
    y = apply_magnitude(op, xstar) if mode == "magnitude" else apply(op, xstar)
    trace = net_gd(y, op, mode, small_spec, latent, quick_cfg, w0=w_star)
    assert trace.converged and trace.final_loss == 0.0
    for a, b in zip(trace.weights, w_star):
        np.testing.assert_array_equal(a, b)


def test_net_gd_records_blocks(small_spec, quick_cfg):
    xstar, _, latent = in_range_image(small_spec)
    op = make_operator(40, small_spec.d, SeededRng(4))
    trace = net_gd(apply(op, xstar), op, "linear", small_spec, latent, quick_cfg, xstar=xstar)
    assert trace.iterations <= quick_cfg.max_outer_iters
    assert all(r.step_size == quick_cfg.weight_step(op) for r in trace.records)
    assert all(r.phase_error is None for r in trace.records)


def test_net_gd_unknown_mode(small_spec, quick_cfg):
    _, _, latent = in_range_image(small_spec)
    op = make_operator(8, small_spec.d, SeededRng(0))
    with pytest.raises(ValueError):
        net_gd(np.ones(8), op, "quadratic", small_spec, latent, quick_cfg)


# ── ISTA over DCT ────────────────────────────────────────────────────────────

def test_ista_zero_measurements():
    op = make_operator(20, 64, SeededRng(0))
    np.testing.assert_array_equal(ista_dct(np.zeros(20), op, 0.1, 50).values, np.zeros(64))


def test_ista_identity_least_squares_limit():
    op = identity_operator(64, 64)
    y = SeededRng(1).generator.uniform(size=64)
    x_hat = ista_dct(y, op, 1e-6, 200)
    assert np.abs(x_hat.values - y).max() < 1e-3
    assert x_hat.shape == (8, 8)


def test_ista_objective_monotone():
    op = make_operator(30, 64, SeededRng(2))
    xstar = SeededRng(3).generator.uniform(size=64)
    _, history = ista_dct(apply(op, xstar), op, 0.01, 100, return_objective=True)
    assert len(history) == 101
    assert all(b <= a + 1e-12 for a, b in zip(history, history[1:]))


def test_ista_recovers_sparse_dct_signal():
    from numeric import dct2_basis

    coef = np.zeros(64)
    coef[[0, 3, 9]] = [4.0, -2.0, 1.5]
    xstar = dct2_basis(8) @ coef
    op = make_operator(40, 64, SeededRng(6))
    x_hat = ista_dct(apply(op, xstar), op, 1e-3, 30000)
    assert nmse(x_hat, xstar) < 1e-3


def test_ista_argument_checks():
    op = make_operator(5, 10, SeededRng(0))
    with pytest.raises(ShapeError):
        ista_dct(np.zeros(5), op, 0.1)
    op = make_operator(5, 16, SeededRng(0))
    with pytest.raises(ValueError):
        ista_dct(np.zeros(5), op, 0.0)
    with pytest.raises(ShapeError):
        ista_dct(np.zeros(4), op, 0.1)


# ── In-range convergence ─────────────────────────────────────────────────────

def test_pgd_contracts_on_identity_operator():
    # with A = I and η = 1/2, v is the midpoint of x^t and x*, so the error never grows
    spec = DecoderSpec(layer_channels=(4, 3, 1), latent_side=4, channel_norm=False, sigmoid=False)
    xstar, _, latent = in_range_image(spec, weight_seed=12)
    op = identity_operator(spec.d, spec.d)
    cfg = SolverConfig(eta=0.5, max_outer_iters=15, inner_iters=100, inner_lr=0.0015, seed=13)
    trace = net_pgd_cs(apply(op, xstar), op, spec, latent, cfg)
    errors = np.sqrt([r.measurement_loss for r in trace.records])
    assert all(b <= a * (1 + 1e-9) for a, b in zip(errors, errors[1:]))
