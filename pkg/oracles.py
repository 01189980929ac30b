"""
oracles.py — Independent numerical checks: central differences, the
phase-estimation error of the magnitude step, initialization distance and the
restricted contraction of I − ηAᵀA.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import numpy as np

from decoder import DecoderSpec, DecoderWeights, LatentCode, decode, grad_weights
from errors import ShapeError
from measurements import MeasurementOperator
from numeric import SeededRng

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class GradCheckReport:
    max_relative_error: float
    worst_coordinate: int    # flat index over all weight entries, layer by layer
    h: float


# ── Finite differences ───────────────────────────────────────────────────────

def finite_diff_grad(
    loss_fn: Callable[[DecoderWeights], float],
    weights: DecoderWeights | np.ndarray,
    h: float = 1e-6,
) -> DecoderWeights | np.ndarray:
    """Central differences (L(w + h·e) − L(w − h·e)) / 2h for every coordinate."""
    if h <= 0:
        raise ValueError(f"h must be positive, got {h}")
    single = isinstance(weights, np.ndarray)
    layers = [weights.astype(np.float64)] if single else [w.astype(np.float64) for w in weights]

    def evaluate() -> float:
        return float(loss_fn(layers[0] if single else layers))

    grads = []
    for layer in layers:
        grad = np.zeros_like(layer)
        flat, gflat = layer.reshape(-1), grad.reshape(-1)
        for i in range(flat.size):
            saved = flat[i]
            flat[i] = saved + h
            up = evaluate()
            flat[i] = saved - h
            down = evaluate()
            flat[i] = saved
            gflat[i] = (up - down) / (2.0 * h)
        grads.append(grad)
    return grads[0] if single else grads


def relative_error_report(analytic: DecoderWeights, numeric: DecoderWeights, h: float) -> GradCheckReport:
    a = np.concatenate([g.reshape(-1) for g in analytic])
    n = np.concatenate([g.reshape(-1) for g in numeric])
    if a.shape != n.shape:
        raise ShapeError(f"gradient sizes differ: {a.size} vs {n.size}")
    # coordinates far below the gradient's scale are compared against that scale
    floor = max(1e-8, 1e-3 * float(max(np.abs(a).max(initial=0.0), np.abs(n).max(initial=0.0))))
    rel = np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    worst = int(np.argmax(rel)) if rel.size else 0
    return GradCheckReport(float(rel.max(initial=0.0)), worst, h)


def check_decoder_gradient(
    spec: DecoderSpec,
    weights: DecoderWeights,
    latent: LatentCode,
    upstream: np.ndarray,
    h: float = 1e-6,
) -> GradCheckReport:
    """Compare `grad_weights` with central differences of ⟨upstream, G(w; z)⟩."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    analytic = grad_weights(spec, weights, latent, upstream)
    numeric = finite_diff_grad(lambda w: float(upstream @ decode(spec, w, latent)), weights, h)
    report = relative_error_report(analytic, numeric, h)
    logger.debug(
        f"[ 🧪 check_decoder_gradient ] params={spec.parameter_count} "
        f"max_rel={report.max_relative_error:.3g} at {report.worst_coordinate}"
    )
    return report


# ── Phase estimation error ───────────────────────────────────────────────────

def _sign(v: np.ndarray) -> np.ndarray:
    return np.where(v >= 0, 1.0, -1.0)


def phase_error_norm(op: MeasurementOperator, xstar, xt) -> float:
    """‖Aᵀ(Ax* ∘ (1 − sign(Ax*) ∘ sign(Ax^t)))‖₂."""
    xstar = np.asarray(xstar, dtype=np.float64).reshape(-1)
    xt = np.asarray(xt, dtype=np.float64).reshape(-1)
    if xstar.size != op.d or xt.size != op.d:
        raise ShapeError(f"images must have d={op.d} entries")
    a_star = op.matrix @ xstar
    mismatch = 1.0 - _sign(a_star) * _sign(op.matrix @ xt)
    return float(np.linalg.norm(op.matrix.T @ (a_star * mismatch)))


def phase_error_trials(
    op: MeasurementOperator,
    xstar,
    rel_distance: float,
    trials: int,
    rng: SeededRng,
) -> np.ndarray:
    """
    Ratios ‖ε_p‖ / ‖x^t − x*‖ for random x^t at distance rel_distance·‖x*‖.
    Perturbation i is drawn from `rng.spawn(i)`.
    """
    xstar = np.asarray(xstar, dtype=np.float64).reshape(-1)
    radius = rel_distance * float(np.linalg.norm(xstar))
    ratios = np.empty(trials)
    for trial in range(trials):
        direction = rng.spawn(trial).generator.normal(size=xstar.size)
        h = radius * direction / np.linalg.norm(direction)
        ratios[trial] = phase_error_norm(op, xstar, xstar + h) / radius
    return ratios


# ── Initialization distance and contraction ──────────────────────────────────

def delta_i_stat(x0, xT) -> float:
    """δ_i = ‖x⁰ − x^T‖ / ‖x^T‖."""
    x0 = np.asarray(x0, dtype=np.float64).reshape(-1)
    xT = np.asarray(xT, dtype=np.float64).reshape(-1)
    denom = float(np.linalg.norm(xT))
    if denom == 0.0:
        raise ValueError("δ_i is undefined for a zero final estimate")
    return float(np.linalg.norm(x0 - xT)) / denom


def restricted_contraction(op: MeasurementOperator, h, eta: float) -> float:
    """‖(I − ηAᵀA)h‖ / ‖h‖; below 1 on range differences when Set-REC holds and η fits."""
    h = np.asarray(h, dtype=np.float64).reshape(-1)
    norm = float(np.linalg.norm(h))
    if norm == 0.0:
        raise ValueError("contraction is undefined for h = 0")
    return float(np.linalg.norm(h - eta * (op.matrix.T @ (op.matrix @ h)))) / norm
