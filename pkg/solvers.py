"""
solvers.py — Reconstruction algorithms over the untrained decoder prior.

  net_pgd_cs   gradient step on ‖y − Ax‖², then projection onto the decoder range
  net_pgd_cpr  phase estimate p = sign(Ax), gradient step on ‖y∘p − Ax‖², projection
  net_gd       momentum descent on the decoder weights of ‖y − f(G(w; z))‖²
  ista_dct     Lasso over an orthonormal DCT basis (baseline)
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Literal

import numpy as np
from pydantic import BaseModel, Field

from config import (
    ETA_GAIN, INNER_ITERS, INNER_LR, ISTA_ITERS, MOMENTUM,
    OUTER_ITERS, POWER_ITERS, TOLERANCE,
)
from decoder import (
    DecoderSpec, DecoderWeights, LatentCode, copy_weights, decode,
    forward, grad_weights, init_weights, project,
)
from errors import ShapeError, SolverError
from measurements import MeasurementOperator
from numeric import ImageVector, SeededRng, dct2_basis

logger = logging.getLogger(__name__)

MeasurementMode = Literal["linear", "magnitude"]


# ── Configuration and traces ─────────────────────────────────────────────────

class SolverConfig(BaseModel):
    eta: float | None = Field(default=None, gt=0, description="outer step size η; None means eta_gain / ‖A‖²")
    eta_gain: float = Field(default=ETA_GAIN, gt=0, lt=2)
    max_outer_iters: int = Field(default=OUTER_ITERS, ge=1, description="T")
    tol: float = Field(default=TOLERANCE, ge=0, description="relative residual stop")
    inner_iters: int = Field(default=INNER_ITERS, ge=1)
    inner_lr: float = Field(default=INNER_LR, gt=0)
    momentum: float = Field(default=MOMENTUM, ge=0, lt=1)
    seed: int = 0

    @classmethod
    def with_overrides(cls, **overrides) -> SolverConfig:
        """Defaults with every non-`None` override applied."""
        return cls(**{k: v for k, v in overrides.items() if v is not None})

    def outer_step(self, op: MeasurementOperator) -> float:
        if self.eta is not None:
            return self.eta
        return self.eta_gain / _operator_norm_sq(op)

    def weight_step(self, op: MeasurementOperator) -> float:
        """Net-GD learning rate: `inner_lr` normalized by ‖A‖²."""
        return self.inner_lr / _operator_norm_sq(op)


@dataclass
class IterationRecord:
    t: int
    measurement_loss: float
    rel_residual: float
    step_size: float
    fit_loss: float | None = None
    nmse: float | None = None
    phase_error: float | None = None
    gap_before: float | None = None   # ‖x^t − v^t‖
    gap_after: float | None = None    # ‖x^{t+1} − v^t‖


@dataclass
class SolverTrace:
    records: list[IterationRecord]
    x_hat: ImageVector
    weights: DecoderWeights
    x_init: ImageVector
    converged: bool = False

    @property
    def final_loss(self) -> float:
        return self.records[-1].measurement_loss

    @property
    def iterations(self) -> int:
        """Outer steps taken (records minus the starting point)."""
        return len(self.records) - 1

    def contraction_ratios(self) -> np.ndarray:
        """Observed per-step factors ‖r^{t+1}‖ / ‖r^t‖ of the measurement residual."""
        res = np.sqrt([r.measurement_loss for r in self.records])
        with np.errstate(divide="ignore", invalid="ignore"):
            return res[1:] / res[:-1]


# ── Helpers ──────────────────────────────────────────────────────────────────

def _spectral_norm_sq(m: np.ndarray, iters: int = POWER_ITERS) -> float:
    v = SeededRng(0).generator.normal(size=m.shape[1])
    v /= np.linalg.norm(v)
    for _ in range(iters):
        v = m.T @ (m @ v)
        norm = np.linalg.norm(v)
        if norm == 0.0:
            return 0.0
        v /= norm
    mv = m @ v
    return float(mv @ mv)


def _operator_norm_sq(op: MeasurementOperator) -> float:
    norm_sq = _spectral_norm_sq(op.matrix)
    if norm_sq <= 0.0:
        raise SolverError("measurement operator is zero")
    return norm_sq


def nmse(xhat, xstar, sign_resolve: bool = False) -> float:
    """‖x̂ − x*‖² / ‖x*‖², optionally minimized over the global sign of x̂."""
    xhat = np.asarray(xhat, dtype=np.float64).reshape(-1)
    xstar = np.asarray(xstar, dtype=np.float64).reshape(-1)
    if xhat.size != xstar.size:
        raise ShapeError(f"estimate has {xhat.size} entries, reference has {xstar.size}")
    ref = float(xstar @ xstar)
    if ref == 0.0:
        raise ValueError("nMSE is undefined for a zero reference image")
    err = float(np.sum((xhat - xstar) ** 2))
    if sign_resolve:
        err = min(err, float(np.sum((xhat + xstar) ** 2)))
    return err / ref


def _phase(ax: np.ndarray) -> np.ndarray:
    # sign(0) := +1
    return np.where(ax >= 0, 1.0, -1.0)


def _check_problem(y, op: MeasurementOperator, spec: DecoderSpec, magnitude: bool) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != op.n:
        raise ShapeError(f"{y.size} measurements for an operator with n={op.n}")
    if op.d != spec.d:
        raise ShapeError(f"operator acts on d={op.d}, decoder outputs d={spec.d}")
    if magnitude and np.any(y < 0):
        raise SolverError("magnitude measurements must be nonnegative")
    return y


def _start_weights(spec: DecoderSpec, cfg: SolverConfig, w0: DecoderWeights | None) -> DecoderWeights:
    if w0 is not None:
        return copy_weights(w0)
    return init_weights(spec, SeededRng(cfg.seed))


def _record(
    t: int, y: np.ndarray, ax: np.ndarray, x: np.ndarray, step: float,
    magnitude: bool, op: MeasurementOperator, xstar: np.ndarray | None,
) -> IterationRecord:
    residual = y - (np.abs(ax) if magnitude else ax)
    loss = float(residual @ residual)
    if not math.isfinite(loss):
        raise SolverError(f"non-finite measurement loss at outer iteration {t}")
    y_norm = float(np.linalg.norm(y))
    rel = math.sqrt(loss) / y_norm if y_norm > 0 else math.sqrt(loss)
    record = IterationRecord(t=t, measurement_loss=loss, rel_residual=rel, step_size=step)
    if xstar is not None:
        record.nmse = nmse(x, xstar, sign_resolve=magnitude)
        if magnitude:
            # ε_p = Aᵀ(Ax^t − y∘p) − Aᵀ(Ax^t − Ax*)
            record.phase_error = float(np.linalg.norm(op.matrix.T @ (op.matrix @ xstar - y * _phase(ax))))
    return record


# ── Net-PGD ──────────────────────────────────────────────────────────────────

def _net_pgd(
    y, op: MeasurementOperator, spec: DecoderSpec, latent: LatentCode,
    cfg: SolverConfig, w0: DecoderWeights | None, xstar, magnitude: bool,
) -> SolverTrace:
    tag = "net_pgd_cpr" if magnitude else "net_pgd_cs"
    y = _check_problem(y, op, spec, magnitude)
    if xstar is not None:
        xstar = np.asarray(xstar, dtype=np.float64).reshape(-1)

    w = _start_weights(spec, cfg, w0)
    x = decode(spec, w, latent)
    x_init = x.copy()
    records: list[IterationRecord] = []
    converged = False
    eta = cfg.outer_step(op)

    for t in range(cfg.max_outer_iters + 1):
        ax = op.matrix @ x
        record = _record(t, y, ax, x, eta, magnitude, op, xstar)
        records.append(record)
        logger.debug(
            f"[ 🔁 {tag} ] t={t} loss={record.measurement_loss:.4g} "
            f"rel={record.rel_residual:.3g} nmse={record.nmse}"
        )
        if record.rel_residual < cfg.tol:
            converged = True
            break
        if t == cfg.max_outer_iters:
            break

        target = y * _phase(ax) if magnitude else y
        v = x - eta * (op.matrix.T @ (ax - target))
        w, fit_loss = project(spec, latent, v, w, cfg.inner_iters, cfg.inner_lr, cfg.momentum)
        x_next = decode(spec, w, latent)

        record.fit_loss = fit_loss
        record.gap_before = float(np.linalg.norm(x - v))
        record.gap_after = float(np.linalg.norm(x_next - v))
        x = x_next

    logger.info(
        f"[ ✅ {tag} ] n={op.n} d={op.d} steps={len(records) - 1} "
        f"loss={records[-1].measurement_loss:.4g} converged={converged}"
    )
    return SolverTrace(
        records=records,
        x_hat=ImageVector(x, spec.image_shape),
        weights=w,
        x_init=ImageVector(x_init, spec.image_shape),
        converged=converged,
    )


def net_pgd_cs(
    y, op: MeasurementOperator, spec: DecoderSpec, latent: LatentCode,
    cfg: SolverConfig, w0: DecoderWeights | None = None, xstar=None,
) -> SolverTrace:
    """Projected gradient descent for y = Ax with x in the decoder range."""
    return _net_pgd(y, op, spec, latent, cfg, w0, xstar, magnitude=False)


def net_pgd_cpr(
    y, op: MeasurementOperator, spec: DecoderSpec, latent: LatentCode,
    cfg: SolverConfig, w0: DecoderWeights | None = None, xstar=None,
) -> SolverTrace:
    """Projected gradient descent for y = |Ax| with x in the decoder range.

    With `xstar` supplied, every record carries the phase-estimation error
    ‖ε_p^t‖ and the sign-resolved nMSE.
    """
    return _net_pgd(y, op, spec, latent, cfg, w0, xstar, magnitude=True)


# ── Net-GD ───────────────────────────────────────────────────────────────────

def net_gd(
    y, op: MeasurementOperator, mode: MeasurementMode, spec: DecoderSpec, latent: LatentCode,
    cfg: SolverConfig, w0: DecoderWeights | None = None, xstar=None,
) -> SolverTrace:
    """
    Momentum descent on the weights of ‖y − f(G(w; z))‖² with learning rate
    `inner_lr / ‖A‖²`.

    One trace record per block of `inner_iters` steps, so a run is at most
    `max_outer_iters` blocks. Magnitude mode passes sign(Ax) through |·|.
    """
    if mode not in ("linear", "magnitude"):
        raise ValueError(f"unknown measurement mode {mode!r}")
    magnitude = mode == "magnitude"
    y = _check_problem(y, op, spec, magnitude)
    if xstar is not None:
        xstar = np.asarray(xstar, dtype=np.float64).reshape(-1)

    a = op.matrix
    w = _start_weights(spec, cfg, w0)
    velocity = [np.zeros_like(layer) for layer in w]
    _, tape = forward(spec, w, latent)
    x_init = tape.x.copy()
    records: list[IterationRecord] = []
    converged = False
    lr = cfg.weight_step(op)

    for t in range(cfg.max_outer_iters + 1):
        ax = a @ tape.x
        record = _record(t, y, ax, tape.x, lr, magnitude, op, xstar)
        records.append(record)
        logger.debug(f"[ 🔁 net_gd ] t={t} loss={record.measurement_loss:.4g} nmse={record.nmse}")
        if record.rel_residual < cfg.tol:
            converged = True
            break
        if t == cfg.max_outer_iters:
            break

        for _ in range(cfg.inner_iters):
            meas_grad = ax - (y * _phase(ax) if magnitude else y)
            upstream = 2.0 * (a.T @ meas_grad)
            grads = grad_weights(spec, w, latent, upstream, tape)
            for layer in range(len(w)):
                velocity[layer] = cfg.momentum * velocity[layer] - lr * grads[layer]
                w[layer] = w[layer] + velocity[layer]
            _, tape = forward(spec, w, latent)
            if not np.all(np.isfinite(tape.x)):
                raise SolverError(f"decoder output became non-finite in block {t}")
            ax = a @ tape.x

    logger.info(
        f"[ ✅ net_gd ] mode={mode} n={op.n} blocks={len(records) - 1} "
        f"loss={records[-1].measurement_loss:.4g} converged={converged}"
    )
    return SolverTrace(
        records=records,
        x_hat=ImageVector(tape.x, spec.image_shape),
        weights=w,
        x_init=ImageVector(x_init, spec.image_shape),
        converged=converged,
    )


# ── Lasso / ISTA over the DCT basis ──────────────────────────────────────────

def _soft_threshold(v: np.ndarray, threshold: float) -> np.ndarray:
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


def ista_dct(
    y, op: MeasurementOperator, lam: float, iters: int = ISTA_ITERS,
    return_objective: bool = False,
) -> ImageVector | tuple[ImageVector, list[float]]:
    """
    Proximal gradient on ½‖y − ADc‖² + λ‖c‖₁ with D the orthonormal 2-D DCT
    synthesis basis; returns x̂ = Dĉ (and the objective per iterate on request).

    The step is 1/L with L the power-iteration estimate of ‖AD‖₂². That
    estimate never exceeds the true constant and stays above half of it, which
    keeps the objective non-increasing.
    """
    if lam <= 0:
        raise ValueError(f"lambda must be positive, got {lam}")
    side = math.isqrt(op.d)
    if side * side != op.d:
        raise ShapeError(f"DCT baseline needs a square image, d={op.d}")
    y = np.asarray(y, dtype=np.float64).reshape(-1)
    if y.size != op.n:
        raise ShapeError(f"{y.size} measurements for an operator with n={op.n}")

    basis = dct2_basis(side)
    m = op.matrix @ basis
    lipschitz = _spectral_norm_sq(m)
    c = np.zeros(op.d)

    def objective(coef: np.ndarray) -> float:
        r = y - m @ coef
        return 0.5 * float(r @ r) + lam * float(np.abs(coef).sum())

    history = [objective(c)] if return_objective else []
    if lipschitz > 0:
        step = 1.0 / lipschitz
        for _ in range(iters):
            c = _soft_threshold(c - step * (m.T @ (m @ c - y)), lam * step)
            if return_objective:
                history.append(objective(c))

    logger.info(f"[ ✅ ista_dct ] n={op.n} λ={lam:.3g} nonzeros={int(np.count_nonzero(c))}/{op.d}")
    x_hat = ImageVector(basis @ c, (side, side))
    return (x_hat, history) if return_objective else x_hat
