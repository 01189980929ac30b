"""
measurements.py — Gaussian compressive measurement operators and the empirical
Set-REC check over a decoder's range.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Literal

import numpy as np

from config import DEGENERATE_NORM, MAX_REDRAWS
from decoder import DecoderSpec, LatentCode, decode, init_weights
from errors import RecCheckError, ShapeError
from numeric import SeededRng, gaussian_sample

logger = logging.getLogger(__name__)

RecMode = Literal["range", "difference"]


@dataclass(frozen=True)
class MeasurementOperator:
    matrix: np.ndarray
    seed: int | None = None

    def __post_init__(self):
        matrix = np.array(self.matrix, dtype=np.float64)
        if matrix.ndim != 2:
            raise ShapeError(f"measurement matrix must be 2-D, got {matrix.shape}")
        matrix.setflags(write=False)
        object.__setattr__(self, "matrix", matrix)

    @property
    def n(self) -> int:
        return self.matrix.shape[0]

    @property
    def d(self) -> int:
        return self.matrix.shape[1]


# ── Constructors ─────────────────────────────────────────────────────────────

def make_operator(n: int, d: int, rng: SeededRng) -> MeasurementOperator:
    """Dense A with i.i.d. N(0, 1/n) entries."""
    if n < 1 or d < 1:
        raise ShapeError(f"operator needs n, d >= 1, got n={n}, d={d}")
    return MeasurementOperator(gaussian_sample(rng, n, d, 1.0 / np.sqrt(n)), seed=rng.seed)


def identity_operator(n: int, d: int) -> MeasurementOperator:
    """First n rows of the d × d identity; y = x truncated."""
    return MeasurementOperator(np.eye(n, d))


def orthonormal_operator(d: int, rng: SeededRng) -> MeasurementOperator:
    """Random d × d orthogonal matrix (an exact isometry)."""
    q, r = np.linalg.qr(gaussian_sample(rng, d, d, 1.0))
    # sign fix makes the draw a deterministic function of the Gaussian matrix
    q = q * np.where(np.diag(r) < 0, -1.0, 1.0)
    return MeasurementOperator(q, seed=rng.seed)


def nested_operators(n_grid: list[int], d: int, rng: SeededRng) -> dict[int, MeasurementOperator]:
    """
    Operators for every n in the grid that share the leading rows of one
    standard Gaussian draw, each rescaled to N(0, 1/n). Growing n only adds
    rows, which couples REC pass rates across the grid.
    """
    if not n_grid:
        return {}
    master = gaussian_sample(rng, max(n_grid), d, 1.0)
    return {
        n: MeasurementOperator(master[:n] / np.sqrt(n), seed=rng.seed)
        for n in sorted(set(n_grid))
    }


# ── Application ──────────────────────────────────────────────────────────────

def _vector(x, size: int, what: str) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.size != size:
        raise ShapeError(f"{what} has {x.size} entries, expected {size}")
    return x


def apply(op: MeasurementOperator, x) -> np.ndarray:
    return op.matrix @ _vector(x, op.d, "image")


def apply_adjoint(op: MeasurementOperator, r) -> np.ndarray:
    return op.matrix.T @ _vector(r, op.n, "measurement vector")


def apply_magnitude(op: MeasurementOperator, x) -> np.ndarray:
    return np.abs(apply(op, x))


# ── Set-REC ──────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class RecReport:
    """Outcome of a Monte-Carlo sandwich test (1−α)‖h‖² ≤ ‖Ah‖² ≤ (1+α)‖h‖².

    A pass rate of 1 is a necessary condition for Set-REC, not a certificate.
    """

    n: int
    d: int
    alpha: float
    mode: str
    trials: int
    discarded: int
    pass_rate: float
    min_ratio: float
    max_ratio: float


def _draw_range_vector(spec, latent, rng: SeededRng, mode: RecMode) -> tuple[np.ndarray, int]:
    for redraw in range(MAX_REDRAWS):
        h = decode(spec, init_weights(spec, rng), latent)
        if mode == "difference":
            h = h - decode(spec, init_weights(spec, rng), latent)
        if np.linalg.norm(h) >= DEGENERATE_NORM:
            return h, redraw
    raise RecCheckError(f"{MAX_REDRAWS} consecutive degenerate draws (‖h‖ < {DEGENERATE_NORM})")


def rec_check(
    op: MeasurementOperator,
    spec: DecoderSpec,
    latent: LatentCode,
    alpha: float,
    trials: int,
    rng: SeededRng,
    mode: RecMode = "range",
) -> RecReport:
    """
    Draw random decoder weights and test the REC sandwich on h = G(w; z)
    (range) or h = G(w₁; z) − G(w₂; z) (difference). Trial i draws from
    `rng.spawn(i)`, so runs over different operators see the same vectors.
    """
    if spec.sigmoid:
        raise RecCheckError("REC check needs sigmoid off: its range is not a union of subspaces")
    if not 0 < alpha < 1:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    if trials < 1:
        raise ValueError(f"trials must be >= 1, got {trials}")
    if mode not in ("range", "difference"):
        raise ValueError(f"unknown REC mode {mode!r}")
    if op.d != spec.d:
        raise ShapeError(f"operator acts on d={op.d}, decoder outputs d={spec.d}")

    ratios = np.empty(trials)
    discarded = 0
    for trial in range(trials):
        h, redraws = _draw_range_vector(spec, latent, rng.spawn(trial), mode)
        discarded += redraws
        ah = op.matrix @ h
        ratios[trial] = float(ah @ ah) / float(h @ h)

    passed = (ratios >= 1.0 - alpha) & (ratios <= 1.0 + alpha)
    report = RecReport(
        n=op.n,
        d=op.d,
        alpha=alpha,
        mode=mode,
        trials=trials,
        discarded=discarded,
        pass_rate=float(passed.mean()),
        min_ratio=float(ratios.min()),
        max_ratio=float(ratios.max()),
    )
    logger.debug(
        f"[ 📏 rec_check ] n={op.n} mode={mode} pass={report.pass_rate:.3f} "
        f"ratio∈[{report.min_ratio:.3f}, {report.max_ratio:.3f}] discarded={discarded}"
    )
    return report
