"""
decoder.py — Untrained deep-decoder prior G(w; z).

Channels live as matrix columns, the spatial grid is row-major flattened.
Layer l maps Z_l (d_l × k_l) through a 1×1 convolution W_l (k_l × k_{l+1}),
ReLU, optional per-channel standardization and bilinear doubling:

    Z_{l+1} = U_l · norm(relu(Z_l W_l)),    x = vec(Z_L W_L)  [→ sigmoid]
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator

from config import DIVERGENCE_FACTOR, DIVERGENCE_FLOOR, INNER_ITERS, INNER_LR, MOMENTUM, NORM_EPS
from errors import ConfigError, ProjectionDivergedError, ShapeError
from numeric import ImageVector, SeededRng, uniform_sample, upsample_adjoint, upsample_apply

logger = logging.getLogger(__name__)

DecoderWeights = list[np.ndarray]


# ── Architecture ─────────────────────────────────────────────────────────────

class DecoderSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer_channels: tuple[int, ...] = Field(..., description="[k_1, …, k_L, k_out]")
    latent_side: int = Field(..., ge=1, description="side of the Z_1 grid")
    channel_norm: bool = True
    sigmoid: bool = True
    dims: int = Field(default=2, ge=1, le=2, description="spatial dimensions of the grid")

    @model_validator(mode="after")
    def _check(self):
        if len(self.layer_channels) < 3:
            raise ValueError("need at least two weight layers (three channel counts)")
        if any(k < 1 for k in self.layer_channels):
            raise ValueError(f"channel counts must be positive: {self.layer_channels}")
        if self.parameter_count >= self.d:
            raise ValueError(
                f"decoder is not under-parameterized: {self.parameter_count} weights "
                f">= {self.d} outputs"
            )
        return self

    @property
    def num_layers(self) -> int:
        return len(self.layer_channels) - 1

    @property
    def output_side(self) -> int:
        return self.latent_side * 2 ** (self.num_layers - 1)

    @property
    def latent_dim(self) -> int:
        return self.latent_side ** self.dims

    @property
    def pixels(self) -> int:
        return self.output_side ** self.dims

    @property
    def out_channels(self) -> int:
        return self.layer_channels[-1]

    @property
    def d(self) -> int:
        return self.pixels * self.out_channels

    @property
    def image_shape(self) -> tuple[int, ...]:
        shape = (self.output_side,) * self.dims
        return shape if self.out_channels == 1 else shape + (self.out_channels,)

    @property
    def weight_shapes(self) -> list[tuple[int, int]]:
        k = self.layer_channels
        return [(k[i], k[i + 1]) for i in range(self.num_layers)]

    @property
    def parameter_count(self) -> int:
        return sum(r * c for r, c in self.weight_shapes)

    def grid_sides(self) -> list[int]:
        """Spatial side of Z_l for l = 1..L."""
        return [self.latent_side * 2 ** i for i in range(self.num_layers)]

    # ── key=value form ───────────────────────────────────────────────────────

    def to_text(self) -> str:
        return "\n".join([
            f"layers={self.num_layers}",
            f"channels={','.join(str(k) for k in self.layer_channels)}",
            f"latent_side={self.latent_side}",
            f"channel_norm={str(self.channel_norm).lower()}",
            f"sigmoid={str(self.sigmoid).lower()}",
            f"dims={self.dims}",
        ]) + "\n"

    @classmethod
    def from_text(cls, text: str) -> DecoderSpec:
        values: dict[str, str] = {}
        for raw in text.splitlines():
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"expected key=value, got {raw!r}")
            key, value = (part.strip() for part in line.split("=", 1))
            values[key] = value

        missing = {"channels", "latent_side"} - values.keys()
        if missing:
            raise ConfigError(f"decoder config missing: {', '.join(sorted(missing))}")
        unknown = values.keys() - {"layers", "channels", "latent_side", "channel_norm", "sigmoid", "dims"}
        if unknown:
            raise ConfigError(f"unknown decoder config keys: {', '.join(sorted(unknown))}")

        try:
            channels = tuple(int(k) for k in values["channels"].split(","))
            if "layers" in values and int(values["layers"]) != len(channels) - 1:
                raise ConfigError(
                    f"layers={values['layers']} does not match {len(channels)} channel counts"
                )
            return cls(
                layer_channels=channels,
                latent_side=int(values["latent_side"]),
                channel_norm=_parse_bool(values.get("channel_norm", "true")),
                sigmoid=_parse_bool(values.get("sigmoid", "true")),
                dims=int(values.get("dims", "2")),
            )
        except ValueError as e:
            if isinstance(e, ConfigError):
                raise
            raise ConfigError(f"invalid decoder config: {e}") from e


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


PRESETS: dict[str, DecoderSpec] = {
    # 28×28 digits: two hidden layers of 15 channels, 10-channel output map
    "mnist": DecoderSpec(layer_channels=(15, 15, 10, 1), latent_side=7),
    # two-layer ReLU network whose range is a union of subspaces
    "rec": DecoderSpec(layer_channels=(15, 15, 1), latent_side=14, channel_norm=False, sigmoid=False),
    "celeba-gray": DecoderSpec(layer_channels=(120, 15, 15, 10, 1), latent_side=8),
}


def resolve_spec(name_or_path: str) -> DecoderSpec:
    """Look up a preset by name, else read a key=value spec file."""
    if name_or_path in PRESETS:
        return PRESETS[name_or_path]
    try:
        with open(name_or_path, "r") as f:
            return DecoderSpec.from_text(f.read())
    except FileNotFoundError as e:
        raise ConfigError(
            f"no decoder preset or spec file named {name_or_path!r} "
            f"(presets: {', '.join(PRESETS)})"
        ) from e


# ── Latent code and weights ──────────────────────────────────────────────────

@dataclass(frozen=True)
class LatentCode:
    z: np.ndarray
    seed: int


def make_latent(spec: DecoderSpec, seed: int) -> LatentCode:
    """Fixed Uniform[0,1) seed tensor Z_1 (d_1 × k_1)."""
    z = uniform_sample(SeededRng(seed), spec.latent_dim, spec.layer_channels[0])
    z.setflags(write=False)
    return LatentCode(z=z, seed=seed)


def init_weights(spec: DecoderSpec, rng: SeededRng) -> DecoderWeights:
    """Scaled-uniform fan-based init: W_l ~ U(−b, b), b = sqrt(6 / (k_l + k_{l+1}))."""
    weights = []
    for rows, cols in spec.weight_shapes:
        bound = np.sqrt(6.0 / (rows + cols))
        weights.append(uniform_sample(rng, rows, cols, -bound, bound))
    return weights


def copy_weights(weights: DecoderWeights) -> DecoderWeights:
    return [w.copy() for w in weights]


def check_weights(spec: DecoderSpec, weights: DecoderWeights):
    shapes = [tuple(w.shape) for w in weights]
    if shapes != spec.weight_shapes:
        raise ShapeError(f"weight shapes {shapes} do not match spec {spec.weight_shapes}")


# ── Forward ──────────────────────────────────────────────────────────────────

@dataclass
class ForwardTape:
    """Intermediates of one forward pass, consumed by `grad_weights`."""

    inputs: list[np.ndarray]        # Z_l, l = 1..L
    masks: list[np.ndarray]         # ReLU sign pattern P_l, l = 1..L−1
    normed: list[np.ndarray]        # post-ReLU (standardized) activations before upsampling
    inv_std: list[np.ndarray | None]
    output_pre: np.ndarray          # Z_L W_L
    x: np.ndarray                   # d-vector (after sigmoid when enabled)
    sigmoid: bool

    @property
    def num_layers(self) -> int:
        return len(self.inputs)

    def replay(self, weights: DecoderWeights) -> np.ndarray:
        """Recompute the output from the recorded last-layer input."""
        pre = self.inputs[-1] @ weights[-1]
        return (_sigmoid(pre) if self.sigmoid else pre).reshape(-1)


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def forward(spec: DecoderSpec, weights: DecoderWeights, latent: LatentCode) -> tuple[ImageVector, ForwardTape]:
    check_weights(spec, weights)
    if latent.z.shape != (spec.latent_dim, spec.layer_channels[0]):
        raise ShapeError(
            f"latent shape {latent.z.shape} does not match "
            f"({spec.latent_dim}, {spec.layer_channels[0]})"
        )

    sides = spec.grid_sides()
    z = latent.z
    inputs, masks, normed, inv_stds = [z], [], [], []

    for layer in range(spec.num_layers - 1):
        pre = z @ weights[layer]
        mask = pre > 0
        act = np.where(mask, pre, 0.0)
        inv_std = None
        if spec.channel_norm:
            centered = act - act.mean(axis=0)
            inv_std = 1.0 / np.sqrt(centered.var(axis=0) + NORM_EPS)
            act = centered * inv_std
        z = upsample_apply(act, sides[layer], spec.dims)
        masks.append(mask)
        normed.append(act)
        inv_stds.append(inv_std)
        inputs.append(z)

    output_pre = z @ weights[-1]
    out = _sigmoid(output_pre) if spec.sigmoid else output_pre
    x = out.reshape(-1)
    tape = ForwardTape(inputs, masks, normed, inv_stds, output_pre, x, spec.sigmoid)
    return ImageVector(x, spec.image_shape), tape


def decode(spec: DecoderSpec, weights: DecoderWeights, latent: LatentCode) -> np.ndarray:
    """G(w; z) as a flat d-vector."""
    return forward(spec, weights, latent)[1].x


# ── Reverse mode ─────────────────────────────────────────────────────────────

def grad_weights(
    spec: DecoderSpec,
    weights: DecoderWeights,
    latent: LatentCode,
    upstream: np.ndarray,
    tape: ForwardTape | None = None,
) -> DecoderWeights:
    """Gradient of ⟨upstream, G(w; z)⟩ with respect to every W_l."""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1)
    if upstream.size != spec.d:
        raise ShapeError(f"upstream has {upstream.size} entries, decoder output has {spec.d}")
    if tape is None:
        _, tape = forward(spec, weights, latent)
    elif tape.num_layers != spec.num_layers or tape.x.size != spec.d:
        raise ShapeError("forward tape was recorded for a different decoder")

    sides = spec.grid_sides()
    grads: DecoderWeights = [np.empty(0)] * spec.num_layers

    g = upstream.reshape(tape.output_pre.shape)
    if spec.sigmoid:
        g = g * tape.x.reshape(g.shape) * (1.0 - tape.x.reshape(g.shape))
    grads[-1] = tape.inputs[-1].T @ g
    d_z = g @ weights[-1].T

    for layer in reversed(range(spec.num_layers - 1)):
        d_act = upsample_adjoint(d_z, sides[layer], spec.dims)
        if spec.channel_norm:
            y = tape.normed[layer]
            d_act = tape.inv_std[layer] * (
                d_act - d_act.mean(axis=0) - y * (d_act * y).mean(axis=0)
            )
        d_pre = np.where(tape.masks[layer], d_act, 0.0)
        grads[layer] = tape.inputs[layer].T @ d_pre
        d_z = d_pre @ weights[layer].T

    return grads


# ── Projection onto the decoder range ────────────────────────────────────────

def project(
    spec: DecoderSpec,
    latent: LatentCode,
    target: np.ndarray,
    warm_start: DecoderWeights,
    inner_iters: int = INNER_ITERS,
    inner_lr: float = INNER_LR,
    momentum: float = MOMENTUM,
) -> tuple[DecoderWeights, float]:
    """
    Fit weights so that G(w; z) ≈ target, starting from `warm_start`.

    Momentum gradient descent on ‖target − G(w; z)‖². Returns the best weights
    seen (the warm start included) and their squared-error fit loss.

    Raises `ProjectionDivergedError` once the loss exceeds DIVERGENCE_FACTOR
    times the larger of the start loss and DIVERGENCE_FLOOR·‖target‖².
    """
    if inner_iters < 1:
        raise ValueError(f"inner_iters must be >= 1, got {inner_iters}")
    if inner_lr <= 0:
        raise ValueError(f"inner_lr must be positive, got {inner_lr}")
    target = np.asarray(target, dtype=np.float64).reshape(-1)
    if target.size != spec.d:
        raise ShapeError(f"target has {target.size} entries, decoder output has {spec.d}")

    w = copy_weights(warm_start)
    velocity = [np.zeros_like(layer) for layer in w]

    _, tape = forward(spec, w, latent)
    residual = tape.x - target
    loss = float(residual @ residual)
    initial_loss = loss
    ceiling = DIVERGENCE_FACTOR * max(initial_loss, DIVERGENCE_FLOOR * float(target @ target), 1e-300)
    best_loss, best_w = loss, copy_weights(w)

    for it in range(1, inner_iters + 1):
        if loss == 0.0:
            break
        grads = grad_weights(spec, w, latent, 2.0 * residual, tape)
        for layer in range(len(w)):
            velocity[layer] = momentum * velocity[layer] - inner_lr * grads[layer]
            w[layer] = w[layer] + velocity[layer]

        _, tape = forward(spec, w, latent)
        residual = tape.x - target
        loss = float(residual @ residual)
        if not np.isfinite(loss) or loss > ceiling:
            raise ProjectionDivergedError(it, loss, initial_loss)
        if loss < best_loss:
            best_loss, best_w = loss, copy_weights(w)

    logger.debug(f"[ 🎯 project ] {initial_loss:.4g} -> {best_loss:.4g} in {inner_iters} steps")
    return best_w, best_loss
