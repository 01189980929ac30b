"""
numeric.py — Dense linear algebra, seeded randomness, DCT basis and bilinear
upsampling shared by every other module.

All arithmetic is float64. Dense matrices are plain numpy arrays.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
from scipy.fft import dct

from errors import ShapeError

GENERATOR_NAME = "philox"


# ── Seeded randomness ────────────────────────────────────────────────────────

@dataclass
class SeededRng:
    """Philox stream keyed by a 64-bit seed.

    `spawn(i)` derives an independent child stream from (seed, i) alone, so a
    trial's draws never depend on how much of the parent stream was consumed.
    """

    seed: int
    spawn_key: tuple[int, ...] = ()
    algorithm: str = field(default=GENERATOR_NAME, init=False)
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        seq = np.random.SeedSequence(entropy=self.seed, spawn_key=self.spawn_key)
        self.generator = np.random.Generator(np.random.Philox(seq))

    def spawn(self, index: int) -> SeededRng:
        return SeededRng(self.seed, self.spawn_key + (index,))


def gaussian_sample(rng: SeededRng, rows: int, cols: int, stddev: float) -> np.ndarray:
    """i.i.d. N(0, stddev²) matrix of shape rows × cols."""
    if stddev <= 0:
        raise ValueError(f"stddev must be positive, got {stddev}")
    return rng.generator.normal(0.0, stddev, size=(rows, cols))


def uniform_sample(rng: SeededRng, rows: int, cols: int, low: float = 0.0, high: float = 1.0) -> np.ndarray:
    """i.i.d. Uniform[low, high) matrix of shape rows × cols."""
    return rng.generator.uniform(low, high, size=(rows, cols))


# ── Products ─────────────────────────────────────────────────────────────────

def mat_mul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"mat_mul expects 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"mat_mul dimension mismatch: {a.shape} × {b.shape}")
    return a @ b


# ── Upsampling ───────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _upsample_1d(n: int) -> np.ndarray:
    u = np.zeros((2 * n, n))
    idx = np.arange(n)
    u[2 * idx, idx] = 1.0
    u[2 * idx[:-1] + 1, idx[:-1]] = 0.5
    u[2 * idx[:-1] + 1, idx[:-1] + 1] = 0.5
    # edge clamp: the last odd sample repeats the last input
    u[2 * n - 1, n - 1] = 1.0
    u.setflags(write=False)
    return u


def upsample_matrix(n: int) -> np.ndarray:
    """Linear-doubling operator U (2n × n): out[2i] = in[i], out[2i+1] = (in[i]+in[i+1])/2."""
    if n < 1:
        raise ShapeError(f"upsampling needs at least one sample, got {n}")
    return _upsample_1d(n)


@lru_cache(maxsize=None)
def _upsample_grid(side: int, dims: int) -> np.ndarray:
    u = upsample_matrix(side)
    if dims == 2:
        # row-major flattening of an h×w grid: vec(U X Uᵀ) = (U ⊗ U) vec(X)
        u = np.kron(u, u)
        u.setflags(write=False)
    return u


def upsample_operator(side: int, dims: int = 2) -> np.ndarray:
    """Materialized doubling operator acting on a flattened side^dims grid."""
    if dims not in (1, 2):
        raise ShapeError(f"dims must be 1 or 2, got {dims}")
    return _upsample_grid(side, dims)


def upsample_apply(x: np.ndarray, side: int, dims: int = 2) -> np.ndarray:
    """`upsample_operator(side, dims) @ x` for a channels-as-columns activation,
    applied one axis at a time."""
    u = upsample_matrix(side)
    if dims == 1:
        return u @ x
    k = x.shape[1]
    grid = x.reshape(side, side, k)
    rows = np.tensordot(u, grid, axes=(1, 0))
    return np.tensordot(rows, u, axes=(1, 1)).transpose(0, 2, 1).reshape(4 * side * side, k)


def upsample_adjoint(g: np.ndarray, side: int, dims: int = 2) -> np.ndarray:
    """`upsample_operator(side, dims).T @ g`, applied one axis at a time."""
    u = upsample_matrix(side)
    if dims == 1:
        return u.T @ g
    k = g.shape[1]
    grid = g.reshape(2 * side, 2 * side, k)
    rows = np.tensordot(u, grid, axes=(0, 0))
    return np.tensordot(rows, u, axes=(1, 0)).transpose(0, 2, 1).reshape(side * side, k)


def bilinear_upsample_2d(img: np.ndarray) -> np.ndarray:
    """Double an h × w single-channel image along both axes.

    A 1-D input is treated as a signal and doubled along its only axis.
    """
    img = np.asarray(img, dtype=np.float64)
    if img.ndim == 1:
        return upsample_matrix(img.size) @ img
    if img.ndim != 2:
        raise ShapeError(f"expected an h×w image, got shape {img.shape}")
    h, w = img.shape
    return upsample_matrix(h) @ img @ upsample_matrix(w).T


# ── DCT ──────────────────────────────────────────────────────────────────────

@lru_cache(maxsize=None)
def _dct2_basis(side: int) -> np.ndarray:
    # rows of c are the 1-D orthonormal DCT-II analysis vectors
    c = dct(np.eye(side), norm="ortho", axis=0)
    basis = np.kron(c.T, c.T)
    basis.setflags(write=False)
    return basis


def dct2_basis(side: int) -> np.ndarray:
    """Orthonormal 2-D DCT-II synthesis basis D (side² × side²), x = D·c."""
    if side < 1:
        raise ShapeError(f"side must be at least 1, got {side}")
    return _dct2_basis(side)


# ── Images ───────────────────────────────────────────────────────────────────

@dataclass(frozen=True)
class ImageVector:
    """Row-major vectorized grayscale image with its grid shape."""

    values: np.ndarray
    shape: tuple[int, ...]

    def __post_init__(self):
        values = np.asarray(self.values, dtype=np.float64).reshape(-1)
        if values.size != int(np.prod(self.shape)):
            raise ShapeError(f"{values.size} values do not fill shape {self.shape}")
        object.__setattr__(self, "values", values)

    @classmethod
    def from_grid(cls, grid: np.ndarray) -> ImageVector:
        grid = np.asarray(grid, dtype=np.float64)
        return cls(grid.reshape(-1), tuple(grid.shape))

    @property
    def d(self) -> int:
        return self.values.size

    def as_grid(self) -> np.ndarray:
        return self.values.reshape(self.shape)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    def __len__(self) -> int:
        return self.values.size
