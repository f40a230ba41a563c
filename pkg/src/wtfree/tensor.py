"""Dense float64 tensor kernels.

Values are plain ``numpy.float64`` arrays throughout the package.  All
kernels here are pure functions; none of them mutate their inputs, so
results can be shared freely across threads.

Conventions, fixed once for the whole package:

* convolution is cross-correlation (no kernel flip) with valid padding,
* ``sign(0) == 0``,
* random numbers come from a single named generator (PCG64) so that a
  seed reproduces the same stream on every platform.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ContractError, DimensionError

DTYPE = np.float64

# Names the one RNG algorithm used everywhere (init, shuffling, subsets).
RNG_ALGORITHM = "PCG64"


def make_rng(seed: int) -> np.random.Generator:
    """Seeded PCG64 generator; identical seeds give identical streams."""
    seed = int(seed)
    if not 0 <= seed < 2**64:
        raise ContractError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return np.random.Generator(np.random.PCG64(seed))


def spawn_seeds(master_seed: int, n: int) -> tuple[int, ...]:
    """Derive ``n`` independent u64 seeds from one master seed."""
    if not 0 <= int(master_seed) < 2**64:
        raise ContractError(f"seed must be an unsigned 64-bit integer, got {master_seed}")
    state = np.random.SeedSequence(int(master_seed)).generate_state(n, dtype=np.uint64)
    return tuple(int(s) for s in state)


def _as_f64(x) -> np.ndarray:
    return np.asarray(x, dtype=DTYPE)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Matrix product of an (m, k) by a (k, n) array, accumulated in float64."""
    a, b = _as_f64(a), _as_f64(b)
    if a.ndim != 2 or b.ndim != 2:
        raise DimensionError(f"matmul expects 2-d operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    return a @ b


def _check_conv_geometry(h: int, w: int, k: int, stride: int) -> tuple[int, int]:
    if k < 1 or stride < 1:
        raise DimensionError(f"kernel size {k} and stride {stride} must be >= 1")
    if h < k or w < k:
        raise DimensionError(f"input {h}x{w} smaller than kernel {k}x{k}")
    if (h - k) % stride or (w - k) % stride:
        raise DimensionError(
            f"conv output extent not exact for input {h}x{w}, kernel {k}, stride {stride}"
        )
    return (h - k) // stride + 1, (w - k) // stride + 1


def conv2d(x: np.ndarray, kernels: np.ndarray, stride: int = 1) -> np.ndarray:
    """Valid cross-correlation of (C, H, W) input with (O, C, k, k) kernels.

    A leading batch axis is accepted: (N, C, H, W) in gives (N, O, H', W')
    out.  No kernel flip is applied.
    """
    x, kernels = _as_f64(x), _as_f64(kernels)
    single = x.ndim == 3
    if single:
        x = x[np.newaxis]
    if x.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d expects (N, C, H, W) input and (O, C, k, k) kernels, "
            f"got {x.shape} and {kernels.shape}"
        )
    n, c, h, w = x.shape
    out_c, in_c, kh, kw = kernels.shape
    if kh != kw:
        raise DimensionError(f"kernels must be square, got {kh}x{kw}")
    if in_c != c:
        raise DimensionError(f"channel mismatch: input has {c}, kernels expect {in_c}")
    _check_conv_geometry(h, w, kh, stride)

    windows = sliding_window_view(x, (kh, kh), axis=(2, 3))[:, :, ::stride, ::stride]
    y = np.tensordot(windows, kernels, axes=[(1, 4, 5), (1, 2, 3)])  # (N, H', W', O)
    y = np.ascontiguousarray(np.moveaxis(y, 3, 1))
    return y[0] if single else y


def conv2d_input_grad(
    delta: np.ndarray,
    kernels: np.ndarray,
    input_shape: tuple[int, int, int],
    stride: int = 1,
) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to its input.

    ``kernels`` may be the forward weights or any same-shaped matrix (this
    is how error signals are routed backward through either the forward or
    a fixed feedback path).  ``input_shape`` is the per-sample (C, H, W).
    """
    delta, kernels = _as_f64(delta), _as_f64(kernels)
    single = delta.ndim == 3
    if single:
        delta = delta[np.newaxis]
    if delta.ndim != 4 or kernels.ndim != 4:
        raise DimensionError(
            f"conv2d_input_grad expects (N, O, H', W') delta and 4-d kernels, "
            f"got {delta.shape} and {kernels.shape}"
        )
    c, h, w = (int(e) for e in input_shape)
    out_c, in_c, k, kw = kernels.shape
    if k != kw:
        raise DimensionError(f"kernels must be square, got {k}x{kw}")
    if in_c != c:
        raise DimensionError(f"channel mismatch: input shape has {c}, kernels expect {in_c}")
    hp, wp = _check_conv_geometry(h, w, k, stride)
    if delta.shape[1:] != (out_c, hp, wp):
        raise DimensionError(
            f"delta shape {delta.shape[1:]} inconsistent with conv output ({out_c}, {hp}, {wp})"
        )

    n = delta.shape[0]
    dx = np.zeros((n, c, h, w), dtype=DTYPE)
    # Each kernel tap (a, b) scatters delta onto one strided slab of the input.
    for a in range(k):
        for b in range(k):
            tap = np.einsum("noij,oc->ncij", delta, kernels[:, :, a, b], optimize=True)
            dx[:, :, a : a + stride * hp : stride, b : b + stride * wp : stride] += tap
    return dx[0] if single else dx


def conv2d_kernel_grad(x: np.ndarray, delta: np.ndarray, stride: int = 1) -> np.ndarray:
    """Adjoint of :func:`conv2d` with respect to the kernels.

    With a batch axis present the result is summed over the batch.  The
    kernel size is recovered from the operand extents.
    """
    x, delta = _as_f64(x), _as_f64(delta)
    single = x.ndim == 3
    if single:
        x = x[np.newaxis]
    if delta.ndim == 3:
        delta = delta[np.newaxis]
    if x.ndim != 4 or delta.ndim != 4 or x.shape[0] != delta.shape[0]:
        raise DimensionError(
            f"conv2d_kernel_grad expects matching (N, C, H, W) and (N, O, H', W'), "
            f"got {x.shape} and {delta.shape}"
        )
    n, c, h, w = x.shape
    _, out_c, hp, wp = delta.shape
    k = h - stride * (hp - 1)
    kw = w - stride * (wp - 1)
    if k != kw or k < 1:
        raise DimensionError(
            f"no square kernel maps input {h}x{w} to output {hp}x{wp} at stride {stride}"
        )
    _check_conv_geometry(h, w, k, stride)

    grad = np.empty((out_c, c, k, k), dtype=DTYPE)
    for a in range(k):
        for b in range(k):
            xa = x[:, :, a : a + stride * hp : stride, b : b + stride * wp : stride]
            grad[:, :, a, b] = np.tensordot(delta, xa, axes=[(0, 2, 3), (0, 2, 3)])
    return grad


def avg_pool2(x: np.ndarray) -> np.ndarray:
    """2x2 non-overlapping mean pool over the two trailing axes."""
    x = _as_f64(x)
    if x.ndim < 2:
        raise DimensionError(f"avg_pool2 expects at least 2 axes, got shape {x.shape}")
    h, w = x.shape[-2:]
    if h % 2 or w % 2:
        raise DimensionError(f"avg_pool2 needs even spatial extents, got {h}x{w}")
    pooled = x.reshape(*x.shape[:-2], h // 2, 2, w // 2, 2)
    return pooled.mean(axis=(-3, -1))


def avg_pool2_grad(delta: np.ndarray, input_shape: tuple[int, ...]) -> np.ndarray:
    """Adjoint of :func:`avg_pool2`: spreads delta/4 uniformly over each window."""
    delta = _as_f64(delta)
    input_shape = tuple(int(e) for e in input_shape)
    expected = input_shape[:-2] + (input_shape[-2] // 2, input_shape[-1] // 2)
    if input_shape[-2] % 2 or input_shape[-1] % 2 or delta.shape != expected:
        raise DimensionError(
            f"delta shape {delta.shape} inconsistent with pooled input shape {input_shape}"
        )
    return np.repeat(np.repeat(delta, 2, axis=-2), 2, axis=-1) / 4.0


def sign(x: np.ndarray) -> np.ndarray:
    """Elementwise sign with sign(0) == 0, so exact ties leave pixels alone."""
    return np.sign(_as_f64(x))


def clip_box(x: np.ndarray, lo, hi) -> np.ndarray:
    """Clamp x elementwise into [lo, hi]; lo/hi may be scalars or arrays."""
    x = _as_f64(x)
    lo, hi = np.asarray(lo, dtype=DTYPE), np.asarray(hi, dtype=DTYPE)
    if np.any(lo > hi):
        raise ContractError("clip_box needs lo <= hi everywhere")
    return np.minimum(hi, np.maximum(lo, x))


def l1_norm(x: np.ndarray) -> float:
    """Sum of absolute values."""
    return float(np.abs(_as_f64(x)).sum())


def uniform_init(rng: np.random.Generator, shape, scale: float) -> np.ndarray:
    """I.i.d. uniform draws on [-scale, +scale], reproducible from the seed."""
    if scale < 0:
        raise ContractError(f"scale must be non-negative, got {scale}")
    return rng.uniform(-scale, scale, size=tuple(shape)).astype(DTYPE, copy=False)
