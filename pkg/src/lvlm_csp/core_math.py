"""Dense numeric kernel shared by the toy decoder and the selection code.

Matrices are plain 2-D ``float64`` numpy arrays. Every matmul that should show
up in the FLOPs accounting goes through :func:`matmul` with a
:class:`CostMeter`; numpy's ``@`` is used directly only where the cost model
deliberately excludes the work (norms, RoPE, softmax).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

ROPE_BASE = 10000.0

Rng = np.random.Generator


class ShapeError(ValueError):
    """Operand shapes are incompatible."""


def make_rng(seed: int) -> Rng:
    """PCG64 generator seeded through ``SeedSequence``.

    Identical seeds give bit-identical streams on every platform numpy
    supports; nothing in the package touches numpy's global random state.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed))))


def derive_seed(base: int, *key: int) -> int:
    """Stable 64-bit child seed for ``(base, *key)``, independent of call order."""
    ss = np.random.SeedSequence(int(base), spawn_key=tuple(int(k) for k in key))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


@dataclass
class CostMeter:
    """Accumulates multiply-accumulate counts of metered matmuls."""

    macs: int = 0
    calls: int = 0
    history: list[tuple[int, int, int]] = field(default_factory=list, repr=False)
    keep_history: bool = False

    def add(self, rows: int, inner: int, cols: int) -> None:
        self.macs += rows * inner * cols
        self.calls += 1
        if self.keep_history:
            self.history.append((rows, inner, cols))

    def reset(self) -> None:
        self.macs = 0
        self.calls = 0
        self.history.clear()


def as_matrix(data, rows: int | None = None, cols: int | None = None) -> np.ndarray:
    m = np.asarray(data, dtype=np.float64)
    if m.ndim == 1 and rows is not None and cols is not None:
        if m.size != rows * cols:
            raise ShapeError(f"data length {m.size} != {rows}x{cols}")
        m = m.reshape(rows, cols)
    if m.ndim != 2:
        raise ShapeError(f"expected a 2-D matrix, got ndim={m.ndim}")
    return m


def matmul(a: np.ndarray, b: np.ndarray, meter: CostMeter | None = None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2:
        raise ShapeError(f"matmul needs 2-D operands, got {a.shape} and {b.shape}")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul shape mismatch: {a.shape} x {b.shape}")
    if meter is not None:
        meter.add(a.shape[0], a.shape[1], b.shape[1])
    return a @ b


def softmax_rows(m: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilised by subtracting each row's max.

    ``-inf`` entries are allowed (causal masking) and map to exactly 0, as
    long as every row has at least one finite entry.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.size == 0:
        raise ShapeError("softmax of an empty matrix")
    shifted = m - m.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def rope_angles(dim: int, base: float = ROPE_BASE) -> np.ndarray:
    if dim % 2:
        raise ShapeError(f"RoPE needs an even dimension, got {dim}")
    return base ** (-np.arange(0, dim, 2, dtype=np.float64) / dim)


def rope_rotate(vec, position: int, base: float = ROPE_BASE) -> np.ndarray:
    """Rotate consecutive pairs ``(x[2j], x[2j+1])`` by ``position * base**(-2j/d)``."""
    v = np.asarray(vec, dtype=np.float64)
    if v.ndim != 1:
        raise ShapeError("rope_rotate expects a 1-D vector")
    return rope_apply(v[None, :], np.array([position]), base)[0]


def rope_apply(x: np.ndarray, positions, base: float = ROPE_BASE) -> np.ndarray:
    """Vectorised RoPE over the last axis of ``x`` (shape ``(..., n, dim)``)."""
    x = np.asarray(x, dtype=np.float64)
    dim = x.shape[-1]
    theta = rope_angles(dim, base)
    pos = np.asarray(positions, dtype=np.float64)
    if pos.shape != (x.shape[-2],):
        raise ShapeError(f"{pos.shape[0] if pos.ndim else 0} positions for {x.shape[-2]} rows")
    if np.any(pos < 0):
        raise ValueError("positions must be non-negative")
    ang = np.outer(pos, theta)
    cos, sin = np.cos(ang), np.sin(ang)
    even, odd = x[..., 0::2], x[..., 1::2]
    out = np.empty_like(x)
    out[..., 0::2] = even * cos - odd * sin
    out[..., 1::2] = even * sin + odd * cos
    return out
