"""Toy decoder-only transformer and a vision-encoder stand-in.

The decoder is LLaMA-shaped: pre-RMSNorm, causal multi-head attention with
rotary embeddings, and a gated three-matrix FFN. Exactly seven metered
matmul groups run per layer, so a layer over ``n`` tokens costs
``4nd^2 + 2n^2d + 3ndm`` MACs on the meter and nothing else.

Weights are random but seeded. Three structural choices give the random model
a content-based attention signal that the planted-token benchmark can
measure:

* query and key projections are tied within each layer, so a token's
  query scores highest against keys that point the same way it does;
* within each head, the tied projection's columns are ramped towards the
  slowly rotating RoPE pairs, so content matches are not scrambled by the
  fast pairs over distances of a few dozen tokens;
* the trailing output token (the ``[SEG]`` stand-in) embeds the fixed
  :func:`signal_direction`, which the vision stub injects into planted
  image tokens.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .core_math import CostMeter, ShapeError, make_rng, matmul, rope_apply, softmax_rows

RMS_EPS = 1e-6
_SIGNAL_SEED = 0x5E6


@dataclass(frozen=True)
class ModelDims:
    L_total: int
    d: int
    m: int
    n_heads: int
    N: int
    N_sys: int
    N_usr: int
    N_out: int = 1

    def __post_init__(self):
        for name in ("L_total", "d", "m", "n_heads", "N", "N_sys", "N_usr", "N_out"):
            value = getattr(self, name)
            if not isinstance(value, (int, np.integer)) or value < 1:
                raise ValueError(f"{name} must be a positive integer, got {value!r}")
        if self.d % self.n_heads:
            raise ValueError(f"d={self.d} is not divisible by n_heads={self.n_heads}")

    @property
    def head_dim(self) -> int:
        return self.d // self.n_heads

    @property
    def n_other(self) -> int:
        """Non-image tokens in the sequence."""
        return self.N_sys + self.N_usr + self.N_out

    @property
    def n_full(self) -> int:
        return self.n_other + self.N

    @property
    def seg_index(self) -> int:
        return self.n_full - 1


TOY_DIMS = ModelDims(L_total=8, d=64, m=172, n_heads=4, N=64, N_sys=8, N_usr=8, N_out=1)


@dataclass(frozen=True)
class LayerWeights:
    wq: np.ndarray
    wk: np.ndarray
    wv: np.ndarray
    wo: np.ndarray
    w_gate: np.ndarray
    w_up: np.ndarray
    w_down: np.ndarray


@dataclass(frozen=True)
class DecoderWeights:
    dims: ModelDims
    layers: tuple[LayerWeights, ...]
    sys_embed: np.ndarray
    usr_embed: np.ndarray
    out_embed: np.ndarray


@dataclass(frozen=True)
class VisionStubOutput:
    E_img: np.ndarray
    q_cls: np.ndarray
    K_img: np.ndarray
    planted: frozenset[int]


def signal_direction(d: int) -> np.ndarray:
    """Fixed unit vector shared by the vision stub and the SEG embedding."""
    v = make_rng(_SIGNAL_SEED).standard_normal(d)
    return v / np.linalg.norm(v)


def qk_pair_ramp(head_dim: int) -> np.ndarray:
    """Per-column scale for one head: pair ``j`` gets weight ``j + 1``, RMS-normalised."""
    if head_dim % 2:
        raise ShapeError(f"head_dim={head_dim} must be even for RoPE")
    pair = np.arange(1, head_dim // 2 + 1, dtype=np.float64)
    pair /= math.sqrt(np.mean(pair * pair))
    return np.repeat(pair, 2)


def init_weights(dims: ModelDims, seed: int) -> DecoderWeights:
    """Draw every matrix from N(0, 1/d), seeded by ``seed``.

    The two residual-branch output projections (``wo`` and ``w_down``) are
    further damped by ``1/sqrt(2 * L_total)`` so that token identity survives
    a stack of random layers. The tied query/key matrix has its columns
    scaled by :func:`qk_pair_ramp` (RMS 1, so the overall variance is kept).
    """
    rng = make_rng(seed)
    d, m = dims.d, dims.m
    std = 1.0 / math.sqrt(d)
    damp = 1.0 / math.sqrt(2 * dims.L_total)

    def draw(*shape):
        return rng.standard_normal(shape) * std

    ramp = np.tile(qk_pair_ramp(dims.head_dim), dims.n_heads)
    layers = []
    for _ in range(dims.L_total):
        wq = draw(d, d) * ramp
        layers.append(
            LayerWeights(
                wq=wq,
                wk=wq.copy(),
                wv=draw(d, d),
                wo=draw(d, d) * damp,
                w_gate=draw(d, m),
                w_up=draw(d, m),
                w_down=draw(m, d) * damp,
            )
        )
    # embeddings have unit-variance entries, i.e. row norm ~ sqrt(d)
    sys_embed = rng.standard_normal((dims.N_sys, d))
    usr_embed = rng.standard_normal((dims.N_usr, d))
    out_embed = rng.standard_normal((dims.N_out, d))
    out_embed[-1] = signal_direction(d) * math.sqrt(d)
    return DecoderWeights(dims, tuple(layers), sys_embed, usr_embed, out_embed)


def vision_stub(dims: ModelDims, seed: int, planted_count: int = 0, planted_gain: float = 0.0) -> VisionStubOutput:
    """Fake CLIP output: noise image tokens, a few of which carry the signal.

    Planted rows get ``planted_gain * sqrt(d) * u`` added to both ``E_img``
    and ``K_img`` (``u`` = :func:`signal_direction`), and ``q_cls`` points
    along ``u``.
    """
    if planted_count < 0 or planted_count > dims.N:
        raise ValueError(f"planted_count={planted_count} outside [0, {dims.N}]")
    rng = make_rng(seed)
    d = dims.d
    u = signal_direction(d)
    E_img = rng.standard_normal((dims.N, d))
    K_img = E_img + rng.standard_normal((dims.N, d))
    planted = rng.choice(dims.N, size=planted_count, replace=False) if planted_count else np.array([], dtype=int)
    bump = planted_gain * math.sqrt(d) * u
    E_img[planted] += bump
    K_img[planted] += bump
    return VisionStubOutput(E_img=E_img, q_cls=u * math.sqrt(d), K_img=K_img, planted=frozenset(int(i) for i in planted))


def rms_norm(x: np.ndarray) -> np.ndarray:
    return x / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + RMS_EPS)


def _check_layer_inputs(hidden: np.ndarray, positions: np.ndarray, w: LayerWeights) -> None:
    if hidden.ndim != 2 or hidden.shape[1] != w.wq.shape[0]:
        raise ShapeError(f"hidden shape {hidden.shape} does not match d={w.wq.shape[0]}")
    if positions.shape != (hidden.shape[0],):
        raise ShapeError(f"{positions.shape} positions for {hidden.shape[0]} tokens")
    if hidden.shape[0] > 1 and np.any(np.diff(positions) <= 0):
        raise ValueError("positions must be strictly increasing")


def _rotated_qk(h: np.ndarray, positions: np.ndarray, w: LayerWeights, n_heads: int, meter):
    n, d = h.shape
    hd = d // n_heads
    q = matmul(h, w.wq, meter).reshape(n, n_heads, hd).transpose(1, 0, 2)
    k = matmul(h, w.wk, meter).reshape(n, n_heads, hd).transpose(1, 0, 2)
    return rope_apply(q, positions), rope_apply(k, positions)


def attention_logits(hidden, positions, w: LayerWeights, n_heads: int) -> np.ndarray:
    """Scaled pre-mask attention logits, shape ``(n_heads, n, n)``. Unmetered."""
    hidden = np.asarray(hidden, dtype=np.float64)
    positions = np.asarray(positions)
    _check_layer_inputs(hidden, positions, w)
    q, k = _rotated_qk(rms_norm(hidden), positions, w, n_heads, None)
    scale = 1.0 / math.sqrt(hidden.shape[1] // n_heads)
    return np.stack([q[i] @ k[i].T * scale for i in range(n_heads)])


def decoder_layer(
    hidden: np.ndarray,
    positions,
    w: LayerWeights,
    n_heads: int,
    meter: CostMeter | None = None,
) -> tuple[np.ndarray, np.ndarray]:
    """One pre-norm decoder block.

    Returns the new hidden states and the post-softmax causal attention
    tensor of shape ``(n_heads, n, n)``.
    """
    hidden = np.asarray(hidden, dtype=np.float64)
    positions = np.asarray(positions)
    _check_layer_inputs(hidden, positions, w)
    n, d = hidden.shape
    hd = d // n_heads

    h = rms_norm(hidden)
    q, k = _rotated_qk(h, positions, w, n_heads, meter)
    v = matmul(h, w.wv, meter).reshape(n, n_heads, hd).transpose(1, 0, 2)

    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    scale = 1.0 / math.sqrt(hd)
    attn = np.empty((n_heads, n, n))
    heads = np.empty((n, d))
    for i in range(n_heads):
        logits = matmul(q[i], k[i].T, meter) * scale
        logits[future] = -np.inf
        attn[i] = softmax_rows(logits)
        heads[:, i * hd:(i + 1) * hd] = matmul(attn[i], v[i], meter)
    x = hidden + matmul(heads, w.wo, meter)

    h2 = rms_norm(x)
    gate = matmul(h2, w.w_gate, meter)
    up = matmul(h2, w.w_up, meter)
    silu = gate / (1.0 + np.exp(-gate))
    x = x + matmul(silu * up, w.w_down, meter)
    return x, attn


def full_sequence(weights: DecoderWeights, E_img: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unpruned input ``E_sys | E_img | E_usr | E_out`` with contiguous positions."""
    hidden = np.vstack([weights.sys_embed, E_img, weights.usr_embed, weights.out_embed])
    return hidden, np.arange(hidden.shape[0])


def forward(
    weights: DecoderWeights,
    hidden: np.ndarray,
    positions,
    meter: CostMeter | None = None,
    layers: range | None = None,
) -> np.ndarray:
    """Run ``layers`` (default: all) over a fixed token set."""
    n_heads = weights.dims.n_heads
    for li in layers if layers is not None else range(weights.dims.L_total):
        hidden, _ = decoder_layer(hidden, positions, weights.layers[li], n_heads, meter)
    return hidden
