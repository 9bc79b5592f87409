"""Clustering-stage token selection: Random, Uniform, CLS attention, Seg-First."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core_math import Rng, ShapeError, softmax_rows


class ClusterStrategy(enum.Enum):
    RANDOM = "random"
    UNIFORM = "uniform"
    CLS_ATTENTION = "cls"
    SEG_FIRST = "seg_first"

    @classmethod
    def parse(cls, text: str) -> "ClusterStrategy":
        key = text.strip().lower().replace("-", "").replace("_", "")
        aliases = {
            "random": cls.RANDOM,
            "uniform": cls.UNIFORM,
            "cls": cls.CLS_ATTENTION,
            "clsattention": cls.CLS_ATTENTION,
            "segfirst": cls.SEG_FIRST,
        }
        try:
            return aliases[key]
        except KeyError:
            raise ValueError(f"unknown clustering strategy {text!r}") from None

    @property
    def label(self) -> str:
        return {"random": "Random", "uniform": "Uniform", "cls": "ClsAttention", "seg_first": "SegFirst"}[self.value]


@dataclass(frozen=True)
class SelectionResult:
    """Chosen image-token indices, strictly increasing."""

    indices: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.int64)
        if idx.ndim != 1:
            raise ShapeError("selection indices must be 1-D")
        if idx.size > 1 and np.any(np.diff(idx) <= 0):
            raise ValueError("selection indices must be strictly increasing")
        if idx.size and idx[0] < 0:
            raise ValueError("selection indices must be non-negative")
        object.__setattr__(self, "indices", idx)

    @property
    def n_sel(self) -> int:
        return int(self.indices.size)

    def check_range(self, N: int) -> None:
        if self.indices.size and self.indices[-1] >= N:
            raise ValueError(f"index {int(self.indices[-1])} out of range for N={N}")

    def as_set(self) -> set[int]:
        return set(self.indices.tolist())

    @classmethod
    def of(cls, indices) -> "SelectionResult":
        return cls(np.unique(np.asarray(list(indices), dtype=np.int64)))


@dataclass(frozen=True)
class InstanceMaskSet:
    """Binary instance masks on the H x W token grid, shape ``(N_o, H, W)``."""

    H: int
    W: int
    masks: np.ndarray

    def __post_init__(self):
        masks = np.asarray(self.masks, dtype=bool)
        if masks.ndim != 3 or masks.shape[1:] != (self.H, self.W):
            raise ShapeError(f"masks shape {masks.shape} does not match grid {self.H}x{self.W}")
        if masks.shape[0] == 0:
            raise ValueError("an instance mask set needs at least one mask")
        empty = np.flatnonzero(~masks.reshape(masks.shape[0], -1).any(axis=1))
        if empty.size:
            raise ValueError(f"mask {int(empty[0])} is empty")
        object.__setattr__(self, "masks", masks)

    @property
    def n_instances(self) -> int:
        return self.masks.shape[0]

    @property
    def n_tokens(self) -> int:
        return self.H * self.W

    def areas(self) -> np.ndarray:
        return self.masks.reshape(self.n_instances, -1).sum(axis=1)

    def cells(self, i: int) -> np.ndarray:
        """Row-major token indices covered by instance ``i``."""
        return np.flatnonzero(self.masks[i].ravel())


def _check_budget(N: int, k: int, what: str = "N_c") -> None:
    if k < 1 or k > N:
        raise ValueError(f"{what}={k} must lie in [1, {N}]")


def top_k(scores, k: int) -> SelectionResult:
    """Indices of the ``k`` largest scores; equal scores favour the lower index."""
    scores = np.asarray(scores, dtype=np.float64)
    order = np.argsort(-scores, kind="stable")
    return SelectionResult(np.sort(order[:k]))


def select_random(N: int, N_c: int, rng: Rng) -> SelectionResult:
    _check_budget(N, N_c)
    return SelectionResult(np.sort(rng.choice(N, size=N_c, replace=False)))


def select_uniform(N: int, N_c: int) -> SelectionResult:
    """Evenly strided picks ``i * floor(N / N_c)`` for ``i < N_c``."""
    _check_budget(N, N_c)
    return SelectionResult(np.arange(N_c, dtype=np.int64) * (N // N_c))


def cls_scores(q_cls, K_img) -> np.ndarray:
    q = np.asarray(q_cls, dtype=np.float64)
    K = np.asarray(K_img, dtype=np.float64)
    if K.ndim != 2 or q.shape != (K.shape[1],):
        raise ShapeError(f"q_cls {q.shape} incompatible with K_img {K.shape}")
    logits = (K @ q) / math.sqrt(K.shape[1])
    return softmax_rows(logits[None, :])[0]


def select_cls(q_cls, K_img, N_c: int) -> SelectionResult:
    """Top-``N_c`` image tokens by CLS-to-token attention."""
    scores = cls_scores(q_cls, K_img)
    _check_budget(scores.size, N_c)
    return top_k(scores, N_c)


def allocate_seg_first(masks: InstanceMaskSet, N_c: int) -> np.ndarray:
    """Per-instance budget ``max(1, floor(N_c * area_i / total_area))``.

    Not rebalanced: the counts may sum to more or less than ``N_c``.
    """
    if N_c < 1:
        raise ValueError(f"N_c={N_c} must be >= 1")
    areas = masks.areas()
    total = int(areas.sum())
    return np.maximum(1, (N_c * areas) // total).astype(np.int64)


def select_seg_first(masks: InstanceMaskSet, N_c: int, rng: Rng) -> SelectionResult:
    counts = np.minimum(allocate_seg_first(masks, N_c), masks.areas())
    chosen: set[int] = set()
    for i, count in enumerate(counts):
        picks = rng.choice(masks.cells(i), size=int(count), replace=False)
        chosen.update(int(p) for p in np.atleast_1d(picks))
    return SelectionResult(np.array(sorted(chosen), dtype=np.int64))


def cluster(
    strategy: ClusterStrategy,
    N: int,
    N_c: int,
    rng: Rng,
    q_cls=None,
    K_img=None,
    masks: InstanceMaskSet | None = None,
) -> SelectionResult:
    """Run the selection routine named by ``strategy``."""
    if strategy is ClusterStrategy.RANDOM:
        return select_random(N, N_c, rng)
    if strategy is ClusterStrategy.UNIFORM:
        return select_uniform(N, N_c)
    if strategy is ClusterStrategy.CLS_ATTENTION:
        if q_cls is None or K_img is None:
            raise ValueError("CLS attention needs q_cls and K_img")
        return select_cls(q_cls, K_img, N_c)
    if masks is None:
        raise ValueError("Seg-First needs instance masks")
    if masks.n_tokens != N:
        raise ShapeError(f"mask grid {masks.H}x{masks.W} does not cover N={N} tokens")
    _check_budget(N, N_c)
    return select_seg_first(masks, N_c, rng)
