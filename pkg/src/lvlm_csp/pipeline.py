"""Three-stage clustering / scattering / pruning schedule over the toy decoder."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core_math import CostMeter, Rng
from .model import DecoderWeights, ModelDims, VisionStubOutput, decoder_layer, forward, full_sequence
from .selection import ClusterStrategy, InstanceMaskSet, SelectionResult, cluster, top_k

CLUSTERING = "clustering"
SCATTERING = "scattering"
PRUNING = "pruning"


class StateError(RuntimeError):
    """An operation was applied at the wrong point of the schedule."""


@dataclass(frozen=True)
class CspConfig:
    L_c: int
    N_c: int
    L_s: int
    N_p: int
    strategy: ClusterStrategy = ClusterStrategy.UNIFORM

    def L_p(self, L_total: int) -> int:
        return L_total - self.L_c - self.L_s

    def validate(self, L_total: int, N: int) -> None:
        """Raise ``ValueError`` naming the first violated invariant."""
        if self.L_c < 1:
            raise ValueError(f"L_c >= 1 violated (L_c={self.L_c})")
        if self.L_s < 0:
            raise ValueError(f"L_s >= 0 violated (L_s={self.L_s})")
        if self.L_c + self.L_s > L_total:
            raise ValueError(f"L_c + L_s <= L_total violated ({self.L_c} + {self.L_s} > {L_total})")
        if not 1 <= self.N_c <= N:
            raise ValueError(f"1 <= N_c <= N violated (N_c={self.N_c}, N={N})")
        if not 1 <= self.N_p <= N:
            raise ValueError(f"1 <= N_p <= N violated (N_p={self.N_p}, N={N})")

    def as_tuple(self) -> tuple[int, int, int, int]:
        return (self.L_c, self.N_c, self.L_s, self.N_p)


@dataclass(frozen=True)
class LayerRecord:
    layer: int
    stage: str
    active: tuple[int, ...]
    n: int

    @property
    def n_image(self) -> int:
        return len(self.active)


@dataclass
class StageTrace:
    layers: list[LayerRecord] = field(default_factory=list)

    def record(self, stage: str, active: SelectionResult | np.ndarray, n: int) -> None:
        idx = active.indices if isinstance(active, SelectionResult) else active
        self.layers.append(LayerRecord(len(self.layers), stage, tuple(int(i) for i in idx), n))

    def image_counts(self) -> list[int]:
        return [r.n_image for r in self.layers]

    def __len__(self) -> int:
        return len(self.layers)


@dataclass(frozen=True)
class SegAttention:
    """Head-averaged attention of the SEG token over the N image slots.

    Slots not present in the source layer hold 0.
    """

    values: np.ndarray
    source_layer: int
    active: tuple[int, ...] | None = None


@dataclass(frozen=True)
class CspResult:
    seg_hidden: np.ndarray
    trace: StageTrace
    seg_attention: SegAttention
    clustered: SelectionResult
    retained: SelectionResult


def image_positions(selection: SelectionResult, dims: ModelDims) -> np.ndarray:
    """Original position IDs of the selected image tokens."""
    return dims.N_sys + selection.indices


def assemble_sequence(
    weights: DecoderWeights,
    E_img: np.ndarray,
    selection: SelectionResult,
) -> tuple[np.ndarray, np.ndarray, int]:
    """Build ``E_sys | E_img[S] | E_usr | E_out`` with preserved position IDs.

    Text tokens after the image keep the IDs they would have with all ``N``
    image tokens present. Returns ``(hidden, positions, seg_index)``.
    """
    dims = weights.dims
    selection.check_range(dims.N)
    tail = dims.N_usr + dims.N_out
    hidden = np.vstack([weights.sys_embed, E_img[selection.indices], weights.usr_embed, weights.out_embed])
    positions = np.concatenate(
        [
            np.arange(dims.N_sys),
            image_positions(selection, dims),
            dims.N_sys + dims.N + np.arange(tail),
        ]
    )
    return hidden, positions, hidden.shape[0] - 1


def _layers(weights, hidden, positions, layer_ids, stage, active, trace, meter):
    attn = None
    for li in layer_ids:
        hidden, attn = decoder_layer(hidden, positions, weights.layers[li], weights.dims.n_heads, meter)
        if trace is not None:
            trace.record(stage, active, hidden.shape[0])
    return hidden, attn


def run_clustering_stage(
    hidden: np.ndarray,
    positions: np.ndarray,
    weights: DecoderWeights,
    L_c: int,
    selection: SelectionResult,
    trace: StageTrace | None = None,
    meter: CostMeter | None = None,
) -> tuple[np.ndarray, np.ndarray | None]:
    """Apply the first ``L_c`` decoder layers to the clustered sequence."""
    if L_c > weights.dims.L_total:
        raise ValueError(f"L_c={L_c} exceeds L_total={weights.dims.L_total}")
    return _layers(weights, hidden, positions, range(L_c), CLUSTERING, selection, trace, meter)


def scatter(hidden_c: np.ndarray, E_img: np.ndarray, selection: SelectionResult, dims: ModelDims) -> np.ndarray:
    """Re-activate every image slot.

    Selected slots keep their evolved state; the rest re-enter as their
    original embeddings. Text rows carry their evolved state.
    """
    n_sel = selection.n_sel
    if hidden_c.shape[0] != dims.n_other + n_sel:
        raise StateError(f"clustered sequence has {hidden_c.shape[0]} rows, expected {dims.n_other + n_sel}")
    image = np.array(E_img, dtype=np.float64, copy=True)
    image[selection.indices] = hidden_c[dims.N_sys:dims.N_sys + n_sel]
    return np.vstack([hidden_c[:dims.N_sys], image, hidden_c[dims.N_sys + n_sel:]])


def extract_seg_attention(
    attention: np.ndarray,
    seg_index: int,
    dims: ModelDims,
    source_layer: int = -1,
    active: SelectionResult | None = None,
) -> SegAttention:
    """Head-averaged SEG row restricted to the image columns.

    With ``active=None`` the attention must come from a full-token layer.
    Passing the active selection maps a reduced layer's image columns back
    onto their original slots.
    """
    n_img = dims.N if active is None else active.n_sel
    if attention.shape[-1] != dims.n_other + n_img:
        raise StateError(
            f"attention covers {attention.shape[-1]} tokens; expected {dims.n_other + n_img} "
            f"({'full' if active is None else 'reduced'} image set)"
        )
    row = attention[:, seg_index, dims.N_sys:dims.N_sys + n_img].mean(axis=0)
    if active is None:
        return SegAttention(row, source_layer)
    values = np.zeros(dims.N)
    values[active.indices] = row
    return SegAttention(values, source_layer, tuple(int(i) for i in active.indices))


def prune(a: SegAttention, N_p: int) -> SelectionResult:
    """Keep the ``N_p`` image tokens with the most SEG attention.

    When ``a`` came from a reduced layer, only its active slots are
    candidates and at most that many are kept.
    """
    values = np.asarray(a.values, dtype=np.float64)
    if not 1 <= N_p <= values.size:
        raise ValueError(f"N_p={N_p} must lie in [1, {values.size}]")
    if a.active is None:
        return top_k(values, N_p)
    cand = np.asarray(a.active, dtype=np.int64)
    picked = top_k(values[cand], min(N_p, cand.size))
    return SelectionResult(cand[picked.indices])


def _gather_image(hidden: np.ndarray, dims: ModelDims, current: SelectionResult, keep: SelectionResult) -> np.ndarray:
    rows = np.searchsorted(current.indices, keep.indices)
    image = hidden[dims.N_sys:dims.N_sys + current.n_sel][rows]
    return np.vstack([hidden[:dims.N_sys], image, hidden[dims.N_sys + current.n_sel:]])


def run_csp(
    weights: DecoderWeights,
    stub: VisionStubOutput,
    config: CspConfig,
    rng: Rng,
    masks: InstanceMaskSet | None = None,
    meter: CostMeter | None = None,
) -> CspResult:
    """Full schedule: cluster, scatter, prune.

    The pruning attention comes from the last scattering layer, or from the
    last clustering layer when ``L_s == 0`` (then only clustered tokens are
    candidates). The retained set is computed even when ``L_p == 0``.
    """
    dims = weights.dims
    config.validate(dims.L_total, dims.N)
    L_p = config.L_p(dims.L_total)
    trace = StageTrace()

    clustered = cluster(config.strategy, dims.N, config.N_c, rng, stub.q_cls, stub.K_img, masks)
    hidden, positions, seg = assemble_sequence(weights, stub.E_img, clustered)
    hidden, attn = run_clustering_stage(hidden, positions, weights, config.L_c, clustered, trace, meter)

    if config.L_s > 0:
        everything = SelectionResult(np.arange(dims.N))
        hidden = scatter(hidden, stub.E_img, clustered, dims)
        positions = np.arange(dims.n_full)
        layer_ids = range(config.L_c, config.L_c + config.L_s)
        hidden, attn = _layers(weights, hidden, positions, layer_ids, SCATTERING, everything, trace, meter)
        current = everything
        seg_att = extract_seg_attention(attn, dims.seg_index, dims, source_layer=layer_ids[-1])
    else:
        current = clustered
        seg_att = extract_seg_attention(attn, seg, dims, source_layer=config.L_c - 1, active=clustered)

    retained = prune(seg_att, config.N_p)
    if L_p > 0:
        hidden = _gather_image(hidden, dims, current, retained)
        _, positions, _ = assemble_sequence(weights, stub.E_img, retained)
        layer_ids = range(config.L_c + config.L_s, dims.L_total)
        hidden, _ = _layers(weights, hidden, positions, layer_ids, PRUNING, retained, trace, meter)

    return CspResult(hidden[-1].copy(), trace, seg_att, clustered, retained)


def run_vanilla(weights: DecoderWeights, E_img: np.ndarray, meter: CostMeter | None = None) -> np.ndarray:
    """SEG hidden state of a plain forward pass over all tokens."""
    hidden, positions = full_sequence(weights, E_img)
    return forward(weights, hidden, positions, meter)[-1].copy()


def planted_recall(planted, retained: SelectionResult) -> float:
    planted = set(planted)
    if not planted:
        return 1.0
    return len(planted & retained.as_set()) / len(planted)
