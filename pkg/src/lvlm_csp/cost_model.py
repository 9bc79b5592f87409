"""Analytical FLOPs and token-budget accounting for staged schedules."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .model import ModelDims
from .pipeline import CspConfig

MAC_SCALE = 2.0
CALIBRATION_TOLERANCE = 0.01
MAX_N_OTHER = 4096


class CalibrationError(ValueError):
    def __init__(self, message: str, best_n_other: int, best_residual: float):
        super().__init__(f"{message} (best N_other={best_n_other}, residual {best_residual:+.4%})")
        self.best_n_other = best_n_other
        self.best_residual = best_residual


def layer_flops(n: int, d: int, m: int) -> int:
    """MACs of one decoder layer over ``n`` tokens: ``4nd^2 + 2n^2d + 3ndm``."""
    return 4 * n * d * d + 2 * n * n * d + 3 * n * d * m


def n_avg(
    config: CspConfig,
    N: int,
    L_total: int,
    n_sel: int | None = None,
    n_pruned: int | None = None,
) -> Fraction:
    """Layer-averaged image-token count, exact.

    ``n_sel`` and ``n_pruned`` replace ``N_c`` and ``N_p`` when a run
    realised different counts (Seg-First, or pruning among fewer than
    ``N_p`` clustered tokens when ``L_s == 0``).
    """
    n_c = config.N_c if n_sel is None else n_sel
    n_p = config.N_p if n_pruned is None else n_pruned
    L_p = config.L_p(L_total)
    return Fraction(n_c * config.L_c + N * config.L_s + n_p * L_p, config.L_c + config.L_s + L_p)


@dataclass(frozen=True)
class StageCost:
    stage: str
    layers: int
    n_image: int
    n: int
    macs: int


@dataclass(frozen=True)
class CostReport:
    config: CspConfig
    N_avg_exact: Fraction
    stages: tuple[StageCost, ...]
    mac_total: int
    mac_scale: float

    @property
    def N_avg_floor(self) -> int:
        return self.N_avg_exact.numerator // self.N_avg_exact.denominator

    @property
    def flops_total(self) -> float:
        return self.mac_total * self.mac_scale

    @property
    def tflops(self) -> float:
        return self.flops_total / 1e12


def staged_flops(
    config: CspConfig,
    dims: ModelDims,
    scale: float = MAC_SCALE,
    n_sel: int | None = None,
    n_pruned: int | None = None,
) -> CostReport:
    """Per-stage and total cost of ``config`` on ``dims``.

    Each stage's sequence length is the non-image overhead of ``dims`` plus
    that stage's image-token count.
    """
    config.validate(dims.L_total, dims.N)
    n_c = config.N_c if n_sel is None else n_sel
    n_p = config.N_p if n_pruned is None else n_pruned
    plan = [
        ("clustering", config.L_c, n_c),
        ("scattering", config.L_s, dims.N),
        ("pruning", config.L_p(dims.L_total), n_p),
    ]
    stages = []
    for name, layers, n_img in plan:
        n = dims.n_other + n_img
        stages.append(StageCost(name, layers, n_img, n, layers * layer_flops(n, dims.d, dims.m)))
    return CostReport(
        config=config,
        N_avg_exact=n_avg(config, dims.N, dims.L_total, n_sel, n_pruned),
        stages=tuple(stages),
        mac_total=sum(s.macs for s in stages),
        mac_scale=scale,
    )


def realized_cost(result, config: CspConfig, dims: ModelDims, scale: float = MAC_SCALE) -> CostReport:
    """Cost of a finished pipeline run, using the token counts it actually used."""
    return staged_flops(config, dims, scale, n_sel=result.clustered.n_sel, n_pruned=result.retained.n_sel)


def baseline_flops(dims: ModelDims, n_other: int, scale: float = MAC_SCALE) -> float:
    return dims.L_total * layer_flops(n_other + dims.N, dims.d, dims.m) * scale


@dataclass(frozen=True)
class CalibrationResult:
    n_other: int
    mac_scale: float
    target_flops: float
    achieved_flops: float

    @property
    def residual(self) -> float:
        return (self.achieved_flops - self.target_flops) / self.target_flops


def calibrate(dims: ModelDims, baseline_tflops: float) -> CalibrationResult:
    """Solve for the integer non-image token count behind a baseline TFLOPs figure.

    Bisection over ``[0, MAX_N_OTHER]`` brackets the real root, then the
    closer neighbouring integer is taken.
    """
    if baseline_tflops <= 0:
        raise ValueError("baseline_tflops must be positive")
    target = baseline_tflops * 1e12

    def resid(k: int) -> float:
        return (baseline_flops(dims, k) - target) / target

    lo, hi = 0, MAX_N_OTHER
    if resid(lo) > 0:
        if abs(resid(lo)) > CALIBRATION_TOLERANCE:
            raise CalibrationError("baseline is below the zero-overhead floor", lo, resid(lo))
        hi = lo
    elif resid(hi) < 0:
        if abs(resid(hi)) > CALIBRATION_TOLERANCE:
            raise CalibrationError(f"baseline exceeds N_other={MAX_N_OTHER}", hi, resid(hi))
        lo = hi
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if resid(mid) < 0:
            lo = mid
        else:
            hi = mid
    best = min((lo, hi), key=lambda k: (abs(resid(k)), k))
    if abs(resid(best)) > CALIBRATION_TOLERANCE:
        raise CalibrationError("no integer N_other within tolerance", best, resid(best))
    return CalibrationResult(best, MAC_SCALE, target, baseline_flops(dims, best))


def with_overhead(dims: ModelDims, n_other: int, n_sys: int = 35) -> ModelDims:
    """Copy of ``dims`` whose text tokens sum to ``n_other``.

    Keeps ``N_out``; fills ``N_sys`` up to ``n_sys`` and gives the rest to
    ``N_usr``. Only the sum matters to the cost model.
    """
    if n_other < 3:
        raise ValueError(f"n_other={n_other} cannot hold one system, user and output token")
    n_out = min(dims.N_out, n_other - 2)
    sys_ = max(1, min(n_sys, n_other - n_out - 1))
    return ModelDims(
        L_total=dims.L_total, d=dims.d, m=dims.m, n_heads=dims.n_heads, N=dims.N,
        N_sys=sys_, N_usr=n_other - n_out - sys_, N_out=n_out,
    )
