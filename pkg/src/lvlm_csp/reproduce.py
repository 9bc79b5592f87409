"""Compare computed N_avg / TFLOPs against the bundled table fixtures."""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

from .cost_model import MAC_SCALE, baseline_flops, staged_flops
from .pipeline import CspConfig
from .presets import calibrated, reference_tables

TFLOPS_REL_TOL = 0.05

REPRO_COLUMNS = (
    "table", "model", "label", "config", "n_other", "n_avg_ref", "n_avg_exact", "n_avg_floor", "n_avg_match",
    "tflops_ref", "tflops_computed", "tflops_rel_err", "tflops_match",
)


@dataclass(frozen=True)
class ReproRow:
    table: str
    model: str
    label: str
    config: tuple[int, int, int, int] | None
    n_other: int
    n_avg_ref: int
    n_avg_exact: Fraction
    tflops_ref: float
    tflops_computed: float

    @property
    def n_avg_floor(self) -> int:
        return self.n_avg_exact.numerator // self.n_avg_exact.denominator

    @property
    def n_avg_match(self) -> bool:
        return self.n_avg_floor == self.n_avg_ref

    @property
    def tflops_rel_err(self) -> float:
        return (self.tflops_computed - self.tflops_ref) / self.tflops_ref

    @property
    def tflops_match(self) -> bool:
        return abs(self.tflops_rel_err) <= TFLOPS_REL_TOL

    @property
    def ok(self) -> bool:
        return self.n_avg_match and self.tflops_match

    def as_dict(self) -> dict:
        return {
            "table": self.table,
            "model": self.model,
            "label": self.label,
            "config": "-" if self.config is None else "({},{},{},{})".format(*self.config),
            "n_other": self.n_other,
            "n_avg_ref": self.n_avg_ref,
            "n_avg_exact": self.n_avg_exact,
            "n_avg_floor": self.n_avg_floor,
            "n_avg_match": self.n_avg_match,
            "tflops_ref": float(self.tflops_ref),
            "tflops_computed": self.tflops_computed,
            "tflops_rel_err": self.tflops_rel_err,
            "tflops_match": self.tflops_match,
        }


def available_tables() -> list[str]:
    return sorted(reference_tables(), key=int)


def reproduce_table(table: str) -> list[ReproRow]:
    """Every fixture row of ``table`` with its computed counterpart.

    Each model block uses its preset calibrated to the preset baseline.
    """
    spec = reference_tables()[str(table)]
    rows = []
    for block in spec["blocks"]:
        dims, cal = calibrated(block["model"])
        for r in block["rows"]:
            if r["config"] is None:
                n_avg = Fraction(dims.N)
                tflops = baseline_flops(dims, dims.n_other, MAC_SCALE) / 1e12
                knobs = None
            else:
                knobs = tuple(r["config"])
                report = staged_flops(CspConfig(*knobs), dims, MAC_SCALE)
                n_avg, tflops = report.N_avg_exact, report.tflops
            rows.append(
                ReproRow(str(table), block["model"], r["label"], knobs, dims.n_other,
                         r["n_avg"], n_avg, r["tflops"], tflops)
            )
    return rows
