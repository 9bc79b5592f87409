"""Text formats: run configs, grids, instance masks, and CSV / JSON-lines reports."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable

import numpy as np

from .cost_model import CostReport
from .model import ModelDims
from .pipeline import CspConfig, StageTrace
from .planner import Grid, PlanEntry, PlantedSpec
from .selection import ClusterStrategy, InstanceMaskSet

MASK_MAGIC = "CSPMASK"


class ParseError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


# -- instance masks ---------------------------------------------------------


def parse_mask_file(text: str) -> InstanceMaskSet:
    """Parse ``CSPMASK H W N_o`` followed by ``N_o`` blocks of H rows of W ``0``/``1``."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if not lines:
        raise ParseError("empty mask file", 1)
    header = lines[0].split()
    if len(header) != 4 or header[0] != MASK_MAGIC:
        raise ParseError(f"expected header '{MASK_MAGIC} <H> <W> <N_o>'", 1)
    try:
        H, W, n_o = (int(x) for x in header[1:])
    except ValueError:
        raise ParseError("header dimensions must be integers", 1) from None
    if H < 1 or W < 1 or n_o < 1:
        raise ParseError("header dimensions must be positive", 1)

    expected = 1 + H * n_o
    if len(lines) < expected:
        raise ParseError(f"file ends inside block {(len(lines) - 1) // H + 1}; expected {n_o} blocks of {H} rows", len(lines) + 1)
    if len(lines) > expected:
        raise ParseError("trailing content after the last block", expected + 1)

    masks = np.zeros((n_o, H, W), dtype=bool)
    for b in range(n_o):
        for r in range(H):
            lineno = 2 + b * H + r
            row = lines[lineno - 1].rstrip("\r")
            if len(row) != W:
                raise ParseError(f"block {b + 1}: row has {len(row)} cells, expected {W}", lineno)
            bad = next((c for c in row if c not in "01"), None)
            if bad is not None:
                raise ParseError(f"block {b + 1}: bad character {bad!r}", lineno)
            masks[b, r] = [c == "1" for c in row]
        if not masks[b].any():
            raise ParseError(f"block {b + 1}: empty mask", 2 + b * H)
    return InstanceMaskSet(H, W, masks)


def serialize_masks(masks: InstanceMaskSet) -> str:
    out = [f"{MASK_MAGIC} {masks.H} {masks.W} {masks.n_instances}"]
    for m in masks.masks:
        out.extend("".join("1" if c else "0" for c in row) for row in m)
    return "\n".join(out) + "\n"


# -- key=value files ---------------------------------------------------------


def _key_values(text: str) -> list[tuple[int, str, str]]:
    out = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep or not key.strip():
            raise ParseError(f"expected key = value, got {raw.strip()!r}", lineno)
        out.append((lineno, key.strip(), value.strip()))
    return out


def _int(value: str, key: str, lineno: int) -> int:
    try:
        return int(value)
    except ValueError:
        raise ParseError(f"{key} must be an integer, got {value!r}", lineno) from None


def _int_list(value: str, key: str, lineno: int) -> tuple[int, ...]:
    parts = [p.strip() for p in value.split(",")]
    if not value or any(not p for p in parts):
        raise ParseError(f"{key} needs a comma-separated list of integers", lineno)
    return tuple(_int(p, key, lineno) for p in parts)


_DIMS_FIELDS = ("L_total", "d", "m", "n_heads", "N", "N_sys", "N_usr", "N_out")
_CSP_FIELDS = ("L_c", "N_c", "L_s", "N_p")


@dataclass(frozen=True)
class RunConfig:
    model: str | None
    dims: ModelDims
    config: CspConfig
    seed: int = 0
    planted: PlantedSpec = PlantedSpec()
    calibrate: float | None = None
    masks: str | None = None


def parse_run_config(text: str) -> RunConfig:
    """Flat ``key = value`` run description; ``#`` starts a comment.

    Either ``model = <preset>`` or all explicit dims keys must be present.
    """
    from .presets import PRESETS, resolve_model

    seen: dict[str, tuple[int, str]] = {}
    known = {"model", "strategy", "seed", "planted", "calibrate", "masks", *_DIMS_FIELDS, *_CSP_FIELDS}
    for lineno, key, value in _key_values(text):
        if key not in known:
            raise ParseError(f"unknown key {key!r}", lineno)
        if key in seen:
            raise ParseError(f"duplicate key {key!r} (first on line {seen[key][0]})", lineno)
        seen[key] = (lineno, value)

    def line_of(key: str) -> int | None:
        return seen[key][0] if key in seen else None

    calibrate = None
    if "calibrate" in seen:
        lineno, value = seen["calibrate"]
        try:
            calibrate = float(value)
        except ValueError:
            raise ParseError(f"calibrate must be a number, got {value!r}", lineno) from None

    dims_keys = [k for k in _DIMS_FIELDS if k in seen]
    if "model" in seen:
        lineno, name = seen["model"]
        if dims_keys:
            raise ParseError(f"{dims_keys[0]} cannot be combined with model", line_of(dims_keys[0]))
        if name.lower() not in PRESETS:
            raise ParseError(f"unknown model preset {name!r}", lineno)
        try:
            dims, _ = resolve_model(name, calibrate)
        except ValueError as exc:
            raise ParseError(str(exc), line_of("calibrate") or lineno) from None
        model = name.lower()
    else:
        missing = [k for k in _DIMS_FIELDS if k not in seen and k != "N_out"]
        if missing:
            raise ParseError(f"missing {missing[0]} (or give model = <preset>)")
        values = {k: _int(seen[k][1], k, seen[k][0]) for k in dims_keys}
        try:
            dims = ModelDims(**values)
        except ValueError as exc:
            raise ParseError(str(exc), line_of(dims_keys[0])) from None
        model = None

    for k in _CSP_FIELDS:
        if k not in seen:
            raise ParseError(f"missing {k}")
    knobs = {k: _int(seen[k][1], k, seen[k][0]) for k in _CSP_FIELDS}
    strategy = ClusterStrategy.UNIFORM
    if "strategy" in seen:
        lineno, value = seen["strategy"]
        try:
            strategy = ClusterStrategy.parse(value)
        except ValueError as exc:
            raise ParseError(str(exc), lineno) from None
    config = CspConfig(**knobs, strategy=strategy)
    try:
        config.validate(dims.L_total, dims.N)
    except ValueError as exc:
        msg = str(exc)
        culprit = "L_s" if msg.startswith(("L_s", "L_c + L_s")) else next(k for k in _CSP_FIELDS if k in msg)
        raise ParseError(msg, line_of(culprit)) from None

    seed = _int(seen["seed"][1], "seed", seen["seed"][0]) if "seed" in seen else 0
    planted = PlantedSpec()
    if "planted" in seen:
        lineno, value = seen["planted"]
        planted = parse_planted(value, lineno)
    masks = seen["masks"][1] if "masks" in seen else None
    return RunConfig(model, dims, config, seed, planted, calibrate, masks)


def parse_planted(value: str, lineno: int | None = None) -> PlantedSpec:
    parts = [p.strip() for p in value.split(",")]
    if len(parts) != 2:
        raise ParseError(f"planted needs 'count,gain', got {value!r}", lineno)
    try:
        spec = PlantedSpec(int(parts[0]), float(parts[1]))
    except ValueError:
        raise ParseError(f"planted needs 'count,gain', got {value!r}", lineno) from None
    if spec.count < 0:
        raise ParseError("planted count must be >= 0", lineno)
    return spec


def parse_grid_file(text: str) -> Grid:
    """Planner grid: per-knob lists, ``strategy`` list, or repeated ``config = Lc,Nc,Ls,Np``."""
    axes: dict[str, tuple[int, ...]] = {}
    strategies: tuple[ClusterStrategy, ...] = (ClusterStrategy.UNIFORM,)
    configs: list[tuple[int, int, int, int]] = []
    for lineno, key, value in _key_values(text):
        if key in _CSP_FIELDS:
            if key in axes:
                raise ParseError(f"duplicate key {key!r}", lineno)
            axes[key] = _int_list(value, key, lineno)
        elif key == "strategy":
            try:
                strategies = tuple(ClusterStrategy.parse(s) for s in value.split(","))
            except ValueError as exc:
                raise ParseError(str(exc), lineno) from None
        elif key == "config":
            knobs = _int_list(value, key, lineno)
            if len(knobs) != 4:
                raise ParseError("config needs exactly L_c,N_c,L_s,N_p", lineno)
            configs.append(knobs)
        else:
            raise ParseError(f"unknown key {key!r}", lineno)
    if configs and axes:
        raise ParseError("use either config lines or per-knob lists, not both")
    if configs:
        return Grid(strategies=strategies, configs=tuple(configs))
    return Grid(**axes, strategies=strategies)


# -- reports -----------------------------------------------------------------


def _fmt_float(x: float) -> float:
    return float(f"{x:.6g}")


def _cell(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def _json_value(v):
    if isinstance(v, float):
        return _fmt_float(v)
    if isinstance(v, Fraction):
        return str(v)
    return v


def _config_cells(cfg: CspConfig, L_total: int) -> dict:
    return {"L_c": cfg.L_c, "N_c": cfg.N_c, "L_s": cfg.L_s, "N_p": cfg.N_p, "L_p": cfg.L_p(L_total), "strategy": cfg.strategy.label}


COST_COLUMNS = (
    "L_c", "N_c", "L_s", "N_p", "L_p", "strategy", "n_avg_exact", "n_avg_floor",
    "n_clustering", "n_scattering", "n_pruning", "mac_total", "mac_scale", "flops_total", "tflops",
)
TRACE_COLUMNS = ("layer", "stage", "n_image", "n", "active")
PLAN_COLUMNS = (
    "rank", "L_c", "N_c", "L_s", "N_p", "L_p", "strategy", "n_avg_exact", "n_avg_floor",
    "mac_total", "tflops", "proxy_score",
)


def cost_row(report: CostReport) -> dict:
    L_total = sum(s.layers for s in report.stages)
    row = _config_cells(report.config, L_total)
    row.update(n_avg_exact=report.N_avg_exact, n_avg_floor=report.N_avg_floor)
    for s in report.stages:
        row[f"n_{s.stage}"] = s.n
    row.update(mac_total=report.mac_total, mac_scale=float(report.mac_scale),
               flops_total=float(report.flops_total), tflops=float(report.tflops))
    return row


def trace_rows(trace: StageTrace) -> list[dict]:
    return [
        {"layer": r.layer, "stage": r.stage, "n_image": r.n_image, "n": r.n, "active": " ".join(map(str, r.active))}
        for r in trace.layers
    ]


def plan_rows(entries: Iterable[PlanEntry]) -> list[dict]:
    rows = []
    for rank, e in enumerate(entries, start=1):
        L_total = sum(s.layers for s in e.cost.stages)
        row = {"rank": rank, **_config_cells(e.config, L_total)}
        row.update(n_avg_exact=e.cost.N_avg_exact, n_avg_floor=e.cost.N_avg_floor,
                   mac_total=e.cost.mac_total, tflops=float(e.cost.tflops), proxy_score=e.proxy_score)
        rows.append(row)
    return rows


def render_rows(rows: list[dict], columns: tuple[str, ...], fmt: str) -> str:
    """Render dict rows as ``csv`` (with header) or ``jsonl``."""
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_cell(row.get(c)) for c in columns])
        return buf.getvalue()
    if fmt in ("jsonl", "json-lines"):
        return "".join(json.dumps({c: _json_value(row.get(c)) for c in columns}) + "\n" for row in rows)
    raise ValueError(f"unknown report format {fmt!r}")


def emit_report(report, fmt: str = "csv") -> str:
    """Render a CostReport, StageTrace, or list of PlanEntry."""
    if isinstance(report, CostReport):
        return render_rows([cost_row(report)], COST_COLUMNS, fmt)
    if isinstance(report, StageTrace):
        return render_rows(trace_rows(report), TRACE_COLUMNS, fmt)
    if isinstance(report, (list, tuple)) and all(isinstance(e, PlanEntry) for e in report):
        return render_rows(plan_rows(report), PLAN_COLUMNS, fmt)
    raise TypeError(f"cannot render {type(report).__name__}")
