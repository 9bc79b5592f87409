"""Model presets and the bundled table fixtures."""

from __future__ import annotations

import json
from dataclasses import dataclass, fields
from functools import lru_cache
from importlib import resources

from .cost_model import CalibrationResult, calibrate, with_overhead
from .model import TOY_DIMS, ModelDims


@dataclass(frozen=True)
class Preset:
    name: str
    dims: ModelDims
    baseline_tflops: float | None


# Text-token counts here are placeholders; calibration replaces their sum.
PRESETS = {
    "7b-224": Preset("7b-224", ModelDims(32, 4096, 11008, 32, 256, 35, 20, 1), 4.12),
    "7b-336": Preset("7b-336", ModelDims(32, 4096, 11008, 32, 576, 35, 20, 1), 8.25),
    "13b-224": Preset("13b-224", ModelDims(40, 5120, 13824, 40, 256, 35, 20, 1), 8.05),
    "toy": Preset("toy", TOY_DIMS, None),
}

_DIM_KEYS = {f.name.lower(): f.name for f in fields(ModelDims)}
_DIM_KEYS.update({"l": "L_total", "layers": "L_total", "heads": "n_heads"})


def parse_dims(text: str) -> ModelDims:
    """``"L_total=8,d=64,m=172,n_heads=4,N=64,N_sys=8,N_usr=8,N_out=1"`` -> ModelDims."""
    values: dict[str, int] = {}
    for part in text.split(","):
        key, sep, raw = part.partition("=")
        name = _DIM_KEYS.get(key.strip().lower())
        if not sep or name is None:
            raise ValueError(f"bad dims entry {part.strip()!r}")
        try:
            values[name] = int(raw)
        except ValueError:
            raise ValueError(f"{name} must be an integer, got {raw.strip()!r}") from None
    missing = [f.name for f in fields(ModelDims) if f.name not in values and f.name != "N_out"]
    if missing:
        raise ValueError(f"dims missing {', '.join(missing)}")
    return ModelDims(**values)


@lru_cache(maxsize=None)
def calibrated(name: str, baseline_tflops: float | None = None) -> tuple[ModelDims, CalibrationResult | None]:
    preset = PRESETS[name]
    target = baseline_tflops if baseline_tflops is not None else preset.baseline_tflops
    if target is None:
        return preset.dims, None
    cal = calibrate(preset.dims, target)
    return with_overhead(preset.dims, cal.n_other), cal


def resolve_model(spec: str, baseline_tflops: float | None = None) -> tuple[ModelDims, CalibrationResult | None]:
    """Preset name or explicit dims string, optionally recalibrated."""
    key = spec.strip().lower()
    if key in PRESETS:
        return calibrated(key, baseline_tflops)
    dims = parse_dims(spec)
    if baseline_tflops is None:
        return dims, None
    cal = calibrate(dims, baseline_tflops)
    return with_overhead(dims, cal.n_other, dims.N_sys), cal


@lru_cache(maxsize=1)
def reference_tables() -> dict:
    text = resources.files("lvlm_csp").joinpath("data/reference_tables.json").read_text(encoding="utf-8")
    return json.loads(text)["tables"]
