"""Acceptance criteria, one test per criterion.

Each test records a single ``[PASS]``/``[FAIL]`` line with the measured value
and wall time; the lines are printed in pytest's terminal summary. Run
standalone with ``python tests/test_acceptance.py`` or through pytest.
"""

from __future__ import annotations

import math
import sys
import time
from contextlib import contextmanager
from fractions import Fraction

import numpy as np
import pytest

from lvlm_csp.core_math import CostMeter, make_rng
from lvlm_csp.cost_model import baseline_flops, n_avg, realized_cost, staged_flops
from lvlm_csp.model import TOY_DIMS, ModelDims, attention_logits, init_weights, vision_stub
from lvlm_csp.pipeline import CspConfig, SegAttention, planted_recall, prune, run_csp, run_vanilla
from lvlm_csp.planner import DEFAULT_L_C, DEFAULT_L_S, DEFAULT_N_C, DEFAULT_N_P, trial_seeds
from lvlm_csp.presets import calibrated, reference_tables
from lvlm_csp.selection import InstanceMaskSet, select_cls, select_seg_first

_RESULTS: list[str] = []


def _emit(line: str) -> None:
    _RESULTS.append(line)


@contextmanager
def criterion(tag: str, limit_s: float):
    """Time the body and print one line; the body sets ``state['ok']`` and ``state['detail']``."""
    state = {"ok": False, "detail": ""}
    t0 = time.perf_counter()
    try:
        yield state
    finally:
        elapsed = time.perf_counter() - t0
        in_time = elapsed < limit_s
        ok = state["ok"] and in_time
        timing = f"{elapsed:.2f}s < {limit_s:g}s" if in_time else f"{elapsed:.2f}s exceeds {limit_s:g}s"
        _emit(f"[{'PASS' if ok else 'FAIL'}] {tag}: {state['detail']} ({timing})")
    assert state["ok"], state["detail"]
    assert in_time, f"{tag} took {elapsed:.2f}s, limit {limit_s}s"


def _table6_rows():
    for block in reference_tables()["6"]["blocks"]:
        for r in block["rows"]:
            if r["config"] is not None:
                yield block["model"], tuple(r["config"]), r["n_avg"]


def test_ac1_table6_navg_exact():
    with criterion("AC1 Table-6 N_avg exact", 1.0) as st:
        wrong = []
        rows = list(_table6_rows())
        for model, cfg, expected in rows:
            dims = calibrated(model)[0]
            got = n_avg(CspConfig(*cfg), dims.N, dims.L_total)
            if math.floor(got) != expected:
                wrong.append(f"{model} {cfg}: {math.floor(got)} != {expected}")
        st["ok"] = len(rows) == 18 and not wrong
        st["detail"] = f"{18 - len(wrong)}/{len(rows)} rows match" + (f"; {wrong}" if wrong else "")


def test_ac2_table1_spot_values():
    with criterion("AC2 Table-1 (8,64,6,16) on 7B-224", 1.0) as st:
        dims, _ = calibrated("7b-224")
        report = staged_flops(CspConfig(8, 64, 6, 16), dims)
        rel = (report.tflops - 1.76) / 1.76
        st["ok"] = report.N_avg_floor == 73 and abs(rel) <= 0.05
        st["detail"] = f"N_avg {report.N_avg_floor} (want 73), {report.tflops:.4f} TFLOPs vs 1.76 ({rel:+.2%}, tol 5%)"


def test_ac3_baseline_calibration():
    with criterion("AC3 baseline calibration", 1.0) as st:
        parts, ok = [], True
        for name, target in (("7b-224", 4.12), ("7b-336", 8.25), ("13b-224", 8.05)):
            dims, cal = calibrated(name)
            tf = baseline_flops(dims, cal.n_other) / 1e12
            rel = (tf - target) / target
            ok &= abs(rel) <= 0.005
            parts.append(f"{name} N_other={cal.n_other} {tf:.4f} vs {target} ({rel:+.3%})")
        st["ok"] = ok
        st["detail"] = "; ".join(parts) + ", tol 0.5%"


def test_ac4_cost_meter_oracle():
    with criterion("AC4 cost meter == closed form", 10.0) as st:
        rng = make_rng(404)
        mismatches = 0
        for case in range(20):
            L = int(rng.integers(2, 9))
            heads = int(rng.integers(1, 5))
            d = heads * 2 * int(rng.integers(2, 9))
            dims = ModelDims(L, d, int(rng.integers(8, 100)), heads, int(rng.integers(4, 65)),
                             int(rng.integers(1, 9)), int(rng.integers(1, 9)), 1)
            lc = int(rng.integers(1, L + 1))
            ls = int(rng.integers(0, L - lc + 1))
            cfg = CspConfig(lc, int(rng.integers(1, dims.N + 1)), ls, int(rng.integers(1, dims.N + 1)))
            meter = CostMeter()
            res = run_csp(init_weights(dims, case), vision_stub(dims, case, 2, 5.0), cfg, make_rng(case), meter=meter)
            mismatches += meter.macs != realized_cost(res, cfg, dims, scale=1).mac_total
        st["ok"] = mismatches == 0
        st["detail"] = f"{20 - mismatches}/20 random (dims, config) pairs exact"


def test_ac5_no_pruning_identity():
    with criterion("AC5 (N_c=N, N_p=N) identity", 10.0) as st:
        dims = TOY_DIMS
        worst = 0.0
        for seed in range(25):
            w_seed, s_seed = trial_seeds(seed, 0)
            w = init_weights(dims, w_seed)
            stub = vision_stub(dims, s_seed, 4, 5.0)
            rng = make_rng(seed)
            lc = int(rng.integers(1, dims.L_total + 1))
            ls = int(rng.integers(0, dims.L_total - lc + 1))
            res = run_csp(w, stub, CspConfig(lc, dims.N, ls, dims.N), rng)
            ref = run_vanilla(w, stub.E_img)
            worst = max(worst, float(np.linalg.norm(res.seg_hidden - ref) / np.linalg.norm(ref)))
        st["ok"] = worst <= 1e-9
        st["detail"] = f"max relative error {worst:.2e} over 25 seeds (tol 1e-9)"


def _sort_oracle(values, k):
    order = sorted(range(len(values)), key=lambda i: (-values[i], i))
    return sorted(order[:k])


def test_ac6_selection_oracles():
    with criterion("AC6 selection oracles", 10.0) as st:
        rng = make_rng(606)
        cls_bad = prune_bad = seg_bad = 0
        ties = 0
        for _ in range(1000):
            N = int(rng.integers(1, 40))
            d = int(rng.integers(1, 6))
            K = rng.integers(-2, 3, size=(N, d)).astype(float)
            q = rng.integers(-2, 3, size=d).astype(float)
            k = int(rng.integers(1, N + 1))
            dots = [sum(K[i, j] * q[j] for j in range(d)) for i in range(N)]
            ties += len(set(dots)) < N
            cls_bad += select_cls(q, K, k).indices.tolist() != _sort_oracle(dots, k)
        for _ in range(1000):
            N = int(rng.integers(1, 40))
            vals = rng.integers(0, 6, size=N) / 8.0
            k = int(rng.integers(1, N + 1))
            prune_bad += prune(SegAttention(vals, 0), k).indices.tolist() != _sort_oracle(list(vals), k)
        for _ in range(1000):
            H, W = int(rng.integers(2, 9)), int(rng.integers(2, 9))
            n_o = int(rng.integers(1, min(H * W, 6) + 1))
            owner = rng.permutation(np.resize(np.arange(n_o + 1), H * W))  # label n_o is background
            masks = np.stack([(owner == o).reshape(H, W) for o in range(n_o)])
            m = InstanceMaskSet(H, W, masks)
            N_c = int(rng.integers(1, H * W + 1))
            chosen = select_seg_first(m, N_c, rng).as_set()
            seg_bad += any(not any(m.masks[o].flat[i] for i in chosen) for o in range(n_o))
        st["ok"] = cls_bad == prune_bad == seg_bad == 0
        st["detail"] = (
            f"select_cls {1000 - cls_bad}/1000 ({ties} with tied logits), prune {1000 - prune_bad}/1000, "
            f"Seg-First min-one {1000 - seg_bad}/1000"
        )


def test_ac7_position_preservation():
    with criterion("AC7 preserved-ID logits == full logits", 5.0) as st:
        rng = make_rng(707)
        worst = 0.0
        for case in range(100):
            heads = int(rng.integers(1, 5))
            d = heads * 2 * int(rng.integers(2, 9))
            dims = ModelDims(1, d, 2 * d, heads, 8, 1, 1, 1)
            layer = init_weights(dims, case).layers[0]
            n = int(rng.integers(2, 200))
            hidden = rng.standard_normal((n, d))
            positions = np.arange(n)
            keep = np.sort(rng.choice(n, int(rng.integers(1, n + 1)), replace=False))
            full = attention_logits(hidden, positions, layer, heads)
            sub = attention_logits(hidden[keep], positions[keep], layer, heads)
            worst = max(worst, float(np.max(np.abs(sub - full[:, keep][:, :, keep]))))
        st["ok"] = worst <= 1e-6
        st["detail"] = f"max |logit diff| {worst:.2e} over 100 cases (tol 1e-6)"


def _recalls(gain: float, trials: int = 100) -> np.ndarray:
    out = np.empty(trials)
    for t in range(trials):
        w_seed, s_seed = trial_seeds(0, t)
        stub = vision_stub(TOY_DIMS, s_seed, 4, gain)
        res = run_csp(init_weights(TOY_DIMS, w_seed), stub, CspConfig(2, 16, 2, 8), make_rng(t))
        out[t] = planted_recall(stub.planted, res.retained)
    return out


def test_ac8_planted_recall():
    with criterion("AC8 planted-token recall", 60.0) as st:
        signal = _recalls(5.0)
        null = _recalls(0.0)
        chance = 8 / TOY_DIMS.N
        st["ok"] = signal.mean() >= 0.90 and abs(null.mean() - chance) <= 0.1
        st["detail"] = (
            f"gain 5 recall {signal.mean():.4f} (>= 0.90); gain 0 recall {null.mean():.4f} "
            f"vs chance {chance:.4f} (|diff| {abs(null.mean() - chance):.4f} <= 0.1)"
        )


def test_ac9_navg_monotone():
    with criterion("AC9 N_avg monotone in N_c, N_p, L_s", 1.0) as st:
        N, L = 256, 32
        checks = violations = 0
        for lc in DEFAULT_L_C:
            for nc in DEFAULT_N_C:
                for ls in DEFAULT_L_S:
                    for np_ in DEFAULT_N_P:
                        here = n_avg(CspConfig(lc, nc, ls, np_), N, L)
                        neighbours = []
                        i = DEFAULT_N_C.index(nc)
                        if i + 1 < len(DEFAULT_N_C):
                            neighbours.append(CspConfig(lc, DEFAULT_N_C[i + 1], ls, np_))
                        i = DEFAULT_N_P.index(np_)
                        if i + 1 < len(DEFAULT_N_P):
                            neighbours.append(CspConfig(lc, nc, ls, DEFAULT_N_P[i + 1]))
                        i = DEFAULT_L_S.index(ls)
                        if i + 1 < len(DEFAULT_L_S):
                            neighbours.append(CspConfig(lc, nc, DEFAULT_L_S[i + 1], np_))
                        for cfg in neighbours:
                            checks += 1
                            violations += n_avg(cfg, N, L) < here
        st["ok"] = violations == 0 and checks > 0
        st["detail"] = f"{checks - violations}/{checks} grid steps nondecreasing"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-q", "-p", "no:cacheprovider"]))
