"""``lvlm-csp`` command line: analyze, reproduce, plan, simulate.

Exit codes: 0 success, 1 table reproduction mismatch, 2 usage or validation
error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from fractions import Fraction
from pathlib import Path

from .core_math import make_rng
from .cost_model import CalibrationError, staged_flops
from .io_formats import (
    ParseError,
    emit_report,
    parse_grid_file,
    parse_mask_file,
    parse_planted,
    parse_run_config,
    render_rows,
)
from .model import ModelDims, init_weights, vision_stub
from .pipeline import CspConfig, planted_recall, run_csp
from .planner import Budget, Grid, PlantedSpec, enumerate_plans, rank_by_score, score, trial_seeds, config_rng_seed
from .presets import resolve_model
from .reproduce import REPRO_COLUMNS, available_tables, reproduce_table
from .selection import ClusterStrategy

EXIT_OK, EXIT_MISMATCH, EXIT_USAGE = 0, 1, 2

REFERENCE_KNOBS = {"Lc": 2, "Nc": 16, "Ls": 2, "Np": 8}


class UsageError(Exception):
    pass


def _default_seed() -> int:
    raw = os.environ.get("CSP_SEED")
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"CSP_SEED must be an integer, got {raw!r}") from None


def parse_config_arg(text: str, dims: ModelDims, strategy: ClusterStrategy) -> CspConfig:
    """``"Lc,Nc,Ls,Np"`` or ``"Nc=N,Np=N"`` overrides of the reference config; ``N`` means all tokens."""
    if "=" not in text:
        parts = text.split(",")
        if len(parts) != 4:
            raise UsageError(f"--config needs Lc,Nc,Ls,Np, got {text!r}")
        try:
            knobs = [int(p) for p in parts]
        except ValueError:
            raise UsageError(f"--config values must be integers, got {text!r}") from None
        return CspConfig(*knobs, strategy=strategy)
    knobs = dict(REFERENCE_KNOBS)
    for part in text.split(","):
        key, _, value = part.partition("=")
        key = key.strip().replace("_", "")
        match = next((k for k in knobs if k.lower() == key.lower()), None)
        if match is None:
            raise UsageError(f"unknown --config key {key!r}")
        value = value.strip()
        try:
            knobs[match] = dims.N if value == "N" else int(value)
        except ValueError:
            raise UsageError(f"bad value for {match}: {value!r}") from None
    return CspConfig(knobs["Lc"], knobs["Nc"], knobs["Ls"], knobs["Np"], strategy)


def _model(spec: str, calibrate: float | None = None) -> ModelDims:
    try:
        dims, _ = resolve_model(spec, calibrate)
    except CalibrationError as exc:
        raise UsageError(f"calibration failed: {exc}") from None
    except (ValueError, KeyError) as exc:
        raise UsageError(f"--model: {exc}") from None
    return dims


def _validated(config: CspConfig, dims: ModelDims) -> CspConfig:
    try:
        config.validate(dims.L_total, dims.N)
    except ValueError as exc:
        raise UsageError(f"invalid config: {exc}") from None
    return config


def _strategy(text: str) -> ClusterStrategy:
    try:
        return ClusterStrategy.parse(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def cmd_analyze(args) -> int:
    dims = _model(args.model, args.calibrate)
    config = _validated(parse_config_arg(args.config, dims, args.strategy), dims)
    report = staged_flops(config, dims)
    sys.stdout.write(emit_report(report, args.format))
    return EXIT_OK


def cmd_reproduce(args) -> int:
    rows = reproduce_table(args.table)
    text = render_rows([r.as_dict() for r in rows], REPRO_COLUMNS, "csv")
    if args.out:
        Path(args.out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    bad = [r for r in rows if not r.ok]
    for r in bad:
        what = []
        if not r.n_avg_match:
            what.append(f"n_avg {r.n_avg_floor} != {r.n_avg_ref}")
        if not r.tflops_match:
            what.append(f"tflops {r.tflops_computed:.3f} vs {r.tflops_ref} ({r.tflops_rel_err:+.1%})")
        print(f"mismatch: table {r.table} {r.model} {r.label}: {'; '.join(what)}", file=sys.stderr)
    return EXIT_MISMATCH if bad else EXIT_OK


def cmd_plan(args) -> int:
    if args.budget_navg is None and args.budget_tflops is None:
        raise UsageError("plan needs --budget-navg and/or --budget-tflops")
    dims = _model(args.model)
    grid = Grid()
    if args.grid:
        try:
            grid = parse_grid_file(Path(args.grid).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read grid: {exc}") from None
    budget = Budget(
        max_flops=None if args.budget_tflops is None else args.budget_tflops * 1e12,
        max_n_avg=None if args.budget_navg is None else Fraction(args.budget_navg),
        grid=grid,
    )
    try:
        entries = enumerate_plans(budget, dims)
    except ValueError as exc:
        raise UsageError(f"grid: {exc}") from None
    if args.score_seeds:
        toy = ModelDims(dims.L_total, 64, 172, 4, dims.N, 8, 8, 1)
        entries = score(entries, toy, args.score_seeds, args.planted, _seed(args), workers=args.workers)
        if args.rank_by == "score":
            entries = rank_by_score(entries)
    if not entries:
        print("no configuration in the grid meets the budget", file=sys.stderr)
    sys.stdout.write(emit_report(entries, args.format))
    return EXIT_OK


def _seed(args) -> int:
    return args.seed if args.seed is not None else _default_seed()


def cmd_simulate(args) -> int:
    planted = args.planted
    masks_path = args.masks
    if args.run_config:
        try:
            run = parse_run_config(Path(args.run_config).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read run config: {exc}") from None
        dims, config = run.dims, run.config
        planted = run.planted
        masks_path = masks_path or run.masks
        seed = args.seed if args.seed is not None else run.seed
    else:
        dims = _model(args.dims)
        config = parse_config_arg(args.config, dims, args.strategy)
        seed = _seed(args)
    _validated(config, dims)

    seg_first = config.strategy is ClusterStrategy.SEG_FIRST
    if seg_first and not masks_path:
        raise UsageError("strategy SegFirst requires --masks")
    if masks_path and not seg_first:
        raise UsageError("--masks is only used with strategy SegFirst")
    masks = None
    if masks_path:
        try:
            masks = parse_mask_file(Path(masks_path).read_text(encoding="utf-8"))
        except OSError as exc:
            raise UsageError(f"cannot read masks: {exc}") from None
        if masks.n_tokens != dims.N:
            raise UsageError(f"mask grid {masks.H}x{masks.W} does not match N={dims.N}")

    out = sys.stdout
    recalls = []
    for t in range(args.seeds):
        w_seed, s_seed = trial_seeds(seed, t)
        weights = init_weights(dims, w_seed)
        stub = vision_stub(dims, s_seed, planted.count, planted.gain)
        res = run_csp(weights, stub, config, make_rng(config_rng_seed(seed, config, t)), masks)
        recall = planted_recall(stub.planted, res.retained)
        recalls.append(recall)
        if args.seeds == 1:
            for line in emit_report(res.trace, "jsonl").splitlines():
                out.write(json.dumps({"record": "layer", **json.loads(line)}) + "\n")
        out.write(
            json.dumps(
                {
                    "record": "run",
                    "trial": t,
                    "seed": seed,
                    "config": list(config.as_tuple()),
                    "strategy": config.strategy.label,
                    "clustered": res.clustered.indices.tolist(),
                    "retained": res.retained.indices.tolist(),
                    "planted": sorted(stub.planted),
                    "recall": float(f"{recall:.6g}"),
                }
            )
            + "\n"
        )
    if args.seeds > 1:
        mean = sum(recalls) / len(recalls)
        out.write(json.dumps({"record": "aggregate", "seeds": args.seeds, "mean_recall": float(f"{mean:.6g}")}) + "\n")
    return EXIT_OK


def _planted_arg(text: str) -> PlantedSpec:
    try:
        return parse_planted(text)
    except ParseError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from None


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lvlm-csp", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    a = sub.add_parser("analyze", help="cost report for one schedule")
    a.add_argument("--model", default="7b-224", help="preset (7b-224, 7b-336, 13b-224, toy) or dims string")
    a.add_argument("--config", required=True, help="Lc,Nc,Ls,Np")
    a.add_argument("--strategy", type=_strategy, default=ClusterStrategy.UNIFORM)
    a.add_argument("--calibrate", type=float, metavar="TFLOPS", help="recalibrate text-token overhead to this baseline")
    a.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    a.set_defaults(func=cmd_analyze)

    r = sub.add_parser("reproduce", help="compare against bundled table values")
    r.add_argument("--table", choices=available_tables(), default="6")
    r.add_argument("--out", help="write CSV here instead of stdout")
    r.set_defaults(func=cmd_reproduce)

    pl = sub.add_parser("plan", help="enumerate schedules under a budget")
    pl.add_argument("--budget-navg", type=Fraction, help="max average image tokens per layer")
    pl.add_argument("--budget-tflops", type=float, help="max TFLOPs")
    pl.add_argument("--grid", help="grid file (key = value lists or config lines)")
    pl.add_argument("--model", default="7b-224")
    pl.add_argument("--score-seeds", type=int, default=0, help="score feasible configs by planted-token recall")
    pl.add_argument("--planted", type=_planted_arg, default=PlantedSpec())
    pl.add_argument("--rank-by", choices=("cost", "score"), default="cost")
    pl.add_argument("--seed", type=int)
    pl.add_argument("--workers", type=int, default=1)
    pl.add_argument("--format", choices=("csv", "jsonl"), default="csv")
    pl.set_defaults(func=cmd_plan)

    s = sub.add_parser("simulate", help="run the schedule on the toy model")
    s.add_argument("--seed", type=int, help="base seed (default: $CSP_SEED or 0)")
    s.add_argument("--seeds", type=int, default=1, help="number of trials")
    s.add_argument("--dims", default="toy", help="preset or dims string")
    s.add_argument("--config", default="2,16,2,8", help="Lc,Nc,Ls,Np or overrides like Nc=N,Np=N")
    s.add_argument("--strategy", type=_strategy, default=ClusterStrategy.UNIFORM)
    s.add_argument("--planted", type=_planted_arg, default=PlantedSpec())
    s.add_argument("--masks", help="CSPMASK file (SegFirst only)")
    s.add_argument("--run-config", help="key = value run file; replaces --dims/--config/--strategy/--planted")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        if getattr(args, "seeds", 1) < 1:
            raise UsageError("--seeds must be >= 1")
        return args.func(args)
    except (UsageError, ParseError) as exc:
        print(f"lvlm-csp {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
