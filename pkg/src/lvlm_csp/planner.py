"""Schedule search: filter a knob grid by a compute budget, then score survivors.

The proxy score is planted-token recall on the toy model. It measures whether
the schedule keeps the tokens that carry signal; it says nothing about
segmentation accuracy of a real LVLM.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from fractions import Fraction

import numpy as np

from .core_math import derive_seed, make_rng
from .cost_model import MAC_SCALE, CostReport, staged_flops
from .model import ModelDims, init_weights, vision_stub
from .pipeline import CspConfig, planted_recall, run_csp
from .selection import ClusterStrategy, InstanceMaskSet

DEFAULT_L_C = (5, 6, 7, 8, 9, 10, 11, 12)
DEFAULT_N_C = (16, 32, 64, 80, 96, 128)
DEFAULT_L_S = (2, 3, 4, 5, 6, 7, 8, 9, 10, 11)
DEFAULT_N_P = (2, 4, 8, 16, 32)


@dataclass(frozen=True)
class Grid:
    """Candidate knob values.

    ``configs``, when given, is an explicit list and the per-knob axes are
    ignored; otherwise the cartesian product of the axes is used and
    combinations that do not fit the model are skipped.
    """

    L_c: tuple[int, ...] = DEFAULT_L_C
    N_c: tuple[int, ...] = DEFAULT_N_C
    L_s: tuple[int, ...] = DEFAULT_L_S
    N_p: tuple[int, ...] = DEFAULT_N_P
    strategies: tuple[ClusterStrategy, ...] = (ClusterStrategy.UNIFORM,)
    configs: tuple[tuple[int, int, int, int], ...] | None = None

    def expand(self, dims: ModelDims) -> list[CspConfig]:
        out = []
        if self.configs is not None:
            for strategy in self.strategies:
                for knobs in self.configs:
                    cfg = CspConfig(*knobs, strategy=strategy)
                    cfg.validate(dims.L_total, dims.N)
                    out.append(cfg)
            return out
        for strategy, lc, nc, ls, np_ in itertools.product(self.strategies, self.L_c, self.N_c, self.L_s, self.N_p):
            cfg = CspConfig(lc, nc, ls, np_, strategy)
            try:
                cfg.validate(dims.L_total, dims.N)
            except ValueError:
                continue
            out.append(cfg)
        return out


@dataclass(frozen=True)
class Budget:
    max_flops: float | None = None
    max_n_avg: Fraction | None = None
    grid: Grid = field(default_factory=Grid)

    def __post_init__(self):
        if self.max_flops is None and self.max_n_avg is None:
            raise ValueError("a budget needs max_flops or max_n_avg")
        if self.max_n_avg is not None:
            object.__setattr__(self, "max_n_avg", Fraction(self.max_n_avg))

    def admits(self, cost: CostReport) -> bool:
        if self.max_flops is not None and cost.flops_total > self.max_flops:
            return False
        if self.max_n_avg is not None and cost.N_avg_exact > self.max_n_avg:
            return False
        return True


@dataclass(frozen=True)
class PlantedSpec:
    count: int = 4
    gain: float = 5.0


@dataclass(frozen=True)
class PlanEntry:
    config: CspConfig
    cost: CostReport
    proxy_score: float | None = None


def _order_key(cfg: CspConfig) -> tuple:
    return (*cfg.as_tuple(), cfg.strategy.value)


def enumerate_plans(budget: Budget, dims: ModelDims, scale: float = MAC_SCALE) -> list[PlanEntry]:
    """Grid configs within budget, cheapest first, ties by larger N_avg."""
    entries = []
    for cfg in budget.grid.expand(dims):
        cost = staged_flops(cfg, dims, scale)
        if budget.admits(cost):
            entries.append(PlanEntry(cfg, cost))
    entries.sort(key=lambda e: (e.cost.mac_total, -e.cost.N_avg_exact, _order_key(e.config)))
    return entries


def trial_seeds(base_seed: int, trial: int) -> tuple[int, int]:
    """(weights seed, stub seed) for one trial; shared across configs for paired runs."""
    return derive_seed(base_seed, 0, trial), derive_seed(base_seed, 1, trial)


def config_rng_seed(base_seed: int, cfg: CspConfig, trial: int) -> int:
    strategy_id = list(ClusterStrategy).index(cfg.strategy)
    return derive_seed(base_seed, 2, *cfg.as_tuple(), strategy_id, trial)


def recall_trials(
    cfg: CspConfig,
    dims: ModelDims,
    seeds: int,
    planted: PlantedSpec,
    base_seed: int = 0,
    masks: InstanceMaskSet | None = None,
) -> np.ndarray:
    """Planted-token recall of ``cfg`` for each of ``seeds`` trials."""
    out = np.empty(seeds)
    for t in range(seeds):
        w_seed, s_seed = trial_seeds(base_seed, t)
        weights = init_weights(dims, w_seed)
        stub = vision_stub(dims, s_seed, planted.count, planted.gain)
        res = run_csp(weights, stub, cfg, make_rng(config_rng_seed(base_seed, cfg, t)), masks)
        out[t] = planted_recall(stub.planted, res.retained)
    return out


def _score_one(args) -> float:
    cfg, dims, seeds, planted, base_seed, masks = args
    return float(recall_trials(cfg, dims, seeds, planted, base_seed, masks).mean())


def score(
    entries: list[PlanEntry],
    dims: ModelDims,
    seeds: int,
    planted: PlantedSpec,
    base_seed: int = 0,
    masks: InstanceMaskSet | None = None,
    workers: int = 1,
) -> list[PlanEntry]:
    """Attach mean planted-token recall to each entry.

    ``dims`` is the (toy) model the trials run on; it must fit every config.
    Results do not depend on ``workers``.
    """
    jobs = [(e.config, dims, seeds, planted, base_seed, masks) for e in entries]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            scores = list(pool.map(_score_one, jobs))
    else:
        scores = [_score_one(j) for j in jobs]
    return [replace(e, proxy_score=s) for e, s in zip(entries, scores)]


def rank_by_score(entries: list[PlanEntry]) -> list[PlanEntry]:
    """Highest proxy score first; cost order breaks ties."""
    indexed = list(enumerate(entries))
    indexed.sort(key=lambda p: (-(p[1].proxy_score if p[1].proxy_score is not None else -1.0), p[0]))
    return [e for _, e in indexed]
