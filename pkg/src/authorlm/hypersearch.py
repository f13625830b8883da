"""Multi-resolution grid search over the neural LM hyperparameters.

Stage one lays a coarse geometric grid (three points per axis by
default) across the full ranges; stage two re-grids a hypercube of half
the log-span centered on the stage-one winner, clipped to the original
ranges.  Every evaluated point trains a model on identical data splits
and is scored by the validation perplexity of the returned (best
epoch) snapshot.  Points that diverge score infinity and the search
continues.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .corpus import EncodedCorpus
from .errors import DivergenceError
from .nnlm import NnlmConfig, TrainHistory, train

#: (config field, integer-valued) in a fixed evaluation order.
AXES = (
    ("emb_dim", True),
    ("hidden_dim", True),
    ("learning_rate", False),
    ("momentum", False),
    ("batch_size", True),
)


@dataclass(frozen=True)
class SearchSpace:
    """Per-axis (low, high) ranges plus grid geometry."""

    emb_dim: tuple[int, int] = (25, 200)
    hidden_dim: tuple[int, int] = (100, 800)
    learning_rate: tuple[float, float] = (0.05, 0.3)
    momentum: tuple[float, float] = (0.8, 0.99)
    batch_size: tuple[int, int] = (100, 400)
    points_per_axis: int = 3
    refine_factor: float = 0.5
    max_stages: int = 2

    def __post_init__(self):
        for name, _ in AXES:
            lo, hi = getattr(self, name)
            if not 0 < lo <= hi:
                raise ValueError(f"invalid range for {name}: ({lo}, {hi})")
        if self.points_per_axis < 1:
            raise ValueError("points_per_axis must be >= 1")
        if not 0 < self.refine_factor < 1:
            raise ValueError("refine_factor must be in (0, 1)")
        if self.max_stages < 1:
            raise ValueError("max_stages must be >= 1")

    def ranges(self) -> dict[str, tuple[float, float]]:
        return {name: tuple(map(float, getattr(self, name))) for name, _ in AXES}


@dataclass(frozen=True)
class SearchPoint:
    config: NnlmConfig
    valid_ppl: float
    stage: int
    wall_time_s: float


@dataclass
class SearchResult:
    best_config: NnlmConfig
    best_ppl: float
    trace: list[SearchPoint] = field(default_factory=list)

    def trace_csv(self) -> str:
        lines = [
            "stage,emb_dim,hidden_dim,learning_rate,momentum,batch_size,"
            "valid_ppl,wall_time_s"
        ]
        for p in self.trace:
            c = p.config
            lines.append(
                f"{p.stage},{c.emb_dim},{c.hidden_dim},{c.learning_rate!r},"
                f"{c.momentum!r},{c.batch_size},{p.valid_ppl!r},{p.wall_time_s:.3f}"
            )
        return "\n".join(lines) + "\n"


def _axis_points(lo: float, hi: float, n: int, integer: bool) -> list:
    """Geometric grid over [lo, hi]; integer axes round and deduplicate."""
    if lo == hi or n == 1:
        values = [math.sqrt(lo * hi)]
    else:
        values = list(np.geomspace(lo, hi, n))
    if integer:
        out = []
        for v in values:
            r = int(round(v))
            r = min(max(r, int(math.ceil(lo))), int(math.floor(hi)))
            if r not in out:
                out.append(r)
        return out
    return values


def _grid(ranges: dict[str, tuple[float, float]], n: int) -> list[dict]:
    per_axis = {
        name: _axis_points(*ranges[name], n, integer)
        for name, integer in AXES
    }
    points = [{}]
    for name, _ in AXES:
        points = [dict(p, **{name: v}) for p in points for v in per_axis[name]]
    return points


def _refine(
    ranges: dict[str, tuple[float, float]],
    center: dict[str, float],
    factor: float,
) -> dict[str, tuple[float, float]]:
    """Shrink each range's log-span by ``factor`` around the winner,
    clipped to the original bounds."""
    out = {}
    for name, _ in AXES:
        lo, hi = ranges[name]
        if lo == hi:
            out[name] = (lo, hi)
            continue
        half = factor * math.log(hi / lo) / 2.0
        c = float(center[name])
        new_lo = max(lo, c * math.exp(-half))
        new_hi = min(hi, c * math.exp(half))
        out[name] = (new_lo, new_hi)
    return out


def search(
    corpus: EncodedCorpus,
    space: SearchSpace,
    base_config: NnlmConfig,
    seed: int,
    train_fn: Callable[[EncodedCorpus, NnlmConfig], tuple[object, TrainHistory]] = train,
) -> SearchResult:
    """Two-stage coarse-to-fine search, deterministic in ``seed``.

    ``base_config`` supplies the non-searched fields (vocabulary size,
    window geometry, epochs, decay schedule); every evaluated point uses
    ``seed`` as its init seed so all trainings share data order
    conventions.  The trace records each distinct configuration once.
    """
    evaluated: dict[tuple, SearchPoint] = {}
    trace: list[SearchPoint] = []

    def key(cfg: NnlmConfig) -> tuple:
        return tuple(getattr(cfg, name) for name, _ in AXES)

    def evaluate(point: dict, stage: int) -> SearchPoint:
        cfg = replace(base_config, init_seed=seed, **point)
        k = key(cfg)
        if k in evaluated:
            return evaluated[k]
        start = time.perf_counter()
        try:
            _, history = train_fn(corpus, cfg)
            ppl = float(math.exp(history.valid_cost[history.best_epoch - 1]))
        except DivergenceError:
            ppl = float("inf")
        sp = SearchPoint(
            config=cfg,
            valid_ppl=ppl,
            stage=stage,
            wall_time_s=time.perf_counter() - start,
        )
        evaluated[k] = sp
        trace.append(sp)
        return sp

    ranges = space.ranges()
    stage_points = [evaluate(p, 1) for p in _grid(ranges, space.points_per_axis)]
    # min() is stable, so ties break to the earliest grid point
    best = min(stage_points, key=lambda p: p.valid_ppl)

    for stage in range(2, space.max_stages + 1):
        center = {name: getattr(best.config, name) for name, _ in AXES}
        ranges = _refine(ranges, center, space.refine_factor)
        stage_points = [evaluate(p, stage) for p in _grid(ranges, space.points_per_axis)]
        candidate = min(stage_points, key=lambda p: p.valid_ppl)
        if candidate.valid_ppl < best.valid_ppl:
            best = candidate

    overall = min(trace, key=lambda p: p.valid_ppl)
    return SearchResult(best_config=overall.config, best_ppl=overall.valid_ppl, trace=trace)
