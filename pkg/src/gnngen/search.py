"""Hyperparameter search, full-batch target training, and checkpoint harvest.

The coarse and grid axis sets mirror the published search spaces; search
enumeration is the cartesian product in axis-declaration order, and a config
is scored by the best validation accuracy it reaches over its seeds/epochs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import zoo
from .checkpoint import Checkpoint
from .graphs import Graph
from .optim import TrainingDivergence, make_optimizer
from .rng import Rng
from .tensor import cross_entropy_masked
from .zoo import GnnConfig, GraphContext, ParamLayout


@dataclass(frozen=True)
class SearchSpace:
    """Named axes; enumeration is lexicographic by declaration order."""

    axes: tuple  # tuple of (name, tuple(values))

    @classmethod
    def from_axes(cls, axes: list[tuple[str, list]]) -> "SearchSpace":
        return cls(tuple((name, tuple(values)) for name, values in axes))

    def size(self) -> int:
        return math.prod(len(v) for _, v in self.axes)

    def configs(self, arch: str) -> list[GnnConfig]:
        names = [name for name, _ in self.axes]
        out = []
        for combo in product(*(values for _, values in self.axes)):
            kw = dict(zip(names, combo))
            out.append(GnnConfig(arch=arch, **kw))
        return out


_COMMON_COARSE = [
    ("optimizer", ["sgd", "adam"]),
    ("learning_rate", [1.0, 0.5, 0.1, 0.05, 0.005]),
    ("weight_decay", [5e-3, 5e-4]),
    ("dropout", [0.5]),
]

_COMMON_GRID = [
    ("optimizer", ["sgd", "adam"]),
    ("learning_rate", [1.0, 0.5, 0.1, 0.05, 0.01, 0.005]),
    ("weight_decay", [1e-3, 5e-3, 1e-4, 5e-4]),
    ("dropout", [0.1, 0.5, 0.9]),
]

_ARCH_COARSE = {
    "GCN1": [],
    "GCN2": [("hidden", [16, 64])],
    "APPNP": [("alpha", [0.1, 0.5, 0.9])],
    "SAGE": [("hidden", [16, 64])],
    "ChebNet": [("hidden", [16, 64]), ("cheb_terms", [2])],
    "GIN": [("hidden", [16, 64])],
    "GAT": [("hidden", [16, 64]), ("heads", [4, 8])],
    "H2GCN": [("hidden", [16, 64])],
}

_ARCH_GRID = {
    "GCN1": [],
    "GCN2": [("hidden", [16, 32, 64])],
    "APPNP": [("alpha", [0.1, 0.3, 0.5, 0.7, 0.9])],
    "SAGE": [("hidden", [16, 32, 64])],
    "ChebNet": [("hidden", [16, 32, 64]), ("cheb_terms", [1, 2, 3])],
    "GIN": [("hidden", [16, 32, 64])],
    "GAT": [("hidden", [16, 32, 64]), ("heads", [4, 6, 8])],
    "H2GCN": [("hidden", [16, 32, 64])],
}


def coarse_space(arch: str) -> SearchSpace:
    return SearchSpace.from_axes(_COMMON_COARSE + _ARCH_COARSE[arch])


def grid_space(arch: str) -> SearchSpace:
    return SearchSpace.from_axes(_COMMON_GRID + _ARCH_GRID[arch])


@dataclass
class TrainRun:
    config: GnnConfig
    seed: int
    train_loss: list = field(default_factory=list)
    val_accuracy: list = field(default_factory=list)
    failed: bool = False

    @property
    def best_val(self) -> float:
        return max(self.val_accuracy) if self.val_accuracy else 0.0

    @property
    def epochs(self) -> int:
        return len(self.train_loss)


@dataclass
class CheckpointSet:
    checkpoints: list  # list[Checkpoint], seed-major / epoch-minor order
    config: GnnConfig
    layout: ParamLayout
    warmup_cutoff: int

    def __len__(self):
        return len(self.checkpoints)

    def matrix(self) -> np.ndarray:
        return np.stack([c.values for c in self.checkpoints])


class EmptyCorpusError(RuntimeError):
    pass


def train_target(
    config: GnnConfig,
    graph: Graph,
    seed: int,
    epochs: int = 200,
    collect_after: int | None = None,
    ctx: GraphContext | None = None,
) -> tuple[TrainRun, CheckpointSet]:
    """Full-batch training; checkpoints recorded for epochs > collect_after."""
    if collect_after is None:
        collect_after = epochs  # collect nothing
    if collect_after >= epochs and collect_after != epochs:
        raise ValueError("collect_after must be < epochs to collect anything")
    if ctx is None:
        ctx = GraphContext(graph)
    layout = zoo.layout_for(config.arch, graph.d_f, graph.d_c, config)
    rng = Rng(seed)
    params = zoo.init_params(layout, rng)
    opt = make_optimizer(
        config.optimizer, config.learning_rate, config.weight_decay, config.momentum
    )
    run = TrainRun(config, seed)
    checkpoints: list[Checkpoint] = []
    for epoch in range(1, epochs + 1):
        logits = zoo.forward(config, ctx, params, training=True, rng=rng)
        loss = cross_entropy_masked(logits, graph.labels, graph.train_mask)
        if not np.isfinite(loss.data):
            run.failed = True
            break
        opt.zero_grad(params)
        try:
            loss.backward()
            opt.step(params)
        except TrainingDivergence:
            run.failed = True
            break
        eval_logits = zoo.forward(config, ctx, params, training=False)
        val_acc = zoo.accuracy(eval_logits, graph, graph.val_mask)
        run.train_loss.append(float(loss.data))
        run.val_accuracy.append(val_acc)
        if epoch > collect_after:
            checkpoints.append(
                Checkpoint(
                    zoo.vectorize(params, layout),
                    layout,
                    meta={
                        "arch": config.arch,
                        "config_digest": config.digest(),
                        "seed": seed,
                        "epoch": epoch,
                        "val_accuracy": val_acc,
                    },
                )
            )
    return run, CheckpointSet(checkpoints, config, layout, collect_after)


@dataclass
class SearchResult:
    config: GnnConfig
    score: float  # best val accuracy over seeds and epochs; 0.0 if failed
    runs: list = field(default_factory=list)


def run_search(
    space: SearchSpace,
    graph: Graph,
    arch: str,
    epochs: int = 200,
    seeds: tuple = (0,),
) -> list[SearchResult]:
    """Train every config with every seed; rank by best val accuracy,
    ties broken by enumeration order."""
    configs = space.configs(arch)
    if not configs:
        raise ValueError("empty search space")
    ctx = GraphContext(graph)
    results = []
    for config in configs:
        runs = []
        best = 0.0
        failed_all = True
        for seed in seeds:
            run, _ = train_target(config, graph, seed, epochs=epochs, ctx=ctx)
            runs.append(run)
            if not run.failed:
                failed_all = False
                best = max(best, run.best_val)
        results.append(SearchResult(config, 0.0 if failed_all else best, runs))
    order = sorted(range(len(results)), key=lambda i: (-results[i].score, i))
    return [results[i] for i in order]


def collect_corpus(
    best_config: GnnConfig,
    graph: Graph,
    seeds: tuple,
    epochs: int = 200,
    collect_after: int = 150,
) -> CheckpointSet:
    """Merged checkpoint corpus across seeds, seed-major / epoch-minor order."""
    ctx = GraphContext(graph)
    merged: list[Checkpoint] = []
    layout = None
    for seed in seeds:
        run, ckpts = train_target(
            best_config, graph, seed, epochs=epochs, collect_after=collect_after, ctx=ctx
        )
        if run.failed:
            continue
        layout = ckpts.layout
        merged.extend(ckpts.checkpoints)
    if not merged:
        raise EmptyCorpusError("all seeds failed; empty checkpoint corpus")
    return CheckpointSet(merged, best_config, layout, collect_after)
