import numpy as np
import pytest

from gnngen.search import (
    EmptyCorpusError,
    SearchSpace,
    coarse_space,
    collect_corpus,
    grid_space,
    run_search,
    train_target,
)
from gnngen.zoo import ARCHS, GnnConfig


COARSE_SIZES = {
    "GCN1": 20,
    "GCN2": 40,
    "APPNP": 60,
    "SAGE": 40,
    "ChebNet": 40,
    "GIN": 40,
    "GAT": 80,
    "H2GCN": 40,
}

GRID_SIZES = {
    "GCN1": 144,
    "GCN2": 432,
    "APPNP": 720,
    "SAGE": 432,
    "ChebNet": 1296,
    "GIN": 432,
    "GAT": 1296,
    "H2GCN": 432,
}


@pytest.mark.parametrize("arch", ARCHS)
def test_space_sizes(arch):
    assert coarse_space(arch).size() == COARSE_SIZES[arch]
    assert grid_space(arch).size() == GRID_SIZES[arch]
    assert len(coarse_space(arch).configs(arch)) == COARSE_SIZES[arch]


def test_enumeration_order_lexicographic():
    space = SearchSpace.from_axes([("optimizer", ["sgd", "adam"]), ("learning_rate", [0.1, 0.01])])
    configs = space.configs("GCN1")
    combos = [(c.optimizer, c.learning_rate) for c in configs]
    assert combos == [("sgd", 0.1), ("sgd", 0.01), ("adam", 0.1), ("adam", 0.01)]


def test_empty_space_rejected(sbm_graph):
    space = SearchSpace.from_axes([("optimizer", [])])
    with pytest.raises(ValueError):
        run_search(space, sbm_graph, "GCN1", epochs=1)


def test_train_target_learns(sbm_graph):
    cfg = GnnConfig(arch="GCN2", optimizer="adam", learning_rate=0.01)
    run, ckpts = train_target(cfg, sbm_graph, seed=0, epochs=40)
    assert run.epochs == 40
    assert not run.failed
    assert run.train_loss[-1] < run.train_loss[0]
    assert run.best_val > 0.5  # easy homophilic SBM
    assert len(ckpts) == 0  # no collect_after -> nothing harvested


def test_train_target_collects_checkpoints(sbm_graph):
    cfg = GnnConfig(arch="GCN1", optimizer="adam", learning_rate=0.01)
    run, ckpts = train_target(cfg, sbm_graph, seed=0, epochs=20, collect_after=15)
    assert len(ckpts) == 5
    epochs = [c.meta["epoch"] for c in ckpts.checkpoints]
    assert epochs == [16, 17, 18, 19, 20]
    mat = ckpts.matrix()
    assert mat.shape == (5, ckpts.layout.total)
    # consecutive checkpoints differ (training is moving)
    assert not np.array_equal(mat[0], mat[-1])


def test_train_target_collect_after_validation(sbm_graph):
    cfg = GnnConfig(arch="GCN1")
    with pytest.raises(ValueError):
        train_target(cfg, sbm_graph, seed=0, epochs=10, collect_after=12)


def test_train_target_divergence_marks_failed(sbm_graph):
    # absurd sgd learning rate reliably blows up the loss
    cfg = GnnConfig(arch="GCN2", optimizer="sgd", learning_rate=1e8, weight_decay=0.0)
    run, ckpts = train_target(cfg, sbm_graph, seed=0, epochs=30, collect_after=1)
    assert run.failed
    assert run.epochs < 30


def test_run_search_ranks_by_val(sbm_graph):
    space = SearchSpace.from_axes(
        [("optimizer", ["adam"]), ("learning_rate", [0.01, 1e-6])]
    )
    results = run_search(space, sbm_graph, "GCN1", epochs=25)
    assert len(results) == 2
    assert results[0].score >= results[1].score
    assert results[0].config.learning_rate == 0.01


def test_run_search_deterministic(sbm_graph):
    space = SearchSpace.from_axes([("optimizer", ["adam"]), ("learning_rate", [0.05, 0.01])])
    a = run_search(space, sbm_graph, "GCN1", epochs=10)
    b = run_search(space, sbm_graph, "GCN1", epochs=10)
    assert [r.score for r in a] == [r.score for r in b]
    assert [r.config for r in a] == [r.config for r in b]


def test_collect_corpus_counts_and_order(sbm_graph):
    cfg = GnnConfig(arch="GCN1", optimizer="adam", learning_rate=0.01)
    corpus = collect_corpus(cfg, sbm_graph, seeds=(0, 1), epochs=12, collect_after=8)
    assert len(corpus) == 8  # 2 seeds x 4 checkpoints
    seeds = [c.meta["seed"] for c in corpus.checkpoints]
    assert seeds == [0, 0, 0, 0, 1, 1, 1, 1]  # seed-major, epoch-minor


def test_collect_corpus_all_failed(sbm_graph):
    cfg = GnnConfig(arch="GCN2", optimizer="sgd", learning_rate=1e12, weight_decay=0.0)
    with pytest.raises(EmptyCorpusError):
        collect_corpus(cfg, sbm_graph, seeds=(0,), epochs=30, collect_after=5)
