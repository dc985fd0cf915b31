"""Ranking evaluation (nDCG@K), genre f1, and model comparison reports."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np

from .autodiff import no_grad
from .graph import graph_restricted_to
from .models import count_params, forward_embed, forward_supervised


def ndcg_at_k(ranked_ids, true_neighbors, k: int) -> float:
    """Normalized discounted cumulative gain of a ranking.

    Binary relevance: an item is relevant iff it is a true neighbor.  The
    ideal ranking places every true neighbor first, truncated at
    min(k, #true neighbors).  An artist with no true neighbors scores 0.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    true_set = set(int(t) for t in true_neighbors)
    if not true_set:
        return 0.0
    dcg = 0.0
    for rank, item in enumerate(ranked_ids[:k], start=1):
        if int(item) in true_set:
            dcg += 1.0 / math.log2(rank + 1)
    ideal = sum(1.0 / math.log2(rank + 1)
                for rank in range(1, min(k, len(true_set)) + 1))
    return dcg / ideal


def rank_by_distance(z: np.ndarray, query: int) -> np.ndarray:
    """All other rows ordered by Euclidean distance to the query row.

    Ties are broken by node index (stable sort), so rankings are
    reproducible bit-for-bit.
    """
    d = np.sqrt(((z - z[query]) ** 2).sum(axis=1))
    order = np.argsort(d, kind="stable")
    return order[order != query]


@dataclass
class EvalResult:
    mean_ndcg: float
    query_nodes: np.ndarray      # pool-local indices that were scored
    scores: np.ndarray           # ndcg per scored query
    skipped: int                 # queries with no true neighbor in the pool
    k: int


def ndcg_of_embedding(z: np.ndarray, graph, query_positions, k: int) -> EvalResult:
    """Score queries against a pool graph given final embeddings.

    Queries whose pool neighborhood is empty are skipped (counted, not
    averaged as zeros).
    """
    k = min(k, graph.n - 1)
    scored, scores = [], []
    skipped = 0
    for q in np.asarray(query_positions, dtype=np.int64):
        true = graph.neighbors(int(q))
        if true.size == 0:
            skipped += 1
            continue
        ranked = rank_by_distance(z, int(q))
        scored.append(int(q))
        scores.append(ndcg_at_k(ranked, true, k))
    mean = float(np.mean(scores)) if scores else 0.0
    return EvalResult(mean_ndcg=mean,
                      query_nodes=np.array(scored, dtype=np.int64),
                      scores=np.array(scores), skipped=skipped, k=k)


def _pool_nodes(split, pool: str):
    if pool == "test":
        return np.union1d(split.train, split.test), split.test
    if pool == "validation":
        return np.union1d(split.train, split.validation), split.validation
    raise ValueError(f"unknown pool {pool!r}")


def evaluate_embedding(params, dataset, split, k: int = 200,
                       pool: str = "test") -> EvalResult:
    """Full ranking protocol for a trained model.

    Embeds the train nodes together with the held-out pool (their mutual
    connections included), then ranks every pool member by distance for
    each held-out artist and scores the ranking against the adjacency.
    """
    nodes, queries = _pool_nodes(split, pool)
    sub, old_of_new = graph_restricted_to(dataset.graph, nodes)
    x = dataset.features.data[old_of_new]
    with no_grad():
        z = forward_embed(x, sub, params, mode="eval").data
    query_positions = np.flatnonzero(np.isin(old_of_new, queries))
    return ndcg_of_embedding(z, sub, query_positions, k)


def predict_genres(params, dataset, split, pool: str = "test"):
    """Head predictions for the held-out artists in the pool subgraph."""
    nodes, queries = _pool_nodes(split, pool)
    sub, old_of_new = graph_restricted_to(dataset.graph, nodes)
    x = dataset.features.data[old_of_new]
    with no_grad():
        _, scores = forward_supervised(x, sub, params, mode="eval")
    query_positions = np.flatnonzero(np.isin(old_of_new, queries))
    preds = scores.data.argmax(axis=1)[query_positions]
    truth = dataset.labels.labels[old_of_new[query_positions]]
    return preds, truth


def f1_scores(predictions, labels, num_classes: int = None):
    """(macro, micro) f1 from a hand-built confusion matrix.

    A class with no predictions and no occurrences contributes f1 = 0 to
    the macro average only if it appears in either vector's class range;
    ``num_classes`` pins the range explicitly.
    """
    predictions = np.asarray(predictions, dtype=np.int64)
    labels = np.asarray(labels, dtype=np.int64)
    if predictions.size == 0 or predictions.shape != labels.shape:
        raise ValueError("predictions and labels must be equal-length and "
                         "non-empty")
    if num_classes is None:
        num_classes = int(max(predictions.max(), labels.max())) + 1
    f1s = []
    for c in range(num_classes):
        tp = int(np.sum((predictions == c) & (labels == c)))
        fp = int(np.sum((predictions == c) & (labels != c)))
        fn = int(np.sum((predictions != c) & (labels == c)))
        f1s.append(0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn))
    macro = float(np.mean(f1s))
    micro = float(np.mean(predictions == labels))  # single-label micro f1
    return macro, micro


def f1_genre(predictions, labels, num_classes: int = None) -> float:
    """Macro-averaged f1 (the class-imbalance-robust headline score)."""
    macro, _ = f1_scores(predictions, labels, num_classes)
    return macro


# -- model comparison --------------------------------------------------


@dataclass
class EvalReport:
    name: str
    ndcg_mean: float
    ndcg_std: float
    param_count: int
    n_seeds: int
    per_seed: list = field(default_factory=list)
    f1_mean: float = None
    f1_std: float = None
    f1_per_seed: list = field(default_factory=list)
    failed_seeds: list = field(default_factory=list)


def compare_models(configs, dataset, n_seeds: int = 10, k: int = 200):
    """Train and evaluate each named configuration across seeds.

    ``configs`` maps a display name to (ModelConfig, TrainConfig).  A run
    that diverges is recorded in ``failed_seeds`` and excluded from the
    statistics.
    """
    from dataclasses import replace

    from .models import build_model
    from .training import TrainingError, train

    reports = []
    for name, (model_config, train_config) in configs.items():
        ndcgs, f1s, failed = [], [], []
        for seed in range(n_seeds):
            cfg = replace(train_config, seed=seed)
            try:
                params, _ = train(dataset, cfg, model_config)
            except TrainingError:
                failed.append(seed)
                continue
            result = evaluate_embedding(params, dataset, dataset.split, k=k)
            ndcgs.append(result.mean_ndcg)
            if model_config.genre_head and dataset.labels is not None:
                preds, truth = predict_genres(params, dataset, dataset.split)
                f1s.append(f1_genre(preds, truth,
                                    dataset.labels.num_classes))
        report = EvalReport(
            name=name,
            ndcg_mean=float(np.mean(ndcgs)) if ndcgs else float("nan"),
            ndcg_std=float(np.std(ndcgs)) if ndcgs else float("nan"),
            param_count=count_params(build_model(model_config, seed=0)),
            n_seeds=n_seeds,
            per_seed=ndcgs,
            failed_seeds=failed,
        )
        if f1s:
            report.f1_mean = float(np.mean(f1s))
            report.f1_std = float(np.std(f1s))
            report.f1_per_seed = f1s
        reports.append(report)
    return reports


def report_to_json(reports) -> str:
    """Stable JSON rendering of comparison reports."""
    from dataclasses import asdict

    return json.dumps([asdict(r) for r in reports], sort_keys=True, indent=2)
