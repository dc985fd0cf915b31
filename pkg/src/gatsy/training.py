"""Triplet mining, losses, optimizer, schedule, and the training loop.

Embeddings are pulled together along graph edges and pushed apart
elsewhere via a margin hinge on Euclidean distances; negatives are drawn
with inverse-density weighting so that informative (unusually close)
non-neighbors are seen often enough.  The supervised regime adds a
cross-entropy term from the genre head.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .autodiff import (
    NonFiniteError,
    Tensor,
    euclidean_distance,
    gather_rows,
    gradients,
    log_softmax,
    relu,
    take_per_row,
)
from .graph import UNRESOLVED, graph_restricted_to, neighbor_sample
from .models import ModelConfig, build_model, forward_embed, forward_supervised

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8

NEGATIVE_CLIP = 1.4     # cap on inverse-density sampling weights


class TrainingError(RuntimeError):
    """Aborted training run; carries the last good state when available."""

    def __init__(self, message, last_params=None, log=None,
                 completed_epochs: int = 0):
        super().__init__(message)
        self.last_params = last_params
        self.log = log or []
        self.completed_epochs = completed_epochs


@dataclass
class TrainConfig:
    lr: float = 6e-5
    weight_decay: float = 0.01
    epochs: int = 50
    margin: float = 0.2
    batch_size: int = 256
    fanouts: tuple = (20, 20)
    seed: int = 0
    positives_from_full_neighborhood: bool = False
    eval_k: int = 200

    def __post_init__(self):
        if self.lr <= 0:
            raise ValueError("lr must be positive")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")

    @classmethod
    def supervised(cls, **kw) -> "TrainConfig":
        kw.setdefault("weight_decay", 0.0)
        kw.setdefault("epochs", 20)
        return cls(**kw)


@dataclass
class TripletBatch:
    anchors: np.ndarray
    positives: np.ndarray
    negatives: np.ndarray

    def __len__(self) -> int:
        return self.anchors.size

    @classmethod
    def empty(cls) -> "TripletBatch":
        z = np.empty(0, dtype=np.int64)
        return cls(z, z.copy(), z.copy())


@dataclass
class Dataset:
    graph: object
    features: object
    split: object
    labels: object = None


# -- distance-weighted negative sampling -------------------------------


def log_distance_density(d, dim: int):
    """Log density of the distance between two uniform points on the unit
    sphere in ``dim`` dimensions, supported on [0, 2]."""
    if dim < 3:
        raise ValueError("density formula needs dim >= 3")
    d = np.asarray(d, dtype=np.float64)
    log_z = ((dim - 2) * math.log(2.0)
             + 2 * math.lgamma((dim - 1) / 2.0)
             - math.lgamma(dim - 1.0))
    with np.errstate(divide="ignore", invalid="ignore"):
        term = ((dim - 2) * np.log(d)
                + ((dim - 3) / 2.0) * np.log1p(-np.square(d) / 4.0))
    return np.where((d <= 0.0) | (d >= 2.0), -np.inf, term - log_z)


def negative_weight(d, dim: int, clip: float = NEGATIVE_CLIP):
    """Sampling weight min(clip, 1/q(d)); endpoint distances hit the cap."""
    return np.exp(np.minimum(math.log(clip), -log_distance_density(d, dim)))


def sample_triplets(embeddings, batch_graph, seed: int,
                    positive_candidates=None) -> TripletBatch:
    """Mine one triplet per eligible anchor within a batch.

    Positives are drawn uniformly from the anchor's neighbor candidates
    (``positive_candidates``, defaulting to the batch graph's neighbor
    lists).  Negatives are non-neighbor batch members drawn with
    inverse-density weights over the batch's min-max-normalized pairwise
    distances.  Anchors with no eligible positive or negative are skipped;
    an all-skipped batch comes back empty.
    """
    z = embeddings.data if isinstance(embeddings, Tensor) else np.asarray(embeddings)
    n = batch_graph.n
    if z.shape[0] != n:
        raise ValueError(f"{z.shape[0]} embeddings for {n} batch nodes")
    rng = np.random.default_rng(seed)

    diff = z[:, None, :] - z[None, :, :]
    dist = np.sqrt(np.square(diff).sum(axis=2))
    off = ~np.eye(n, dtype=bool)
    lo, hi = dist[off].min(), dist[off].max()
    if hi > lo:
        norm = 2.0 * (dist - lo) / (hi - lo)
    else:
        norm = np.ones_like(dist)
    if z.shape[1] >= 3:
        weights = negative_weight(norm, dim=z.shape[1])
    else:
        weights = np.ones_like(dist)

    anchors, positives, negatives = [], [], []
    node_range = np.arange(n)
    for a in range(n):
        if positive_candidates is None:
            pos_pool = batch_graph.neighbors(a)
        else:
            pos_pool = np.asarray(positive_candidates[a], dtype=np.int64)
        neg_mask = np.ones(n, dtype=bool)
        neg_mask[a] = False
        neg_mask[batch_graph.neighbors(a)] = False
        neg_pool = node_range[neg_mask]
        if pos_pool.size == 0 or neg_pool.size == 0:
            continue
        p = int(rng.choice(pos_pool))
        w = weights[a, neg_pool]
        total = w.sum()
        prob = w / total if total > 0 else None
        nidx = int(rng.choice(neg_pool, p=prob))
        anchors.append(a)
        positives.append(p)
        negatives.append(nidx)
    if not anchors:
        return TripletBatch.empty()
    return TripletBatch(np.array(anchors, dtype=np.int64),
                        np.array(positives, dtype=np.int64),
                        np.array(negatives, dtype=np.int64))


# -- losses ------------------------------------------------------------


def triplet_loss(z_a, z_p, z_n, margin: float):
    """Hinge on the positive/negative distance gap.

    1-D inputs give the loss of a single triplet; 2-D inputs give the sum
    over row-aligned triplets.
    """
    gap = (euclidean_distance(z_a, z_p) - euclidean_distance(z_a, z_n)
           + margin)
    hinged = relu(gap)
    return hinged if hinged.ndim == 0 else hinged.sum()


def cross_entropy(scores, labels) -> Tensor:
    """Mean negative log-likelihood of the true classes."""
    labels = np.asarray(labels, dtype=np.int64)
    return -take_per_row(log_softmax(scores), labels).mean()


def combined_loss(z, scores, labels, triplets: TripletBatch, margin: float):
    """Triplet hinge sum, plus mean cross-entropy in supervised mode.

    Pass ``scores=None`` (and ``labels=None``) for the unsupervised
    objective.
    """
    if len(triplets):
        loss = triplet_loss(gather_rows(z, triplets.anchors),
                            gather_rows(z, triplets.positives),
                            gather_rows(z, triplets.negatives), margin)
    else:
        loss = Tensor(0.0)
    if scores is not None:
        if labels is None:
            raise ValueError("supervised loss needs labels")
        labels = np.asarray(labels, dtype=np.int64)
        if (labels == UNRESOLVED).any():
            raise ValueError("supervised loss found unresolved labels")
        loss = loss + cross_entropy(scores, labels)
    return loss


# -- optimizer and schedule --------------------------------------------


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0


def init_adam(params) -> AdamState:
    return AdamState(m=[np.zeros_like(p.data) for p in params],
                     v=[np.zeros_like(p.data) for p in params])


def adam_step(params, grads, state: AdamState, lr: float,
              weight_decay: float = 0.0) -> None:
    """One Adam update with decoupled weight decay, in place."""
    for g in grads:
        if not np.all(np.isfinite(g)):
            raise TrainingError("non-finite gradient; aborting step")
    state.t += 1
    bc1 = 1.0 - ADAM_BETA1 ** state.t
    bc2 = 1.0 - ADAM_BETA2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= ADAM_BETA1
        m += (1 - ADAM_BETA1) * g
        v *= ADAM_BETA2
        v += (1 - ADAM_BETA2) * np.square(g)
        if weight_decay:
            p.data *= 1.0 - lr * weight_decay
        p.data -= lr * (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)


def cosine_lr(epoch: int, total_epochs: int, lr0: float) -> float:
    if not 0 <= epoch < total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {total_epochs})")
    return lr0 * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))


# -- training loop -----------------------------------------------------


def _snapshot(params):
    copy = build_model(params.config, seed=0)
    for name, t in params.tensors.items():
        copy.tensors[name].data = t.data.copy()
    for name, arr in params.running.items():
        copy.running[name][...] = arr
    return copy


def _sampled_positive_candidates(sample, batch):
    """Per-anchor in-batch nodes that were drawn as its sampled neighbors."""
    pos_in_batch = {int(node): i for i, node in enumerate(batch)}
    last = sample.layers[-1]
    candidates = []
    for k in range(last.n_out):
        lo, hi = last.dst_indptr[k], last.dst_indptr[k + 1]
        srcs = last.input_nodes[last.src_index[lo:hi]]
        cands = [pos_in_batch[int(s)] for s in srcs
                 if int(s) in pos_in_batch and int(s) != int(batch[k])]
        candidates.append(np.array(sorted(set(cands)), dtype=np.int64))
    return candidates


def train(dataset: Dataset, config: TrainConfig,
          model_config: ModelConfig, log_path: str = None):
    """Train a model on the dataset's train split.

    Per epoch: shuffle the train nodes into batches, neighbor-sample,
    forward in train mode, mine triplets, step Adam under the cosine
    schedule, then log mean per-triplet loss and validation ranking
    quality.  Deterministic per ``config.seed``.  On divergence raises
    TrainingError carrying the last completed epoch's parameters.
    """
    from .evaluation import evaluate_embedding, f1_genre, predict_genres

    supervised = model_config.genre_head
    if supervised and dataset.labels is None:
        raise TrainingError("supervised training needs labels")
    if model_config.gc_layers and len(config.fanouts) != model_config.gc_layers:
        raise TrainingError(
            f"{len(config.fanouts)} fanouts for a model with "
            f"{model_config.gc_layers} graph layers")

    sub, old_train = graph_restricted_to(dataset.graph, dataset.split.train)
    feats = dataset.features.data[old_train]
    labels = (dataset.labels.labels[old_train] if supervised else None)
    if supervised and (labels == UNRESOLVED).any():
        raise TrainingError("train split contains unresolved labels")

    params = build_model(model_config, seed=config.seed)
    opt = init_adam(params.trainable())
    master = np.random.default_rng(config.seed)
    log = []
    snapshot = _snapshot(params)

    for epoch in range(config.epochs):
        lr_t = cosine_lr(epoch, config.epochs, config.lr)
        order = master.permutation(sub.n)
        losses, skipped = [], 0
        try:
            for start in range(0, sub.n, config.batch_size):
                batch = np.sort(order[start:start + config.batch_size])
                if batch.size < 2:
                    skipped += 1
                    continue
                step_seed = int(master.integers(2 ** 63))
                mine_seed = int(master.integers(2 ** 63))
                if model_config.gc_layers:
                    sample = neighbor_sample(sub, batch, config.fanouts,
                                             seed=step_seed)
                    x = feats[sample.input_nodes]
                else:
                    # row-independent network: the batch alone suffices
                    sample = None
                    x = feats[batch]
                if supervised:
                    emb, scores = forward_supervised(x, sample, params,
                                                     mode="train")
                else:
                    emb = forward_embed(x, sample, params, mode="train")
                    scores = None
                batch_graph, _ = graph_restricted_to(sub, batch)
                if sample is None or config.positives_from_full_neighborhood:
                    candidates = None
                else:
                    candidates = _sampled_positive_candidates(sample, batch)
                triplets = sample_triplets(emb, batch_graph, seed=mine_seed,
                                           positive_candidates=candidates)
                if len(triplets) == 0 and not supervised:
                    skipped += 1
                    continue
                loss = combined_loss(
                    emb, scores,
                    labels[batch] if supervised else None,
                    triplets, config.margin)
                grads = gradients(loss, params.trainable())
                adam_step(params.trainable(), grads, opt, lr_t,
                          config.weight_decay)
                losses.append(float(loss.data) / max(len(triplets), 1))
        except (NonFiniteError, TrainingError) as exc:
            raise TrainingError(
                f"diverged in epoch {epoch}: {exc}", last_params=snapshot,
                log=log, completed_epochs=epoch) from exc

        record = {
            "epoch": epoch,
            "lr": lr_t,
            "mean_loss": float(np.mean(losses)) if losses else 0.0,
            "skipped_steps": skipped,
        }
        if dataset.split.validation.size:
            result = evaluate_embedding(params, dataset, dataset.split,
                                        k=config.eval_k, pool="validation")
            record["val_ndcg"] = result.mean_ndcg
            if supervised:
                preds, truth = predict_genres(params, dataset, dataset.split,
                                              pool="validation")
                if preds.size:
                    record["val_f1"] = f1_genre(
                        preds, truth, dataset.labels.num_classes)
        log.append(record)
        snapshot = _snapshot(params)
        if log_path:
            with open(log_path, "w", encoding="utf-8") as fh:
                for rec in log:
                    fh.write(json.dumps(rec, sort_keys=True) + "\n")

    return params, log
