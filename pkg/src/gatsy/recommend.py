"""Nearest-neighbor retrieval over frozen embeddings, what-if injection
of a fictitious artist, and a deterministic 2-D projection for plotting.

The store is an immutable snapshot: embeddings from one eval-mode
full-graph forward pass, artist identity columns, and a provenance hash
tying it to the exact checkpoint and dataset bytes it came from.
"""

from __future__ import annotations

import difflib
import hashlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .autodiff import no_grad
from .evaluation import rank_by_distance
from .graph import ArtistGraph, FeatureMatrix
from .models import forward_embed, load_checkpoint


class RecommendError(ValueError):
    """Lookup or injection request that cannot be satisfied; may carry
    candidate suggestions for the caller to surface."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = list(candidates)


class UnknownArtistError(RecommendError):
    """No artist matches the query at all (as opposed to a malformed or
    ambiguous request)."""


@dataclass(frozen=True)
class RecommendedArtist:
    artist_id: str
    name: str
    distance: float
    genre: str = None


@dataclass(frozen=True)
class Recommendation:
    query_id: str
    query_name: str
    items: tuple

    def __post_init__(self):
        distances = [item.distance for item in self.items]
        if any(b < a for a, b in zip(distances, distances[1:])):
            raise ValueError("recommendation distances must be non-decreasing")

    def __len__(self):
        return len(self.items)


@dataclass(frozen=True)
class EmbeddingStore:
    z: np.ndarray
    artist_ids: tuple
    names: tuple
    genres: tuple = None          # genre string per node, or None
    provenance: str = ""

    def __post_init__(self):
        if self.z.ndim != 2 or self.z.shape[0] != len(self.artist_ids):
            raise ValueError(
                f"{self.z.shape} embeddings for {len(self.artist_ids)} ids")
        if len(self.names) != len(self.artist_ids):
            raise ValueError("ids and names differ in length")
        if self.genres is not None and len(self.genres) != self.z.shape[0]:
            raise ValueError("genre column has the wrong length")
        self.z.setflags(write=False)

    @property
    def n(self) -> int:
        return self.z.shape[0]

    def genre_of(self, node: int):
        return None if self.genres is None else self.genres[node]


def _dataset_digest(dataset) -> bytes:
    h = hashlib.sha256()
    g = dataset.graph
    h.update(g.indptr.tobytes())
    h.update(g.indices.tobytes())
    h.update("\x00".join(g.artist_ids).encode("utf-8"))
    h.update("\x00".join(g.names).encode("utf-8"))
    h.update(np.ascontiguousarray(dataset.features.data).tobytes())
    if dataset.labels is not None:
        h.update("\x00".join(dataset.labels.vocabulary).encode("utf-8"))
        h.update(dataset.labels.labels.tobytes())
    return h.digest()


def build_store(ckpt_path, dataset) -> EmbeddingStore:
    """Embed the full graph in eval mode with a saved model.

    The provenance hash covers the checkpoint file bytes and the dataset
    content, so two stores agree exactly when both inputs do.
    """
    params = load_checkpoint(ckpt_path)
    m = dataset.features.data.shape[1]
    if params.config.input_dim != m:
        raise RecommendError(
            f"checkpoint expects {params.config.input_dim}-dimensional "
            f"features, dataset has {m}")
    with no_grad():
        z = forward_embed(dataset.features.data, dataset.graph, params,
                          mode="eval").data
    genres = None
    if dataset.labels is not None:
        genres = tuple(dataset.labels.genre_of(i)
                       for i in range(dataset.graph.n))
    digest = hashlib.sha256(Path(ckpt_path).read_bytes()
                            + _dataset_digest(dataset)).hexdigest()
    return EmbeddingStore(z=z.copy(), artist_ids=dataset.graph.artist_ids,
                          names=dataset.graph.names, genres=genres,
                          provenance=digest)


# -- lookup and retrieval ----------------------------------------------


def search_artists(store: EmbeddingStore, query: str):
    """Nodes whose id or name contains the query, case-insensitively."""
    needle = query.lower()
    return [i for i in range(store.n)
            if needle in store.artist_ids[i].lower()
            or needle in store.names[i].lower()]


def find_artist(store: EmbeddingStore, query: str) -> int:
    """Resolve an id or name to exactly one node.

    Exact id match wins; then case-insensitive exact name; then a unique
    substring match.  Anything else raises with suggestions.
    """
    if query in store.artist_ids:
        return store.artist_ids.index(query)
    lowered = query.lower()
    exact = [i for i, name in enumerate(store.names)
             if name.lower() == lowered]
    if len(exact) == 1:
        return exact[0]
    matches = exact or search_artists(store, query)
    if len(matches) == 1:
        return matches[0]
    if matches:
        names = [store.names[i] for i in matches]
        raise RecommendError(
            f"{query!r} is ambiguous: {', '.join(names[:8])}",
            candidates=names)
    close = difflib.get_close_matches(query, store.names, n=5, cutoff=0.5)
    hint = f"; did you mean {', '.join(close)}?" if close else ""
    raise UnknownArtistError(f"no artist matches {query!r}{hint}",
                             candidates=close)


def _items_from_ranking(store, anchor_row, order, k):
    distances = np.sqrt(((store.z[order] - anchor_row) ** 2).sum(axis=1))
    items = []
    for node, dist in zip(order[:k], distances[:k]):
        items.append(RecommendedArtist(artist_id=store.artist_ids[node],
                                       name=store.names[node],
                                       distance=float(dist),
                                       genre=store.genre_of(node)))
    return tuple(items)


def recommend(store: EmbeddingStore, query: str, k: int = 5) -> Recommendation:
    """The k nearest artists to the query in embedding space.

    Ascending Euclidean distance, the query itself excluded, ties broken
    by node index.  ``k`` is capped at n - 1.
    """
    if k < 1:
        raise RecommendError(f"k must be >= 1, got {k}")
    node = find_artist(store, query)
    order = rank_by_distance(store.z, node)
    return Recommendation(query_id=store.artist_ids[node],
                          query_name=store.names[node],
                          items=_items_from_ranking(
                              store, store.z[node], order, min(k, store.n - 1)))


# -- fictitious artists ------------------------------------------------


@dataclass(frozen=True)
class FictitiousArtistSpec:
    """A what-if artist: a display name, the set of existing nodes it is
    declared similar to, and optionally explicit features (defaulting to
    the members' feature mean)."""

    name: str
    members: tuple
    features: np.ndarray = None

    def __post_init__(self):
        object.__setattr__(self, "members",
                           tuple(int(m) for m in self.members))
        if not self.members:
            raise RecommendError("similar set must not be empty")
        if len(set(self.members)) != len(self.members):
            raise RecommendError("similar set contains duplicates")


def inject_fictitious(dataset, spec: FictitiousArtistSpec):
    """Augment graph + features with one new node tied to the members.

    Copy-on-augment: the base dataset is never touched.  Returns the new
    graph, new features, and the new node's index (= old n).
    """
    g = dataset.graph
    members = np.asarray(spec.members, dtype=np.int64)
    if members.size and (members.min() < 0 or members.max() >= g.n):
        raise RecommendError(f"member ids must be in [0, {g.n})")
    feats = dataset.features.data
    if spec.features is not None:
        x_new = np.asarray(spec.features, dtype=np.float64)
        if x_new.shape != (feats.shape[1],):
            raise RecommendError(
                f"explicit features must have shape ({feats.shape[1]},)")
    else:
        x_new = feats[members].mean(axis=0)

    new = g.n
    pairs = [(int(i), int(j)) for i in range(g.n)
             for j in g.neighbors(i) if i < j]
    pairs += [(int(m), new) for m in members]
    taken = set(g.artist_ids)
    serial = 0
    while f"fictitious-{serial:05d}" in taken:
        serial += 1
    new_id = f"fictitious-{serial:05d}"
    aug_graph = ArtistGraph.from_edges(pairs,
                                       artist_ids=g.artist_ids + (new_id,),
                                       names=g.names + (spec.name,))
    aug_features = FeatureMatrix(np.vstack([feats, x_new[None, :]]),
                                 kind=dataset.features.kind)
    return aug_graph, aug_features, new


def recommend_fictitious(ckpt_path, dataset, spec: FictitiousArtistSpec,
                         k: int = 5) -> Recommendation:
    """Embed the augmented graph and rank neighbors of the new node.

    Members of the similar set are excluded from the results: they are
    the inputs of the what-if question, not answers to it.
    """
    if k < 1:
        raise RecommendError(f"k must be >= 1, got {k}")
    aug_graph, aug_features, new = inject_fictitious(dataset, spec)
    params = load_checkpoint(ckpt_path)
    m = aug_features.data.shape[1]
    if params.config.input_dim != m:
        raise RecommendError(
            f"checkpoint expects {params.config.input_dim}-dimensional "
            f"features, dataset has {m}")
    with no_grad():
        z = forward_embed(aug_features.data, aug_graph, params,
                          mode="eval").data

    genres = None
    if dataset.labels is not None:
        genres = tuple(dataset.labels.genre_of(i)
                       for i in range(dataset.graph.n)) + (None,)
    aug_store = EmbeddingStore(z=z.copy(),
                               artist_ids=aug_graph.artist_ids,
                               names=aug_graph.names, genres=genres)
    banned = set(int(m) for m in spec.members)
    order = np.array([node for node in rank_by_distance(z, new)
                      if node not in banned], dtype=np.int64)
    k = min(k, order.size)
    return Recommendation(query_id=aug_graph.artist_ids[new],
                          query_name=spec.name,
                          items=_items_from_ranking(
                              aug_store, z[new], order, k))


# -- projection --------------------------------------------------------


def project_2d(store: EmbeddingStore) -> np.ndarray:
    """Project embeddings onto their top-2 principal components.

    Components are ordered by explained variance; each axis is oriented
    so its largest-magnitude loading is positive, making the output
    deterministic under eigenvector sign flips.
    """
    if store.n < 3:
        raise RecommendError(f"projection needs at least 3 artists, "
                             f"have {store.n}")
    centered = store.z - store.z.mean(axis=0)
    cov = centered.T @ centered / (store.n - 1)
    eigenvalues, eigenvectors = np.linalg.eigh(cov)
    top = np.argsort(eigenvalues)[::-1][:2]
    axes = eigenvectors[:, top]
    for j in range(axes.shape[1]):
        lead = np.argmax(np.abs(axes[:, j]))
        if axes[lead, j] < 0:
            axes[:, j] = -axes[:, j]
    return centered @ axes
