"""Artist graph storage: ingestion, splits, stats, sampling, synthesis.

The graph is an undirected, unweighted adjacency held in CSR form with
neighbor lists sorted ascending.  Everything here is immutable after
construction, so concurrent readers need no locking.
"""

from __future__ import annotations

import logging
import math
import os
import struct
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

log = logging.getLogger(__name__)

UNRESOLVED = -1

FEATURE_MAGIC = b"GTSYFEAT"


class GraphFormatError(ValueError):
    """A graph/feature/label file failed to parse or violated an invariant."""


@dataclass(eq=False)
class ArtistGraph:
    """Undirected graph over artists.

    ``indptr``/``indices`` are a CSR adjacency with each neighbor list
    sorted ascending; ``artist_ids[i]`` and ``names[i]`` describe node i.
    """

    indptr: np.ndarray
    indices: np.ndarray
    artist_ids: tuple
    names: tuple
    self_loops_dropped: int = 0
    _id_to_index: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if not self._id_to_index:
            self._id_to_index = {a: i for i, a in enumerate(self.artist_ids)}

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @property
    def num_edges(self) -> int:
        """Number of undirected pairs."""
        return self.indices.size // 2

    def neighbors(self, i: int) -> np.ndarray:
        return self.indices[self.indptr[i]:self.indptr[i + 1]]

    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    def index_of(self, artist_id: str) -> int:
        return self._id_to_index[artist_id]

    @classmethod
    def from_edges(cls, pairs: Sequence, artist_ids: Sequence[str],
                   names: Sequence[str]) -> "ArtistGraph":
        """Build from (i, j) index pairs: symmetrize, dedup, drop self-loops."""
        n = len(artist_ids)
        if len(names) != n:
            raise GraphFormatError("artist_ids and names length mismatch")
        arr = np.asarray(pairs, dtype=np.int64)
        arr = (arr.reshape(-1, 2) if arr.size
               else np.empty((0, 2), dtype=np.int64))
        if arr.size and (arr.min() < 0 or arr.max() >= n):
            raise GraphFormatError("edge endpoint out of range")
        loops = int((arr[:, 0] == arr[:, 1]).sum())
        if loops:
            log.warning("dropped %d self-loop(s)", loops)
            arr = arr[arr[:, 0] != arr[:, 1]]
        both = np.concatenate([arr, arr[:, ::-1]], axis=0)
        keys = np.unique(both[:, 0] * n + both[:, 1])
        src, dst = keys // n, keys % n
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.add.at(indptr, src + 1, 1)
        np.cumsum(indptr, out=indptr)
        # keys are sorted, so each neighbor list comes out sorted ascending
        return cls(indptr=indptr, indices=dst.astype(np.int64),
                   artist_ids=tuple(artist_ids), names=tuple(names),
                   self_loops_dropped=loops)


@dataclass(eq=False)
class FeatureMatrix:
    """Dense per-node features; ``kind`` is 'handcrafted' or 'random'."""

    data: np.ndarray
    kind: str = "handcrafted"

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise GraphFormatError("feature matrix must be 2-D")
        if not np.all(np.isfinite(self.data)):
            raise GraphFormatError("feature matrix contains non-finite values")
        if self.kind not in ("handcrafted", "random"):
            raise GraphFormatError(f"unknown feature kind {self.kind!r}")

    @property
    def n(self) -> int:
        return self.data.shape[0]

    @property
    def m(self) -> int:
        return self.data.shape[1]


@dataclass(eq=False)
class GenreLabelSet:
    """Genre vocabulary plus one label index per node (UNRESOLVED = -1)."""

    vocabulary: tuple
    labels: np.ndarray

    def __post_init__(self):
        if len(set(self.vocabulary)) != len(self.vocabulary):
            raise GraphFormatError("vocabulary contains duplicates")
        self.labels = np.asarray(self.labels, dtype=np.int64)
        bad = (self.labels < UNRESOLVED) | (self.labels >= len(self.vocabulary))
        if bad.any():
            raise GraphFormatError("label index out of vocabulary range")

    @property
    def num_classes(self) -> int:
        return len(self.vocabulary)

    def unresolved_nodes(self) -> np.ndarray:
        return np.flatnonzero(self.labels == UNRESOLVED)

    def genre_of(self, node: int):
        idx = self.labels[node]
        return None if idx == UNRESOLVED else self.vocabulary[idx]


@dataclass(eq=False)
class DatasetSplit:
    train: np.ndarray
    validation: np.ndarray
    test: np.ndarray
    seed: int


@dataclass(frozen=True)
class GraphStats:
    total_connections: int          # undirected pairs
    directed_connections: int       # 2E: each pair counted from both ends
    avg_connections_per_artist: float
    q1: int
    q2: int
    q3: int


# -- ingestion ---------------------------------------------------------


def _parse_two_columns(path: str, what: str):
    rows = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise GraphFormatError(
                    f"{path}:{lineno}: malformed {what} line (expected two "
                    f"tab-separated fields): {line!r}")
            rows.append((lineno, parts[0], parts[1]))
    return rows


def load_graph(edges_path: str, ids_path: str) -> ArtistGraph:
    """Load a graph from an edge list and an id/name file.

    Node order is the line order of ``ids_path``; edges reference ids.
    """
    id_rows = _parse_two_columns(ids_path, "id")
    artist_ids = [r[1] for r in id_rows]
    names = [r[2] for r in id_rows]
    seen = {}
    for lineno, artist_id, _ in id_rows:
        if artist_id in seen:
            raise GraphFormatError(
                f"{ids_path}:{lineno}: duplicate id {artist_id!r} "
                f"(first seen on line {seen[artist_id]})")
        seen[artist_id] = lineno
    index = {a: i for i, a in enumerate(artist_ids)}

    pairs = []
    for lineno, a, b in _parse_two_columns(edges_path, "edge"):
        try:
            pairs.append((index[a], index[b]))
        except KeyError as exc:
            raise GraphFormatError(
                f"{edges_path}:{lineno}: unknown id {exc.args[0]!r}") from None
    return ArtistGraph.from_edges(pairs, artist_ids, names)


def save_graph(g: ArtistGraph, edges_path: str, ids_path: str) -> None:
    """Write the id file and each undirected edge once (i < j)."""
    with open(ids_path, "w", encoding="utf-8") as fh:
        for artist_id, name in zip(g.artist_ids, g.names):
            fh.write(f"{artist_id}\t{name}\n")
    with open(edges_path, "w", encoding="utf-8") as fh:
        for i in range(g.n):
            for j in g.neighbors(i):
                if i < j:
                    fh.write(f"{g.artist_ids[i]}\t{g.artist_ids[j]}\n")


# -- statistics, splits, subgraphs -------------------------------------


def _nearest_rank(sorted_values: np.ndarray, p: float):
    rank = math.ceil(p * len(sorted_values))
    return sorted_values[max(rank, 1) - 1]


def compute_stats(g: ArtistGraph) -> GraphStats:
    if g.n == 0:
        raise GraphFormatError("cannot compute stats of an empty graph")
    deg = np.sort(g.degrees())
    return GraphStats(
        total_connections=g.num_edges,
        directed_connections=int(g.indices.size),
        avg_connections_per_artist=float(g.indices.size) / g.n,
        q1=int(_nearest_rank(deg, 0.25)),
        q2=int(_nearest_rank(deg, 0.50)),
        q3=int(_nearest_rank(deg, 0.75)),
    )


def split_dataset(g: ArtistGraph, seed: int) -> DatasetSplit:
    """Random 80/10/10 node split; validation and test sizes are floored."""
    if g.n < 10:
        raise GraphFormatError(f"need at least 10 nodes to split, got {g.n}")
    rng = np.random.default_rng(seed)
    perm = rng.permutation(g.n)
    n_val = g.n // 10
    n_test = g.n // 10
    return DatasetSplit(
        train=np.sort(perm[n_val + n_test:]),
        validation=np.sort(perm[:n_val]),
        test=np.sort(perm[n_val:n_val + n_test]),
        seed=seed,
    )


def graph_restricted_to(g: ArtistGraph, allowed_nodes):
    """Induced subgraph on ``allowed_nodes``.

    Returns (subgraph, old_index_of) where ``old_index_of[new] = old``;
    subgraph node order is ascending old index.
    """
    allowed = np.unique(np.asarray(allowed_nodes, dtype=np.int64))
    if allowed.size and (allowed[0] < 0 or allowed[-1] >= g.n):
        raise GraphFormatError("allowed node index out of range")
    new_of_old = np.full(g.n, -1, dtype=np.int64)
    new_of_old[allowed] = np.arange(allowed.size)
    pairs = []
    for new_i, old_i in enumerate(allowed):
        for old_j in g.neighbors(old_i):
            new_j = new_of_old[old_j]
            if new_j >= 0 and new_i < new_j:
                pairs.append((new_i, new_j))
    sub = ArtistGraph.from_edges(
        pairs,
        [g.artist_ids[i] for i in allowed],
        [g.names[i] for i in allowed])
    return sub, allowed


# -- neighbor sampling -------------------------------------------------


@dataclass(eq=False)
class SampledLayer:
    """Edges feeding one graph-convolution layer.

    The layer maps an input node list to its first ``n_out`` entries.
    ``dst_indptr`` groups ``src_index`` (positions in the input list) by
    destination; destination k's input-list position is k itself, because
    output nodes are always placed first in the input list.
    """

    input_nodes: np.ndarray     # original graph indices, outputs first
    n_out: int
    src_index: np.ndarray       # per edge: source position in input_nodes
    dst_indptr: np.ndarray      # len n_out + 1


@dataclass(eq=False)
class NeighborSample:
    """Layered neighborhood expansion, ordered first conv layer first.

    ``layers[0].input_nodes`` are the nodes whose features must be fed in;
    each layer's output node list equals the next layer's input node list,
    and the last layer's outputs are the batch nodes.
    """

    layers: list
    batch_nodes: np.ndarray

    @property
    def input_nodes(self) -> np.ndarray:
        return self.layers[0].input_nodes


def _build_layer(g: ArtistGraph, dst_nodes: np.ndarray, fanout,
                 rng) -> SampledLayer:
    neigh_lists = []
    for node in dst_nodes:
        nbrs = g.neighbors(node)
        if fanout is not None and nbrs.size > fanout:
            nbrs = np.sort(rng.choice(nbrs, size=fanout, replace=False))
        if nbrs.size == 0:
            # keep aggregation well-defined for isolated nodes
            nbrs = np.array([node], dtype=np.int64)
        neigh_lists.append(nbrs)

    counts = np.array([len(x) for x in neigh_lists], dtype=np.int64)
    dst_indptr = np.zeros(dst_nodes.size + 1, dtype=np.int64)
    np.cumsum(counts, out=dst_indptr[1:])
    flat_src = (np.concatenate(neigh_lists) if neigh_lists
                else np.empty(0, dtype=np.int64))

    pos_of = {int(node): i for i, node in enumerate(dst_nodes)}
    extras = np.unique(flat_src[~np.isin(flat_src, dst_nodes)])
    input_nodes = np.concatenate([dst_nodes, extras])
    for i, node in enumerate(extras):
        pos_of[int(node)] = dst_nodes.size + i
    src_index = np.array([pos_of[int(s)] for s in flat_src], dtype=np.int64)
    return SampledLayer(input_nodes=input_nodes, n_out=int(dst_nodes.size),
                        src_index=src_index, dst_indptr=dst_indptr)


def neighbor_sample(g: ArtistGraph, batch_nodes, fanouts: Sequence,
                    seed: int = 0) -> NeighborSample:
    """Sample a layered neighborhood for ``batch_nodes``.

    ``fanouts`` has one entry per graph-convolution layer (first layer
    first); an entry of None keeps every neighbor.  Sampling is uniform
    without replacement and deterministic per seed.  A node with no
    neighbors receives a single self-edge.
    """
    batch_nodes = np.asarray(batch_nodes, dtype=np.int64)
    if batch_nodes.size == 0:
        raise GraphFormatError("batch_nodes is empty")
    if np.unique(batch_nodes).size != batch_nodes.size:
        raise GraphFormatError("batch_nodes contains duplicates")
    rng = np.random.default_rng(seed)
    layers = []
    dst = batch_nodes
    for fanout in reversed(list(fanouts)):
        layer = _build_layer(g, dst, fanout, rng)
        layers.append(layer)
        dst = layer.input_nodes
    layers.reverse()
    return NeighborSample(layers=layers, batch_nodes=batch_nodes)


def full_neighborhood(g: ArtistGraph, nodes, num_layers: int) -> NeighborSample:
    """Deterministic all-neighbor expansion (evaluation-time path)."""
    return neighbor_sample(g, nodes, [None] * num_layers, seed=0)


# -- synthesis ---------------------------------------------------------


def generate_synthetic(blocks: int, nodes_per_block: int, p_in: float,
                       p_out: float, m: int, seed: int,
                       noise: float = 1.0):
    """Stochastic block model with block-mean Gaussian features.

    Returns (graph, features, labels); labels are the block ids and the
    vocabulary is ``genre-00 .. genre-(k-1)``.  Nodes that come out of the
    edge draw with no neighbors are pruned so every node has degree >= 1.
    """
    if not (0.0 < p_in <= 1.0 and 0.0 <= p_out < 1.0):
        raise ValueError("p_in must be in (0,1] and p_out in [0,1)")
    if p_in <= p_out:
        raise ValueError("p_in must exceed p_out")
    if blocks < 1 or nodes_per_block < 1 or m < 1:
        raise ValueError("blocks, nodes_per_block and m must be positive")

    rng = np.random.default_rng(seed)
    n = blocks * nodes_per_block
    block_of = np.repeat(np.arange(blocks), nodes_per_block)

    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block_of[iu] == block_of[ju], p_in, p_out)
    keep = rng.random(p.size) < p
    pairs = np.stack([iu[keep], ju[keep]], axis=1)

    means = rng.normal(0.0, 1.0, size=(blocks, m))
    feats = means[block_of] + noise * rng.normal(size=(n, m))

    artist_ids = [f"synth-{i:05d}" for i in range(n)]
    names = [f"Artist {i:05d}" for i in range(n)]
    g = ArtistGraph.from_edges(pairs, artist_ids, names)

    connected = np.flatnonzero(g.degrees() > 0)
    if connected.size < g.n:
        log.warning("pruning %d isolated synthetic node(s)",
                    g.n - connected.size)
        g, old_of_new = graph_restricted_to(g, connected)
        feats = feats[old_of_new]
        block_of = block_of[old_of_new]

    vocab = tuple(f"genre-{b:02d}" for b in range(blocks))
    labels = GenreLabelSet(vocabulary=vocab, labels=block_of)
    return g, FeatureMatrix(feats, kind="handcrafted"), labels


def random_features(n: int, m: int, seed: int) -> FeatureMatrix:
    """I.i.d. standard-normal features (the content-free baseline input)."""
    rng = np.random.default_rng(seed)
    return FeatureMatrix(rng.normal(size=(n, m)), kind="random")


# -- feature / label files ---------------------------------------------


def save_features(path: str, fm: FeatureMatrix, binary: bool = False) -> None:
    if binary:
        with open(path, "wb") as fh:
            fh.write(FEATURE_MAGIC)
            fh.write(struct.pack("<II", fm.n, fm.m))
            fh.write(np.ascontiguousarray(fm.data, dtype="<f8").tobytes())
    else:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(f"{fm.n} {fm.m}\n")
            for row in fm.data:
                fh.write(" ".join(repr(float(v)) for v in row) + "\n")


def load_features(path: str, kind: str = "handcrafted") -> FeatureMatrix:
    with open(path, "rb") as fh:
        head = fh.read(len(FEATURE_MAGIC))
        if head == FEATURE_MAGIC:
            n, m = struct.unpack("<II", fh.read(8))
            payload = fh.read(n * m * 8)
            if len(payload) != n * m * 8:
                raise GraphFormatError(f"{path}: truncated feature payload")
            data = np.frombuffer(payload, dtype="<f8")
            return FeatureMatrix(data.reshape(n, m).copy(), kind=kind)
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().split()
        if len(header) != 2:
            raise GraphFormatError(f"{path}:1: expected header 'n m'")
        try:
            n, m = int(header[0]), int(header[1])
        except ValueError:
            raise GraphFormatError(f"{path}:1: expected header 'n m'") from None
        rows = []
        for lineno, line in enumerate(fh, start=2):
            if not line.strip():
                continue
            vals = line.split()
            if len(vals) != m:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected {m} values, got {len(vals)}")
            rows.append([float(v) for v in vals])
        if len(rows) != n:
            raise GraphFormatError(
                f"{path}: expected {n} rows, got {len(rows)}")
    return FeatureMatrix(np.array(rows, dtype=np.float64), kind=kind)


def save_labels(path: str, g: ArtistGraph, labels: GenreLabelSet) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for i in range(g.n):
            genre = labels.genre_of(i)
            if genre is None:
                raise GraphFormatError(f"node {i} is unresolved; cannot save")
            fh.write(f"{g.artist_ids[i]}\t{genre}\n")


def load_labels(path: str, g: ArtistGraph) -> GenreLabelSet:
    """Read id→genre lines; the vocabulary is the sorted set of genres."""
    by_id = {}
    for lineno, artist_id, genre in _parse_two_columns(path, "label"):
        if artist_id not in g._id_to_index:
            raise GraphFormatError(
                f"{path}:{lineno}: unknown id {artist_id!r}")
        by_id[artist_id] = genre
    vocab = tuple(sorted(set(by_id.values())))
    pos = {genre: k for k, genre in enumerate(vocab)}
    labels = np.full(g.n, UNRESOLVED, dtype=np.int64)
    for artist_id, genre in by_id.items():
        labels[g.index_of(artist_id)] = pos[genre]
    return GenreLabelSet(vocabulary=vocab, labels=labels)


# -- dataset directories -----------------------------------------------


DATASET_FILES = {
    "edges": "edges.tsv",
    "ids": "ids.tsv",
    "features_bin": "features.bin",
    "features_txt": "features.txt",
    "labels": "labels.tsv",
}


def save_dataset(directory: str, g: ArtistGraph, features: FeatureMatrix,
                 labels: GenreLabelSet = None, binary_features: bool = True):
    os.makedirs(directory, exist_ok=True)
    save_graph(g, os.path.join(directory, DATASET_FILES["edges"]),
               os.path.join(directory, DATASET_FILES["ids"]))
    fname = DATASET_FILES["features_bin" if binary_features else "features_txt"]
    save_features(os.path.join(directory, fname), features,
                  binary=binary_features)
    if labels is not None:
        save_labels(os.path.join(directory, DATASET_FILES["labels"]),
                    g, labels)


def load_dataset(directory: str):
    """Load (graph, features, labels-or-None) from a dataset directory."""
    g = load_graph(os.path.join(directory, DATASET_FILES["edges"]),
                   os.path.join(directory, DATASET_FILES["ids"]))
    bin_path = os.path.join(directory, DATASET_FILES["features_bin"])
    txt_path = os.path.join(directory, DATASET_FILES["features_txt"])
    feats = load_features(bin_path if os.path.exists(bin_path) else txt_path)
    if feats.n != g.n:
        raise GraphFormatError(
            f"{directory}: feature rows ({feats.n}) != graph nodes ({g.n})")
    labels_path = os.path.join(directory, DATASET_FILES["labels"])
    labels = load_labels(labels_path, g) if os.path.exists(labels_path) else None
    return g, feats, labels
