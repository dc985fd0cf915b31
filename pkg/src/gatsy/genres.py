"""Genre metadata: fetching, vocabulary reduction, and label resolution.

Raw artist tags come from a MusicBrainz-compatible JSON endpoint (or a
warm on-disk cache of its responses).  Labels are resolved against a
25-genre vocabulary through three rules in strict precedence order:
most-voted tag, text-similarity mapping of an out-of-vocabulary tag, and
finally the modal genre of already-labeled neighbors, iterated to a
fixpoint.  Nodes that are disconnected from everyone are dropped rather
than labeled.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .graph import UNRESOLVED, ArtistGraph, GenreLabelSet, graph_restricted_to

DEFAULT_ENDPOINT = "https://musicbrainz.org/ws/2/artist"
USER_AGENT = "gatsy/0.1 (graph-embedding experiments)"
VOCABULARY_SIZE = 25
PROMPT_TEMPLATE = "{genre} is the genre played by the artist {name}"


class ProviderError(RuntimeError):
    """A text-embedding provider could not embed the requested text."""


class GenreResolutionError(RuntimeError):
    """Some nodes were still unlabeled after every rule was applied."""

    def __init__(self, artist_ids):
        self.artist_ids = list(artist_ids)
        preview = ", ".join(self.artist_ids[:10])
        if len(self.artist_ids) > 10:
            preview += ", ..."
        super().__init__(
            f"{len(self.artist_ids)} nodes could not be labeled: {preview}")


@dataclass(frozen=True)
class MusicBrainzRecord:
    """One artist's tag list: (genre, vote count) pairs, votes >= 0."""

    artist_id: str
    tags: tuple

    def __post_init__(self):
        for genre, votes in self.tags:
            if votes < 0:
                raise ValueError(
                    f"negative vote count for {genre!r} on {self.artist_id}")

    def top_tag(self):
        """Highest-voted raw tag (ties lexicographic); None if tagless."""
        if not self.tags:
            return None
        return min(self.tags, key=lambda t: (-t[1], t[0]))[0]


def _record_from_json(artist_id: str, payload: dict) -> MusicBrainzRecord:
    tags = []
    for entry in payload.get("tags", []):
        name = entry.get("name")
        count = entry.get("count", 0)
        if isinstance(name, str) and isinstance(count, int) and count >= 0:
            tags.append((name, count))
    return MusicBrainzRecord(artist_id=artist_id, tags=tuple(tags))


class _RateLimiter:
    """Enforces a minimum interval between consecutive network calls."""

    def __init__(self, interval: float, clock=time.monotonic,
                 sleep=time.sleep):
        self.interval = interval
        self._clock = clock
        self._sleep = sleep
        self._last = None

    def wait(self) -> None:
        if self._last is not None:
            remaining = self.interval - (self._clock() - self._last)
            if remaining > 0:
                self._sleep(remaining)
        self._last = self._clock()


def fetch_genres(ids, cache_dir, offline: bool = False,
                 endpoint: str = DEFAULT_ENDPOINT, session=None,
                 rate_limit: float = 1.0, retries: int = 3,
                 timeout: float = 10.0, clock=time.monotonic,
                 sleep=time.sleep):
    """Fetch tag records for the given artist ids, caching to disk.

    Each successful response body is stored as raw JSON under
    ``cache_dir/<id>.json`` and served from there on later calls.  Cache
    misses hit the network no more often than once per ``rate_limit``
    seconds; in ``offline`` mode they produce empty-tag records instead.
    An id that cannot be fetched after ``retries`` attempts (or that the
    service does not know) also comes back with an empty tag list, so it
    flows on to neighbor-based resolution.
    """
    cache = Path(cache_dir)
    cache.mkdir(parents=True, exist_ok=True)
    limiter = _RateLimiter(rate_limit, clock=clock, sleep=sleep)
    own_session = session is None
    if own_session and not offline:
        session = requests.Session()
        session.headers["User-Agent"] = USER_AGENT

    records = []
    try:
        for artist_id in ids:
            path = cache / f"{artist_id}.json"
            payload = None
            if path.exists():
                try:
                    payload = json.loads(path.read_text(encoding="utf-8"))
                except (OSError, json.JSONDecodeError):
                    payload = None    # corrupt entry: refetch if we can
            if payload is None and not offline:
                payload = _fetch_one(session, endpoint, artist_id, limiter,
                                     retries, timeout)
                if payload is not None:
                    path.write_text(json.dumps(payload, sort_keys=True),
                                    encoding="utf-8")
            if payload is None:
                records.append(MusicBrainzRecord(artist_id, ()))
            else:
                records.append(_record_from_json(artist_id, payload))
    finally:
        if own_session and not offline:
            session.close()
    return records


def _fetch_one(session, endpoint, artist_id, limiter, retries, timeout):
    url = f"{endpoint}/{artist_id}"
    for _ in range(retries):
        limiter.wait()
        try:
            response = session.get(url, params={"inc": "tags", "fmt": "json"},
                                   timeout=timeout)
        except requests.RequestException:
            continue
        if response.status_code == 404:
            return None
        if response.status_code != 200:
            continue
        try:
            return response.json()
        except ValueError:
            continue
    return None


# -- vocabulary --------------------------------------------------------


def build_vocabulary(records, size: int = VOCABULARY_SIZE):
    """The ``size`` genres with the most total votes, ties lexicographic.

    With fewer distinct genres than requested, all of them are used and a
    warning is emitted.
    """
    totals = {}
    for record in records:
        for genre, votes in record.tags:
            totals[genre] = totals.get(genre, 0) + votes
    ordered = sorted(totals, key=lambda g: (-totals[g], g))
    if len(ordered) < size:
        warnings.warn(f"only {len(ordered)} distinct genres available, "
                      f"wanted {size}", stacklevel=2)
    return tuple(ordered[:size])


# -- resolution rules --------------------------------------------------


def resolve_by_votes(record: MusicBrainzRecord, vocab):
    """Highest-voted tag that is in the vocabulary, or None."""
    known = set(vocab)
    candidates = [(genre, votes) for genre, votes in record.tags
                  if genre in known]
    if not candidates:
        return None
    return min(candidates, key=lambda t: (-t[1], t[0]))[0]


def _cosine(a: np.ndarray, b: np.ndarray) -> float:
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


def resolve_by_text(artist_name: str, raw_genre: str, vocab, provider):
    """Vocabulary genre whose prompt is most cosine-similar to the raw one.

    Both sides use the same artist-conditioned prompt template.  Ties keep
    the earliest vocabulary entry; a provider failure returns None.
    """
    try:
        anchor = np.asarray(provider.embed(
            PROMPT_TEMPLATE.format(genre=raw_genre, name=artist_name)),
            dtype=np.float64)
        best, best_score = None, -np.inf
        for genre in vocab:
            vec = np.asarray(provider.embed(
                PROMPT_TEMPLATE.format(genre=genre, name=artist_name)),
                dtype=np.float64)
            score = _cosine(anchor, vec)
            if score > best_score:
                best, best_score = genre, score
        return best
    except ProviderError:
        return None


def resolve_by_neighbors(node: int, labels: np.ndarray,
                         graph: ArtistGraph) -> int:
    """Modal label among labeled neighbors; ties keep the earliest
    vocabulary index; UNRESOLVED with no labeled neighbor."""
    neighbor_labels = labels[graph.neighbors(node)]
    neighbor_labels = neighbor_labels[neighbor_labels != UNRESOLVED]
    if neighbor_labels.size == 0:
        return UNRESOLVED
    return int(np.bincount(neighbor_labels).argmax())


def finalize_labels(graph: ArtistGraph, records, vocab, provider=None):
    """Resolve every node's genre and drop the disconnected ones.

    Rules apply in strict precedence: vote resolution first, then (for
    tagged nodes whose tags all fall outside the vocabulary) the text
    rule, then repeated rounds of neighbor-mode resolution until no node
    changes.  Degree-0 nodes are removed rather than labeled.  Any node
    left unresolved afterwards is a hard error.

    Returns the pruned graph and its complete label set.
    """
    by_id = {record.artist_id: record for record in records}
    index = {genre: i for i, genre in enumerate(vocab)}
    labels = np.full(graph.n, UNRESOLVED, dtype=np.int64)

    for node, artist_id in enumerate(graph.artist_ids):
        record = by_id.get(artist_id)
        if record is None:
            continue
        genre = resolve_by_votes(record, vocab)
        if genre is None and record.tags and provider is not None:
            genre = resolve_by_text(graph.names[node], record.top_tag(),
                                    vocab, provider)
        if genre is not None:
            labels[node] = index[genre]

    connected = np.flatnonzero(graph.degrees() > 0)
    pruned, old_of_new = graph_restricted_to(graph, connected)
    labels = labels[old_of_new]

    while True:
        current = labels.copy()
        for node in np.flatnonzero(current == UNRESOLVED):
            labels[node] = resolve_by_neighbors(int(node), current, pruned)
        if np.array_equal(labels, current):
            break

    missing = np.flatnonzero(labels == UNRESOLVED)
    if missing.size:
        raise GenreResolutionError(pruned.artist_ids[i] for i in missing)
    return pruned, GenreLabelSet(vocabulary=tuple(vocab), labels=labels)


# -- text-embedding providers ------------------------------------------


class StubProvider:
    """Deterministic hash-seeded vectors, for tests and offline runs."""

    def __init__(self, dim: int = 32):
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        digest = hashlib.sha256(text.encode("utf-8")).digest()
        seed = int.from_bytes(digest[:8], "little")
        vec = np.random.default_rng(seed).normal(size=self.dim)
        if not np.linalg.norm(vec) > 0:
            vec[0] = 1.0
        return vec


class FileProvider:
    """Vectors exported from an external encoder, one per line:
    ``text<TAB>v1,v2,...``."""

    def __init__(self, path):
        self.vectors = {}
        dim = None
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                text, _, blob = line.partition("\t")
                if not blob:
                    raise ProviderError(f"{path}:{lineno}: missing vector")
                try:
                    vec = np.array([float(v) for v in blob.split(",")])
                except ValueError as exc:
                    raise ProviderError(
                        f"{path}:{lineno}: bad vector component") from exc
                if dim is None:
                    dim = vec.size
                elif vec.size != dim:
                    raise ProviderError(
                        f"{path}:{lineno}: expected {dim} components, "
                        f"got {vec.size}")
                if not np.linalg.norm(vec) > 0:
                    raise ProviderError(f"{path}:{lineno}: zero vector")
                self.vectors[text] = vec

    def embed(self, text: str) -> np.ndarray:
        try:
            return self.vectors[text]
        except KeyError:
            raise ProviderError(f"no vector for {text!r}") from None
