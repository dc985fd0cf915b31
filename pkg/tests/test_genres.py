"""Genre fetching, vocabulary cut, and the three resolution rules."""

import json

import numpy as np
import pytest
import requests

from gatsy.genres import (
    PROMPT_TEMPLATE,
    FileProvider,
    GenreResolutionError,
    MusicBrainzRecord,
    ProviderError,
    StubProvider,
    build_vocabulary,
    fetch_genres,
    finalize_labels,
    resolve_by_neighbors,
    resolve_by_text,
    resolve_by_votes,
)
from gatsy.graph import UNRESOLVED
from test_graph import make_graph


class FakeResponse:
    def __init__(self, status_code, payload=None, body_is_json=True):
        self.status_code = status_code
        self._payload = payload
        self._ok = body_is_json

    def json(self):
        if not self._ok:
            raise ValueError("not json")
        return self._payload


class FakeSession:
    """Scripted responses: one entry per attempted HTTP call."""

    def __init__(self, script):
        self.script = list(script)
        self.calls = []

    def get(self, url, params=None, timeout=None):
        self.calls.append((url, dict(params or {})))
        action = self.script.pop(0)
        if isinstance(action, Exception):
            raise action
        return action


class Clock:
    def __init__(self):
        self.t = 0.0
        self.sleeps = []

    def __call__(self):
        return self.t

    def sleep(self, seconds):
        self.sleeps.append(seconds)
        self.t += seconds


def tagged(artist_id, **votes):
    return MusicBrainzRecord(artist_id, tuple(sorted(votes.items())))


MB_PAYLOAD = {"tags": [{"name": "rock", "count": 5},
                       {"name": "pop", "count": 2}]}


class TestRecord:
    def test_negative_votes_rejected(self):
        with pytest.raises(ValueError, match="negative"):
            MusicBrainzRecord("a", (("rock", -1),))

    def test_top_tag_breaks_ties_lexicographically(self):
        record = MusicBrainzRecord("a", (("pop", 3), ("blues", 3),
                                         ("rock", 1)))
        assert record.top_tag() == "blues"

    def test_tagless_top_tag_is_none(self):
        assert MusicBrainzRecord("a", ()).top_tag() is None


class TestFetch:
    def test_hand_built_fixture_round_trips(self, tmp_path):
        (tmp_path / "fix-1.json").write_text(json.dumps(MB_PAYLOAD))
        (record,) = fetch_genres(["fix-1"], tmp_path, offline=True)
        assert record.artist_id == "fix-1"
        assert record.tags == (("rock", 5), ("pop", 2))

    def test_warm_cache_is_deterministic_offline(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps(MB_PAYLOAD))
        (tmp_path / "b.json").write_text(json.dumps({"tags": []}))
        first = fetch_genres(["a", "b"], tmp_path, offline=True)
        second = fetch_genres(["a", "b"], tmp_path, offline=True)
        assert first == second

    def test_unknown_id_offline_is_empty(self, tmp_path):
        (record,) = fetch_genres(["missing"], tmp_path, offline=True)
        assert record.tags == ()

    def test_fetch_writes_cache_and_reuses_it(self, tmp_path):
        clock = Clock()
        session = FakeSession([FakeResponse(200, MB_PAYLOAD)])
        (record,) = fetch_genres(["mbid-7"], tmp_path, session=session,
                                 clock=clock, sleep=clock.sleep)
        assert record.tags == (("rock", 5), ("pop", 2))
        assert (tmp_path / "mbid-7.json").exists()

        # a second run must not touch the network at all
        starved = FakeSession([])
        (again,) = fetch_genres(["mbid-7"], tmp_path, session=starved,
                                clock=clock, sleep=clock.sleep)
        assert again == record
        assert starved.calls == []

    def test_request_shape(self, tmp_path):
        clock = Clock()
        session = FakeSession([FakeResponse(200, MB_PAYLOAD)])
        fetch_genres(["mbid-9"], tmp_path, session=session,
                     endpoint="https://example.test/artist",
                     clock=clock, sleep=clock.sleep)
        url, params = session.calls[0]
        assert url == "https://example.test/artist/mbid-9"
        assert params == {"inc": "tags", "fmt": "json"}

    def test_not_found_yields_empty_and_is_not_cached(self, tmp_path):
        clock = Clock()
        session = FakeSession([FakeResponse(404)])
        (record,) = fetch_genres(["nope"], tmp_path, session=session,
                                 clock=clock, sleep=clock.sleep)
        assert record.tags == ()
        assert not (tmp_path / "nope.json").exists()
        assert len(session.calls) == 1

    def test_transient_failures_are_retried(self, tmp_path):
        clock = Clock()
        session = FakeSession([
            requests.ConnectionError("down"),
            FakeResponse(503),
            FakeResponse(200, MB_PAYLOAD),
        ])
        (record,) = fetch_genres(["flaky"], tmp_path, session=session,
                                 clock=clock, sleep=clock.sleep)
        assert record.tags == (("rock", 5), ("pop", 2))
        assert len(session.calls) == 3

    def test_exhausted_retries_yield_empty(self, tmp_path):
        clock = Clock()
        session = FakeSession([requests.ConnectionError("down")] * 3)
        (record,) = fetch_genres(["dead"], tmp_path, session=session,
                                 retries=3, clock=clock, sleep=clock.sleep)
        assert record.tags == ()
        assert len(session.calls) == 3

    def test_corrupt_cache_refetches_online(self, tmp_path):
        (tmp_path / "hurt.json").write_text("{ not json")
        clock = Clock()
        session = FakeSession([FakeResponse(200, MB_PAYLOAD)])
        (record,) = fetch_genres(["hurt"], tmp_path, session=session,
                                 clock=clock, sleep=clock.sleep)
        assert record.tags == (("rock", 5), ("pop", 2))
        assert json.loads((tmp_path / "hurt.json").read_text()) == MB_PAYLOAD

    def test_corrupt_cache_offline_is_empty(self, tmp_path):
        (tmp_path / "hurt.json").write_text("{ not json")
        (record,) = fetch_genres(["hurt"], tmp_path, offline=True)
        assert record.tags == ()

    def test_uncached_calls_are_rate_limited(self, tmp_path):
        clock = Clock()
        session = FakeSession([FakeResponse(200, MB_PAYLOAD),
                               FakeResponse(200, {"tags": []})])
        fetch_genres(["one", "two"], tmp_path, session=session,
                     rate_limit=1.0, clock=clock, sleep=clock.sleep)
        # first call goes straight out; the second waits the full interval
        assert clock.sleeps == [pytest.approx(1.0)]

    def test_cache_hits_do_not_wait(self, tmp_path):
        (tmp_path / "a.json").write_text(json.dumps(MB_PAYLOAD))
        (tmp_path / "b.json").write_text(json.dumps(MB_PAYLOAD))
        clock = Clock()
        fetch_genres(["a", "b"], tmp_path, session=FakeSession([]),
                     clock=clock, sleep=clock.sleep)
        assert clock.sleeps == []

    def test_retry_attempts_are_rate_limited_too(self, tmp_path):
        clock = Clock()
        session = FakeSession([requests.ConnectionError("down")] * 3)
        fetch_genres(["dead"], tmp_path, session=session, retries=3,
                     clock=clock, sleep=clock.sleep)
        assert clock.sleeps == [pytest.approx(1.0), pytest.approx(1.0)]


class TestVocabulary:
    def test_top_by_total_votes(self):
        records = [tagged(f"a{i}", **{f"genre{i:02d}": 30 - i})
                   for i in range(30)]
        vocab = build_vocabulary(records)
        assert vocab == tuple(f"genre{i:02d}" for i in range(25))

    def test_votes_aggregate_across_records(self):
        records = [tagged("a", rock=2, jazz=5), tagged("b", rock=4)]
        assert build_vocabulary(records, size=1) == ("rock",)

    def test_boundary_tie_goes_lexicographic(self):
        records = [tagged("a", ska=5, citypop=3, dub=3)]
        assert build_vocabulary(records, size=2) == ("ska", "citypop")

    def test_short_supply_warns_and_uses_all(self):
        records = [tagged("a", rock=1, jazz=2)]
        with pytest.warns(UserWarning, match="only 2"):
            vocab = build_vocabulary(records)
        assert vocab == ("jazz", "rock")

    def test_record_order_is_irrelevant(self):
        records = [tagged("a", rock=3, jazz=1), tagged("b", pop=2, jazz=3)]
        assert (build_vocabulary(records, size=3)
                == build_vocabulary(records[::-1], size=3))


VOCAB = ("electronic", "jazz", "pop", "rap", "rock")


class TestVoteRule:
    def test_highest_vote_wins(self):
        assert resolve_by_votes(tagged("a", rock=5, jazz=1), VOCAB) == "rock"

    def test_out_of_vocabulary_tags_are_ignored(self):
        assert resolve_by_votes(tagged("a", shoegaze=3), VOCAB) is None
        # an out-of-vocab favorite must not shadow a known lesser tag
        assert resolve_by_votes(tagged("a", shoegaze=9, rock=1),
                                VOCAB) == "rock"

    def test_empty_tags_unresolved(self):
        assert resolve_by_votes(MusicBrainzRecord("a", ()), VOCAB) is None

    def test_vote_tie_breaks_lexicographic(self):
        assert resolve_by_votes(tagged("a", rock=4, jazz=4), VOCAB) == "jazz"


class TestTextRule:
    def test_matches_exhaustive_cosine_oracle(self):
        provider = StubProvider()
        got = resolve_by_text("Slowdive", "shoegaze", VOCAB, provider)

        anchor = provider.embed(
            PROMPT_TEMPLATE.format(genre="shoegaze", name="Slowdive"))
        scores = []
        for genre in VOCAB:
            vec = provider.embed(
                PROMPT_TEMPLATE.format(genre=genre, name="Slowdive"))
            scores.append(anchor @ vec
                          / (np.linalg.norm(anchor) * np.linalg.norm(vec)))
        assert got == VOCAB[int(np.argmax(scores))]

    def test_vocabulary_entry_maps_to_itself(self):
        assert resolve_by_text("Miles Davis", "jazz", VOCAB,
                               StubProvider()) == "jazz"

    def test_invariant_under_positive_rescaling(self):
        class Scaled:
            def __init__(self, inner, factor):
                self.inner, self.factor = inner, factor

            def embed(self, text):
                return self.factor * self.inner.embed(text)

        stub = StubProvider()
        assert (resolve_by_text("X", "chillwave", VOCAB, stub)
                == resolve_by_text("X", "chillwave", VOCAB,
                                   Scaled(stub, 3.7)))

    def test_tie_keeps_earliest_vocabulary_entry(self):
        class Constant:
            def embed(self, text):
                return np.ones(4)

        assert resolve_by_text("X", "anything", ("later", "earlier")[::-1],
                               Constant()) == "earlier"

    def test_provider_failure_unresolved(self):
        class Broken:
            def embed(self, text):
                raise ProviderError("no backend")

        assert resolve_by_text("X", "emo", VOCAB, Broken()) is None

    def test_prompt_template_is_literal(self):
        seen = []

        class Recorder:
            def embed(self, text):
                seen.append(text)
                return StubProvider().embed(text)

        resolve_by_text("Slowdive", "shoegaze", ("rock",), Recorder())
        assert seen[0] == "shoegaze is the genre played by the artist Slowdive"
        assert seen[1] == "rock is the genre played by the artist Slowdive"


class TestNeighborRule:
    def test_modal_label(self):
        g = make_graph(4, [(3, 0), (3, 1), (3, 2)])
        labels = np.array([4, 4, 1, UNRESOLVED])  # rock, rock, jazz
        assert resolve_by_neighbors(3, labels, g) == 4

    def test_no_labeled_neighbors(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        labels = np.array([UNRESOLVED, UNRESOLVED, UNRESOLVED])
        assert resolve_by_neighbors(1, labels, g) == UNRESOLVED

    def test_tie_takes_earliest_vocabulary_index(self):
        # star center, leaves split 2/2 between vocabulary entries 0 and 2
        g = make_graph(5, [(4, 0), (4, 1), (4, 2), (4, 3)])
        labels = np.array([2, 0, 2, 0, UNRESOLVED])
        assert resolve_by_neighbors(4, labels, g) == 0


class TestFinalize:
    def _records(self, genre_by_id):
        return [tagged(artist_id, **{genre: 5})
                for artist_id, genre in genre_by_id.items()]

    def test_fully_voted_dataset_matches_vote_rule(self):
        g = make_graph(4, [(0, 1), (1, 2), (2, 3)])
        by_id = {g.artist_ids[0]: "rock", g.artist_ids[1]: "jazz",
                 g.artist_ids[2]: "pop", g.artist_ids[3]: "rap"}
        records = self._records(by_id)
        pruned, labels = finalize_labels(g, records, VOCAB)
        assert pruned.n == 4
        for node in range(4):
            want = resolve_by_votes(records[node], VOCAB)
            assert labels.genre_of(node) == want

    def test_unlabeled_node_in_labeled_clique(self):
        pairs = [(i, j) for i in range(5) for j in range(i + 1, 5)]
        g = make_graph(5, pairs)
        records = self._records({g.artist_ids[i]: "rock" for i in range(3)})
        records += self._records({g.artist_ids[3]: "jazz"})
        # node 4 has no record at all
        _, labels = finalize_labels(g, records, VOCAB)
        assert labels.genre_of(4) == "rock"
        assert labels.unresolved_nodes().size == 0

    def test_neighbor_rule_reaches_fixpoint_along_a_chain(self):
        g = make_graph(3, [(0, 1), (1, 2)])
        records = self._records({g.artist_ids[0]: "electronic"})
        _, labels = finalize_labels(g, records, VOCAB)
        assert [labels.genre_of(i) for i in range(3)] == ["electronic"] * 3

    def test_disconnected_nodes_are_dropped_even_if_voted(self):
        g = make_graph(4, [(0, 1), (1, 2)])
        records = self._records({i: g for i, g in
                                 zip(g.artist_ids, ["rock"] * 4)})
        pruned, labels = finalize_labels(g, records, VOCAB)
        assert pruned.n == 3
        assert g.artist_ids[3] not in pruned.artist_ids
        assert (pruned.degrees() > 0).all()
        assert labels.labels.size == 3

    def test_votes_take_precedence_over_neighbors(self):
        g = make_graph(4, [(3, 0), (3, 1), (3, 2)])
        records = self._records({g.artist_ids[0]: "jazz",
                                 g.artist_ids[1]: "jazz",
                                 g.artist_ids[2]: "jazz",
                                 g.artist_ids[3]: "rock"})
        _, labels = finalize_labels(g, records, VOCAB)
        assert labels.genre_of(3) == "rock"

    def test_text_rule_fills_out_of_vocabulary_tags(self):
        g = make_graph(2, [(0, 1)])
        records = [tagged(g.artist_ids[0], shoegaze=3),
                   tagged(g.artist_ids[1], rock=2)]
        provider = StubProvider()
        _, labels = finalize_labels(g, records, VOCAB, provider)
        want = resolve_by_text(g.names[0], "shoegaze", VOCAB, provider)
        assert labels.genre_of(0) == want

    def test_without_provider_tagged_node_falls_to_neighbors(self):
        g = make_graph(2, [(0, 1)])
        records = [tagged(g.artist_ids[0], shoegaze=3),
                   tagged(g.artist_ids[1], rock=2)]
        _, labels = finalize_labels(g, records, VOCAB)
        assert labels.genre_of(0) == "rock"

    def test_unresolvable_nodes_are_a_hard_error(self):
        g = make_graph(2, [(0, 1)])
        with pytest.raises(GenreResolutionError) as excinfo:
            finalize_labels(g, [], VOCAB)
        assert set(excinfo.value.artist_ids) == set(g.artist_ids)
        assert g.artist_ids[0] in str(excinfo.value)

    def test_deterministic(self):
        g = make_graph(5, [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0)])
        records = self._records({g.artist_ids[0]: "rock",
                                 g.artist_ids[2]: "pop"})
        a_graph, a_labels = finalize_labels(g, records, VOCAB)
        b_graph, b_labels = finalize_labels(g, records, VOCAB)
        assert a_graph.artist_ids == b_graph.artist_ids
        np.testing.assert_array_equal(a_labels.labels, b_labels.labels)
        assert a_labels.vocabulary == b_labels.vocabulary


class TestProviders:
    def test_stub_is_deterministic_and_nonzero(self):
        stub = StubProvider(dim=16)
        a = stub.embed("rock is the genre played by the artist X")
        b = stub.embed("rock is the genre played by the artist X")
        np.testing.assert_array_equal(a, b)
        assert a.shape == (16,)
        assert np.linalg.norm(a) > 0
        c = stub.embed("a different text")
        assert not np.array_equal(a, c)

    def test_file_provider_round_trip(self, tmp_path):
        path = tmp_path / "vectors.tsv"
        path.write_text("hello\t1.0,2.5,-3.0\nworld\t0.0,1.0,0.0\n")
        provider = FileProvider(path)
        np.testing.assert_array_equal(provider.embed("hello"),
                                      [1.0, 2.5, -3.0])

    def test_file_provider_unknown_text(self, tmp_path):
        path = tmp_path / "vectors.tsv"
        path.write_text("hello\t1.0,2.0\n")
        with pytest.raises(ProviderError, match="no vector"):
            FileProvider(path).embed("goodbye")

    def test_file_provider_rejects_bad_lines(self, tmp_path):
        bad_component = tmp_path / "bad.tsv"
        bad_component.write_text("hello\t1.0,oops\n")
        with pytest.raises(ProviderError, match="bad.tsv:1"):
            FileProvider(bad_component)

        missing_vector = tmp_path / "missing.tsv"
        missing_vector.write_text("just-text\n")
        with pytest.raises(ProviderError, match="missing vector"):
            FileProvider(missing_vector)

        ragged = tmp_path / "ragged.tsv"
        ragged.write_text("a\t1.0,2.0\nb\t1.0\n")
        with pytest.raises(ProviderError, match="expected 2"):
            FileProvider(ragged)

        zero = tmp_path / "zero.tsv"
        zero.write_text("a\t0.0,0.0\n")
        with pytest.raises(ProviderError, match="zero vector"):
            FileProvider(zero)

    def test_file_provider_drives_text_rule(self, tmp_path):
        vocab = ("jazz", "rock")
        lines = [
            PROMPT_TEMPLATE.format(genre="fusion", name="X") + "\t1.0,0.1",
            PROMPT_TEMPLATE.format(genre="jazz", name="X") + "\t0.9,0.2",
            PROMPT_TEMPLATE.format(genre="rock", name="X") + "\t-1.0,0.0",
        ]
        path = tmp_path / "vectors.tsv"
        path.write_text("\n".join(lines) + "\n")
        assert resolve_by_text("X", "fusion", vocab,
                               FileProvider(path)) == "jazz"
