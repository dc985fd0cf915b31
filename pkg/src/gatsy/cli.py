"""Command-line entry points.

Most commands operate directly on dataset directories and checkpoint
files.  ``recommend`` and ``inject`` can instead be pointed at a running
server with ``--server``, turning them into thin HTTP clients that
print exactly what the local computation would.
"""

from __future__ import annotations

import json
import urllib.parse
from contextlib import contextmanager

import click
import requests

from .evaluation import evaluate_embedding
from .genres import (
    FileProvider,
    GenreResolutionError,
    ProviderError,
    StubProvider,
    build_vocabulary,
    fetch_genres,
    finalize_labels,
)
from .graph import (
    GraphFormatError,
    compute_stats,
    generate_synthetic,
    load_dataset,
    load_graph,
    save_dataset,
    save_labels,
    split_dataset,
)
from .models import (
    ModelError,
    count_params,
    fc_config,
    gatsy_config,
    load_checkpoint,
    sage_bn_config,
    sage_config,
    save_checkpoint,
)
from .recommend import (
    FictitiousArtistSpec,
    RecommendError,
    build_store,
    find_artist,
    recommend,
    recommend_fictitious,
)
from .service import load_serving_dataset
from .service import serve as run_server
from .training import Dataset, TrainConfig, TrainingError
from .training import train as train_model

ARCHS = {
    "gatsy": gatsy_config,
    "fc": fc_config,
    "sage": sage_config,
    "sage-bn": sage_bn_config,
}

_FAILURES = (RecommendError, TrainingError, GraphFormatError,
             GenreResolutionError, ProviderError, ModelError,
             OSError, ValueError)


@contextmanager
def _friendly_errors():
    try:
        yield
    except _FAILURES as exc:
        raise click.ClickException(str(exc)) from exc


def _load_training_dataset(data_dir: str, seed: int) -> Dataset:
    g, feats, labels = load_dataset(data_dir)
    return Dataset(graph=g, features=feats,
                   split=split_dataset(g, seed=seed), labels=labels)


def _parse_fanouts(text: str):
    return tuple(int(part) for part in text.split(",") if part.strip())


def _parse_floats(text: str):
    return [float(part) for part in text.split(",") if part.strip()]


def _rec_payload(rec) -> dict:
    """The same shape the server's recommendation endpoints emit."""
    return {
        "query_id": rec.query_id,
        "query_name": rec.query_name,
        "items": [{"id": item.artist_id, "name": item.name,
                   "distance": item.distance, "genre": item.genre}
                  for item in rec.items],
    }


def _emit(payload: dict, as_json: bool) -> None:
    if as_json:
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        return
    click.echo(f"nearest to {payload['query_name']} [{payload['query_id']}]")
    for rank, item in enumerate(payload["items"], 1):
        genre = f"  {item['genre']}" if item.get("genre") else ""
        click.echo(f"{rank:3d}. {item['name']}  [{item['id']}]"
                   f"  d={item['distance']:.4f}{genre}")


# -- thin-client plumbing ----------------------------------------------


def _http(method: str, url: str, **kwargs):
    try:
        response = requests.request(method, url, timeout=30, **kwargs)
    except requests.RequestException as exc:
        raise click.ClickException(f"cannot reach server: {exc}") from exc
    if response.status_code >= 400:
        try:
            detail = response.json().get("detail", response.text)
        except ValueError:
            detail = response.text
        raise click.ClickException(
            f"server returned {response.status_code}: {detail}")
    return response.json()


def _remote_member_index(base: str, token: str) -> int:
    matches = _http("get", f"{base}/api/artists", params={"q": token})
    exact = [a for a in matches if a["id"] == token]
    if not exact:
        exact = [a for a in matches if a["name"].lower() == token.lower()]
    if len(exact) == 1:
        return exact[0]["index"]
    if len(matches) == 1:
        return matches[0]["index"]
    raise click.ClickException(
        f"cannot resolve member {token!r}: {len(matches)} matches")


def _require_local(ckpt, data_dir):
    if not (ckpt and data_dir):
        raise click.ClickException(
            "--ckpt and --data are required without --server")


# -- commands ----------------------------------------------------------


@click.group()
def main():
    """Artist-similarity embeddings: train, evaluate, recommend, serve."""


@main.command()
@click.option("--out", "out_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--blocks", default=4, show_default=True, type=int)
@click.option("--per-block", default=100, show_default=True, type=int)
@click.option("--p-in", default=0.1, show_default=True, type=float)
@click.option("--p-out", default=0.005, show_default=True, type=float)
@click.option("--dim", default=16, show_default=True, type=int)
@click.option("--noise", default=1.0, show_default=True, type=float)
@click.option("--seed", default=0, show_default=True, type=int)
def synth(out_dir, blocks, per_block, p_in, p_out, dim, noise, seed):
    """Write a synthetic block-structured dataset directory."""
    with _friendly_errors():
        g, feats, labels = generate_synthetic(
            blocks, per_block, p_in, p_out, dim, seed, noise=noise)
        save_dataset(out_dir, g, feats, labels=labels)
    click.echo(f"{g.n} artists, {g.num_edges} connections -> {out_dir}")


@main.command("train")
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--out", "ckpt_out", required=True,
              type=click.Path(dir_okay=False))
@click.option("--arch", type=click.Choice(sorted(ARCHS)), default="gatsy",
              show_default=True)
@click.option("--width", default=256, show_default=True, type=int)
@click.option("--epochs", default=50, show_default=True, type=int)
@click.option("--lr", default=6e-5, show_default=True, type=float)
@click.option("--weight-decay", default=0.01, show_default=True, type=float)
@click.option("--margin", default=0.2, show_default=True, type=float)
@click.option("--batch-size", default=256, show_default=True, type=int)
@click.option("--fanouts", default="20,20", show_default=True,
              help="per-layer neighbor sample sizes, comma-separated")
@click.option("--seed", default=0, show_default=True, type=int,
              help="controls initialization, batching, and the split")
@click.option("--supervised", is_flag=True,
              help="add the genre head and its classification loss")
@click.option("--log", "log_path", type=click.Path(dir_okay=False),
              default=None, help="write per-epoch JSON lines here")
def train_cmd(data_dir, ckpt_out, arch, width, epochs, lr, weight_decay,
              margin, batch_size, fanouts, seed, supervised, log_path):
    """Train a model on a dataset directory and save the checkpoint."""
    with _friendly_errors():
        dataset = _load_training_dataset(data_dir, seed)
        kwargs = dict(input_dim=dataset.features.data.shape[1], width=width)
        if supervised:
            if dataset.labels is None:
                raise click.ClickException(
                    "--supervised needs a labeled dataset")
            kwargs.update(genre_head=True,
                          num_genres=len(dataset.labels.vocabulary))
        config = TrainConfig(lr=lr, weight_decay=weight_decay, epochs=epochs,
                             margin=margin, batch_size=batch_size,
                             fanouts=_parse_fanouts(fanouts), seed=seed)
        params, log = train_model(dataset, config, ARCHS[arch](**kwargs),
                                  log_path=log_path)
        save_checkpoint(ckpt_out, params)
    last = log[-1]
    tail = f", val f1 {last['val_f1']:.4f}" if "val_f1" in last else ""
    click.echo(f"{count_params(params)} parameters, {len(log)} epochs")
    click.echo(f"final val ndcg {last['val_ndcg']:.4f}{tail}")
    click.echo(f"checkpoint -> {ckpt_out}")


@main.command("eval")
@click.option("--ckpt", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--k", default=200, show_default=True, type=int)
@click.option("--pool", type=click.Choice(["test", "validation"]),
              default="test", show_default=True)
@click.option("--seed", default=0, show_default=True, type=int,
              help="split seed; must match the one used for training")
def eval_cmd(ckpt, data_dir, k, pool, seed):
    """Score a checkpoint's ranking quality on held-out artists."""
    with _friendly_errors():
        dataset = _load_training_dataset(data_dir, seed)
        result = evaluate_embedding(load_checkpoint(ckpt), dataset,
                                    dataset.split, k=k, pool=pool)
    click.echo(f"mean ndcg@{result.k} over {result.query_nodes.size} "
               f"{pool} queries: {result.mean_ndcg:.4f} "
               f"({result.skipped} skipped)")


@main.command()
@click.option("--edges", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ids", "ids_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
def stats(edges, ids_path):
    """Print connection statistics for a graph."""
    with _friendly_errors():
        g = load_graph(edges, ids_path)
        s = compute_stats(g)
    click.echo(f"artists: {g.n}")
    click.echo(f"connections: {s.total_connections}")
    click.echo(f"avg connections per artist: "
               f"{s.avg_connections_per_artist:.2f}")
    click.echo(f"degree quartiles: {s.q1}/{s.q2}/{s.q3}")


def _provider_from(text):
    if text is None:
        return None
    if text == "stub":
        return StubProvider()
    if text.startswith("file:"):
        with _friendly_errors():
            return FileProvider(text[len("file:"):])
    raise click.ClickException("--provider must be 'stub' or 'file:PATH'")


@main.command()
@click.option("--edges", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--ids", "ids_path", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--cache", "cache_dir", required=True,
              type=click.Path(file_okay=False))
@click.option("--out", "out_path", required=True,
              type=click.Path(dir_okay=False))
@click.option("--offline", is_flag=True,
              help="never hit the network; rely on the cache alone")
@click.option("--provider", default=None, metavar="SPEC",
              help="text-embedding fallback: 'stub' or 'file:PATH'")
@click.option("--vocab-size", default=25, show_default=True, type=int)
def label(edges, ids_path, cache_dir, out_path, offline, provider,
          vocab_size):
    """Resolve a genre for every artist and write a labels file."""
    text_provider = _provider_from(provider)
    with _friendly_errors():
        g = load_graph(edges, ids_path)
        records = fetch_genres(g.artist_ids, cache_dir, offline=offline)
        vocab = build_vocabulary(records, size=vocab_size)
        pruned, labels = finalize_labels(g, records, vocab,
                                         provider=text_provider)
        save_labels(out_path, pruned, labels)
    click.echo(f"labeled {pruned.n} artists "
               f"({g.n - pruned.n} disconnected dropped) -> {out_path}")


@main.command("recommend")
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir",
              type=click.Path(exists=True, file_okay=False))
@click.option("--query", required=True, help="artist id or name")
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--server", default=None, metavar="URL",
              help="ask a running server instead of local files")
@click.option("--json", "as_json", is_flag=True,
              help="emit the result as JSON")
def recommend_cmd(ckpt, data_dir, query, k, server, as_json):
    """List the nearest artists to a catalog entry."""
    if server:
        quoted = urllib.parse.quote(query, safe="")
        payload = _http("get",
                        f"{server.rstrip('/')}/api/recommend/{quoted}",
                        params={"k": k})
    else:
        _require_local(ckpt, data_dir)
        with _friendly_errors():
            store = build_store(ckpt, load_serving_dataset(data_dir))
            payload = _rec_payload(recommend(store, query, k=k))
    _emit(payload, as_json)


@main.command()
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir",
              type=click.Path(exists=True, file_okay=False))
@click.option("--members", required=True,
              help="comma-separated artist ids or names")
@click.option("--name", default="fictitious mix", show_default=True)
@click.option("--k", default=5, show_default=True, type=int)
@click.option("--features", default=None,
              help="explicit feature vector, comma-separated floats")
@click.option("--server", default=None, metavar="URL",
              help="ask a running server instead of local files")
@click.option("--json", "as_json", is_flag=True,
              help="emit the result as JSON")
def inject(ckpt, data_dir, members, name, k, features, server, as_json):
    """What-if retrieval for a new artist tied to existing members."""
    tokens = [t.strip() for t in members.split(",") if t.strip()]
    if not tokens:
        raise click.ClickException("--members must name at least one artist")
    explicit = _parse_floats(features) if features else None
    if server:
        base = server.rstrip("/")
        body = {"name": name, "k": k,
                "members": [_remote_member_index(base, t) for t in tokens]}
        if explicit is not None:
            body["features"] = explicit
        payload = _http("post", f"{base}/api/fictitious", json=body)
    else:
        _require_local(ckpt, data_dir)
        with _friendly_errors():
            dataset = load_serving_dataset(data_dir)
            spec = FictitiousArtistSpec(
                name=name,
                members=tuple(find_artist(dataset.graph, t)
                              for t in tokens),
                features=explicit)
            payload = _rec_payload(
                recommend_fictitious(ckpt, dataset, spec, k=k))
    _emit(payload, as_json)


@main.command("serve")
@click.option("--ckpt", required=True,
              type=click.Path(exists=True, dir_okay=False))
@click.option("--data", "data_dir", required=True,
              type=click.Path(exists=True, file_okay=False))
@click.option("--bind", default="127.0.0.1:8000", show_default=True,
              metavar="HOST:PORT")
@click.option("--static", "static_dir", default=None,
              type=click.Path(file_okay=False),
              help="UI bundle directory to serve at /")
def serve_cmd(ckpt, data_dir, bind, static_dir):
    """Serve the JSON API (and optionally a UI bundle)."""
    with _friendly_errors():
        run_server(ckpt_path=ckpt, data_dir=data_dir, bind=bind,
                   static_dir=static_dir)


if __name__ == "__main__":
    main()
