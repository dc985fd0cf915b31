"""JSON API over a frozen embedding store.

One store is shared by every request and never mutated: what-if
injections are computed per call from the base dataset and thrown away,
so concurrent clients cannot see each other's experiments.
"""

from __future__ import annotations

import threading
from pathlib import Path
from typing import List, Optional

from fastapi import FastAPI, HTTPException, Query
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel, Field

from .graph import load_dataset
from .recommend import (
    EmbeddingStore,
    FictitiousArtistSpec,
    Recommendation,
    RecommendError,
    UnknownArtistError,
    build_store,
    project_2d,
    recommend,
    recommend_fictitious,
    search_artists,
)
from .training import Dataset


class ArtistOut(BaseModel):
    """Identity of one catalog entry.

    ``index`` is the node's position in the store — the integer handle
    the injection endpoint expects in ``members``.
    """

    index: int
    id: str
    name: str
    genre: Optional[str] = None


class RecommendedOut(BaseModel):
    id: str
    name: str
    distance: float
    genre: Optional[str] = None


class RecommendationOut(BaseModel):
    """Ranked neighbors for a query, nearest first."""

    query_id: str
    query_name: str
    items: List[RecommendedOut]


class FictitiousIn(BaseModel):
    """A hypothetical artist defined by the members it should resemble."""

    name: str = Field(min_length=1)
    members: List[int] = Field(min_length=1)
    k: int = Field(default=5, ge=1)
    features: Optional[List[float]] = None


class ProjectionPointOut(ArtistOut):
    x: float
    y: float


class HealthOut(BaseModel):
    status: str
    artists: int
    provenance: str


def _recommendation_out(rec: Recommendation) -> RecommendationOut:
    return RecommendationOut(
        query_id=rec.query_id,
        query_name=rec.query_name,
        items=[RecommendedOut(id=item.artist_id, name=item.name,
                              distance=item.distance, genre=item.genre)
               for item in rec.items])


def load_serving_dataset(data_dir: str) -> Dataset:
    """Read a dataset directory into the shape the store builder expects."""
    g, feats, labels = load_dataset(data_dir)
    return Dataset(graph=g, features=feats, split=None, labels=labels)


def create_app(store: EmbeddingStore, dataset: Dataset, ckpt_path: str,
               static_dir: Optional[str] = None) -> FastAPI:
    """Wire the API around one immutable store.

    ``dataset`` and ``ckpt_path`` are only consulted when a request
    injects a fictitious artist, which re-embeds the augmented graph
    from scratch.  ``static_dir``, when it exists, is mounted at the
    root so the same process can serve a UI bundle.
    """
    app = FastAPI(title="artist similarity service")
    id_index = {aid: i for i, aid in enumerate(store.artist_ids)}
    projection_lock = threading.Lock()
    projection_cache: dict = {}

    def artist_out(node: int) -> ArtistOut:
        return ArtistOut(index=node, id=store.artist_ids[node],
                         name=store.names[node], genre=store.genre_of(node))

    @app.exception_handler(RequestValidationError)
    async def on_invalid_request(request, exc):
        return JSONResponse(status_code=400, content={"detail": str(exc)})

    @app.exception_handler(RecommendError)
    async def on_recommend_error(request, exc):
        status = 404 if isinstance(exc, UnknownArtistError) else 400
        payload = {"detail": str(exc)}
        if exc.candidates:
            payload["candidates"] = list(exc.candidates)
        return JSONResponse(status_code=status, content=payload)

    @app.get("/api/health", response_model=HealthOut)
    def health() -> HealthOut:
        return HealthOut(status="ok", artists=store.n,
                         provenance=store.provenance)

    @app.get("/api/artists", response_model=List[ArtistOut])
    def artists(q: str = "") -> List[ArtistOut]:
        return [artist_out(i) for i in search_artists(store, q)]

    @app.get("/api/artists/{artist_id}", response_model=ArtistOut)
    def artist_detail(artist_id: str) -> ArtistOut:
        node = id_index.get(artist_id)
        if node is None:
            raise HTTPException(status_code=404,
                                detail=f"unknown artist id {artist_id!r}")
        return artist_out(node)

    @app.get("/api/recommend/{artist_id}", response_model=RecommendationOut)
    def recommend_for(artist_id: str,
                      k: int = Query(default=5, ge=1)) -> RecommendationOut:
        return _recommendation_out(recommend(store, artist_id, k=k))

    @app.post("/api/fictitious", response_model=RecommendationOut)
    def fictitious(body: FictitiousIn) -> RecommendationOut:
        spec = FictitiousArtistSpec(name=body.name,
                                    members=tuple(body.members),
                                    features=body.features)
        rec = recommend_fictitious(ckpt_path, dataset, spec, k=body.k)
        return _recommendation_out(rec)

    @app.get("/api/projection", response_model=List[ProjectionPointOut])
    def projection() -> List[ProjectionPointOut]:
        with projection_lock:
            if "xy" not in projection_cache:
                projection_cache["xy"] = project_2d(store)
            xy = projection_cache["xy"]
        return [ProjectionPointOut(index=i, id=store.artist_ids[i],
                                   name=store.names[i],
                                   genre=store.genre_of(i),
                                   x=float(xy[i, 0]), y=float(xy[i, 1]))
                for i in range(store.n)]

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=static_dir, html=True),
                  name="ui")

    return app


def serve(ckpt_path: str, data_dir: str, bind: str = "127.0.0.1:8000",
          static_dir: Optional[str] = None) -> None:
    """Load everything once, then block serving requests."""
    import uvicorn

    dataset = load_serving_dataset(data_dir)
    store = build_store(ckpt_path, dataset)
    app = create_app(store, dataset, ckpt_path, static_dir=static_dir)
    host, _, port = bind.rpartition(":")
    uvicorn.run(app, host=host or "127.0.0.1", port=int(port))
