"""Network architectures for artist embeddings.

Three variants share one trunk of fully-connected layers: a pure FC
model, a mean-aggregation graph model, and the attention graph model.
A transformation is followed by batch norm and ELU except the last one,
whose raw output is the embedding.  An optional two-layer head maps
embeddings to genre scores.
"""

from __future__ import annotations

import json
import struct
from dataclasses import asdict, dataclass

import numpy as np

from .autodiff import (
    ShapeError,
    Tensor,
    as_tensor,
    batch_norm,
    concat,
    elu,
    gather_rows,
    leaky_relu,
    matmul,
    segment_softmax,
    segment_sum,
)
from .graph import ArtistGraph, NeighborSample, full_neighborhood

CHECKPOINT_MAGIC = b"GTSYCKPT"
CHECKPOINT_VERSION = 1

ATTENTION_SLOPE = 0.2


class ModelError(ValueError):
    """Invalid model configuration or checkpoint."""


@dataclass
class ModelConfig:
    input_dim: int = 2613
    width: int = 256
    fc_layers: int = 3
    gc_layers: int = 2
    gc_kind: str = "gat"            # "fc" | "sage" | "gat"
    attention_heads: int = 1
    batch_norm: bool = True
    activation: str = "elu"
    genre_head: bool = False
    num_genres: int = 25

    def __post_init__(self):
        if self.gc_kind not in ("fc", "sage", "gat"):
            raise ModelError(f"unknown gc_kind {self.gc_kind!r}")
        if self.gc_kind == "fc" and self.gc_layers != 0:
            raise ModelError("an fc-only model has no graph layers")
        if self.gc_kind != "fc" and self.gc_layers < 1:
            raise ModelError("graph models need at least one graph layer")
        if self.gc_kind == "gat" and self.attention_heads != 1:
            raise ModelError("the attention model uses exactly one head")
        if self.fc_layers < 1 or self.width < 1 or self.input_dim < 1:
            raise ModelError("dimensions must be positive")
        if self.activation != "elu":
            raise ModelError(f"unsupported activation {self.activation!r}")
        if self.genre_head and self.num_genres < 2:
            raise ModelError("genre head needs at least two classes")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, blob: str) -> "ModelConfig":
        return cls(**json.loads(blob))


def fc_config(input_dim: int = 2613, **kw) -> ModelConfig:
    return ModelConfig(input_dim=input_dim, gc_kind="fc", gc_layers=0,
                       batch_norm=False, **kw)


def sage_config(input_dim: int = 2613, **kw) -> ModelConfig:
    return ModelConfig(input_dim=input_dim, gc_kind="sage", gc_layers=3,
                       batch_norm=False, **kw)


def sage_bn_config(input_dim: int = 2613, **kw) -> ModelConfig:
    return ModelConfig(input_dim=input_dim, gc_kind="sage", gc_layers=3,
                       batch_norm=True, **kw)


def gatsy_config(input_dim: int = 2613, **kw) -> ModelConfig:
    return ModelConfig(input_dim=input_dim, gc_kind="gat", gc_layers=2,
                       batch_norm=True, **kw)


PRESETS = {
    "fc": fc_config,
    "sage": sage_config,
    "sage-bn": sage_bn_config,
    "gatsy": gatsy_config,
}


def _layer_plan(config: ModelConfig):
    """Ordered layer descriptors; the final layer gets no norm/activation."""
    plan = []
    in_dim = config.input_dim
    for i in range(config.fc_layers):
        plan.append({"name": f"fc{i + 1}", "kind": "fc",
                     "in": in_dim, "out": config.width})
        in_dim = config.width
    for i in range(config.gc_layers):
        plan.append({"name": f"{config.gc_kind}{i + 1}", "kind": config.gc_kind,
                     "in": in_dim, "out": config.width})
        in_dim = config.width
    for spec in plan[:-1]:
        spec["bn"] = config.batch_norm
        spec["act"] = True
    plan[-1]["bn"] = False
    plan[-1]["act"] = False
    return plan


class ModelParams:
    """Named trainable tensors plus batch-norm running statistics."""

    def __init__(self, config: ModelConfig, tensors: dict, running: dict):
        self.config = config
        self.tensors = tensors
        self.running = running

    def trainable(self):
        return list(self.tensors.values())

    def __getitem__(self, name: str) -> Tensor:
        return self.tensors[name]


def _glorot(rng, fan_in: int, fan_out: int, shape) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


def build_model(config: ModelConfig, seed: int = 0) -> ModelParams:
    """Initialize parameters: uniform Glorot weights, zero biases, unit
    scale / zero shift for batch norm.  Deterministic per seed."""
    rng = np.random.default_rng(seed)
    tensors, running = {}, {}

    def add_weight(name, fan_in, fan_out, shape):
        tensors[name] = Tensor(_glorot(rng, fan_in, fan_out, shape),
                               requires_grad=True)

    def add_bias(name, dim):
        tensors[name] = Tensor(np.zeros(dim), requires_grad=True)

    def add_bn(name, dim):
        tensors[f"{name}.gamma"] = Tensor(np.ones(dim), requires_grad=True)
        tensors[f"{name}.beta"] = Tensor(np.zeros(dim), requires_grad=True)
        running[f"{name}.mean"] = np.zeros(dim)
        running[f"{name}.var"] = np.ones(dim)

    for spec in _layer_plan(config):
        name, fi, fo = spec["name"], spec["in"], spec["out"]
        if spec["kind"] == "sage":
            add_weight(f"{name}.weight", 2 * fi, fo, (2 * fi, fo))
        else:
            add_weight(f"{name}.weight", fi, fo, (fi, fo))
        if spec["kind"] == "gat":
            tensors[f"{name}.attn"] = Tensor(
                _glorot(rng, 2 * fo, 1, (2 * fo,)), requires_grad=True)
        add_bias(f"{name}.bias", fo)
        if spec["bn"]:
            add_bn(f"bn_{name}", fo)

    if config.genre_head:
        w = config.width
        add_weight("head1.weight", w, w, (w, w))
        add_bias("head1.bias", w)
        if config.batch_norm:
            add_bn("bn_head1", w)
        add_weight("head2.weight", w, config.num_genres,
                   (w, config.num_genres))
        add_bias("head2.bias", config.num_genres)

    return ModelParams(config, tensors, running)


def count_params(params: ModelParams) -> int:
    """Total trainable scalars; running statistics are excluded."""
    return sum(t.data.size for t in params.tensors.values())


def parameter_breakdown(params: ModelParams):
    """Per-tensor (name, shape, count) rows plus per-group subtotals."""
    rows = [(name, t.shape, t.data.size)
            for name, t in params.tensors.items()]
    groups = {}
    for name, _, cnt in rows:
        prefix = name.split(".")[0]
        group = ("norm" if prefix.startswith("bn_")
                 else "head" if prefix.startswith("head")
                 else "trunk" if prefix.startswith("fc")
                 else "graph")
        groups[group] = groups.get(group, 0) + cnt
    return rows, groups


def format_parameter_table(params: ModelParams) -> str:
    rows, groups = parameter_breakdown(params)
    width = max(len(r[0]) for r in rows)
    lines = [f"{name:<{width}}  {str(shape):<14} {cnt:>10,}"
             for name, shape, cnt in rows]
    lines.append("-" * (width + 27))
    for group in sorted(groups):
        lines.append(f"{group:<{width}}  {'':14} {groups[group]:>10,}")
    lines.append(f"{'total':<{width}}  {'':14} {count_params(params):>10,}")
    return "\n".join(lines)


# -- layer forward passes ----------------------------------------------


def gat_layer(h: Tensor, layer, weight: Tensor, attn: Tensor, bias: Tensor,
              return_alpha: bool = False):
    """Single-head attention aggregation over a sampled layer.

    Attention runs over each destination's neighborhood *including the
    node itself*: a self edge is prepended to every segment, so the
    first entry of destination i's alpha block weights its own features.
    Per edge (j -> i): score = leaky_relu(attn . [Wh_i || Wh_j]); the
    scores are softmax-normalized over the segment and weight the sum of
    the transformed source features.
    """
    wh = matmul(h, weight)
    n_out = layer.n_out
    # The first n_out input rows are the destinations themselves, so a
    # self edge for destination i is an edge from row i.
    src = np.insert(layer.src_index, layer.dst_indptr[:-1],
                    np.arange(n_out))
    indptr = layer.dst_indptr + np.arange(n_out + 1)
    edge_dst = np.repeat(np.arange(n_out), np.diff(indptr))
    cat = concat([gather_rows(wh, edge_dst), gather_rows(wh, src)], axis=1)
    # row-local reduce rather than a matvec: per-edge score bits must not
    # depend on where the edge lands in the flattened edge array, so that
    # augmenting a graph leaves untouched neighborhoods bit-identical
    scores = (cat * attn).sum(axis=1)
    alpha = segment_softmax(leaky_relu(scores, ATTENTION_SLOPE), indptr)
    weighted = gather_rows(wh, src) * alpha.reshape(-1, 1)
    out = segment_sum(weighted, indptr, allow_empty=False) + bias
    return (out, alpha) if return_alpha else out


def sage_layer(h: Tensor, layer, weight: Tensor, bias: Tensor) -> Tensor:
    """Mean-neighbor aggregation: linear map of [self || mean(neighbors)]."""
    counts = np.diff(layer.dst_indptr)
    if counts.min() < 1:
        raise ShapeError("destination with no incoming edges; "
                         "sample with self-inclusion")
    total = segment_sum(gather_rows(h, layer.src_index), layer.dst_indptr,
                        allow_empty=False)
    mean = total * Tensor(1.0 / counts[:, None])
    self_rows = gather_rows(h, np.arange(layer.n_out))
    return matmul(concat([self_rows, mean], axis=1), weight) + bias


def _apply_bn(h, params, name, mode):
    return batch_norm(
        h, params[f"{name}.gamma"], params[f"{name}.beta"],
        params.running[f"{name}.mean"], params.running[f"{name}.var"],
        training=(mode == "train"))


def _resolve_support(support, config: ModelConfig):
    if config.gc_layers == 0:
        return None
    if isinstance(support, ArtistGraph):
        return full_neighborhood(support, np.arange(support.n),
                                 config.gc_layers)
    if isinstance(support, NeighborSample):
        if len(support.layers) != config.gc_layers:
            raise ShapeError(
                f"sample has {len(support.layers)} layers, model has "
                f"{config.gc_layers} graph layers")
        return support
    raise ShapeError("support must be an ArtistGraph or a NeighborSample")


def forward_embed(x, support, params: ModelParams, mode: str = "eval") -> Tensor:
    """Embed nodes: FC trunk, then the graph block.

    ``x`` holds one row per input node.  For a full graph pass ``support``
    is the ArtistGraph; for a minibatch it is a NeighborSample whose
    ``input_nodes`` order must match the rows of ``x``.  Train mode uses
    batch statistics (updating the running ones); eval mode uses running
    statistics.
    """
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    config = params.config
    h = as_tensor(x)
    if h.ndim != 2 or h.shape[1] != config.input_dim:
        raise ShapeError(
            f"features are {h.shape}, model expects (*, {config.input_dim})")
    sample = _resolve_support(support, config)
    if sample is not None and h.shape[0] != sample.input_nodes.size:
        raise ShapeError(
            f"{h.shape[0]} feature rows for {sample.input_nodes.size} "
            f"sampled input nodes")

    gc_index = 0
    for spec in _layer_plan(config):
        name = spec["name"]
        if spec["kind"] == "fc":
            h = matmul(h, params[f"{name}.weight"]) + params[f"{name}.bias"]
        elif spec["kind"] == "sage":
            h = sage_layer(h, sample.layers[gc_index],
                           params[f"{name}.weight"], params[f"{name}.bias"])
            gc_index += 1
        else:
            h = gat_layer(h, sample.layers[gc_index],
                          params[f"{name}.weight"], params[f"{name}.attn"],
                          params[f"{name}.bias"])
            gc_index += 1
        if spec["bn"]:
            h = _apply_bn(h, params, f"bn_{name}", mode)
        if spec["act"]:
            h = elu(h)
    return h


def forward_supervised(x, support, params: ModelParams, mode: str = "eval"):
    """Embedding plus genre scores from the two-layer head."""
    if not params.config.genre_head:
        raise ModelError("model was built without a genre head")
    emb = forward_embed(x, support, params, mode)
    h = matmul(emb, params["head1.weight"]) + params["head1.bias"]
    if params.config.batch_norm:
        h = _apply_bn(h, params, "bn_head1", mode)
    h = elu(h)
    scores = matmul(h, params["head2.weight"]) + params["head2.bias"]
    return emb, scores


# -- checkpoints -------------------------------------------------------


def save_checkpoint(path: str, params: ModelParams) -> None:
    entries = [(name, t.data) for name, t in params.tensors.items()]
    entries += [(name, arr) for name, arr in params.running.items()]
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        blob = params.config.to_json().encode("utf-8")
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            raw = name.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)))
            fh.write(raw)
            arr = np.ascontiguousarray(arr, dtype="<f8")
            fh.write(struct.pack("<B", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def _read_exact(fh, n: int, path: str) -> bytes:
    raw = fh.read(n)
    if len(raw) != n:
        raise ModelError(f"{path}: truncated checkpoint")
    return raw


def load_checkpoint(path: str) -> ModelParams:
    with open(path, "rb") as fh:
        if fh.read(len(CHECKPOINT_MAGIC)) != CHECKPOINT_MAGIC:
            raise ModelError(f"{path}: not a checkpoint file")
        (version,) = struct.unpack("<I", _read_exact(fh, 4, path))
        if version != CHECKPOINT_VERSION:
            raise ModelError(f"{path}: unsupported version {version}")
        (json_len,) = struct.unpack("<I", _read_exact(fh, 4, path))
        config = ModelConfig.from_json(
            _read_exact(fh, json_len, path).decode("utf-8"))
        params = build_model(config, seed=0)
        (count,) = struct.unpack("<I", _read_exact(fh, 4, path))
        seen = set()
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(fh, 2, path))
            name = _read_exact(fh, name_len, path).decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(fh, 1, path))
            shape = struct.unpack(f"<{ndim}I", _read_exact(fh, 4 * ndim, path))
            size = int(np.prod(shape)) if ndim else 1
            payload = _read_exact(fh, size * 8, path)
            arr = np.frombuffer(payload, dtype="<f8").reshape(shape).copy()
            if name in params.tensors:
                if params.tensors[name].shape != tuple(shape):
                    raise ModelError(
                        f"{path}: tensor {name!r} has shape {shape}, "
                        f"expected {params.tensors[name].shape}")
                params.tensors[name].data = arr
            elif name in params.running:
                params.running[name][...] = arr
            else:
                raise ModelError(f"{path}: unknown tensor {name!r}")
            seen.add(name)
        missing = (set(params.tensors) | set(params.running)) - seen
        if missing:
            raise ModelError(f"{path}: missing tensors {sorted(missing)}")
    return params
