"""The network: frame-wise GCN embedding over body/hand subgraphs, a
pre-norm transformer encoder over visible frames, a target decoder that
reinserts a shared mask token and predicts per-frame motion residuals,
projection heads for the contrastive branch, and a linear classifier.

All forward functions operate on a single sequence (no batch axis); the
training loops average per-sequence losses.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor
from .posedata import NUM_BODY_JOINTS, NUM_HAND_JOINTS, NUM_JOINTS


@dataclass(frozen=True)
class ModelConfig:
    """Network sizes. Defaults are desk-scale; the full-scale configuration
    (d_e=1536 etc.) is expressible but not the default."""

    d_e: int = 64
    enc_layers: int = 2
    dec_layers: int = 1
    heads: int = 4
    mlp_ratio: int = 4
    proj_dim: int = 32
    gcn_layers: int = 2
    gcn_hidden: int = 16
    num_classes: int | None = None
    max_T: int = 512
    share_hand_weights: bool = True

    def __post_init__(self):
        if self.d_e % self.heads != 0:
            raise ValueError(f"d_e={self.d_e} must be divisible by heads={self.heads}")
        if self.d_body <= 0:
            raise ValueError(f"d_e={self.d_e} too small to split across parts")

    @property
    def d_hand(self) -> int:
        # hands take ~2/3 of the width (d_e // 3 each), body the remainder
        return self.d_e // 3

    @property
    def d_body(self) -> int:
        return self.d_e - 2 * self.d_hand


BODY_EDGES = ((0, 1), (0, 2), (1, 3), (2, 4), (3, 5), (4, 6))
# wrist at 0, five chains of four finger joints each
HAND_EDGES = tuple(
    (0 if j == 0 else base + j - 1, base + j) for base in (1, 5, 9, 13, 17) for j in range(4)
)


@dataclass(frozen=True)
class SkeletonGraph:
    """Joint adjacency with self-loops plus its row-normalized form."""

    adjacency: np.ndarray
    norm_adjacency: np.ndarray

    @classmethod
    def from_edges(cls, num_joints: int, edges) -> "SkeletonGraph":
        adj = np.eye(num_joints)
        for a, b in edges:
            adj[a, b] = 1.0
            adj[b, a] = 1.0
        return cls(adjacency=adj, norm_adjacency=adj / adj.sum(axis=1, keepdims=True))

    @classmethod
    def body(cls) -> "SkeletonGraph":
        return cls.from_edges(NUM_BODY_JOINTS, BODY_EDGES)

    @classmethod
    def hand(cls) -> "SkeletonGraph":
        return cls.from_edges(NUM_HAND_JOINTS, HAND_EDGES)


BODY_GRAPH = SkeletonGraph.body()
HAND_GRAPH = SkeletonGraph.hand()


# -- parameter construction -------------------------------------------------


def _add_linear(store: ParamStore, rng, prefix: str, fan_in: int, fan_out: int) -> None:
    bound = 1.0 / math.sqrt(fan_in)
    store.add(f"{prefix}.w", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
    store.add(f"{prefix}.b", np.zeros(fan_out))


def _add_layer_norm(store: ParamStore, prefix: str, dim: int) -> None:
    store.add(f"{prefix}.g", np.ones(dim))
    store.add(f"{prefix}.b", np.zeros(dim))


def _add_gcn(store: ParamStore, rng, prefix: str, num_joints: int, cfg: ModelConfig, width: int) -> None:
    c_in = 2
    for layer in range(cfg.gcn_layers):
        _add_linear(store, rng, f"{prefix}.gcn{layer}", c_in, cfg.gcn_hidden)
        _add_layer_norm(store, f"{prefix}.gcn{layer}.ln", cfg.gcn_hidden)
        c_in = cfg.gcn_hidden
    _add_linear(store, rng, f"{prefix}.out", num_joints * cfg.gcn_hidden, width)


def _add_block(store: ParamStore, rng, prefix: str, cfg: ModelConfig) -> None:
    d = cfg.d_e
    bound = 1.0 / math.sqrt(d)
    _add_layer_norm(store, f"{prefix}.ln1", d)
    # q/k/v projections carry no bias: a key-side bias shifts every logit of
    # a query by the same amount, which softmax cancels exactly
    for name in ("wq", "wk", "wv"):
        store.add(f"{prefix}.attn.{name}", rng.uniform(-bound, bound, size=(d, d)))
    _add_linear(store, rng, f"{prefix}.attn.wo", d, d)
    _add_layer_norm(store, f"{prefix}.ln2", d)
    _add_linear(store, rng, f"{prefix}.mlp.fc1", d, cfg.mlp_ratio * d)
    _add_linear(store, rng, f"{prefix}.mlp.fc2", cfg.mlp_ratio * d, d)


def _add_stack(store: ParamStore, rng, prefix: str, layers: int, cfg: ModelConfig) -> None:
    store.add(f"{prefix}.pos", rng.normal(0.0, 0.02, size=(cfg.max_T, cfg.d_e)))
    for layer in range(layers):
        _add_block(store, rng, f"{prefix}.block{layer}", cfg)
    _add_layer_norm(store, f"{prefix}.ln_f", cfg.d_e)


def init_model_params(
    cfg: ModelConfig,
    rng: np.random.Generator,
    with_decoder: bool = True,
    with_classifier: bool = False,
) -> ParamStore:
    """Build a freshly initialized parameter store.

    Linear and GCN weights are uniform with bound 1/sqrt(fan_in); biases
    are zero; the mask token and positional tables are N(0, 0.02^2).
    """
    store = ParamStore()
    _add_gcn(store, rng, "embed.hand", NUM_HAND_JOINTS, cfg, cfg.d_hand)
    if not cfg.share_hand_weights:
        _add_gcn(store, rng, "embed.hand2", NUM_HAND_JOINTS, cfg, cfg.d_hand)
    _add_gcn(store, rng, "embed.body", NUM_BODY_JOINTS, cfg, cfg.d_body)
    _add_stack(store, rng, "encoder", cfg.enc_layers, cfg)
    if with_decoder:
        store.add("decoder.mask_token", rng.normal(0.0, 0.02, size=(cfg.d_e,)))
        _add_stack(store, rng, "decoder", cfg.dec_layers, cfg)
        _add_linear(store, rng, "decoder.head.fc1", cfg.d_e, cfg.d_e)
        _add_linear(store, rng, "decoder.head.fc2", cfg.d_e, NUM_JOINTS * 2)
        _add_linear(store, rng, "proj_q.fc1", cfg.d_e, cfg.d_e)
        _add_linear(store, rng, "proj_q.fc2", cfg.d_e, cfg.proj_dim)
    if with_classifier:
        if cfg.num_classes is None:
            raise ValueError("classifier requested but num_classes is unset")
        _add_linear(store, rng, "classifier", cfg.d_e, cfg.num_classes)
    return store


# -- forward passes ----------------------------------------------------------


def _gcn_forward(
    x: np.ndarray, params: ParamStore, prefix: str, graph: SkeletonGraph, cfg: ModelConfig
) -> Tensor:
    """Aggregate -> linear -> layer-norm -> relu stack, then flatten joints."""
    adj = Tensor(graph.norm_adjacency)
    h = Tensor(x)
    for layer in range(cfg.gcn_layers):
        h = nc.matmul(adj, h)
        h = nc.linear(h, params[f"{prefix}.gcn{layer}.w"], params[f"{prefix}.gcn{layer}.b"])
        h = nc.layer_norm(h, params[f"{prefix}.gcn{layer}.ln.g"], params[f"{prefix}.gcn{layer}.ln.b"])
        h = nc.relu(h)
    T, n_p = h.shape[0], h.shape[1]
    flat = nc.reshape(h, (T, n_p * cfg.gcn_hidden))
    return nc.linear(flat, params[f"{prefix}.out.w"], params[f"{prefix}.out.b"])


def embed_frames(coords_unit: np.ndarray, params: ParamStore, cfg: ModelConfig) -> Tensor:
    """Frame-wise embedding of unit-scale coordinates, (T, 49, 2) -> (T, d_e).

    Left and right hands go through the hand sub-network (shared weights by
    default), the upper body through its own; outputs are concatenated as
    [left hand, right hand, body].
    """
    if coords_unit.ndim != 3 or coords_unit.shape[1] != NUM_JOINTS or coords_unit.shape[2] != 2:
        raise nc.ShapeError(
            f"embed_frames: expected (T, {NUM_JOINTS}, 2), got {coords_unit.shape}"
        )
    left = _gcn_forward(coords_unit[:, 7:28], params, "embed.hand", HAND_GRAPH, cfg)
    right_prefix = "embed.hand" if cfg.share_hand_weights else "embed.hand2"
    right = _gcn_forward(coords_unit[:, 28:49], params, right_prefix, HAND_GRAPH, cfg)
    body = _gcn_forward(coords_unit[:, 0:7], params, "embed.body", BODY_GRAPH, cfg)
    return nc.concat([left, right, body], axis=1)


def _attention(
    x: Tensor, params: ParamStore, prefix: str, cfg: ModelConfig, attn_sink: list | None
) -> Tensor:
    T, d = x.shape
    dh = d // cfg.heads
    q = nc.matmul(x, params[f"{prefix}.wq"])
    k = nc.matmul(x, params[f"{prefix}.wk"])
    v = nc.matmul(x, params[f"{prefix}.wv"])
    qh = nc.transpose(nc.reshape(q, (T, cfg.heads, dh)), (1, 0, 2))
    kh = nc.transpose(nc.reshape(k, (T, cfg.heads, dh)), (1, 0, 2))
    vh = nc.transpose(nc.reshape(v, (T, cfg.heads, dh)), (1, 0, 2))
    scores = nc.mul(nc.matmul(qh, nc.transpose(kh, (0, 2, 1))), Tensor(1.0 / math.sqrt(dh)))
    probs = nc.softmax(scores, axis=-1)
    if attn_sink is not None:
        attn_sink.append(probs.data.copy())
    out = nc.reshape(nc.transpose(nc.matmul(probs, vh), (1, 0, 2)), (T, d))
    return nc.linear(out, params[f"{prefix}.wo.w"], params[f"{prefix}.wo.b"])


def _mlp(x: Tensor, params: ParamStore, prefix: str) -> Tensor:
    h = nc.gelu(nc.linear(x, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]))
    return nc.linear(h, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])


def _transformer(
    x: Tensor,
    positions: np.ndarray,
    params: ParamStore,
    prefix: str,
    layers: int,
    cfg: ModelConfig,
    attn_sink: list | None = None,
) -> Tensor:
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size and positions.max() >= cfg.max_T:
        raise ValueError(f"position {positions.max()} out of range (max_T={cfg.max_T})")
    x = nc.add(x, nc.take_rows(params[f"{prefix}.pos"], positions))
    for layer in range(layers):
        bp = f"{prefix}.block{layer}"
        h = nc.add(x, _attention(
            nc.layer_norm(x, params[f"{bp}.ln1.g"], params[f"{bp}.ln1.b"]),
            params, f"{bp}.attn", cfg, attn_sink,
        ))
        x = nc.add(h, _mlp(
            nc.layer_norm(h, params[f"{bp}.ln2.g"], params[f"{bp}.ln2.b"]),
            params, f"{bp}.mlp",
        ))
    return nc.layer_norm(x, params[f"{prefix}.ln_f.g"], params[f"{prefix}.ln_f.b"])


def encode(
    f_vis: Tensor,
    positions: np.ndarray,
    params: ParamStore,
    cfg: ModelConfig,
    attn_sink: list | None = None,
) -> Tensor:
    """Encode visible-frame embeddings; positions are the original frame
    indices (strictly increasing) used for the positional table lookup."""
    positions = np.asarray(positions, dtype=np.int64)
    if positions.size > 1 and not np.all(np.diff(positions) > 0):
        raise ValueError("encode positions must be strictly increasing")
    return _transformer(f_vis, positions, params, "encoder", cfg.enc_layers, cfg, attn_sink)


def assemble_decoder_input(
    f_enc: Tensor,
    visible_idx: np.ndarray,
    masked_idx: np.ndarray,
    total_frames: int,
    params: ParamStore,
) -> Tensor:
    """Interleave encoder outputs and the shared mask token back into the
    original frame order (before the decoder's positional lookup)."""
    x = nc.scatter_rows(f_enc, visible_idx, total_frames)
    if len(masked_idx):
        token = nc.reshape(params["decoder.mask_token"], (1, -1))
        tiles = nc.take_rows(token, np.zeros(len(masked_idx), dtype=np.int64))
        x = nc.add(x, nc.scatter_rows(tiles, masked_idx, total_frames))
    return x


def decode_predict(
    f_enc: Tensor,
    visible_idx: np.ndarray,
    masked_idx: np.ndarray,
    total_frames: int,
    params: ParamStore,
    cfg: ModelConfig,
) -> tuple[tuple[int, ...], Tensor]:
    """Predict per-joint motion residuals for the masked frames.

    Returns the masked frame indices (ascending) and a (|masked|, 49, 2)
    prediction tensor aligned with them.
    """
    visible_idx = np.asarray(visible_idx, dtype=np.int64)
    masked_idx = np.asarray(sorted(masked_idx), dtype=np.int64)
    if len(visible_idx) + len(masked_idx) != total_frames:
        raise ValueError(
            f"decoder frame bookkeeping: {len(visible_idx)} visible + "
            f"{len(masked_idx)} masked != T={total_frames}"
        )
    x = assemble_decoder_input(f_enc, visible_idx, masked_idx, total_frames, params)
    x = _transformer(x, np.arange(total_frames), params, "decoder", cfg.dec_layers, cfg)
    h = nc.gelu(nc.linear(x, params["decoder.head.fc1.w"], params["decoder.head.fc1.b"]))
    preds = nc.linear(h, params["decoder.head.fc2.w"], params["decoder.head.fc2.b"])
    preds = nc.reshape(preds, (total_frames, NUM_JOINTS, 2))
    if len(masked_idx) == 0:
        return (), nc.take_rows(preds, masked_idx)
    return tuple(int(i) for i in masked_idx), nc.take_rows(preds, masked_idx)


def project_global(f_enc: Tensor, params: ParamStore, head: str) -> Tensor:
    """Mean-pool over time, apply the 2-layer projection head ('proj_q' or
    'proj_k'), and L2-normalize to a unit vector of proj_dim."""
    if f_enc.shape[0] == 0:
        raise ValueError("project_global requires a non-empty feature sequence")
    pooled = nc.reshape(nc.mean(f_enc, axis=0), (1, -1))
    h = nc.gelu(nc.linear(pooled, params[f"{head}.fc1.w"], params[f"{head}.fc1.b"]))
    z = nc.linear(h, params[f"{head}.fc2.w"], params[f"{head}.fc2.b"])
    return nc.reshape(nc.l2_normalize(z, axis=1), (-1,))


def classify(f_enc: Tensor, params: ParamStore) -> Tensor:
    """Mean-pool over time then a single linear layer to class logits."""
    if "classifier.w" not in params:
        raise ValueError("classifier parameters are missing (num_classes unset?)")
    pooled = nc.reshape(nc.mean(f_enc, axis=0), (1, -1))
    logits = nc.linear(pooled, params["classifier.w"], params["classifier.b"])
    return nc.reshape(logits, (-1,))
