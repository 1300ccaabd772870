"""Gradient verification fixtures: per-primitive finite-difference checks
and an end-to-end check of the combined pre-training objective on a tiny
deterministic configuration."""

from __future__ import annotations

import numpy as np

from . import numcore as nc
from .alignment import MemoryBank, info_nce
from .masking import motion_residuals, truncate_confidence
from .model import ModelConfig, decode_predict, embed_frames, encode, init_model_params, project_global
from .numcore import ParamStore, Tensor, grad_check
from .posedata import COORD_HALF_RANGE, NUM_JOINTS
from .training import motion_loss

OPS_TOLERANCE = 1e-6
PIPELINE_TOLERANCE = 1e-3


def _scalarize(out: Tensor, rng: np.random.Generator) -> Tensor:
    """Project an op output to a scalar with a fixed random weighting."""
    w = Tensor(rng.standard_normal(out.shape))
    return nc.sum_(nc.mul(out, w))


def primitive_op_checks(seed: int = 0, h: float = 1e-5) -> list[tuple[str, float]]:
    """Finite-difference check of every differentiable primitive.

    Inputs are drawn away from relu's kink; returns (op name, max relative
    error) pairs.
    """
    rng = np.random.default_rng(seed)

    def store_with(**arrays) -> ParamStore:
        s = ParamStore()
        for name, arr in arrays.items():
            s.add(name, arr)
        return s

    checks: list[tuple[str, ParamStore, callable]] = []

    a = rng.standard_normal((3, 4))
    b = rng.standard_normal((3, 4))
    row = rng.standard_normal((1, 4))
    checks.append(("add", store_with(a=a, b=row),
                   lambda s: _scalarize(nc.add(s["a"], s["b"]), np.random.default_rng(1))))
    checks.append(("sub", store_with(a=a, b=b),
                   lambda s: _scalarize(nc.sub(s["a"], s["b"]), np.random.default_rng(2))))
    checks.append(("mul", store_with(a=a, b=row),
                   lambda s: _scalarize(nc.mul(s["a"], s["b"]), np.random.default_rng(3))))

    m1 = rng.standard_normal((3, 4))
    m2 = rng.standard_normal((4, 5))
    checks.append(("matmul", store_with(a=m1, b=m2),
                   lambda s: _scalarize(nc.matmul(s["a"], s["b"]), np.random.default_rng(4))))
    mb = rng.standard_normal((2, 4, 5))
    checks.append(("matmul_batched", store_with(a=m1, b=mb),
                   lambda s: _scalarize(nc.matmul(s["a"], s["b"]), np.random.default_rng(5))))

    c = rng.standard_normal((2, 3, 4))
    checks.append(("reshape", store_with(a=c),
                   lambda s: _scalarize(nc.reshape(s["a"], (6, 4)), np.random.default_rng(6))))
    checks.append(("transpose", store_with(a=c),
                   lambda s: _scalarize(nc.transpose(s["a"], (2, 0, 1)), np.random.default_rng(7))))
    checks.append(("concat", store_with(a=a, b=b),
                   lambda s: _scalarize(nc.concat([s["a"], s["b"]], axis=0), np.random.default_rng(8))))
    checks.append(("slice", store_with(a=c),
                   lambda s: _scalarize(s["a"][1, 0:2], np.random.default_rng(9))))

    table = rng.standard_normal((6, 4))
    dup_idx = np.array([0, 2, 2, 5])
    checks.append(("take_rows", store_with(a=table),
                   lambda s: _scalarize(nc.take_rows(s["a"], dup_idx), np.random.default_rng(10))))
    rows = rng.standard_normal((3, 4))
    checks.append(("scatter_rows", store_with(a=rows),
                   lambda s: _scalarize(nc.scatter_rows(s["a"], np.array([4, 0, 2]), 6),
                                        np.random.default_rng(11))))

    checks.append(("sum", store_with(a=c),
                   lambda s: _scalarize(nc.sum_(s["a"], axis=1), np.random.default_rng(12))))
    checks.append(("mean", store_with(a=c),
                   lambda s: _scalarize(nc.mean(s["a"], axis=-1), np.random.default_rng(13))))
    checks.append(("softmax", store_with(a=a),
                   lambda s: _scalarize(nc.softmax(s["a"], axis=-1), np.random.default_rng(14))))

    away = rng.uniform(0.3, 1.5, size=(3, 4)) * np.where(rng.random((3, 4)) < 0.5, -1.0, 1.0)
    checks.append(("relu", store_with(a=away),
                   lambda s: _scalarize(nc.relu(s["a"]), np.random.default_rng(15))))
    checks.append(("gelu", store_with(a=a),
                   lambda s: _scalarize(nc.gelu(s["a"]), np.random.default_rng(16))))

    pos = rng.uniform(0.5, 2.0, size=(3, 4))
    checks.append(("log", store_with(a=pos),
                   lambda s: _scalarize(nc.log(s["a"]), np.random.default_rng(17))))
    checks.append(("exp", store_with(a=a),
                   lambda s: _scalarize(nc.exp(s["a"]), np.random.default_rng(18))))
    checks.append(("powc", store_with(a=pos),
                   lambda s: _scalarize(nc.powc(s["a"], -0.5), np.random.default_rng(19))))

    gain = rng.uniform(0.5, 1.5, size=4)
    bias = rng.standard_normal(4)
    checks.append(("layer_norm", store_with(a=a, g=gain, b=bias),
                   lambda s: _scalarize(nc.layer_norm(s["a"], s["g"], s["b"]), np.random.default_rng(20))))
    checks.append(("l2_normalize", store_with(a=a),
                   lambda s: _scalarize(nc.l2_normalize(s["a"], axis=1), np.random.default_rng(21))))
    w = rng.standard_normal((4, 3))
    lb = rng.standard_normal(3)
    checks.append(("linear", store_with(a=a, w=w, b=lb),
                   lambda s: _scalarize(nc.linear(s["a"], s["w"], s["b"]), np.random.default_rng(22))))

    results = []
    for name, store, fn in checks:
        results.append((name, grad_check(fn, store, h=h, seed=seed)))
    return results


def tiny_model_config() -> ModelConfig:
    return ModelConfig(
        d_e=18, enc_layers=1, dec_layers=1, heads=2, mlp_ratio=2,
        proj_dim=8, gcn_layers=1, gcn_hidden=4, max_T=16,
    )


def full_pipeline_check(seed: int = 0, h: float = 1e-5) -> float:
    """Gradient-check the combined objective (reconstruction + weighted
    contrastive term) end to end on a fixed tiny instance."""
    cfg = tiny_model_config()
    rng = np.random.default_rng(seed)
    T, k = 8, 2

    # smooth trajectories with small inter-frame drift: keeps the squared
    # reconstruction loss at O(1) so the central-difference oracle's
    # cancellation noise stays below the relative-error floor
    base = rng.uniform(-100.0, 100.0, size=(1, NUM_JOINTS, 2))
    drift = rng.uniform(-0.05, 0.05, size=(T, NUM_JOINTS, 2)).cumsum(axis=0)
    coords_norm = np.clip(base + drift, -COORD_HALF_RANGE, COORD_HALF_RANGE)
    conf = truncate_confidence(rng.uniform(0.5, 1.0, size=(T, NUM_JOINTS)), 0.4)
    field = motion_residuals(coords_norm, conf, k)
    coords_unit = coords_norm / COORD_HALF_RANGE

    masked = np.array([1, 3, 4])
    visible = np.array([i for i in range(T) if i not in set(masked.tolist())])
    aug_idx = np.array([0, 2, 5, 7])

    bank = MemoryBank(4, cfg.proj_dim)
    raw = rng.standard_normal((4, cfg.proj_dim))
    bank.enqueue(raw / np.linalg.norm(raw, axis=1, keepdims=True))

    store = init_model_params(cfg, np.random.default_rng(seed + 1), with_decoder=True)
    # evaluate at a down-scaled point: keeps the total objective small (~0.1)
    # so central-difference cancellation noise sits well under the 1e-8
    # relative-error floor even for near-zero gradient entries
    for _, t in store.items():
        t.data *= 0.35
    key_store = store.copy(requires_grad=False)

    k_enc = encode(
        embed_frames(coords_unit[aug_idx], key_store, cfg),
        np.arange(len(aug_idx)), key_store, cfg,
    )
    k_pos = project_global(k_enc, key_store, "proj_q").data.copy()

    def objective(s: ParamStore) -> Tensor:
        f_enc = encode(embed_frames(coords_unit[visible], s, cfg), visible, s, cfg)
        _, preds = decode_predict(f_enc, visible, masked, T, s, cfg)
        l_m = motion_loss(preds, masked, field)
        q = project_global(f_enc, s, "proj_q")
        l_s = info_nce(q, k_pos, bank, tau=0.07)
        return nc.add(l_m, nc.mul(l_s, Tensor(0.05)))

    return grad_check(objective, store, h=h, seed=seed)
