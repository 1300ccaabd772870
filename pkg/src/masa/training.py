"""Loss assembly, the pre-training and fine-tuning loops, and evaluation.

Pre-training couples two objectives per step: reconstruction of motion
residuals at masked frames, and a ramped contrastive alignment between the
masked branch's pooled query and a momentum-encoded temporal crop of the
same sequence, against a FIFO bank of negatives. Sequences inside a batch
are processed one at a time and their losses averaged, so variable frame
counts need no padding.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import numcore as nc
from .alignment import MemoryBank, ema_update, info_nce, make_momentum_pair
from .masking import (
    MotionField,
    candidate_ratios,
    candidate_set,
    fixed_sample_indices,
    motion_residuals,
    select_mask,
    temporal_sample_indices,
    truncate_confidence,
)
from .model import ModelConfig, classify, decode_predict, embed_frames, encode, init_model_params, project_global
from .numcore import NumericsError, OptimState, ParamStore, Tensor, adamw_step, finetune_lr, pretrain_lr, sgd_momentum_step
from .posedata import COORD_HALF_RANGE, Dataset, PoseSequence, normalize_sequence
from .seeding import NS_AUG, NS_INIT, NS_MASK, NS_SAMPLE, NS_SHUFFLE, rng_for

LOG_FIELDS = ("epoch", "step", "l_m", "l_s", "lambda", "lr", "total")
FINETUNE_LOG_FIELDS = ("epoch", "step", "ce", "lr")


@dataclass(frozen=True)
class PretrainConfig:
    epochs: int = 400
    warmup_epochs: int = 20
    base_lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.95
    weight_decay: float = 1e-4
    batch_size: int = 64
    k_interval: int = 3
    eps_c: float = 0.4
    eps_m: float = 5.0
    delta: float = 0.5
    alpha: float = 0.9
    alpha_r: float = 0.5
    tau: float = 0.07
    lambda_s: float = 0.05
    ramp_epochs: int = 100
    mu: float = 0.996
    bank_size: int = 128
    pi_denominator: str = "all"
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.epochs > 0 and not self.warmup_epochs < self.epochs:
            raise ValueError("warmup_epochs must be < epochs")
        if self.ramp_epochs < 1:
            raise ValueError("ramp_epochs must be >= 1")
        if self.epochs > 0 and self.ramp_epochs > self.epochs:
            raise ValueError("ramp_epochs must be <= epochs")
        if not 0.0 <= self.alpha <= 1.0:
            raise ValueError("alpha must be in [0, 1]")
        if not 0.0 <= self.alpha_r < 1.0:
            raise ValueError("alpha_r must be in [0, 1)")
        if not 0.0 <= self.eps_c <= 1.0:
            raise ValueError("eps_c must be in [0, 1]")
        if self.eps_m < 0:
            raise ValueError("eps_m must be >= 0")
        if not 0.0 <= self.delta <= 1.0:
            raise ValueError("delta must be in [0, 1]")
        if self.tau <= 0:
            raise ValueError("tau must be > 0")
        if not 0.0 <= self.mu <= 1.0:
            raise ValueError("mu must be in [0, 1]")
        if self.batch_size < 1 or self.bank_size < 1:
            raise ValueError("batch_size and bank_size must be >= 1")
        if self.pi_denominator not in ("all", "valid"):
            raise ValueError("pi_denominator must be 'all' or 'valid'")


def desk_pretrain_config(seed: int = 0, **overrides) -> PretrainConfig:
    """Laptop-scale settings: small batch and bank, a 60-epoch budget, and a
    learning rate high enough to regress pixel-scale residuals in it."""
    base = dict(
        epochs=60, warmup_epochs=6, base_lr=1e-2, batch_size=16,
        ramp_epochs=30, bank_size=128, seed=seed,
    )
    base.update(overrides)
    return PretrainConfig(**base)


def desk_finetune_config(seed: int = 0, **overrides) -> FinetuneConfig:
    base = dict(epochs=60, batch_size=64, seed=seed)
    base.update(overrides)
    return FinetuneConfig(**base)


@dataclass(frozen=True)
class FinetuneConfig:
    epochs: int = 60
    base_lr: float = 0.01
    lr_step: int = 20
    lr_factor: float = 0.1
    momentum: float = 0.9
    batch_size: int = 64
    num_frames: int = 32
    seed: int = 0
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.num_frames < 1 or self.batch_size < 1:
            raise ValueError("num_frames and batch_size must be >= 1")


@dataclass(frozen=True)
class Metrics:
    """Per-instance (P-I) and per-class (P-C) top-k accuracies in percent."""

    top1_pi: float
    top5_pi: float
    top1_pc: float
    top5_pc: float
    per_class: list[float | None]
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {
            "top1_pi": self.top1_pi,
            "top5_pi": self.top5_pi,
            "top1_pc": self.top1_pc,
            "top5_pc": self.top5_pc,
            "per_class": self.per_class,
            "confusion": self.confusion,
        }


# -- losses ------------------------------------------------------------------


def motion_loss(preds: Tensor, masked_idx, motion: MotionField) -> Tensor:
    """Confidence-weighted squared error of predicted motion residuals,
    averaged over the masked frames."""
    idx = np.asarray(sorted(masked_idx), dtype=np.int64)
    if idx.size == 0:
        raise ValueError("motion loss needs a non-empty masked set")
    targets = Tensor(motion.residuals[idx])
    weights = Tensor(motion.paired_conf[idx][:, :, None])
    err = nc.mul(nc.sub(preds, targets), weights)
    return nc.mul(nc.sum_(nc.mul(err, err)), Tensor(1.0 / idx.size))


def lambda_schedule(epoch: int, lambda_s: float, ramp_epochs: int) -> float:
    """Contrastive weight, ramped linearly from 0 to lambda_s."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    if ramp_epochs < 1:
        raise ValueError("ramp_epochs must be >= 1")
    return lambda_s * min(epoch / ramp_epochs, 1.0)


def total_loss(l_m: Tensor, l_s: Tensor, epoch: int, config: PretrainConfig) -> Tensor:
    if not (np.isfinite(l_m.data) and np.isfinite(l_s.data)):
        raise NumericsError(
            f"non-finite loss terms at epoch {epoch}: l_m={float(l_m.data)}, l_s={float(l_s.data)}"
        )
    lam = lambda_schedule(epoch, config.lambda_s, config.ramp_epochs)
    return nc.add(l_m, nc.mul(l_s, Tensor(lam)))


def _mean_of(terms: list[Tensor]) -> Tensor:
    total = terms[0]
    for t in terms[1:]:
        total = nc.add(total, t)
    return nc.mul(total, Tensor(1.0 / len(terms)))


def _log_softmax_nll(logits: Tensor, label: int) -> Tensor:
    max_logit = Tensor(float(np.max(logits.data)))
    lse = nc.add(nc.log(nc.sum_(nc.exp(nc.sub(logits, max_logit)))), max_logit)
    return nc.sub(lse, logits[label])


# -- pre-training --------------------------------------------------------------


@dataclass
class PreparedSequence:
    """Masking inputs cached per sequence: they are epoch-invariant."""

    seq_id: str
    num_frames: int
    coords_unit: np.ndarray  # (T, 49, 2) part-normalized, scaled to [-1, 1]
    motion: MotionField
    candidates: tuple[int, ...]
    mean_ratio: float


def prepare_sequence(seq: PoseSequence, config: PretrainConfig) -> PreparedSequence:
    coords_norm = normalize_sequence(seq)
    conf = truncate_confidence(seq.conf, config.eps_c)
    motion = motion_residuals(coords_norm, conf, config.k_interval)
    candidates = candidate_set(motion, config.eps_m, config.delta, config.pi_denominator)
    ratios = candidate_ratios(motion, config.eps_m, config.pi_denominator)
    return PreparedSequence(
        seq_id=seq.id,
        num_frames=seq.num_frames,
        coords_unit=coords_norm / COORD_HALF_RANGE,
        motion=motion,
        candidates=candidates,
        mean_ratio=float(ratios.mean()) if ratios.size else 0.0,
    )


def draw_mask(
    prep: PreparedSequence, alpha: float, rng: np.random.Generator
) -> tuple[np.ndarray, bool]:
    """Select masked frames; fall back to a uniform draw over all residual
    frames when the motion-aware candidate set yields nothing."""
    plan = select_mask(prep.candidates, alpha, rng)
    masked = plan.masked
    fallback = False
    if not masked:
        fallback = True
        pool = tuple(range(prep.num_frames - prep.motion.interval))
        masked = select_mask(pool, alpha, rng).masked
    return np.asarray(masked, dtype=np.int64), fallback


@dataclass
class PretrainResult:
    params: ParamStore
    key_params: ParamStore
    config: PretrainConfig
    log: list[dict]
    fallback_count: int
    bank_count: int


def _forward_masked_branch(
    prep: PreparedSequence,
    masked: np.ndarray,
    params: ParamStore,
    cfg: ModelConfig,
) -> tuple[Tensor, Tensor]:
    """Returns (l_m, F_enc of the visible frames)."""
    masked_set = set(int(i) for i in masked)
    visible = np.asarray(
        [i for i in range(prep.num_frames) if i not in masked_set], dtype=np.int64
    )
    f_vis = embed_frames(prep.coords_unit[visible], params, cfg)
    f_enc = encode(f_vis, visible, params, cfg)
    if masked.size:
        _, preds = decode_predict(f_enc, visible, masked, prep.num_frames, params, cfg)
        l_m = motion_loss(preds, masked, prep.motion)
    else:
        l_m = Tensor(0.0)
    return l_m, f_enc


def pretrain(config: PretrainConfig, data: Dataset) -> PretrainResult:
    """Run the self-supervised loop; fully deterministic given config.seed."""
    if config.batch_size > len(data.sequences):
        raise ValueError(
            f"batch_size {config.batch_size} exceeds dataset size {len(data.sequences)}"
        )
    cfg = config.model
    params = init_model_params(cfg, rng_for(config.seed, NS_INIT), with_decoder=True)
    pair = make_momentum_pair(params, config.mu)
    bank = MemoryBank(config.bank_size, cfg.proj_dim)
    opt = OptimState()
    prepared = [prepare_sequence(s, config) for s in data.sequences]

    log: list[dict] = []
    fallback_count = 0
    for e0 in range(config.epochs):
        lr = pretrain_lr(e0, config.base_lr, config.warmup_epochs, config.epochs)
        lam = lambda_schedule(e0, config.lambda_s, config.ramp_epochs)
        order = rng_for(config.seed, NS_SHUFFLE, e0).permutation(len(prepared))
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = order[start : start + config.batch_size]
            l_m_terms: list[Tensor] = []
            l_s_terms: list[Tensor] = []
            new_keys: list[np.ndarray] = []
            for slot, di in enumerate(chunk):
                prep = prepared[di]
                masked, fellback = draw_mask(
                    prep, config.alpha, rng_for(config.seed, NS_MASK, e0, step, slot)
                )
                fallback_count += int(fellback)
                l_m, f_enc = _forward_masked_branch(prep, masked, params, cfg)
                q = project_global(f_enc, params, "proj_q")

                aug_idx = temporal_sample_indices(
                    prep.num_frames, config.alpha_r, rng_for(config.seed, NS_AUG, e0, step, slot)
                )
                f_key = embed_frames(prep.coords_unit[aug_idx], pair.key, cfg)
                f_key_enc = encode(f_key, np.arange(len(aug_idx)), pair.key, cfg)
                k_pos = project_global(f_key_enc, pair.key, "proj_k").data.copy()

                l_m_terms.append(l_m)
                l_s_terms.append(info_nce(q, k_pos, bank, config.tau))
                new_keys.append(k_pos)

            l_m_mean = _mean_of(l_m_terms)
            l_s_mean = _mean_of(l_s_terms)
            try:
                loss = total_loss(l_m_mean, l_s_mean, e0, config)
            except NumericsError as exc:
                raise NumericsError(f"epoch {e0 + 1} step {step}: {exc}") from exc
            params.zero_grads()
            nc.backward(loss)
            adamw_step(
                params, opt, lr, config.beta1, config.beta2, 1e-8, config.weight_decay
            )
            ema_update(pair)
            bank.enqueue(np.stack(new_keys))
            log.append(
                {
                    "epoch": e0 + 1,
                    "step": step,
                    "l_m": float(l_m_mean.data),
                    "l_s": float(l_s_mean.data),
                    "lambda": lam,
                    "lr": lr,
                    "total": float(loss.data),
                }
            )
    return PretrainResult(
        params=params,
        key_params=pair.key,
        config=config,
        log=log,
        fallback_count=fallback_count,
        bank_count=len(bank),
    )


def epoch_means(log: list[dict], column: str) -> dict[int, float]:
    """Mean of one loss-log column per epoch."""
    sums: dict[int, list[float]] = {}
    for row in log:
        sums.setdefault(row["epoch"], []).append(row[column])
    return {epoch: float(np.mean(vals)) for epoch, vals in sums.items()}


def checkpoint_store(result: PretrainResult) -> ParamStore:
    """Trainable parameters plus the EMA branch under ``momentum.*`` paths."""
    combined = ParamStore()
    for path, t in result.params.items():
        combined.add(path, t.data.copy())
    for path, t in result.key_params.items():
        combined.add(f"momentum.{path}", t.data.copy())
    return combined


# -- fine-tuning and evaluation -------------------------------------------------


@dataclass
class FinetuneResult:
    params: ParamStore
    metrics: Metrics | None
    train_metrics: Metrics | None
    log: list[dict]


def _load_backbone(params: ParamStore, init: ParamStore) -> None:
    for path, t in params.items():
        if not path.startswith(("embed.", "encoder.")):
            continue
        if path not in init:
            raise ValueError(f"checkpoint is missing parameter {path!r}")
        src = init[path].data
        if src.shape != t.data.shape:
            raise ValueError(
                f"checkpoint shape mismatch at {path!r}: {src.shape} vs {t.data.shape}"
            )
        t.data[...] = src


def finetune(
    config: FinetuneConfig,
    data_train: Dataset,
    data_test: Dataset | None,
    init: ParamStore | None = None,
) -> FinetuneResult:
    """Supervised training of embed + encoder + fresh classifier."""
    num_classes = config.model.num_classes or data_train.num_classes
    if num_classes < 2:
        raise ValueError("fine-tuning needs at least two classes")
    cfg = replace(config.model, num_classes=num_classes)
    params = init_model_params(
        cfg, rng_for(config.seed, NS_INIT), with_decoder=False, with_classifier=True
    )
    if init is not None:
        _load_backbone(params, init)

    labels = []
    for seq in data_train.sequences:
        if seq.label is None:
            raise ValueError(f"sequence {seq.id!r} has no label")
        if seq.label >= num_classes:
            raise ValueError(f"sequence {seq.id!r}: label {seq.label} out of range")
        labels.append(seq.label)
    cache = [normalize_sequence(s) / COORD_HALF_RANGE for s in data_train.sequences]

    opt = OptimState()
    log: list[dict] = []
    positions = np.arange(config.num_frames)
    for e0 in range(config.epochs):
        lr = finetune_lr(e0, config.base_lr, config.lr_step, config.lr_factor)
        order = rng_for(config.seed, NS_SHUFFLE, e0).permutation(len(cache))
        for step, start in enumerate(range(0, len(order), config.batch_size)):
            chunk = order[start : start + config.batch_size]
            ce_terms = []
            for slot, di in enumerate(chunk):
                srng = rng_for(config.seed, NS_SAMPLE, e0, step, slot)
                idx = fixed_sample_indices(cache[di].shape[0], config.num_frames, "random", srng)
                f_enc = encode(embed_frames(cache[di][idx], params, cfg), positions, params, cfg)
                ce_terms.append(_log_softmax_nll(classify(f_enc, params), labels[di]))
            ce = _mean_of(ce_terms)
            if not np.isfinite(ce.data):
                raise NumericsError(f"non-finite loss at epoch {e0 + 1} step {step}")
            params.zero_grads()
            nc.backward(ce)
            sgd_momentum_step(params, opt, lr, config.momentum)
            log.append({"epoch": e0 + 1, "step": step, "ce": float(ce.data), "lr": lr})

    train_metrics = evaluate(params, cfg, data_train, config.num_frames)
    metrics = evaluate(params, cfg, data_test, config.num_frames) if data_test else None
    return FinetuneResult(params=params, metrics=metrics, train_metrics=train_metrics, log=log)


def predict_logits(
    params: ParamStore, cfg: ModelConfig, dataset: Dataset, num_frames: int = 32
) -> np.ndarray:
    """Center-sampled evaluation forward pass; returns (n, num_classes)."""
    rows = []
    positions = np.arange(num_frames)
    for seq in dataset.sequences:
        idx = fixed_sample_indices(seq.num_frames, num_frames, "center")
        coords = normalize_sequence(seq)[idx] / COORD_HALF_RANGE
        f_enc = encode(embed_frames(coords, params, cfg), positions, params, cfg)
        rows.append(classify(f_enc, params).data)
    return np.stack(rows)


def evaluate(
    params: ParamStore, cfg: ModelConfig, dataset: Dataset, num_frames: int = 32
) -> Metrics:
    if not dataset.sequences:
        raise ValueError("cannot evaluate on an empty dataset")
    labels = np.asarray([s.label for s in dataset.sequences])
    if any(l is None for l in labels):
        raise ValueError("evaluation requires labeled sequences")
    return metrics_from_predictions(labels, predict_logits(params, cfg, dataset, num_frames))


def metrics_from_predictions(labels: np.ndarray, logits: np.ndarray) -> Metrics:
    """Compute P-I / P-C top-1 and top-5 accuracies plus the confusion matrix.

    P-I is the fraction of instances whose true label is among the k
    highest logits; P-C averages the per-class instance accuracies
    uniformly over the classes present in the test set.
    """
    labels = np.asarray(labels, dtype=np.int64)
    num_classes = logits.shape[1]
    k = min(5, num_classes)
    order = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    top1 = order[:, 0] == labels
    topk = (order == labels[:, None]).any(axis=1)

    per_class: list[float | None] = []
    pc1, pck = [], []
    for c in range(num_classes):
        sel = labels == c
        if not sel.any():
            per_class.append(None)
            continue
        acc1 = 100.0 * float(top1[sel].mean())
        per_class.append(acc1)
        pc1.append(acc1)
        pck.append(100.0 * float(topk[sel].mean()))

    confusion = np.zeros((num_classes, num_classes), dtype=np.int64)
    for true, pred in zip(labels, order[:, 0]):
        confusion[true, pred] += 1

    return Metrics(
        top1_pi=100.0 * float(top1.mean()),
        top5_pi=100.0 * float(topk.mean()),
        top1_pc=float(np.mean(pc1)),
        top5_pc=float(np.mean(pck)),
        per_class=per_class,
        confusion=confusion.tolist(),
    )
