"""Motion residuals, confidence truncation, motion-aware frame masking,
and the temporal sampling strategies used for augmentation and fine-tuning.

Frame indices are 0-based throughout: the residual at index i is the
coordinate difference between frames i+k and i, valid for i < T-k, and the
candidate/masked sets are subsets of {0, ..., T-k-1}.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .posedata import PoseSequence


@dataclass(frozen=True)
class MotionField:
    """Frame-to-frame motion at a fixed interval.

    residuals[i] = coords[i+k] - coords[i] and paired_conf[i] = conf[i] *
    conf[i+k] for i < T-k; both are zero in the tail i >= T-k.
    """

    residuals: np.ndarray  # (T, N, 2)
    paired_conf: np.ndarray  # (T, N)
    interval: int


@dataclass(frozen=True)
class MaskPlan:
    """Candidate frames eligible for masking and the selected subset."""

    candidates: tuple[int, ...]
    masked: tuple[int, ...]
    ratio: float

    def __post_init__(self):
        if not set(self.masked) <= set(self.candidates):
            raise ValueError("masked indices must be a subset of the candidates")


def motion_residuals(coords_norm: np.ndarray, conf: np.ndarray, k: int) -> MotionField:
    """Compute interval-k motion residuals on part-normalized coordinates.

    Args:
        coords_norm: (T, N, 2) part-normalized coordinates.
        conf: (T, N) confidences, already truncated if desired.
        k: frame interval, 1 <= k < T.
    """
    T = coords_norm.shape[0]
    if not 1 <= k < T:
        raise ValueError(f"interval k must satisfy 1 <= k < T={T}, got {k}")
    residuals = np.zeros_like(coords_norm)
    paired = np.zeros_like(conf)
    residuals[: T - k] = coords_norm[k:] - coords_norm[: T - k]
    paired[: T - k] = conf[: T - k] * conf[k:]
    return MotionField(residuals=residuals, paired_conf=paired, interval=k)


def truncate_confidence(conf: np.ndarray, eps_c: float) -> np.ndarray:
    """Zero out confidences below eps_c; values exactly at eps_c are kept."""
    conf = np.asarray(conf, dtype=np.float64)
    return conf * (conf >= eps_c)


def candidate_ratios(field: MotionField, eps_m: float, denominator: str = "all") -> np.ndarray:
    """Per-frame ratio of joints with confidence-weighted motion >= eps_m.

    With denominator="all" every joint counts (confidence-zeroed joints
    included); "valid" divides only by joints whose paired confidence is
    positive. Returns an array of length T - k.
    """
    if denominator not in ("all", "valid"):
        raise ValueError(f"unknown denominator mode {denominator!r}")
    T = field.residuals.shape[0]
    n_valid = T - field.interval
    mags = np.linalg.norm(field.residuals[:n_valid], axis=2) * field.paired_conf[:n_valid]
    hits = (mags >= eps_m).sum(axis=1).astype(np.float64)
    if denominator == "all":
        denom = np.full(n_valid, mags.shape[1], dtype=np.float64)
    else:
        denom = (field.paired_conf[:n_valid] > 0).sum(axis=1).astype(np.float64)
    return np.divide(hits, denom, out=np.zeros(n_valid), where=denom > 0)


def candidate_set(
    field: MotionField, eps_m: float, delta: float, denominator: str = "all"
) -> tuple[int, ...]:
    """Frames whose valid-motion ratio reaches delta, in ascending order."""
    if eps_m < 0:
        raise ValueError(f"eps_m must be >= 0, got {eps_m}")
    if not 0.0 <= delta <= 1.0:
        raise ValueError(f"delta must be in [0, 1], got {delta}")
    ratios = candidate_ratios(field, eps_m, denominator)
    return tuple(int(i) for i in np.nonzero(ratios >= delta)[0])


def select_mask(
    candidates: tuple[int, ...], alpha: float, rng: np.random.Generator
) -> MaskPlan:
    """Uniformly select floor(alpha * |candidates|) frames to mask."""
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must be in [0, 1], got {alpha}")
    count = math.floor(alpha * len(candidates))
    if count == 0:
        masked: tuple[int, ...] = ()
    else:
        picks = rng.choice(np.asarray(candidates, dtype=np.int64), size=count, replace=False)
        masked = tuple(int(i) for i in np.sort(picks))
    return MaskPlan(candidates=tuple(candidates), masked=masked, ratio=alpha)


def temporal_sample_indices(T: int, alpha_r: float, rng: np.random.Generator) -> np.ndarray:
    """Strictly increasing indices of max(1, floor((1-alpha_r)*T)) kept frames."""
    if not 0.0 <= alpha_r < 1.0:
        raise ValueError(f"alpha_r must be in [0, 1), got {alpha_r}")
    if T < 2:
        raise ValueError(f"temporal sampling needs T >= 2, got {T}")
    keep = max(1, math.floor((1.0 - alpha_r) * T))
    return np.sort(rng.choice(T, size=keep, replace=False))


def random_temporal_sample(
    seq: PoseSequence, alpha_r: float, rng: np.random.Generator
) -> PoseSequence:
    """Drop a random alpha_r fraction of frames, preserving temporal order."""
    idx = temporal_sample_indices(seq.num_frames, alpha_r, rng)
    return PoseSequence(id=seq.id, label=seq.label, coords=seq.coords[idx], conf=seq.conf[idx])


def fixed_sample_indices(
    T: int, n: int, mode: str, rng: np.random.Generator | None = None
) -> np.ndarray:
    """Segment-based selection of exactly n frame indices (non-decreasing).

    [0, T) is partitioned into n equal real-valued segments. mode="center"
    picks each segment's midpoint frame (lower median of the covered
    indices); mode="random" picks uniformly among them. Segments that cover
    no whole frame (T < n) fall back to the rounded segment midpoint, so
    frames repeat and the output length is still exactly n.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if mode not in ("random", "center"):
        raise ValueError(f"unknown sampling mode {mode!r}")
    if mode == "random" and rng is None:
        raise ValueError("random sampling mode requires a seeded generator")
    out = np.empty(n, dtype=np.int64)
    for s in range(n):
        lo_f = s * T / n
        hi_f = (s + 1) * T / n
        lo = math.ceil(lo_f)
        hi = math.ceil(hi_f) - 1
        if lo > hi:
            out[s] = int((lo_f + hi_f) / 2)
        elif mode == "center":
            out[s] = lo + (hi - lo) // 2
        else:
            out[s] = int(rng.integers(lo, hi + 1))
    return out


def fixed_frame_sample(
    seq: PoseSequence, n: int, mode: str, rng: np.random.Generator | None = None
) -> PoseSequence:
    """Resample a sequence to exactly n frames (see fixed_sample_indices)."""
    idx = fixed_sample_indices(seq.num_frames, n, mode, rng)
    return PoseSequence(id=seq.id, label=seq.label, coords=seq.coords[idx], conf=seq.conf[idx])
