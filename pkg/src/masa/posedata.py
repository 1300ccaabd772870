"""Pose-sequence data model: file I/O, part views, synthetic data, noise.

A pose sequence is T frames of 49 2-D keypoints (7 upper-body joints
followed by 21 left-hand and 21 right-hand joints) with one estimator
confidence per joint. Coordinates are pixel-scale; part-normalized
coordinates live in [-128, 128].
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

NUM_JOINTS = 49
BODY_SLICE = slice(0, 7)
LEFT_HAND_SLICE = slice(7, 28)
RIGHT_HAND_SLICE = slice(28, 49)
NUM_BODY_JOINTS = 7
NUM_HAND_JOINTS = 21
COORD_HALF_RANGE = 128.0


class DataFormatError(ValueError):
    """Raised for malformed or invariant-violating pose data."""


class Part(Enum):
    BODY = "body"
    LEFT_HAND = "left_hand"
    RIGHT_HAND = "right_hand"


class Split(Enum):
    TRAIN = "train"
    TEST = "test"


@dataclass(frozen=True)
class PoseSequence:
    """One skeleton clip: coordinates (T, 49, 2) and confidences (T, 49)."""

    id: str
    label: int | None
    coords: np.ndarray
    conf: np.ndarray

    def __post_init__(self):
        coords = np.asarray(self.coords, dtype=np.float64)
        conf = np.asarray(self.conf, dtype=np.float64)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "conf", conf)
        if coords.ndim != 3 or coords.shape[2] != 2:
            raise DataFormatError(
                f"sequence {self.id!r}: coords must be (T, {NUM_JOINTS}, 2), got {coords.shape}"
            )
        if coords.shape[1] != NUM_JOINTS:
            raise DataFormatError(
                f"sequence {self.id!r}: joint count mismatch, expected {NUM_JOINTS}, got {coords.shape[1]}"
            )
        if coords.shape[0] < 1:
            raise DataFormatError(f"sequence {self.id!r}: empty sequence")
        if conf.shape != coords.shape[:2]:
            raise DataFormatError(
                f"sequence {self.id!r}: conf shape {conf.shape} does not match coords {coords.shape[:2]}"
            )
        if not np.all(np.isfinite(coords)):
            raise DataFormatError(f"sequence {self.id!r}: non-finite coordinates")
        if np.any(conf < 0.0) or np.any(conf > 1.0) or not np.all(np.isfinite(conf)):
            raise DataFormatError(f"sequence {self.id!r}: confidence out of [0, 1]")

    @property
    def num_frames(self) -> int:
        return self.coords.shape[0]


@dataclass(frozen=True)
class PartView:
    """A body-part slice of a sequence plus its per-frame anchor joint."""

    part: Part
    coords: np.ndarray  # (T, n_p, 2)
    reference: np.ndarray  # (T, 2) anchor joint (neck or wrist)


@dataclass(frozen=True)
class Dataset:
    sequences: list[PoseSequence]
    num_classes: int
    split: Split = Split.TRAIN

    def __post_init__(self):
        for seq in self.sequences:
            if seq.label is not None and seq.label >= self.num_classes:
                raise DataFormatError(
                    f"sequence {seq.id!r}: label {seq.label} >= num_classes {self.num_classes}"
                )

    def __len__(self) -> int:
        return len(self.sequences)


def load_sequences(path: str | Path, expect_labels: bool = False) -> Dataset:
    """Load a JSON-lines pose file.

    Each line is ``{"id": str, "label": int|null, "frames": [[[x, y, c] x 49] x T]}``.
    Joint count, confidence range and coordinate finiteness are validated.
    """
    path = Path(path)
    sequences = []
    with path.open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{path}:{lineno}: malformed JSON record: {exc}") from exc
            if not isinstance(rec, dict) or "id" not in rec or "frames" not in rec:
                raise DataFormatError(f"{path}:{lineno}: record must have 'id' and 'frames'")
            label = rec.get("label")
            if label is not None and not isinstance(label, int):
                raise DataFormatError(f"{path}:{lineno}: label must be an integer or null")
            if expect_labels and label is None:
                raise DataFormatError(f"{path}:{lineno}: missing label")
            frames = rec["frames"]
            try:
                arr = np.asarray(frames, dtype=np.float64)
            except (ValueError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: ragged or non-numeric frames") from exc
            if arr.ndim != 3 or arr.shape[2] != 3:
                raise DataFormatError(
                    f"{path}:{lineno}: frames must be T x {NUM_JOINTS} x [x, y, c], got shape {arr.shape}"
                )
            if arr.shape[1] != NUM_JOINTS:
                raise DataFormatError(
                    f"{path}:{lineno}: joint count mismatch, expected {NUM_JOINTS}, got {arr.shape[1]}"
                )
            try:
                seq = PoseSequence(id=str(rec["id"]), label=label, coords=arr[:, :, :2], conf=arr[:, :, 2])
            except DataFormatError as exc:
                raise DataFormatError(f"{path}:{lineno}: {exc}") from exc
            sequences.append(seq)
    labels = [s.label for s in sequences if s.label is not None]
    num_classes = (max(labels) + 1) if labels else 0
    return Dataset(sequences=sequences, num_classes=num_classes)


def save_sequences(dataset: Dataset | list[PoseSequence], path: str | Path) -> None:
    """Write sequences as JSON lines with keys in (id, label, frames) order."""
    sequences = dataset.sequences if isinstance(dataset, Dataset) else dataset
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for seq in sequences:
            frames = np.concatenate([seq.coords, seq.conf[:, :, None]], axis=2)
            rec = {"id": seq.id, "label": seq.label, "frames": frames.tolist()}
            fh.write(json.dumps(rec) + "\n")


def split_parts(seq: PoseSequence) -> tuple[PartView, PartView, PartView]:
    """Split a sequence into (body, left hand, right hand) views.

    Anchors are the neck (first body joint) and each hand's wrist (first
    joint of the hand block). Concatenating the three coordinate slices in
    body/left/right order reproduces the original joint axis.
    """
    body = seq.coords[:, BODY_SLICE]
    left = seq.coords[:, LEFT_HAND_SLICE]
    right = seq.coords[:, RIGHT_HAND_SLICE]
    return (
        PartView(Part.BODY, body, body[:, 0]),
        PartView(Part.LEFT_HAND, left, left[:, 0]),
        PartView(Part.RIGHT_HAND, right, right[:, 0]),
    )


def normalize_part(view: PartView) -> np.ndarray:
    """Anchor-center and rescale one part to [-128, 128] per axis.

    Per frame the anchor joint is subtracted, then coordinates are divided
    by s = max(bbox width, bbox height, 1) and multiplied by 128. The floor
    of 1 keeps degenerate (single-point) parts at all-zero output.
    """
    rel = view.coords - view.reference[:, None, :]
    width = view.coords[:, :, 0].max(axis=1) - view.coords[:, :, 0].min(axis=1)
    height = view.coords[:, :, 1].max(axis=1) - view.coords[:, :, 1].min(axis=1)
    scale = np.maximum(np.maximum(width, height), 1.0)
    return rel / scale[:, None, None] * COORD_HALF_RANGE


def normalize_sequence(seq: PoseSequence) -> np.ndarray:
    """Part-normalize all joints; output (T, 49, 2) in [-128, 128]."""
    body, left, right = split_parts(seq)
    out = np.empty_like(seq.coords)
    out[:, BODY_SLICE] = normalize_part(body)
    out[:, LEFT_HAND_SLICE] = normalize_part(left)
    out[:, RIGHT_HAND_SLICE] = normalize_part(right)
    return out


def _rng_for(seed: int, *key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=key))


def gen_synthetic(num_classes: int, per_class: int, num_frames: int, seed: int) -> Dataset:
    """Generate a labeled synthetic dataset of smooth skeleton clips.

    Every clip rides a shared low-frequency motion base; each class owns a
    distinct additive set of per-joint sinusoid templates on top of it, so
    cross-class trajectory distance exceeds the within-class distance
    without the task becoming trivial. Samples perturb their template with
    a per-joint build offset (signer geometry), a random temporal phase
    shift, Gaussian jitter (sigma=2 px) and confidences drawn from
    [0.5, 1.0]. Pure function of the seed; templates stay within +-128 px.
    """
    if num_classes < 2:
        raise ValueError(f"num_classes must be >= 2, got {num_classes}")
    if per_class < 1:
        raise ValueError(f"per_class must be >= 1, got {per_class}")
    if num_frames < 8:
        raise ValueError(f"num_frames must be >= 8, got {num_frames}")

    def sinusoid_bank(rng, harmonics, lo, hi):
        return (
            rng.uniform(lo, hi, size=(harmonics, NUM_JOINTS, 2)),
            rng.integers(1, 4, size=(harmonics, NUM_JOINTS, 2)).astype(np.float64),
            rng.uniform(0.0, 2.0 * math.pi, size=(harmonics, NUM_JOINTS, 2)),
        )

    def evaluate_bank(bank, t):
        amps, freqs, phases = bank
        return sum(
            amps[h] * np.sin(2.0 * math.pi * freqs[h] * t + phases[h])
            for h in range(amps.shape[0])
        )

    base_rng = _rng_for(seed, 0)
    offsets = base_rng.uniform(-55.0, 55.0, size=(NUM_JOINTS, 2))
    shared = sinusoid_bank(base_rng, 2, 10.0, 22.0)

    sequences = []
    t_base = np.arange(num_frames, dtype=np.float64)
    for c in range(num_classes):
        class_bank = sinusoid_bank(_rng_for(seed, 1, c), 1, 8.0, 18.0)
        for s in range(per_class):
            srng = _rng_for(seed, 2, c, s)
            build = srng.uniform(-6.0, 6.0, size=(NUM_JOINTS, 2))
            shift = srng.uniform(-num_frames / 12.0, num_frames / 12.0)
            t = (t_base + shift)[:, None, None] / num_frames  # (T, 1, 1)
            coords = (offsets + build)[None] + evaluate_bank(shared, t) + evaluate_bank(class_bank, t)
            coords = coords + srng.normal(0.0, 2.0, size=coords.shape)
            conf = srng.uniform(0.5, 1.0, size=(num_frames, NUM_JOINTS))
            sequences.append(
                PoseSequence(id=f"c{c:02d}s{s:03d}", label=c, coords=coords, conf=conf)
            )
    return Dataset(sequences=sequences, num_classes=num_classes)


def add_noise(seq: PoseSequence, sigma: float, seed: int) -> PoseSequence:
    """Add i.i.d. N(0, sigma^2) noise to every coordinate; confidences unchanged."""
    if sigma < 0:
        raise ValueError(f"sigma must be >= 0, got {sigma}")
    rng = np.random.default_rng(np.random.SeedSequence(entropy=seed))
    noise = rng.standard_normal(seq.coords.shape) * sigma
    return PoseSequence(id=seq.id, label=seq.label, coords=seq.coords + noise, conf=seq.conf)
