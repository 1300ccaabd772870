import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from masa.posedata import NUM_JOINTS, PoseSequence


def make_sequence(
    seq_id: str = "seq",
    label: int | None = None,
    coords: np.ndarray | None = None,
    conf: np.ndarray | None = None,
    num_frames: int = 8,
) -> PoseSequence:
    """A small well-formed sequence; coords default to zeros, conf to ones."""
    if coords is None:
        coords = np.zeros((num_frames, NUM_JOINTS, 2))
    if conf is None:
        conf = np.ones(coords.shape[:2])
    return PoseSequence(id=seq_id, label=label, coords=coords, conf=conf)


@pytest.fixture
def rng():
    return np.random.default_rng(0)
