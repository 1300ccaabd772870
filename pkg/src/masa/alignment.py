"""Momentum branch (EMA-tracked key parameters), the FIFO memory bank of
negative keys, and the InfoNCE semantic-consistency loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numcore as nc
from .numcore import ParamStore, Tensor

QUERY_PREFIXES = ("embed.", "encoder.", "proj_q.")
UNIT_NORM_TOL = 1e-6


def query_to_key_path(path: str) -> str:
    if path.startswith("proj_q."):
        return "proj_k." + path[len("proj_q."):]
    return path


@dataclass
class MomentumPair:
    """Live (query) parameters and their slow EMA (key) copies.

    The key store mirrors the embed/encoder/projection subset of the query
    store with proj_q renamed to proj_k; key tensors never require grad.
    """

    query: ParamStore
    key: ParamStore
    mu: float


def make_momentum_pair(params: ParamStore, mu: float) -> MomentumPair:
    if not 0.0 <= mu <= 1.0:
        raise ValueError(f"mu must be in [0, 1], got {mu}")
    key = ParamStore()
    for path, t in params.items():
        if path.startswith(QUERY_PREFIXES):
            key.add(query_to_key_path(path), t.data.copy(), requires_grad=False)
    return MomentumPair(query=params, key=key, mu=mu)


def ema_update(pair: MomentumPair) -> None:
    """theta_key <- mu * theta_key + (1 - mu) * theta_query, elementwise."""
    query_paths = [p for p, _ in pair.query.items() if p.startswith(QUERY_PREFIXES)]
    mapped = {query_to_key_path(p) for p in query_paths}
    if mapped != set(pair.key.paths()):
        raise ValueError("momentum pair key sets do not match")
    mu = pair.mu
    for qpath in query_paths:
        k = pair.key[query_to_key_path(qpath)]
        k.data *= mu
        k.data += (1.0 - mu) * pair.query[qpath].data


class MemoryBank:
    """Fixed-capacity FIFO ring of unit-norm key embeddings."""

    def __init__(self, capacity: int, dim: int):
        if capacity < 1:
            raise ValueError(f"capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.dim = dim
        self._buffer = np.zeros((capacity, dim))
        self._count = 0
        self._head = 0

    def __len__(self) -> int:
        return self._count

    def enqueue(self, keys: np.ndarray) -> None:
        """Append keys in order, evicting the oldest entries beyond capacity."""
        keys = np.atleast_2d(np.asarray(keys, dtype=np.float64))
        if keys.shape[1] != self.dim:
            raise ValueError(f"key dim {keys.shape[1]} != bank dim {self.dim}")
        if keys.shape[0] > self.capacity:
            raise ValueError(f"batch of {keys.shape[0]} exceeds capacity {self.capacity}")
        norms = np.linalg.norm(keys, axis=1)
        if np.any(np.abs(norms - 1.0) > UNIT_NORM_TOL):
            raise ValueError("memory bank keys must be unit-norm")
        for row in keys:
            self._buffer[self._head] = row
            self._head = (self._head + 1) % self.capacity
        self._count = min(self._count + keys.shape[0], self.capacity)

    def contents(self) -> np.ndarray:
        """Stored keys, oldest first."""
        if self._count < self.capacity:
            return self._buffer[: self._count].copy()
        return np.concatenate([self._buffer[self._head:], self._buffer[: self._head]], axis=0)


def info_nce(q: Tensor, k_pos: np.ndarray, bank: MemoryBank, tau: float) -> Tensor:
    """Contrastive loss of a query against its positive key and the bank.

    loss = -log( exp(q.k+ / tau) / (exp(q.k+ / tau) + sum_i exp(q.k_i- / tau)) )

    computed as logsumexp(logits) - logits[positive] with max-logit
    subtraction. Gradients flow through q only; the positive key and the
    bank are constants. An empty bank yields exactly 0.
    """
    if tau <= 0:
        raise ValueError(f"tau must be > 0, got {tau}")
    k_pos = np.asarray(k_pos, dtype=np.float64)
    if abs(np.linalg.norm(q.data) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("query must be unit-norm")
    if abs(np.linalg.norm(k_pos) - 1.0) > UNIT_NORM_TOL:
        raise ValueError("positive key must be unit-norm")
    inv_tau = Tensor(1.0 / tau)
    l_pos = nc.mul(nc.sum_(nc.mul(q, Tensor(k_pos))), inv_tau)
    negatives = bank.contents()
    if negatives.shape[0] == 0:
        logits = nc.reshape(l_pos, (1,))
    else:
        l_neg = nc.mul(nc.matmul(nc.reshape(q, (1, -1)), Tensor(negatives.T)), inv_tau)
        logits = nc.concat([nc.reshape(l_pos, (1, 1)), l_neg], axis=1)
        logits = nc.reshape(logits, (-1,))
    max_logit = Tensor(float(np.max(logits.data)))
    lse = nc.add(nc.log(nc.sum_(nc.exp(nc.sub(logits, max_logit)))), max_logit)
    return nc.sub(lse, l_pos)
