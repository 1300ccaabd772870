"""Named parameter collections with deterministic (sorted-path) iteration."""

from __future__ import annotations

import numpy as np

from .tensor import Tensor


class ParamStore:
    """A map from dot-separated parameter paths to tensors.

    Iteration is always in sorted-path order so optimizers, EMA updates and
    checkpoints align parameters by key rather than by insertion order.
    """

    def __init__(self):
        self._params: dict[str, Tensor] = {}

    def add(self, path: str, data: np.ndarray, requires_grad: bool = True) -> Tensor:
        if path in self._params:
            raise KeyError(f"duplicate parameter path {path!r}")
        t = Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)
        self._params[path] = t
        return t

    def __getitem__(self, path: str) -> Tensor:
        return self._params[path]

    def __contains__(self, path: str) -> bool:
        return path in self._params

    def __len__(self) -> int:
        return len(self._params)

    def paths(self) -> list[str]:
        return sorted(self._params)

    def items(self):
        for path in self.paths():
            yield path, self._params[path]

    def subset(self, prefixes: tuple[str, ...]) -> "ParamStore":
        """A new store referencing the same tensors under matching prefixes."""
        out = ParamStore()
        for path, t in self.items():
            if path.startswith(prefixes):
                out._params[path] = t
        return out

    def copy(self, requires_grad: bool | None = None) -> "ParamStore":
        """Deep-copy values; optionally override requires_grad."""
        out = ParamStore()
        for path, t in self.items():
            rg = t.requires_grad if requires_grad is None else requires_grad
            out.add(path, t.data.copy(), requires_grad=rg)
        return out

    def zero_grads(self) -> None:
        for _, t in self.items():
            t.grad = None

    def num_scalars(self) -> int:
        return sum(t.data.size for _, t in self.items())
