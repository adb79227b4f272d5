"""Named parameter tensors partitioned into component groups."""

from __future__ import annotations

import numpy as np

from .errors import ConfigError, StateError
from .tensor import Tensor, get_default_dtype

GROUPS = ("vision", "connector", "language")


class ParameterStore:
    """Ordered mapping ``name -> Tensor`` with a group tag per entry.

    ``requires_grad`` on each tensor is the trainable flag, so a frozen
    parameter never gets a gradient buffer.
    """

    def __init__(self):
        self._tensors: dict[str, Tensor] = {}
        self._groups: dict[str, str] = {}

    def add(self, name: str, value, group: str, trainable: bool = True) -> Tensor:
        if group not in GROUPS:
            raise ConfigError(f"unknown parameter group {group!r}")
        if name in self._tensors:
            raise ConfigError(f"duplicate parameter name {name!r}")
        t = Tensor(value, requires_grad=trainable, name=name, dtype=get_default_dtype())
        self._tensors[name] = t
        self._groups[name] = group
        return t

    def __getitem__(self, name) -> Tensor:
        return self._tensors[name]

    def __contains__(self, name):
        return name in self._tensors

    def __iter__(self):
        return iter(self._tensors)

    def __len__(self):
        return len(self._tensors)

    def items(self):
        return self._tensors.items()

    def group_of(self, name) -> str:
        return self._groups[name]

    def names(self, group: str | None = None) -> list[str]:
        return [n for n in self._tensors if group is None or self._groups[n] == group]

    def groups_present(self) -> set[str]:
        return set(self._groups.values())

    def num_scalars(self, group: str | None = None) -> int:
        return sum(self._tensors[n].size for n in self.names(group))

    def set_trainable(self, groups) -> None:
        groups = set(groups)
        unknown = groups - set(GROUPS)
        if unknown:
            raise ConfigError(f"unknown parameter groups {sorted(unknown)}")
        for name, t in self._tensors.items():
            t.requires_grad = self._groups[name] in groups
            t.grad = None

    def trainable_names(self) -> list[str]:
        return [n for n, t in self._tensors.items() if t.requires_grad]

    def zero_grad(self) -> None:
        for t in self._tensors.values():
            t.grad = None

    def trainable_grads(self) -> dict[str, np.ndarray]:
        """Gradients of trainable parameters after a backward pass.

        Trainable parameters the loss did not reach get zeros.
        """
        names = self.trainable_names()
        if not names:
            return {}
        if all(self._tensors[n].grad is None for n in names):
            raise StateError("no gradients present; run backward first")
        return {
            n: self._tensors[n].grad if self._tensors[n].grad is not None else np.zeros_like(self._tensors[n].data)
            for n in names
        }

    def snapshot(self, group: str | None = None) -> dict[str, np.ndarray]:
        return {n: self._tensors[n].data.copy() for n in self.names(group)}

    def load_arrays(self, arrays: dict[str, np.ndarray]) -> None:
        for n, a in arrays.items():
            t = self._tensors[n]
            if a.shape != t.shape:
                raise ConfigError(f"shape mismatch for {n}: {a.shape} vs {t.shape}")
            t.data = np.array(a, dtype=t.dtype, copy=True)

    def copy(self) -> "ParameterStore":
        out = ParameterStore()
        for n, t in self._tensors.items():
            out.add(n, t.data, self._groups[n], trainable=t.requires_grad)
        return out

    def merge(self, other: "ParameterStore", groups=None) -> None:
        """Add (copies of) ``other``'s parameters, optionally restricted to groups."""
        for n, t in other.items():
            g = other.group_of(n)
            if groups is None or g in groups:
                self.add(n, t.data, g, trainable=t.requires_grad)

    def subset(self, groups) -> "ParameterStore":
        out = ParameterStore()
        out.merge(self, groups)
        return out


def bitwise_equal(a: dict[str, np.ndarray], b: dict[str, np.ndarray]) -> bool:
    if a.keys() != b.keys():
        return False
    return all(a[k].dtype == b[k].dtype and a[k].shape == b[k].shape and a[k].tobytes() == b[k].tobytes() for k in a)


def scaled_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)
