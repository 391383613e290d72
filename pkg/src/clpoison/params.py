"""Named parameter collections with a stable order and an exact flat view."""

from __future__ import annotations

from typing import Callable, Iterable, Iterator

import numpy as np


class ParamSet:
    """Ordered mapping of name -> float64 ndarray.

    The flat view is a bijection: ``unflatten(flatten())`` reproduces every
    tensor exactly, bit for bit.
    """

    def __init__(self, tensors: dict[str, np.ndarray] | Iterable[tuple[str, np.ndarray]]):
        items = tensors.items() if isinstance(tensors, dict) else tensors
        self._tensors: dict[str, np.ndarray] = {
            name: np.asarray(value, dtype=np.float64) for name, value in items
        }

    @property
    def names(self) -> list[str]:
        return list(self._tensors)

    @property
    def size(self) -> int:
        return sum(t.size for t in self._tensors.values())

    def __getitem__(self, name: str) -> np.ndarray:
        return self._tensors[name]

    def __setitem__(self, name: str, value: np.ndarray) -> None:
        if name in self._tensors and self._tensors[name].shape != np.shape(value):
            raise ValueError(
                f"shape mismatch for {name!r}: "
                f"{self._tensors[name].shape} vs {np.shape(value)}"
            )
        self._tensors[name] = np.asarray(value, dtype=np.float64)

    def __contains__(self, name: str) -> bool:
        return name in self._tensors

    def __iter__(self) -> Iterator[str]:
        return iter(self._tensors)

    def __len__(self) -> int:
        return len(self._tensors)

    def items(self) -> Iterable[tuple[str, np.ndarray]]:
        return self._tensors.items()

    def copy(self) -> "ParamSet":
        return ParamSet({n: t.copy() for n, t in self._tensors.items()})

    def flatten(self) -> np.ndarray:
        if not self._tensors:
            return np.zeros(0)
        return np.concatenate([t.ravel() for t in self._tensors.values()])

    def unflatten(self, flat: np.ndarray) -> "ParamSet":
        flat = np.asarray(flat, dtype=np.float64)
        if flat.ndim != 1 or flat.size != self.size:
            raise ValueError(f"expected flat vector of length {self.size}, got shape {flat.shape}")
        out, offset = {}, 0
        for name, t in self._tensors.items():
            out[name] = flat[offset:offset + t.size].reshape(t.shape).copy()
            offset += t.size
        return ParamSet(out)

    def zeros_like(self) -> "ParamSet":
        return ParamSet({n: np.zeros_like(t) for n, t in self._tensors.items()})

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "ParamSet":
        return ParamSet({n: fn(t) for n, t in self._tensors.items()})

    def combine(self, other: "ParamSet", fn: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> "ParamSet":
        self.check_aligned(other)
        return ParamSet({n: fn(t, other[n]) for n, t in self._tensors.items()})

    def check_aligned(self, other: "ParamSet") -> None:
        """Raise unless *other* has identical names, order, and shapes."""
        if self.names != other.names:
            raise ValueError(f"parameter names differ: {self.names} vs {other.names}")
        for name, t in self._tensors.items():
            if t.shape != other[name].shape:
                raise ValueError(
                    f"shape mismatch for {name!r}: {t.shape} vs {other[name].shape}"
                )

    def allclose(self, other: "ParamSet", rtol: float = 0.0, atol: float = 0.0) -> bool:
        self.check_aligned(other)
        return all(np.allclose(t, other[n], rtol=rtol, atol=atol) for n, t in self.items())

    def __repr__(self) -> str:
        inner = ", ".join(f"{n}:{t.shape}" for n, t in self._tensors.items())
        return f"ParamSet({inner})"
