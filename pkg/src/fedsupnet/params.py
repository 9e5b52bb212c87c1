"""Flat ordered collections of named parameter arrays.

This is the unit that crosses the client/server boundary: plain float
arrays keyed by name, no data attached. Arithmetic is element-wise over
congruent collections.
"""

from __future__ import annotations

import numpy as np


class ParameterSet:
    def __init__(self, arrays: dict[str, np.ndarray]):
        self._arrays = {k: np.asarray(v, dtype=np.float64) for k, v in arrays.items()}

    @classmethod
    def zeros_like(cls, other: "ParameterSet") -> "ParameterSet":
        return cls({k: np.zeros_like(v) for k, v in other.items()})

    def items(self):
        return self._arrays.items()

    def names(self):
        return list(self._arrays.keys())

    def __len__(self):
        return len(self._arrays)

    def __getitem__(self, name: str) -> np.ndarray:
        return self._arrays[name]

    def __contains__(self, name: str) -> bool:
        return name in self._arrays

    def clone(self) -> "ParameterSet":
        return ParameterSet({k: v.copy() for k, v in self._arrays.items()})

    def congruent_with(self, other: "ParameterSet") -> bool:
        if self.names() != other.names():
            return False
        return all(self._arrays[k].shape == other[k].shape for k in self._arrays)

    def _require_congruent(self, other: "ParameterSet", op: str):
        if not isinstance(other, ParameterSet) or not self.congruent_with(other):
            raise ValueError(f"{op}: parameter sets are not shape-congruent")

    def __add__(self, other: "ParameterSet") -> "ParameterSet":
        self._require_congruent(other, "add")
        return ParameterSet({k: v + other[k] for k, v in self._arrays.items()})

    def __sub__(self, other: "ParameterSet") -> "ParameterSet":
        self._require_congruent(other, "sub")
        return ParameterSet({k: v - other[k] for k, v in self._arrays.items()})

    def scale(self, c: float) -> "ParameterSet":
        return ParameterSet({k: v * c for k, v in self._arrays.items()})

    def allclose(self, other: "ParameterSet", atol=0.0, rtol=0.0) -> bool:
        if not self.congruent_with(other):
            return False
        return all(
            np.allclose(v, other[k], atol=atol, rtol=rtol)
            for k, v in self._arrays.items()
        )

    def equal(self, other: "ParameterSet") -> bool:
        if not self.congruent_with(other):
            return False
        return all(np.array_equal(v, other[k]) for k, v in self._arrays.items())

    def num_values(self) -> int:
        return sum(v.size for v in self._arrays.values())
