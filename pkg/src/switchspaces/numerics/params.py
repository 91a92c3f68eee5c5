"""Named parameter arrays, their optimizer state, and the checkpoint format.

Checkpoint format
-----------------
A checkpoint is an uncompressed NumPy ``.npz`` archive (a zip of ``.npy``
members). Every member is a row-major float64 array:

* ``param/<name>``      parameter values
* ``adam_m/<name>``     Adam first moment (same shape as the parameter)
* ``adam_v/<name>``     Adam second moment
* ``adam_t/<name>``     Adam step count, a 0-d array

Each ``.npy`` header records dtype and shape, so the archive is
self-describing and can be read with ``numpy.load`` alone.
"""

from __future__ import annotations

import os
from collections.abc import Iterator, Mapping

import numpy as np

from ..errors import ContractViolation
from .autodiff import Tensor

_SECTIONS = ("param", "adam_m", "adam_v", "adam_t")


class ParamStore(Mapping):
    """Ordered mapping ``name -> float64 array`` plus per-parameter Adam state."""

    def __init__(self, arrays: Mapping[str, np.ndarray] | None = None):
        self._values: dict[str, np.ndarray] = {}
        self.m: dict[str, np.ndarray] = {}
        self.v: dict[str, np.ndarray] = {}
        self.t: dict[str, int] = {}
        for name, arr in (arrays or {}).items():
            self.add(name, arr)

    def add(self, name: str, array) -> np.ndarray:
        if "/" in name:
            raise ContractViolation(f"parameter names may not contain '/': {name!r}")
        arr = np.array(array, dtype=np.float64, order="C")
        self._values[name] = arr
        self.m[name] = np.zeros_like(arr)
        self.v[name] = np.zeros_like(arr)
        self.t[name] = 0
        return arr

    def __getitem__(self, name: str) -> np.ndarray:
        return self._values[name]

    def __setitem__(self, name: str, array) -> None:
        if name not in self._values:
            self.add(name, array)
            return
        arr = np.asarray(array, dtype=np.float64)
        if arr.shape != self._values[name].shape:
            raise ContractViolation(f"{name}: shape {arr.shape} != {self._values[name].shape}")
        self._values[name] = np.array(arr, order="C")

    def __iter__(self) -> Iterator[str]:
        return iter(self._values)

    def __len__(self) -> int:
        return len(self._values)

    def shapes(self) -> dict[str, tuple[int, ...]]:
        return {k: v.shape for k, v in self._values.items()}

    def leaves(self) -> dict[str, Tensor]:
        """Fresh trainable graph leaves, one per parameter, for a single step."""
        return {k: Tensor(v, requires_grad=True, name=k) for k, v in self._values.items()}

    def copy(self) -> "ParamStore":
        out = ParamStore()
        for k, arr in self._values.items():
            out.add(k, arr)
            out.m[k] = self.m[k].copy()
            out.v[k] = self.v[k].copy()
            out.t[k] = self.t[k]
        return out

    def save(self, path: str | os.PathLike) -> None:
        payload = {}
        for k, arr in self._values.items():
            payload[f"param/{k}"] = arr
            payload[f"adam_m/{k}"] = self.m[k]
            payload[f"adam_v/{k}"] = self.v[k]
            payload[f"adam_t/{k}"] = np.asarray(float(self.t[k]))
        with open(path, "wb") as fh:
            np.savez(fh, **payload)

    @classmethod
    def load(cls, path: str | os.PathLike) -> "ParamStore":
        store = cls()
        with np.load(path, allow_pickle=False) as data:
            names = [key.split("/", 1)[1] for key in data.files if key.startswith("param/")]
            for k in names:
                store.add(k, data[f"param/{k}"])
                if f"adam_m/{k}" in data.files:
                    store.m[k] = np.array(data[f"adam_m/{k}"], dtype=np.float64)
                    store.v[k] = np.array(data[f"adam_v/{k}"], dtype=np.float64)
                    store.t[k] = int(data[f"adam_t/{k}"])
            unknown = {key.split("/", 1)[0] for key in data.files} - set(_SECTIONS)
            if unknown:
                raise ContractViolation(f"unknown checkpoint sections: {sorted(unknown)}")
        return store
