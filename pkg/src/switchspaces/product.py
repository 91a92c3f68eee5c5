"""Cartesian products of component spaces.

Signature strings are comma separated tokens ``<K><dim>[@<c0>]`` with
``K`` in ``{E, P, D}``, e.g. ``"D100,D100,D100,D100,E100"`` or
``"P20@-0.5"``. A point of the product is a flat row; component ``i`` is the
contiguous slice ``offsets[i]:offsets[i+1]``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, SignatureParseError
from .manifolds import ComponentSpace, dist
from .numerics import autodiff as ad

_TOKEN = re.compile(r"^([A-Za-z])(\d+)(?:@([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?))?$")


@dataclass(frozen=True)
class Signature:
    components: tuple[ComponentSpace, ...]

    def __post_init__(self):
        object.__setattr__(self, "components", tuple(self.components))
        if not self.components:
            raise ContractViolation("a signature needs at least one component")

    @property
    def n(self) -> int:
        return len(self.components)

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(s.dim for s in self.components)

    @property
    def total_dim(self) -> int:
        return sum(self.dims)

    @property
    def offsets(self) -> np.ndarray:
        return np.concatenate([[0], np.cumsum(self.dims)])

    @property
    def curvatures(self) -> tuple[float, ...]:
        return tuple(s.curvature for s in self.components)

    @property
    def kinds(self) -> str:
        return "".join(s.kind for s in self.components)

    def uniform_dim(self) -> int | None:
        dims = set(self.dims)
        return dims.pop() if len(dims) == 1 else None

    def slice(self, i: int) -> slice:
        o = self.offsets
        return slice(int(o[i]), int(o[i + 1]))

    def __str__(self) -> str:
        return format_signature(self)


def parse_signature(text: str, trainable_curvature: bool = False) -> Signature:
    comps = []
    tokens = [t.strip() for t in text.split(",")]
    for pos, tok in enumerate(tokens, start=1):
        m = _TOKEN.match(tok)
        if not m:
            raise SignatureParseError(pos, tok, "expected <K><dim>[@<c0>]")
        kind, dim, c0 = m.group(1), int(m.group(2)), m.group(3)
        if kind not in "EPD":
            raise SignatureParseError(pos, tok, f"unknown kind {kind!r}, expected E, P or D")
        if dim <= 0:
            raise SignatureParseError(pos, tok, "dimension must be positive")
        c = None if c0 is None else float(c0)
        if c is not None:
            ok = {"E": c == 0.0, "P": c < 0.0, "D": c > 0.0}[kind]
            if not ok:
                raise SignatureParseError(pos, tok, f"curvature {c} has the wrong sign for {kind}")
        comps.append(ComponentSpace(kind, dim, c, trainable_curvature and kind != "E"))
    return Signature(tuple(comps))


def format_signature(sig: Signature) -> str:
    out = []
    for s in sig.components:
        default = {"E": 0.0, "P": -1.0, "D": 1.0}[s.kind]
        out.append(f"{s.kind}{s.dim}" if s.curvature == default else f"{s.kind}{s.dim}@{s.curvature!r}")
    return ",".join(out)


def split(x, sig: Signature) -> list:
    """Component slices of flat point(s) ``x`` (last axis has length total_dim)."""
    if ad.value(x).shape[-1] != sig.total_dim:
        raise ContractViolation(f"expected last axis {sig.total_dim}, got {ad.value(x).shape[-1]}")
    return [x[..., sig.slice(i)] for i in range(sig.n)]


def concat(parts) -> np.ndarray:
    return ad.concat(list(parts), axis=-1)


def product_sq_dist(x_parts, y_parts, sig: Signature, curvatures=None):
    """Sum of squared component distances."""
    if len(x_parts) != sig.n or len(y_parts) != sig.n:
        raise ContractViolation("points must have one part per component")
    cs = sig.curvatures if curvatures is None else curvatures
    total = 0.0
    for xi, yi, c in zip(x_parts, y_parts, cs):
        total = total + ad.square(dist(xi, yi, c))
    return total
