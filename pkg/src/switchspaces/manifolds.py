"""Constant-curvature stereographic models and their gyrovector operations.

One set of formulas covers the three geometries: Euclidean (``c == 0``),
Poincaré ball (``c < 0``) and projected sphere (``c > 0``). Points and tangent
vectors are float arrays whose last axis holds coordinates; the curvature
``c`` is a scalar or an array broadcastable against the leading axes (shape
``(..., 1)``), and may be a graph node when it is trained.

Every function is built from the primitives in :mod:`.numerics.autodiff`,
so passing Tensors records a differentiable graph and passing arrays runs
plain NumPy.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation, DomainError, NumericFailure
from .numerics import autodiff as ad

C_EPS = 1e-7
BALL_EPS = 1e-5
POLE_TOL = 1e-9
WRAP_MARGIN = 1e-6
# tangent norms of spherical embeddings are kept this far below the wrap point
TANGENT_MARGIN = 1e-2
_SERIES_CUTOFF = 1e-6

KINDS = ("E", "P", "D")


def softplus_inverse(y: float) -> float:
    return float(y + np.log(-np.expm1(-y)))


@dataclass(frozen=True)
class ComponentSpace:
    """One factor of a product space: kind, dimension and (initial) curvature."""

    kind: str
    dim: int
    curvature: float = None
    trainable_curvature: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ContractViolation(f"unknown space kind {self.kind!r}")
        if int(self.dim) <= 0:
            raise ContractViolation("dimension must be positive")
        c = {"E": 0.0, "P": -1.0, "D": 1.0}[self.kind] if self.curvature is None else float(self.curvature)
        object.__setattr__(self, "curvature", c)
        object.__setattr__(self, "dim", int(self.dim))
        if self.kind == "E" and c != 0.0:
            raise ContractViolation("Euclidean space must have c = 0")
        if self.kind == "P" and not c < 0:
            raise ContractViolation("Poincare ball needs c < 0")
        if self.kind == "D" and not c > 0:
            raise ContractViolation("projected sphere needs c > 0")
        if self.kind == "E" and self.trainable_curvature:
            object.__setattr__(self, "trainable_curvature", False)

    @property
    def sign(self) -> int:
        return {"E": 0, "P": -1, "D": 1}[self.kind]

    def raw_curvature_init(self) -> float:
        """Unconstrained value whose softplus is ``|curvature|``."""
        return softplus_inverse(abs(self.curvature))

    def curvature_from_raw(self, raw):
        """``sign * softplus(raw)``; never exactly zero for curved kinds."""
        return self.sign * ad.softplus(raw)


def curvature_sign(c) -> int:
    """+1, -1, or 0 for the flat-limit branch (all ``|c| < C_EPS``)."""
    cv = ad.value(c)
    if np.all(np.abs(cv) < C_EPS):
        return 0
    if np.all(cv > 0):
        return 1
    if np.all(cv < 0):
        return -1
    raise ContractViolation("curvature array mixes signs")


def _sqrt_abs(c, sign):
    return ad.sqrt(c * float(sign)) if isinstance(c, ad.Tensor) else np.sqrt(np.abs(c))


def tan_c(z, c):
    """tan for c > 0, tanh for c < 0, identity in the flat limit."""
    sign = curvature_sign(c)
    if sign == 0:
        return z
    if sign > 0:
        if np.any(np.abs(np.cos(ad.value(z))) < POLE_TOL):
            raise DomainError("tan_c argument too close to a pole")
        return ad.tan(z)
    return ad.tanh(z)


def arctan_c(z, c):
    """Inverse of :func:`tan_c`."""
    sign = curvature_sign(c)
    if sign == 0:
        return z
    if sign > 0:
        return ad.arctan(z)
    if np.any(np.abs(ad.value(z)) >= 1.0):
        raise DomainError("artanh argument outside (-1, 1)")
    return ad.artanh(z)


def _tan_ratio(a, sign):
    # tan_c(a) / a for a >= 0, with the removable singularity at 0 filled in
    av = ad.value(a)
    small = av < _SERIES_CUTOFF
    safe = ad.where(small, 1.0, a)
    f = ad.tan(safe) if sign > 0 else ad.tanh(safe)
    series = 1.0 + (sign / 3.0) * ad.square(a)
    return ad.where(small, series, f / safe)


def _arctan_ratio(z, sign):
    zv = ad.value(z)
    small = zv < _SERIES_CUTOFF
    safe = ad.where(small, 0.5, z)
    f = ad.arctan(safe) if sign > 0 else ad.artanh(safe)
    series = 1.0 - (sign / 3.0) * ad.square(z)
    return ad.where(small, series, f / safe)


def project_to_domain(x, c):
    """Pull ball points back to norm ``(1 - 1e-5)/sqrt|c|``; identity for c >= 0."""
    sign = curvature_sign(c)
    if sign >= 0:
        return x
    max_norm = (1.0 - BALL_EPS) / _sqrt_abs(c, sign)
    n = ad.norm(x)
    outside = ad.value(n) >= ad.value(max_norm)
    if not np.any(outside):
        return x
    n_safe = ad.where(outside, n, 1.0)
    return x * ad.where(outside, max_norm / n_safe, 1.0)


def clip_tangent(v, c, margin: float = TANGENT_MARGIN):
    """Shrink origin tangent vectors of spherical spaces to stay short of the wrap point."""
    sign = curvature_sign(c)
    if sign <= 0:
        return v
    max_norm = (0.5 * math.pi - margin) / _sqrt_abs(c, sign)
    n = ad.norm(v)
    over = ad.value(n) > ad.value(max_norm)
    if not np.any(over):
        return v
    n_safe = ad.where(over, n, 1.0)
    return v * ad.where(over, max_norm / n_safe, 1.0)


def mobius_add(x, y, c):
    """Gyrovector (Möbius) addition of ``x`` and ``y``."""
    sign = curvature_sign(c)
    if sign == 0:
        return x + y
    xy = ad.inner(x, y)
    x2 = ad.inner(x, x)
    y2 = ad.inner(y, y)
    num = (1.0 - 2.0 * c * xy - c * y2) * x + (1.0 + c * x2) * y
    den = 1.0 - 2.0 * c * xy + ad.square(c) * x2 * y2
    if np.any(np.abs(ad.value(den)) < 1e-15):
        raise NumericFailure("mobius_add", "vanishing denominator (antipodal points)")
    return project_to_domain(num / den, c)


def conformal_factor(x, c):
    """``2 / (1 + c * |x|^2)``."""
    den = 1.0 + c * ad.inner(x, x)
    if np.any(ad.value(den) <= 1e-15):
        raise DomainError("point outside the region where the conformal factor is defined")
    return 2.0 / den


def dist(x, y, c):
    """Geodesic distance; exactly ``2|x - y|`` in the flat limit."""
    sign = curvature_sign(c)
    if sign == 0:
        return 2.0 * ad.norm(y - x)
    w = mobius_add(-x, y, c)
    n = ad.norm(w)
    return 2.0 * n * _arctan_ratio(_sqrt_abs(c, sign) * n, sign)


def sq_dist(x, y, c):
    return ad.square(dist(x, y, c))


def _check_wrap(a):
    if np.any(ad.value(a) >= 0.5 * math.pi - WRAP_MARGIN):
        raise DomainError("tangent vector wraps around the sphere")


def exp_map(x, v, c):
    """Exponential map at ``x`` applied to the tangent vector ``v``."""
    sign = curvature_sign(c)
    if sign == 0:
        return x + v
    lam = conformal_factor(x, c)
    a = _sqrt_abs(c, sign) * lam * ad.norm(v) / 2.0
    if sign > 0:
        _check_wrap(a)
    step = (lam / 2.0) * _tan_ratio(a, sign) * v
    return mobius_add(x, step, c)


def log_map(x, y, c):
    """Logarithmic map at ``x``: the tangent vector pointing to ``y``."""
    sign = curvature_sign(c)
    if sign == 0:
        return y - x
    w = mobius_add(-x, y, c)
    lam = conformal_factor(x, c)
    return (2.0 / lam) * _arctan_ratio(_sqrt_abs(c, sign) * ad.norm(w), sign) * w


def expmap0(v, c):
    """Exponential map at the origin."""
    sign = curvature_sign(c)
    if sign == 0:
        return v
    a = _sqrt_abs(c, sign) * ad.norm(v)
    if sign > 0:
        _check_wrap(a)
    return project_to_domain(_tan_ratio(a, sign) * v, c)


def logmap0(y, c):
    """Logarithmic map at the origin."""
    sign = curvature_sign(c)
    if sign == 0:
        return y
    return _arctan_ratio(_sqrt_abs(c, sign) * ad.norm(y), sign) * y
