"""Sparse top-K gating over component spaces.

The gate maps an input built from the embeddings of the participating
entities to N logits, optionally perturbs them with learned-scale Gaussian
noise while training, keeps the K largest (ties go to the lowest index) and
turns them into probabilities with a softmax over the masked vector, so
inactive spaces get exactly zero weight.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass

import numpy as np

from .errors import ContractViolation
from .numerics import autodiff as ad

VARIANTS = ("flat-linear", "flat-conv1d", "matrix-conv2d")


@dataclass
class GateDecision:
    """Gate outcome for one example (1-D fields) or a batch (2-D fields)."""

    clean_logits: np.ndarray
    noisy_logits: np.ndarray
    active: np.ndarray
    gates: np.ndarray

    def __getitem__(self, i) -> "GateDecision":
        return GateDecision(self.clean_logits[i], self.noisy_logits[i], self.active[i], self.gates[i])

    def __len__(self):
        return len(self.gates) if self.gates.ndim == 2 else 1

    def active_mask(self) -> np.ndarray:
        mask = np.zeros(self.gates.shape, dtype=bool)
        np.put_along_axis(mask, self.active, True, axis=-1)
        return mask


def build_gate_input_flat(embeddings) -> np.ndarray:
    """Concatenate entity embeddings (each a flat product-space row) end to end."""
    return ad.concat(list(embeddings), axis=-1)


def build_gate_input_matrix(embeddings, dim: int):
    """Stack the component slices of every entity into a ``(len * N) x dim`` matrix.

    Each embedding is ``(..., N * dim)``; rows are entity-major, component-minor.
    """
    rows = []
    for e in embeddings:
        ev = ad.value(e)
        if ev.shape[-1] % dim:
            raise ContractViolation("matrix gate input needs equal component dimensions")
        rows.append(ad.reshape(e, ev.shape[:-1] + (ev.shape[-1] // dim, dim)))
    return ad.concat(rows, axis=-2)


def _patch_index(shape, kernel, stride):
    if len(shape) == 1:
        (length,) = shape
        if length < kernel:
            raise ContractViolation(f"gate input length {length} shorter than kernel {kernel}")
        n_out = (length - kernel) // stride + 1
        return (np.arange(n_out)[:, None] * stride + np.arange(kernel)[None, :]), n_out
    h, w = shape
    if h < kernel or w < kernel:
        raise ContractViolation(f"gate input {h}x{w} smaller than kernel {kernel}")
    oh, ow = (h - kernel) // stride + 1, (w - kernel) // stride + 1
    rows = np.arange(oh)[:, None, None, None] * stride + np.arange(kernel)[None, None, :, None]
    cols = np.arange(ow)[None, :, None, None] * stride + np.arange(kernel)[None, None, None, :]
    idx = (rows * w + cols).reshape(oh * ow, kernel * kernel)
    return idx, oh * ow


class GatingNetwork:
    """Two parallel heads ``f1`` (logits) and ``f2`` (noise scale) mapping the gate input to N values.

    ``flat-linear`` is one affine map. The conv variants run a single-channel
    convolution (kernel 5, stride 3, no padding, 4 output channels, ReLU)
    and an affine map from the flattened feature maps to N logits.
    """

    def __init__(self, variant, n_spaces, input_shape, noise=True, prefix="gate", channels=4, kernel=5, stride=3):
        if variant not in VARIANTS:
            raise ContractViolation(f"unknown gate variant {variant!r}")
        self.variant = variant
        self.n_spaces = int(n_spaces)
        self.input_shape = tuple(input_shape)
        self.noise = noise
        self.prefix = prefix
        self.channels = channels
        self.kernel = kernel
        self.stride = stride
        if variant == "matrix-conv2d" and len(self.input_shape) != 2:
            raise ContractViolation("matrix-conv2d needs a 2-D gate input")
        if variant != "matrix-conv2d" and len(self.input_shape) != 1:
            raise ContractViolation(f"{variant} needs a flat gate input")
        if variant == "flat-linear":
            self._idx, self.features = None, self.input_shape[0]
        else:
            self._idx, n_patch = _patch_index(self.input_shape, kernel, stride)
            self.features = n_patch * channels

    def heads(self):
        return ("f1", "f2") if self.noise else ("f1",)

    def param_names(self):
        names = []
        for h in self.heads():
            if self.variant != "flat-linear":
                names += [f"{self.prefix}.{h}.conv_w", f"{self.prefix}.{h}.conv_b"]
            names += [f"{self.prefix}.{h}.w", f"{self.prefix}.{h}.b"]
        return names

    def init_params(self, store, rng, scale=0.01):
        taps = self.kernel ** len(self.input_shape)
        for h in self.heads():
            p = f"{self.prefix}.{h}"
            if self.variant != "flat-linear":
                store.add(f"{p}.conv_w", rng.normal(0.0, scale, (taps, self.channels)))
                store.add(f"{p}.conv_b", np.zeros(self.channels))
            store.add(f"{p}.w", rng.normal(0.0, scale, (self.features, self.n_spaces)))
            store.add(f"{p}.b", np.zeros(self.n_spaces))

    def head(self, p, x, which="f1"):
        """One head applied to a batch of gate inputs -> ``(B, N)``."""
        pre = f"{self.prefix}.{which}"
        xv = ad.value(x)
        batch = xv.shape[: xv.ndim - len(self.input_shape)]
        if xv.shape[len(batch):] != self.input_shape:
            raise ContractViolation(f"gate input shape {xv.shape[len(batch):]} != {self.input_shape}")
        flat = ad.reshape(x, (-1, int(np.prod(self.input_shape))))
        if self.variant == "flat-linear":
            feats = flat
        else:
            patches = ad.take(flat, self._idx, axis=1)
            fmap = ad.relu(ad.matmul(patches, p[f"{pre}.conv_w"]) + p[f"{pre}.conv_b"])
            feats = ad.reshape(fmap, (fmap.shape[0], self.features))
        out = ad.matmul(feats, p[f"{pre}.w"]) + p[f"{pre}.b"]
        return ad.reshape(out, batch + (self.n_spaces,))


def topk_mask(logits: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Sorted indices of the K largest entries per row and the boolean mask.

    Ties at the K-th value go to the lowest index.
    """
    logits = np.asarray(logits)
    n = logits.shape[-1]
    if not 1 <= k <= n:
        raise ContractViolation(f"K={k} must lie in [1, N={n}]")
    order = np.argsort(-logits, axis=-1, kind="stable")[..., :k]
    active = np.sort(order, axis=-1)
    mask = np.zeros(logits.shape, dtype=bool)
    np.put_along_axis(mask, active, True, axis=-1)
    return active, mask


def masked_softmax(logits, mask):
    return ad.softmax(ad.where(mask, logits, -np.inf), axis=-1)


def gate_forward(net: GatingNetwork, p, x, k: int, training: bool = False, rng=None):
    """Batched gate; returns ``(gates, decision)``.

    ``gates`` is differentiable w.r.t. the gate parameters in ``p`` when they
    are Tensors; ``decision`` carries plain arrays.
    """
    clean = net.head(p, x, "f1")
    noisy = clean
    if training and net.noise:
        if rng is None:
            raise ContractViolation("training-mode gating needs an explicit rng")
        eps = rng.standard_normal(ad.value(clean).shape)
        noisy = clean + eps * ad.softplus(net.head(p, x, "f2"))
    active, mask = topk_mask(ad.value(noisy), k)
    gates = masked_softmax(noisy, mask)
    return gates, GateDecision(ad.value(clean), ad.value(noisy), active, ad.value(gates))


def noisy_topk_gates(x, net: GatingNetwork, params, k: int, training: bool = False, rng=None) -> GateDecision:
    """Gate decision for a single input or a batch of inputs (plain arrays)."""
    xv = np.asarray(x, dtype=np.float64)
    single = xv.shape == net.input_shape
    if single:
        xv = xv[None]
    _, decision = gate_forward(net, params, xv, k, training, rng)
    return decision[0] if single else decision


def gates_from_logits(logits, k: int) -> np.ndarray:
    """Noise-free gates straight from logits."""
    _, mask = topk_mask(ad.value(logits), k)
    return masked_softmax(logits, mask)


def importance_loss(gates, w_aux: float = 0.01):
    """``w_aux`` times the squared coefficient of variation of per-space importance.

    ``gates`` is a ``(B, N)`` array/Tensor or a sequence of GateDecisions.
    """
    if isinstance(gates, (list, tuple)):
        if not gates:
            raise ContractViolation("importance loss needs a nonempty batch")
        gates = np.stack([np.atleast_2d(d.gates) for d in gates]).reshape(-1, np.shape(gates[0].gates)[-1])
    if ad.value(gates).shape[0] == 0:
        raise ContractViolation("importance loss needs a nonempty batch")
    importance = ad.sum_(gates, axis=0)
    mu = ad.mean(importance)
    if ad.value(mu) <= 0:
        raise ContractViolation("mean importance is zero")
    var = ad.mean(ad.square(importance - mu))
    return w_aux * var / ad.square(mu)


def switch_score(scores, gates, mode: str = "lse", weighted: bool = True, active=None):
    """Aggregate per-space scores ``(..., N)`` under the gates.

    ``lse``: ``log(sum_i g_i exp(s_i))`` over active spaces, max-shifted.
    ``sum``: plain sum of all component scores; every space must be active.
    With ``weighted=False`` the gate probabilities are replaced by the
    0/1 activity mask.
    """
    gv = ad.value(gates)
    mask = gv > 0 if active is None else np.asarray(active, dtype=bool)
    if not np.all(np.any(mask, axis=-1)):
        raise ContractViolation("every example needs at least one active space")
    if mode == "sum":
        if not np.all(mask):
            raise ContractViolation("sum mode requires K = N")
        return ad.sum_(scores, axis=-1)
    if mode != "lse":
        raise ContractViolation(f"unknown switch mode {mode!r}")
    sv = ad.value(scores)
    shift = np.max(np.where(mask, sv, -np.inf), axis=-1, keepdims=True)
    shifted = ad.where(mask, scores - shift, 0.0)
    weights = gates if weighted else mask.astype(np.float64)
    total = ad.sum_(weights * ad.exp(shifted), axis=-1)
    return ad.log(total) + shift[..., 0]


def active_set_histogram(active: np.ndarray, n: int, k: int) -> dict[tuple[int, ...], int]:
    """Counts of each of the C(n, k) possible active sets."""
    hist = {combo: 0 for combo in itertools.combinations(range(n), k)}
    for row in np.atleast_2d(active):
        hist[tuple(int(i) for i in row)] += 1
    return hist


class GateLog:
    """Appends one JSON record per example (active set, gate values) to a text stream."""

    def __init__(self, stream):
        self.stream = stream
        self.count = 0

    def write(self, decision: GateDecision, **extra):
        active = np.atleast_2d(decision.active)
        gates = np.atleast_2d(decision.gates)
        for i in range(active.shape[0]):
            rec = {"active": [int(a) for a in active[i]], "gates": [round(float(g), 8) for g in gates[i]]}
            for key, val in extra.items():
                rec[key] = int(val[i]) if np.ndim(val) else val
            self.stream.write(json.dumps(rec) + "\n")
            self.count += 1
