"""Metric-learning collaborative filtering in switch spaces.

A user prefers an item by the negative squared distance between their
points in each component space; the gate (one affine layer over the
concatenated user and item rows) picks K components per pair. A single
Euclidean space gives CML, a single Poincaré space HyperML.
"""

from __future__ import annotations

import numpy as np

from . import manifolds as mf
from .errors import ContractViolation
from .gating import GatingNetwork, build_gate_input_flat, build_gate_input_matrix, gate_forward, importance_loss, switch_score, topk_mask
from .numerics import ParamStore
from .numerics import autodiff as ad
from .product import Signature


def rec_component_score(u, v, c):
    """``-d(exp0(u), exp0(v))^2`` for tangent rows ``u`` and ``v``."""
    a = mf.expmap0(mf.clip_tangent(u, c), c)
    b = mf.expmap0(mf.clip_tangent(v, c), c)
    return -ad.square(mf.dist(a, b, c))[..., 0]


def hinge_loss(pos, neg, margin=0.5):
    """``max(0, pos + margin - neg)`` elementwise.

    Arguments are dissimilarities: the model passes negated preference
    scores, so the loss vanishes once the negative item is at least
    ``margin`` farther away than the positive one.
    """
    return ad.relu(pos + margin - neg)


class SwitchRec:
    """Switch-space recommender; ``mode="sum"`` is the plain product-space model."""

    def __init__(
        self,
        signature: Signature,
        n_users: int,
        n_items: int,
        k: int | None = None,
        mode: str = "switch",
        gate_variant: str = "flat-linear",
        noise: bool = True,
        gate_weighting: bool = True,
        trainable_curvature: bool = False,
        detach_gate_input: bool = True,
    ):
        self.sig = signature
        self.n_users = int(n_users)
        self.n_items = int(n_items)
        self.n = signature.n
        self.k = self.n if k is None else int(k)
        if not 1 <= self.k <= self.n:
            raise ContractViolation(f"K={self.k} must lie in [1, N={self.n}]")
        if mode not in ("switch", "sum"):
            raise ContractViolation(f"unknown mode {mode!r}")
        if mode == "sum" and self.k != self.n:
            raise ContractViolation("product (sum) mode requires K = N")
        self.mode = mode
        self.gate_weighting = gate_weighting
        self.trainable_curvature = trainable_curvature
        self.detach_gate_input = detach_gate_input
        self.curved = [i for i, s in enumerate(signature.components) if s.kind != "E"]
        self.component_evals = 0
        self.gate = None
        if mode == "switch" and self.n > 1:
            if gate_variant == "matrix-conv2d":
                b = signature.uniform_dim()
                if b is None:
                    raise ContractViolation("matrix-conv2d gating needs equal component dimensions")
                shape = (2 * self.n, b)
            else:
                shape = (2 * signature.total_dim,)
            self.gate = GatingNetwork(gate_variant, self.n, shape, noise=noise)

    def init_params(self, rng, init_scale=0.05, gate_scale=0.01) -> ParamStore:
        d = self.sig.total_dim
        p = ParamStore()
        p.add("user", rng.normal(0.0, init_scale, (self.n_users, d)))
        p.add("item", rng.normal(0.0, init_scale, (self.n_items, d)))
        if self.trainable_curvature and self.curved:
            p.add("curv_raw", np.array([self.sig.components[i].raw_curvature_init() for i in self.curved]))
        if self.gate is not None:
            self.gate.init_params(p, rng, gate_scale)
        return p

    def curvature(self, p, i):
        space = self.sig.components[i]
        if space.kind == "E":
            return 0.0
        if "curv_raw" not in p:
            return space.curvature
        col = self.curved.index(i)
        return space.curvature_from_raw(p["curv_raw"][col : col + 1])

    def _rows(self, p, name, ids, i):
        return ad.take(p[name], ids, cols=self.sig.slice(i))

    def gate_input(self, p, users, items):
        parts = [ad.take(p["user"], users), ad.take(p["item"], items)]
        if self.detach_gate_input:
            parts = [ad.value(x) for x in parts]
        if self.gate.variant == "matrix-conv2d":
            return build_gate_input_matrix(parts, self.sig.uniform_dim())
        return build_gate_input_flat(parts)

    def component_sq_dist(self, p, users, items, i, reg_terms=None):
        c = self.curvature(p, i)
        u = self._rows(p, "user", users, i)
        v = self._rows(p, "item", items, i)
        self.component_evals += len(users)
        if reg_terms is not None:
            reg_terms.append(ad.sum_(ad.square(u)) + ad.sum_(ad.square(v)))
        return -rec_component_score(u, v, c)

    def score(self, p, users, items, training=False, rng=None, reg_terms=None):
        """Scores of aligned ``(user, item)`` pairs -> ``(B,)``, gates, GateDecision."""
        users, items = np.asarray(users), np.asarray(items)
        b = len(users)
        if self.gate is None:
            gates, decision = np.full((b, self.n), 1.0 / self.n), None
        else:
            gates, decision = gate_forward(self.gate, p, self.gate_input(p, users, items), self.k, training, rng)
        if self.mode == "sum":
            total = 0.0
            for i in range(self.n):
                total = total - self.component_sq_dist(p, users, items, i, reg_terms)
            return total, gates, decision
        mask = np.ones((b, self.n), dtype=bool) if decision is None else decision.active_mask()
        cols = []
        for i in range(self.n):
            rows = np.nonzero(mask[:, i])[0]
            if len(rows) == 0:
                cols.append(np.zeros((b, 1)))
                continue
            d2 = self.component_sq_dist(p, users[rows], items[rows], i, reg_terms)
            cols.append(ad.reshape(ad.scatter_rows(-d2, rows, b), (b, 1)))
        comp = ad.concat(cols, axis=-1)
        return switch_score(comp, gates, "lse", self.gate_weighting, active=mask), gates, decision

    def loss(self, p, users, pos, neg, rng=None, margin=0.5, w_aux=0.01, reg=0.0):
        """Summed hinge loss over (user, positive, negative) triples plus auxiliary terms."""
        reg_terms = [] if reg > 0 else None
        s_pos, g_pos, d_pos = self.score(p, users, pos, training=True, rng=rng, reg_terms=reg_terms)
        s_neg, g_neg, _ = self.score(p, users, neg, training=True, rng=rng, reg_terms=reg_terms)
        total = ad.sum_(hinge_loss(-s_pos, -s_neg, margin))
        if self.gate is not None and w_aux > 0:
            total = total + importance_loss(ad.concat([g_pos, g_neg], axis=0), w_aux)
        if reg_terms:
            for term in reg_terms:
                total = total + reg * term
        return total, d_pos

    # -- inference -------------------------------------------------------------

    def _pair_logits(self, p, users, items):
        """Clean gate logits for every (user, item) pair -> ``(U, I, N)``."""
        uv = np.asarray(p["user"])[users]
        iv = np.asarray(p["item"])[items]
        d = self.sig.total_dim
        if self.gate.variant == "flat-linear":
            w, bias = np.asarray(p["gate.f1.w"]), np.asarray(p["gate.f1.b"])
            return (uv @ w[:d])[:, None, :] + (iv @ w[d:])[None, :, :] + bias
        x = np.concatenate(np.broadcast_arrays(uv[:, None, :], iv[None, :, :]), axis=-1)
        if self.gate.variant == "matrix-conv2d":
            b = self.sig.uniform_dim()
            x = x.reshape(x.shape[:2] + (2 * self.n, b))
        return self.gate.head(p, x, "f1")

    def score_matrix(self, p, users, items=None, budget=4_000_000):
        """Deterministic scores for every user in ``users`` against ``items`` (default: all)."""
        users = np.asarray(users)
        items = np.arange(self.n_items) if items is None else np.asarray(items)
        p = {k: ad.value(v) for k, v in p.items()}
        width = max(self.sig.dims)
        chunk = max(1, budget // max(1, len(items) * width))
        out = np.empty((len(users), len(items)))
        for lo in range(0, len(users), chunk):
            us = users[lo : lo + chunk]
            comp = np.empty((len(us), len(items), self.n))
            for i in range(self.n):
                comp[..., i] = self._dense_component(p, us, items, i)
            if self.mode == "sum":
                out[lo : lo + chunk] = comp.sum(-1)
                continue
            if self.gate is None:
                out[lo : lo + chunk] = comp[..., 0]
                continue
            logits = self._pair_logits(p, us, items)
            _, mask = topk_mask(logits, self.k)
            z = np.where(mask, logits, -np.inf)
            gates = np.exp(z - z.max(-1, keepdims=True))
            gates /= gates.sum(-1, keepdims=True)
            out[lo : lo + chunk] = switch_score(np.where(mask, comp, 0.0), gates, "lse", self.gate_weighting, active=mask)
        return out

    def _dense_component(self, p, users, items, i):
        c = self.curvature(p, i)
        u = p["user"][users][:, self.sig.slice(i)]
        v = p["item"][items][:, self.sig.slice(i)]
        if self.sig.components[i].kind == "E":
            sq = (u * u).sum(1)[:, None] + (v * v).sum(1)[None, :] - 2.0 * u @ v.T
            return -4.0 * np.maximum(sq, 0.0)
        return rec_component_score(u[:, None, :], v[None, :, :], c)

    def score_one(self, p, user, item):
        s, _, d = self.score(p, np.array([user]), np.array([item]))
        return float(s[0]), d
