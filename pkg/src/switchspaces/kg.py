"""Knowledge-graph completion in switch spaces (SwisE).

Each component space scores a triple with a rotation-translation model:
the head is mapped to the manifold, translated by ``alpha_r``, rotated by
``gamma_r``, translated again by ``beta_r`` and compared with the tail by
squared geodesic distance. In a Euclidean component this is RotE, in a
Poincaré component RotH, in a spherical component its positive-curvature
counterpart. The sparse gate picks K components per ``(h, r)`` query.
"""

from __future__ import annotations

import logging
import warnings

import numpy as np

from . import manifolds as mf
from .errors import ContractViolation
from .gating import GatingNetwork, build_gate_input_flat, build_gate_input_matrix, gate_forward, importance_loss, switch_score
from .numerics import ParamStore
from .numerics import autodiff as ad
from .product import Signature

log = logging.getLogger(__name__)


def rotate(x, gamma):
    """Givens rotation of consecutive coordinate pairs.

    Pair ``(x[2j], x[2j+1])`` turns by angle ``gamma[2j]``; odd entries of
    ``gamma`` are unused.
    """
    b = ad.value(x).shape[-1]
    if b % 2:
        raise ContractViolation("rotation needs an even dimension")
    theta = gamma[..., 0::2]
    cos, sin = ad.cos(theta), ad.sin(theta)
    xe, xo = x[..., 0::2], x[..., 1::2]
    ye = cos * xe - sin * xo
    yo = sin * xe + cos * xo
    shape = ad.value(x).shape
    pairs = ad.concat([ad.reshape(ye, shape[:-1] + (b // 2, 1)), ad.reshape(yo, shape[:-1] + (b // 2, 1))], axis=-1)
    return ad.reshape(pairs, shape)


def kg_transform(e_h, alpha, beta, gamma, c):
    """Query point: rotate(exp0(e_h) + exp0(alpha)) + exp0(beta), additions gyrovector-style."""
    def to_manifold(v):
        return mf.expmap0(mf.clip_tangent(v, c), c)

    x = mf.mobius_add(to_manifold(e_h), to_manifold(alpha), c)
    return mf.mobius_add(rotate(x, gamma), to_manifold(beta), c)


def component_score(query, e_t, c, b_h=0.0, b_t=0.0):
    """Negative squared distance between the query point and the mapped tail, plus biases."""
    tail = mf.expmap0(mf.clip_tangent(e_t, c), c)
    d = mf.dist(query, tail, c)
    return -ad.square(d)[..., 0] + b_h + b_t


def kg_loss(scores, labels):
    """Sum of ``log(1 + exp(-y * s))`` over scored triples."""
    return ad.sum_(ad.softplus(-np.asarray(labels, dtype=np.float64) * scores))


class TripleIndex:
    """Membership test for (h, r, t) triples via sorted integer keys."""

    def __init__(self, triples, n_entities, n_relations):
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.keys = np.unique(self.encode(np.asarray(triples, dtype=np.int64).reshape(-1, 3)))

    def encode(self, triples):
        t = np.asarray(triples, dtype=np.int64)
        return (t[..., 0] * self.n_relations + t[..., 1]) * self.n_entities + t[..., 2]

    def contains(self, triples):
        keys = self.encode(triples)
        pos = np.searchsorted(self.keys, keys)
        pos = np.minimum(pos, len(self.keys) - 1)
        return self.keys[pos] == keys if len(self.keys) else np.zeros(keys.shape, dtype=bool)

    def __contains__(self, triple):
        return bool(self.contains(np.asarray(triple)[None])[0])


def sample_negatives(triple, n_neg, n_entities, known: TripleIndex, rng):
    """Corrupt the tail of ``triple`` ``n_neg`` times, avoiding known true triples.

    Replacement tails are drawn uniformly from the entities that do not
    complete a known triple. If none remain, fewer (possibly zero) negatives
    are returned with a warning. Returned triples carry label -1.
    """
    if n_neg <= 0:
        return []
    h, r, _ = (int(v) for v in triple)
    cand = np.arange(n_entities)
    cand = cand[~known.contains(np.stack([np.full(n_entities, h), np.full(n_entities, r), cand], axis=1))]
    if len(cand) == 0:
        warnings.warn(f"no valid negative tails for ({h}, {r}, ?)", RuntimeWarning)
        return []
    tails = rng.choice(cand, size=n_neg, replace=True)
    return [(h, r, int(t), -1) for t in tails]


def sample_negative_tails(pos, n_neg, n_entities, known: TripleIndex, rng, max_rounds=20):
    """Batched tail corruption by rejection sampling -> ``(B, n_neg)`` entity ids."""
    pos = np.asarray(pos)
    tails = rng.integers(0, n_entities, size=(len(pos), n_neg))
    for _ in range(max_rounds):
        trip = np.stack([np.broadcast_to(pos[:, :1], tails.shape), np.broadcast_to(pos[:, 1:2], tails.shape), tails], -1)
        bad = known.contains(trip)
        if not bad.any():
            break
        tails[bad] = rng.integers(0, n_entities, size=int(bad.sum()))
    else:
        log.warning("negative sampling left %d filtered-true tails after %d rounds", int(bad.sum()), max_rounds)
    return tails


class SwisE:
    """Switch-space KG embedding model.

    ``n_relations`` counts every relation id the model sees (reciprocal ids
    included). ``mode="sum"`` turns the model into the plain product-space
    counterpart: no gate, all components scored, squared distances summed.
    """

    def __init__(
        self,
        signature: Signature,
        n_entities: int,
        n_relations: int,
        k: int | None = None,
        mode: str = "switch",
        gate_variant: str = "matrix-conv2d",
        noise: bool = True,
        gate_weighting: bool = True,
        trainable_curvature: bool = True,
        detach_gate_input: bool = True,
    ):
        self.sig = signature
        self.n_entities = int(n_entities)
        self.n_relations = int(n_relations)
        self.n = signature.n
        self.k = self.n if k is None else int(k)
        if not 1 <= self.k <= self.n:
            raise ContractViolation(f"K={self.k} must lie in [1, N={self.n}]")
        if any(d % 2 for d in signature.dims):
            raise ContractViolation("every component dimension must be even for pairwise rotations")
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
                shape = (3 * self.n, b)
            else:
                shape = (3 * signature.total_dim,)
            self.gate = GatingNetwork(gate_variant, self.n, shape, noise=noise)

    # -- parameters -----------------------------------------------------------

    def init_params(self, rng, init_scale=0.05, gate_scale=0.01) -> ParamStore:
        d = self.sig.total_dim
        p = ParamStore()
        p.add("entity", rng.normal(0.0, init_scale, (self.n_entities, d)))
        p.add("rel_alpha", rng.normal(0.0, init_scale, (self.n_relations, d)))
        p.add("rel_beta", rng.normal(0.0, init_scale, (self.n_relations, d)))
        p.add("rel_gamma", rng.uniform(-np.pi, np.pi, (self.n_relations, d)))
        p.add("bias_head", np.zeros(self.n_entities))
        p.add("bias_tail", np.zeros(self.n_entities))
        if self.trainable_curvature and self.curved:
            raw = [self.sig.components[i].raw_curvature_init() for i in self.curved]
            p.add("curv_raw", np.tile(raw, (self.n_relations, 1)))
        if self.gate is not None:
            self.gate.init_params(p, rng, gate_scale)
        return p

    def curvature(self, p, rels, i):
        """Curvature of component ``i`` for each relation in ``rels`` -> ``(S, 1)`` (or a float)."""
        space = self.sig.components[i]
        if space.kind == "E":
            return 0.0
        if "curv_raw" not in p:
            return space.curvature
        col = self.curved.index(i)
        raw = ad.take(p["curv_raw"], rels)[:, col : col + 1]
        return space.curvature_from_raw(raw)

    def curvatures_array(self, p):
        """``(n_relations, N)`` matrix of current curvature values."""
        out = np.zeros((self.n_relations, self.n))
        for i, s in enumerate(self.sig.components):
            out[:, i] = ad.value(self.curvature(p, np.arange(self.n_relations), i)).reshape(-1) if s.kind != "E" else 0.0
        return out

    # -- scoring --------------------------------------------------------------

    def _rows(self, p, name, ids, i):
        return ad.take(p[name], ids, cols=self.sig.slice(i))

    def transform(self, p, h, r, i):
        c = self.curvature(p, r, i)
        q = kg_transform(self._rows(p, "entity", h, i), self._rows(p, "rel_alpha", r, i),
                         self._rows(p, "rel_beta", r, i), self._rows(p, "rel_gamma", r, i), c)
        return q, c

    def component_sq_dist(self, p, h, r, t, i):
        """Squared distances for queries ``(S,)`` against tails ``(S, M)`` in component ``i``."""
        q, c = self.transform(p, h, r, i)
        self.component_evals += len(h)
        c3 = c if np.ndim(ad.value(c)) == 0 else ad.reshape(c, (-1, 1, 1))
        tails = mf.expmap0(mf.clip_tangent(self._rows(p, "entity", t, i), c3), c3)
        qv = ad.value(q)
        d = mf.dist(ad.reshape(q, (qv.shape[0], 1, qv.shape[1])), tails, c3)
        return ad.square(d)[..., 0]

    def component_score(self, p, h, r, t, i):
        """Per-component triple score for aligned ``h, r, t`` arrays."""
        h, r, t = (np.atleast_1d(a) for a in (h, r, t))
        d2 = self.component_sq_dist(p, h, r, t[:, None], i)[:, 0]
        return -d2 + ad.take(p["bias_head"], h) + ad.take(p["bias_tail"], t)

    def gate_input(self, p, h, r):
        parts = [ad.take(p["entity"], h), ad.take(p["rel_alpha"], r), ad.take(p["rel_beta"], r)]
        if self.detach_gate_input:
            parts = [ad.value(x) for x in parts]
        if self.gate.variant == "matrix-conv2d":
            return build_gate_input_matrix(parts, self.sig.uniform_dim())
        return build_gate_input_flat(parts)

    def gates(self, p, h, r, training=False, rng=None):
        if self.gate is None:
            b = len(h)
            g = np.ones((b, self.n)) / self.n if self.mode == "switch" else np.ones((b, self.n))
            return g, None
        return gate_forward(self.gate, p, self.gate_input(p, h, r), self.k, training, rng)

    def score(self, p, h, r, t, training=False, rng=None):
        """Triple scores.

        ``t`` is ``(B,)`` or a candidate matrix ``(B, M)``; returns scores of
        the same shape, the differentiable gates ``(B, N)`` and the
        GateDecision (``None`` in sum mode).
        """
        h, r, t = np.asarray(h), np.asarray(r), np.asarray(t)
        flat_t = t.ndim == 1
        tt = t[:, None] if flat_t else t
        b = len(h)
        bias = ad.reshape(ad.take(p["bias_head"], h), (b, 1)) + ad.take(p["bias_tail"], tt)
        gates, decision = self.gates(p, h, r, training, rng)
        if self.mode == "sum":
            total = 0.0
            for i in range(self.n):
                total = total - self.component_sq_dist(p, h, r, tt, i)
            out = total + bias
        else:
            mask = np.ones((b, self.n), dtype=bool) if decision is None else decision.active_mask()
            cols = []
            for i in range(self.n):
                rows = np.nonzero(mask[:, i])[0]
                if len(rows) == 0:
                    cols.append(np.zeros((b, tt.shape[1], 1)))
                    continue
                d2 = self.component_sq_dist(p, h[rows], r[rows], tt[rows], i)
                cols.append(ad.reshape(ad.scatter_rows(-d2, rows, b), (b, tt.shape[1], 1)))
            comp = ad.concat(cols, axis=-1)
            g3 = ad.reshape(gates, (b, 1, self.n))
            # exp(s + b) = exp(s) exp(b): a bias shared by every component can be
            # added after aggregation instead of inside each term
            out = switch_score(comp, g3, "lse", self.gate_weighting, active=mask[:, None, :]) + bias
        if flat_t:
            out = out[:, 0]
        return out, gates, decision

    def loss(self, p, pos, neg_tails, rng=None, w_aux=0.01, reg=0.0):
        """Cross-entropy over each positive and its corrupted tails, plus load balancing."""
        pos = np.asarray(pos)
        cand = np.concatenate([pos[:, 2:3], neg_tails], axis=1)
        labels = np.full(cand.shape, -1.0)
        labels[:, 0] = 1.0
        s, gates, decision = self.score(p, pos[:, 0], pos[:, 1], cand, training=True, rng=rng)
        total = kg_loss(s, labels)
        if decision is not None and w_aux > 0:
            total = total + importance_loss(gates, w_aux)
        if reg > 0:
            # only active slices, so inactive components stay untouched
            mask = np.ones((len(pos), self.n), dtype=bool) if decision is None else decision.active_mask()
            for i in range(self.n):
                rows = np.nonzero(mask[:, i])[0]
                if len(rows):
                    total = total + reg * ad.sum_(ad.square(self._rows(p, "entity", pos[rows, 0], i)))
        return total, decision

    def score_all_tails(self, p, h, r, chunk=256):
        """Scores of every entity as tail for each ``(h, r)`` query -> ``(B, n_entities)``."""
        h, r = np.asarray(h), np.asarray(r)
        out = np.empty((len(h), self.n_entities))
        decisions = []
        every = np.arange(self.n_entities)
        for lo in range(0, len(h), chunk):
            hi = min(lo + chunk, len(h))
            cand = np.broadcast_to(every, (hi - lo, self.n_entities))
            s, _, d = self.score(p, h[lo:hi], r[lo:hi], cand)
            out[lo:hi] = ad.value(s)
            if d is not None:
                decisions.append(d)
        return out, decisions

    def score_one(self, p, h, r, t):
        """Single-triple inference; only the K active components are evaluated."""
        s, _, d = self.score(p, np.array([h]), np.array([r]), np.array([t]))
        return float(s[0]), d
