import math

import numpy as np
import pytest

from switchspaces.numerics import autodiff as ad
from switchspaces.numerics import grad_check
from switchspaces.product import parse_signature
from switchspaces.rec import SwitchRec, hinge_loss, rec_component_score


def make(sig, k=None, **kw):
    model = SwitchRec(parse_signature(sig), 10, 15, k=k, **kw)
    return model, model.init_params(np.random.default_rng(0), init_scale=0.3, gate_scale=0.5)


class TestComponentScore:
    def test_identical_embeddings(self):
        u = np.array([0.2, -0.1])
        for c in (-1.0, 0.0, 1.0):
            assert rec_component_score(u, u, c) == pytest.approx(0.0, abs=1e-14)

    def test_flat(self):
        assert rec_component_score(np.zeros(2), np.array([0.5, 0.0]), 0.0) == pytest.approx(-1.0, abs=1e-15)

    def test_hyperbolic(self):
        # exp0 of a tangent vector t has norm tanh(|t|); pick t so the point is 0.5
        v = np.array([math.atanh(0.5)])
        assert rec_component_score(np.zeros(1), v, -1.0) == pytest.approx(-math.log(3) ** 2, abs=1e-12)
        assert rec_component_score(np.zeros(1), v, -1.0) == pytest.approx(-1.206949, abs=1e-6)


class TestHinge:
    def test_equal_scores(self):
        assert hinge_loss(1.0, 1.0, 0.5) == 0.5

    def test_satisfied_margin(self):
        assert hinge_loss(0.2, 0.7, 0.5) == 0.0
        assert hinge_loss(0.2, 3.0, 0.5) == 0.0

    def test_example(self):
        assert hinge_loss(-1.0, -2.0, 0.5) == pytest.approx(1.5)

    def test_nonnegative(self):
        rng = np.random.default_rng(0)
        assert np.all(hinge_loss(rng.normal(size=100), rng.normal(size=100)) >= 0)


class TestSwitchRec:
    def test_cml_recovery(self):
        model, p = make("E8")
        u, i = np.array([0, 3, 9]), np.array([1, 14, 2])
        s, _, _ = model.score(p, u, i)
        np.testing.assert_allclose(s, -4 * np.sum((p["user"][u] - p["item"][i]) ** 2, -1), atol=1e-9)

    def test_poincare_recovery(self):
        model, p = make("P8")
        u, i = np.array([0, 3]), np.array([1, 14])
        s, _, _ = model.score(p, u, i)

        def to_ball(v):
            n = np.linalg.norm(v, axis=-1, keepdims=True)
            return np.tanh(n) * v / n

        x, y = to_ball(p["user"][u]), to_ball(p["item"][i])
        x2, y2 = np.sum(x * x, -1), np.sum(y * y, -1)
        d = np.arccosh(1 + 2 * np.sum((x - y) ** 2, -1) / ((1 - x2) * (1 - y2)))
        np.testing.assert_allclose(s, -(d**2), atol=1e-9)

    def test_k_one_and_op_count(self):
        model, p = make("E4,P4,D4", k=1)
        u, i = np.arange(10), np.arange(10)
        model.component_evals = 0
        s, _, d = model.score(p, u, i)
        assert model.component_evals == 10
        for row in range(10):
            j = int(d.active[row][0])
            sl = model.sig.slice(j)
            c = model.sig.components[j].curvature
            assert s[row] == pytest.approx(float(rec_component_score(p["user"][row, sl], p["item"][row, sl], c)), abs=1e-12)

    def test_symmetric_logits_give_uniform_lse(self):
        model, p = make("E4,P4,D4", k=3)
        p["gate.f1.w"] = np.zeros_like(p["gate.f1.w"])
        u, i = np.arange(4), np.arange(4)
        s, g, _ = model.score(p, u, i)
        comps = np.stack([rec_component_score(p["user"][u][:, model.sig.slice(j)], p["item"][i][:, model.sig.slice(j)],
                                              model.sig.components[j].curvature) for j in range(3)], -1)
        np.testing.assert_allclose(s, np.log(np.mean(np.exp(comps), -1)), atol=1e-12)

    def test_dense_matrix_matches_pairs(self):
        model, p = make("E4,P4,D4", k=2)
        full = model.score_matrix(p, np.arange(10))
        uu, ii = np.meshgrid(np.arange(10), np.arange(15), indexing="ij")
        s, _, _ = model.score(p, uu.ravel(), ii.ravel())
        np.testing.assert_allclose(full.ravel(), s, atol=1e-10)

    def test_product_mode_dense(self):
        model, p = make("E4,P4", mode="sum")
        full = model.score_matrix(p, np.arange(3))
        s, _, _ = model.score(p, np.repeat(np.arange(3), 15), np.tile(np.arange(15), 3))
        np.testing.assert_allclose(full.ravel(), s, atol=1e-10)

    def test_absent_users_get_zero_gradient(self):
        model, p = make("E4,P4,D4", k=2)
        leaves = p.leaves()
        users = np.array([0, 1, 1])
        loss, _ = model.loss(leaves, users, np.array([2, 3, 4]), np.array([5, 6, 7]), np.random.default_rng(0), reg=0.01)
        g = ad.backward(loss, leaves)["user"]
        assert not np.any(g[2:])
        assert np.any(g[:2])

    def test_inactive_components_get_zero_gradient(self):
        model, p = make("E4,P4,D4,E4", k=1, noise=False)
        users, pos, neg = np.array([0, 5]), np.array([1, 6]), np.array([2, 9])
        leaves = p.leaves()
        loss, _ = model.loss(leaves, users, pos, neg, reg=0.1)
        grads = ad.backward(loss, leaves)
        used = set()
        for items in (pos, neg):
            used |= set(np.unique(model.score(p, users, items)[2].active).tolist())
        assert len(used) < 4
        for j in set(range(4)) - used:
            assert not np.any(grads["user"][:, model.sig.slice(j)])
            assert not np.any(grads["item"][:, model.sig.slice(j)])

    def test_loss_gradient(self):
        model, p = make("E4,P4,D4", k=2, noise=False, detach_gate_input=False)
        users, pos, neg = np.array([0, 4]), np.array([1, 7]), np.array([3, 11])

        def fn(user, item, w):
            q = dict(p, user=user, item=item)
            q["gate.f1.w"] = w
            return model.loss(q, users, pos, neg, margin=5.0, reg=0.01)[0]

        assert grad_check(fn, [p["user"], p["item"], p["gate.f1.w"]]) < 1e-4
