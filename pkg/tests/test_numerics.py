import numpy as np
import pytest

from switchspaces.errors import ContractViolation, NumericFailure
from switchspaces.numerics import Adam, ParamStore, adam_step, grad_check
from switchspaces.numerics import autodiff as ad
from switchspaces.numerics.autodiff import Tensor, backward


def leaf(x):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=True)


class TestBackward:
    def test_square_at_three(self):
        x = leaf(3.0)
        (g,) = backward(x * x, [x])
        assert g == pytest.approx(6.0)

    def test_shared_subexpression_accumulates(self):
        x = leaf([1.5, -2.0])
        (g,) = backward(ad.sum_(x + x), [x])
        np.testing.assert_array_equal(g, [2.0, 2.0])

    def test_softmax_sum_has_zero_gradient(self):
        x = leaf(np.random.default_rng(1).normal(size=6))
        (g,) = backward(ad.sum_(ad.softmax(x)), [x])
        np.testing.assert_allclose(g, 0.0, atol=1e-15)

    def test_non_scalar_root_rejected(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(ContractViolation):
            backward(x * 2.0, [x])

    def test_unreached_parameter_gets_zeros(self):
        x, y = leaf([1.0, 2.0]), leaf([[3.0]])
        gx, gy = backward(ad.sum_(x), [x, y])
        np.testing.assert_array_equal(gy, np.zeros((1, 1)))

    def test_broadcast_gradient_is_reduced(self):
        x, b = leaf(np.ones((4, 3))), leaf(np.zeros(3))
        _, gb = backward(ad.sum_(x + b), [x, b])
        np.testing.assert_array_equal(gb, [4.0, 4.0, 4.0])

    def test_ndarray_on_left_defers_to_tensor(self):
        x = leaf([1.0, 2.0])
        y = np.array([3.0, 4.0]) * x
        assert isinstance(y, Tensor)

    def test_masked_softmax_gives_exact_zeros(self):
        x = ad.softmax(np.array([1.0, -np.inf, 0.0]))
        assert x[1] == 0.0
        assert x.sum() == pytest.approx(1.0, abs=1e-15)

    def test_norm_gradient_at_zero_is_zero(self):
        x = leaf(np.zeros(3))
        (g,) = backward(ad.sum_(ad.norm(x)), [x])
        np.testing.assert_array_equal(g, 0.0)

    def test_take_with_columns(self):
        table = leaf(np.arange(12.0).reshape(4, 3))
        out = ad.take(table, np.array([2, 2, 0]), cols=slice(1, 3))
        np.testing.assert_array_equal(ad.value(out), [[7, 8], [7, 8], [1, 2]])
        (g,) = backward(ad.sum_(out), [table])
        np.testing.assert_array_equal(g, [[0, 1, 1], [0, 0, 0], [0, 2, 2], [0, 0, 0]])


class TestNumericFailure:
    def test_check_numerics_names_op(self):
        x = leaf([-1.0])
        with ad.check_numerics():
            with pytest.raises(NumericFailure) as err:
                ad.log(x)
        assert err.value.op == "log"

    def test_off_by_default(self):
        with ad.check_numerics(False):
            with np.errstate(all="ignore"):
                ad.log(leaf([-1.0]))

    def test_masking_with_neg_inf_is_allowed(self):
        x = leaf([1.0, 2.0])
        with ad.check_numerics():
            out = ad.softmax(ad.where(np.array([True, False]), x, -np.inf))
        np.testing.assert_array_equal(ad.value(out), [1.0, 0.0])


PRIMITIVES = {
    "exp": (ad.exp, lambda r: [r.normal(size=3)]),
    "log": (ad.log, lambda r: [r.uniform(0.5, 2.0, 3)]),
    "sqrt": (ad.sqrt, lambda r: [r.uniform(0.5, 2.0, 3)]),
    "tan": (ad.tan, lambda r: [r.uniform(-1.0, 1.0, 3)]),
    "tanh": (ad.tanh, lambda r: [r.normal(size=3)]),
    "arctan": (ad.arctan, lambda r: [r.normal(size=3)]),
    "artanh": (ad.artanh, lambda r: [r.uniform(-0.8, 0.8, 3)]),
    "softplus": (ad.softplus, lambda r: [r.normal(size=3)]),
    "relu": (ad.relu, lambda r: [r.normal(size=3)]),
    "softmax": (ad.softmax, lambda r: [r.normal(size=4)]),
    "norm": (ad.norm, lambda r: [r.normal(size=3)]),
    "inner": (ad.inner, lambda r: [r.normal(size=3), r.normal(size=3)]),
    "matmul": (ad.matmul, lambda r: [r.normal(size=(2, 3)), r.normal(size=(3, 2))]),
    "div": (lambda a, b: a / b, lambda r: [r.normal(size=3), r.uniform(0.5, 2.0, 3)]),
    "max": (lambda a: ad.amax(a, axis=-1), lambda r: [r.normal(size=(2, 4))]),
    "concat": (lambda a, b: ad.concat([a, b]) * np.arange(1.0, 6.0), lambda r: [r.normal(size=2), r.normal(size=3)]),
    "slice": (lambda a: a[1:3] * a[0], lambda r: [r.normal(size=4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    fn, sample = PRIMITIVES[name]
    rng = np.random.default_rng(7)
    for _ in range(5):
        err = grad_check(fn, sample(rng), rng=rng, resample=sample)
        assert err < 1e-4


class TestGradCheck:
    def test_linear_map_is_exact(self):
        w = np.random.default_rng(0).normal(size=(3, 2))
        err = grad_check(lambda x: ad.matmul(x, w), [np.ones((1, 3))])
        assert err < 1e-10

    def test_kink_is_resampled_then_inconclusive(self):
        with pytest.warns(RuntimeWarning):
            err = grad_check(ad.relu, [np.zeros(2)], resample=lambda r: [np.zeros(2)])
        assert np.isnan(err)


class TestAdam:
    def test_first_step_value(self):
        p = ParamStore({"w": np.zeros(1)})
        adam_step(p, {"w": np.ones(1)}, lr=0.1)
        assert p["w"][0] == pytest.approx(-0.09999999, abs=1e-8)
        assert p.t["w"] == 1

    def test_zero_gradient_keeps_values(self):
        p = ParamStore({"w": np.array([0.3, -1.0])})
        opt = Adam(0.1)
        for _ in range(3):
            opt.step(p, {"w": np.zeros(2)})
        np.testing.assert_array_equal(p["w"], [0.3, -1.0])
        assert p.t["w"] == 3

    def test_second_step_not_larger(self):
        p = ParamStore({"w": np.zeros(3)})
        opt = Adam(0.01)
        g = {"w": np.array([0.5, -2.0, 1e-3])}
        opt.step(p, g)
        d1 = p["w"].copy()
        opt.step(p, g)
        d2 = p["w"] - d1
        assert np.all(np.abs(d2) <= np.abs(d1) + 1e-12)

    def test_shape_mismatch(self):
        p = ParamStore({"w": np.zeros(3)})
        with pytest.raises(ContractViolation):
            Adam(0.1).step(p, {"w": np.zeros(2)})


class TestParamStore:
    def test_checkpoint_round_trip(self, tmp_path):
        p = ParamStore({"a": np.arange(6.0).reshape(2, 3), "b": np.array([1.5])})
        Adam(0.1).step(p, {"a": np.ones((2, 3)), "b": np.ones(1)})
        p.save(tmp_path / "ck.npz")
        q = ParamStore.load(tmp_path / "ck.npz")
        assert q.shapes() == p.shapes()
        for k in p:
            np.testing.assert_array_equal(q[k], p[k])
            np.testing.assert_array_equal(q.m[k], p.m[k])
            assert q.t[k] == p.t[k]

    def test_setitem_shape_checked(self):
        p = ParamStore({"a": np.zeros(2)})
        with pytest.raises(ContractViolation):
            p["a"] = np.zeros(3)
