import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mmgat import autodiff as ad
from mmgat.autodiff import NonFiniteError, Tape, Var
from mmgat.gradcheck import gradcheck, relative_error

finite = st.floats(-5.0, 5.0, allow_nan=False, width=64)


def grad_of(fn, *values):
    tape = Tape()
    xs = [tape.var(v) for v in values]
    out = fn(*xs)
    grads = tape.backward(out)
    return out, [grads[x] for x in xs]


class TestForward:
    def test_matmul_example(self):
        a = Var([[1.0, 2.0], [3.0, 4.0]])
        b = Var([[5.0], [6.0]])
        np.testing.assert_array_equal((a @ b).value, [[17.0], [39.0]])

    def test_matmul_shape_check(self):
        with pytest.raises(ValueError):
            ad.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_leaky_relu_values(self):
        out = ad.leaky_relu(np.array([-2.0, 0.0, 3.0]), 0.2)
        np.testing.assert_allclose(out.value, [-0.4, 0.0, 3.0], rtol=0, atol=1e-15)
        with pytest.raises(ValueError):
            ad.leaky_relu(np.ones(2), 1.5)

    def test_leaky_relu_derivative_at_zero(self):
        _, (g,) = grad_of(lambda x: ad.leaky_relu(x, 0.2).sum(), np.zeros(3))
        np.testing.assert_array_equal(g, 0.2)

    def test_elu_values(self):
        out = ad.elu(np.array([-1.0, 0.0, 2.0]))
        np.testing.assert_allclose(out.value, [np.exp(-1.0) - 1.0, 0.0, 2.0], rtol=1e-15)

    def test_sigmoid_extremes(self):
        out = ad.sigmoid(np.array([-800.0, 0.0, 800.0]))
        np.testing.assert_array_equal(out.value, [0.0, 0.5, 1.0])

    def test_non_finite_raises(self):
        with pytest.raises(NonFiniteError), np.errstate(divide="ignore"):
            ad.div(np.ones(2), np.zeros(2))

    def test_array_on_left_dispatches_to_var(self):
        tape = Tape()
        x = tape.var(np.ones((2, 2)))
        y = np.full((2, 2), 3.0) * x
        assert isinstance(y, Var)
        np.testing.assert_array_equal(tape.backward(y.sum())[x], 3.0)


class TestBackward:
    def test_product_rule(self):
        _, (ga, gb) = grad_of(lambda a, b: (a * b).sum(), np.array([1.0, 2.0]), np.array([3.0, 4.0]))
        np.testing.assert_array_equal(ga, [3.0, 4.0])
        np.testing.assert_array_equal(gb, [1.0, 2.0])

    def test_broadcast_is_unbroadcast(self):
        _, (ga, gb) = grad_of(lambda a, b: (a + b).sum(), np.ones((3, 4)), np.ones((1, 4)))
        np.testing.assert_array_equal(gb, np.full((1, 4), 3.0))
        np.testing.assert_array_equal(ga, np.ones((3, 4)))

    def test_fan_out_accumulates(self):
        _, (g,) = grad_of(lambda x: (x * x + x).sum(), np.array([2.0, -1.0]))
        np.testing.assert_array_equal(g, [5.0, -1.0])

    def test_fancy_index_accumulates(self):
        _, (g,) = grad_of(lambda x: x[np.array([0, 0, 2])].sum(), np.arange(3.0))
        np.testing.assert_array_equal(g, [2.0, 0.0, 1.0])

    def test_unused_input_has_zero_grad(self):
        _, (ga, gb) = grad_of(lambda a, b: a.sum(), np.ones(2), np.ones(3))
        np.testing.assert_array_equal(gb, np.zeros(3))

    def test_each_record_visited_once(self):
        tape = Tape()
        x = tape.var(np.ones((2, 2)))
        y = ad.elu(x @ x) + x
        loss = y.sum()
        tape.backward(loss)
        assert tape.visits == len(tape.records) == 4

    def test_foreign_output_rejected(self):
        with pytest.raises(ValueError):
            Tape().backward(Tape().var(1.0))


def _rng_arrays(seed, *shapes):
    rng = np.random.default_rng(seed)
    return [rng.standard_normal(s) for s in shapes]


OPS = {
    "add": (lambda p: (p["a"] + p["b"]).sum(), [(3, 4), (1, 4)]),
    "sub": (lambda p: (p["a"] - p["b"] * 2.0).sum(), [(3, 4), (3, 1)]),
    "mul": (lambda p: (p["a"] * p["b"]).sum(), [(2, 3), (2, 3)]),
    "div": (lambda p: (p["a"] / (p["b"] * p["b"] + 1.0)).sum(), [(2, 3), (2, 3)]),
    "matmul": (lambda p: ((p["a"] @ p["b"]) * (p["a"] @ p["b"])).sum(), [(3, 4), (4, 2)]),
    "sum_axis": (lambda p: (p["a"].sum(axis=0) * p["b"][0]).sum(), [(3, 4), (1, 4)]),
    "transpose": (lambda p: (p["a"].T @ p["b"]).sum(), [(3, 2), (3, 4)]),
    "reshape": (lambda p: (p["a"].reshape(2, 6) * p["b"]).sum(), [(3, 4), (2, 6)]),
    "getitem": (lambda p: (p["a"][1:, ::2] * p["b"]).sum(), [(3, 4), (2, 2)]),
    "concat": (lambda p: (ad.concat([p["a"], p["b"]], axis=1)
                          * ad.concat([p["b"], p["a"]], axis=1)).sum(), [(3, 2), (3, 2)]),
    "leaky_relu": (lambda p: (ad.leaky_relu(p["a"], 0.1) * p["b"]).sum(), [(3, 4), (3, 4)]),
    "elu": (lambda p: (ad.elu(p["a"]) * p["b"]).sum(), [(3, 4), (3, 4)]),
    "sigmoid": (lambda p: (ad.sigmoid(p["a"]) * p["b"]).sum(), [(3, 4), (3, 4)]),
    "softmax": (lambda p: (ad.softmax(p["a"], axis=1) * p["b"]).sum(), [(3, 4), (3, 4)]),
    "masked_soft": (lambda p: (ad.masked_softmax(p["a"], np.eye(3, 4) + np.eye(3, 4, 1) > 0,
                                                 soft_logit=-3.0) * p["b"]).sum(), [(3, 4), (3, 4)]),
    "masked_hard": (lambda p: (ad.masked_softmax(p["a"], np.eye(3, 4) + np.eye(3, 4, 1) > 0,
                                                 mode="hard") * p["b"]).sum(), [(3, 4), (3, 4)]),
}


class TestVjpAgainstFiniteDifferences:
    @pytest.mark.parametrize("name", sorted(OPS))
    def test_op(self, name):
        fn, shapes = OPS[name]
        a, b = _rng_arrays(len(name), *shapes)
        report = gradcheck(fn, {"a": a, "b": b}, fd_dtype=np.longdouble)
        assert report.passed, report.worst

    def test_relative_error_floor(self):
        np.testing.assert_allclose(relative_error(0.0, 1e-12), 1e-4)
        np.testing.assert_allclose(relative_error(2.0, 1.0), 0.5)

    def test_detects_a_wrong_gradient(self):
        def bad_square(x):
            # forward x^2, backward claims x
            return ad._emit("bad", x.value ** 2, (x,), lambda g: (g * x.value,))
        report = gradcheck(lambda p: bad_square(p["x"]).sum(), {"x": np.array([1.0, 2.0])})
        assert not report.passed
        assert report.worst["x"].rel_error == pytest.approx(0.5)


class TestMaskedSoftmax:
    @given(arrays(np.float64, (4, 6), elements=finite),
           arrays(np.bool_, (4, 6)), st.sampled_from(["soft", "hard"]))
    @settings(max_examples=100, deadline=None)
    def test_rows_sum_to_one(self, logits, mask, mode):
        mask[:, 0] = True
        out = ad.masked_softmax(logits, mask, mode=mode).value
        np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=0, atol=1e-12)
        assert np.all(out >= 0)

    @given(arrays(np.float64, (3, 5), elements=finite), arrays(np.bool_, (3, 5)),
           arrays(np.float64, (3, 5), elements=st.floats(-1e6, 1e6, width=64)))
    @settings(max_examples=100, deadline=None)
    def test_hard_ignores_masked_logits(self, logits, mask, junk):
        mask[:, 2] = True
        out = ad.masked_softmax(logits, mask, mode="hard").value
        moved = ad.masked_softmax(np.where(mask, logits, junk), mask, mode="hard").value
        np.testing.assert_array_equal(out, moved)
        np.testing.assert_array_equal(out[~mask], 0.0)

    def test_soft_keeps_small_positive_weight(self):
        logits = np.zeros((1, 3))
        mask = np.array([[True, True, False]])
        out = ad.masked_softmax(logits, mask, soft_logit=-20.0).value
        assert 0 < out[0, 2] < 1e-8
        np.testing.assert_allclose(out[0, :2], 0.5, atol=1e-8)

    def test_default_soft_close_to_hard(self):
        rng = np.random.default_rng(3)
        logits = rng.standard_normal((5, 5))
        mask = rng.random((5, 5)) > 0.4
        mask[:, 0] = True
        soft = ad.masked_softmax(logits, mask).value
        hard = ad.masked_softmax(logits, mask, mode="hard").value
        np.testing.assert_allclose(soft, hard, rtol=0, atol=1e-12)

    def test_empty_row(self):
        mask = np.array([[True, False], [False, False]])
        with pytest.raises(ValueError):
            ad.masked_softmax(np.zeros((2, 2)), mask, mode="hard")
        out = ad.masked_softmax(np.zeros((2, 2)), mask, mode="hard", allow_empty_rows=True)
        np.testing.assert_array_equal(out.value, [[1.0, 0.0], [0.0, 0.0]])

    def test_unknown_mode(self):
        with pytest.raises(ValueError):
            ad.masked_softmax(np.zeros((1, 2)), np.ones((1, 2), bool), mode="sparse")
