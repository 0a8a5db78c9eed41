import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mpnp_ddi import autodiff as ad
from mpnp_ddi.autodiff import Tensor
from mpnp_ddi.gradcheck import primitive_checks


def leaf(x):
    return Tensor(np.asarray(x, dtype=float), requires_grad=True)


class TestForwardValues:
    def test_matmul_identity(self):
        out = ad.matmul(Tensor([[1, 2], [3, 4]]), Tensor([[1, 0], [0, 1]]))
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4]])

    def test_sigmoid_tanh_at_zero(self):
        assert ad.sigmoid(Tensor([0.0])).item() == 0.5
        assert ad.tanh(Tensor([0.0])).item() == 0.0

    def test_scatter_sum(self):
        out = ad.scatter_sum(Tensor([1.0, 2.0, 3.0]), np.array([0, 0, 1]), 2)
        np.testing.assert_array_equal(out.data, [3.0, 3.0])

    def test_sigmoid_extremes_are_finite(self):
        out = ad.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(out))
        assert out[0] == 0.0 and out[1] == 1.0

    def test_softplus_stable(self):
        out = ad.softplus(Tensor([-1000.0, 0.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.0, np.log(2.0), 1000.0])

    def test_prelu(self):
        out = ad.prelu(Tensor([-1.0, 2.0]), Tensor([0.25]))
        np.testing.assert_array_equal(out.data, [-0.25, 2.0])

    def test_segment_softmax_sums_per_segment(self):
        seg = np.array([0, 0, 1, 1, 1])
        out = ad.segment_softmax(Tensor([1.0, 2.0, -1.0, 0.0, 3.0]), seg, 2).data
        np.testing.assert_allclose(np.bincount(seg, weights=out), [1.0, 1.0])

    def test_batch_norm_eval_uses_running_stats(self):
        state = ad.BatchNormState.create(2)
        state.running_mean[:] = [1.0, -1.0]
        state.running_var[:] = [4.0, 1.0]
        out = ad.batch_norm(Tensor([[3.0, 0.0]]), Tensor(np.ones(2)), Tensor(np.zeros(2)), state,
                            training=False)
        np.testing.assert_allclose(out.data, [[2.0 / np.sqrt(4 + 1e-5), 1.0 / np.sqrt(1 + 1e-5)]])

    def test_batch_norm_training_updates_running_stats(self):
        state = ad.BatchNormState.create(1)
        x = np.array([[1.0], [3.0]])
        ad.batch_norm(Tensor(x), Tensor(np.ones(1)), Tensor(np.zeros(1)), state, training=True)
        np.testing.assert_allclose(state.running_mean, [0.2])
        # unbiased variance 2.0 enters the running estimate
        np.testing.assert_allclose(state.running_var, [0.9 + 0.1 * 2.0])


class TestErrors:
    def test_shape_mismatch_names_op_and_shapes(self):
        with pytest.raises(ad.ShapeError) as err:
            ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        msg = str(err.value)
        assert "matmul" in msg and "(2, 3)" in msg

    def test_add_incompatible(self):
        with pytest.raises(ad.ShapeError, match="add"):
            ad.add(Tensor(np.ones((2, 3))), Tensor(np.ones((4,))))

    def test_softmax_empty_axis(self):
        with pytest.raises(ad.ShapeError):
            ad.softmax(Tensor(np.ones((2, 0))), axis=1)

    def test_backward_needs_scalar_seed(self):
        with pytest.raises(ad.ShapeError):
            leaf([1.0, 2.0]).backward()


class TestBackward:
    def test_fan_out_accumulates(self):
        x = leaf([1.0, 2.0])
        y = ad.sum_(x * x + ad.scale(x, 3.0))
        y.backward()
        np.testing.assert_allclose(x.grad, 2 * x.data + 3.0)

    def test_fan_out_matches_duplicated_input_differences(self):
        x = leaf([0.3, -0.7, 1.1])
        report = ad.check_gradients(lambda a: ad.sum_(ad.tanh(a) * ad.exp(a) + a * a), [x])
        assert report.passed

    def test_no_grad_leaves_is_noop(self):
        out = ad.sum_(Tensor([1.0, 2.0]) * 2.0)
        out.backward()  # must not raise

    def test_unused_leaf_gets_zeros(self):
        x, unused = leaf([1.0]), leaf([5.0])
        y = ad.sum_(x * 2.0)
        y.backward()
        assert x.grad[0] == 2.0
        assert unused.grad is None  # not part of the graph
        z = ad.sum_(x * 0.0 + unused * 0.0)
        x.grad = unused.grad = None
        z.backward()
        np.testing.assert_array_equal(unused.grad, [0.0])

    def test_grad_shapes_match_values(self):
        w = leaf(np.ones((3, 2)))
        x = Tensor(np.ones((4, 3)))
        ad.sum_(ad.matmul(x, w)).backward()
        assert w.grad.shape == w.shape

    def test_no_grad_context_skips_graph(self):
        x = leaf([1.0])
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad

    def test_sum_grad_is_ones(self):
        x = leaf(np.random.default_rng(0).normal(size=(3, 4)))
        ad.sum_(x).backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))


class TestCheckGradients:
    def test_quadratic(self):
        x = leaf([1.0, 2.0, 3.0])
        report = ad.check_gradients(lambda a: ad.sum_(ad.square(a)), [x], step=1e-5)
        np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])
        assert report.max_rel_error < 1e-6

    def test_relative_error_definition(self):
        err = ad.relative_error(np.array([1.0, 0.0, 1e-9]), np.array([1.1, 0.0, 0.0]))
        np.testing.assert_allclose(err, [0.1 / 1.1, 0.0, 1e-9 / 1e-8])

    def test_flags_wrong_gradient(self):
        def broken(a):
            # forward is a*a but backward claims 3a
            return ad._make(a.data ** 2, (a,), lambda g: (3 * a.data * g,), "broken")

        report = ad.check_gradients(lambda a: ad.sum_(broken(a)), [leaf([1.0, 2.0])])
        assert not report.passed
        assert len(report.failures) == 2

    def test_non_finite_raises(self):
        with pytest.raises(ad.GradientCheckError):
            ad.check_gradients(lambda a: ad.sum_(ad.log(a)), [leaf([0.0, 1.0])])

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            ad.check_gradients(lambda a: ad.sum_(a), [leaf([1.0])], step=0.0)


@pytest.mark.parametrize("result", primitive_checks(), ids=lambda r: r.name)
def test_primitive_gradients(result):
    assert result.passed, result.report.failures


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 4), st.integers(1, 5)),
              elements=st.floats(-30, 30)))
def test_softmax_is_a_distribution(x):
    out = ad.softmax(Tensor(x), axis=1).data
    assert np.all(out >= 0)
    np.testing.assert_allclose(out.sum(axis=1), 1.0, atol=1e-6)


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.integers(1, 4), st.integers(0, 2**31 - 1))
def test_matmul_gradient_random_shapes(n, k, m, seed):
    rng = np.random.default_rng(seed)
    a, b = leaf(rng.normal(size=(n, k))), leaf(rng.normal(size=(k, m)))
    w = Tensor(rng.normal(size=(n, m)))
    report = ad.check_gradients(lambda x, y: ad.sum_(ad.matmul(x, y) * w), [a, b])
    assert report.passed


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 6), st.integers(1, 3), st.integers(0, 2**31 - 1))
def test_scatter_gather_gradient_random_shapes(n, d, seed):
    rng = np.random.default_rng(seed)
    size = int(rng.integers(1, 4))
    index = rng.integers(0, size, size=n)
    x = leaf(rng.normal(size=(n, d)))
    w = Tensor(rng.normal(size=(n, d)))

    def f(a):
        pooled = ad.scatter_sum(a, index, size)
        return ad.sum_(ad.gather(pooled, index) * w)

    assert ad.check_gradients(f, [x]).passed
