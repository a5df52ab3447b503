import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from oracles import conv2d_loops, fc_loops, maxpool_loops
from stsnet.autodiff import (
    Adam,
    AdamState,
    ComputeGraph,
    RunningStats,
    Tensor,
    adam_step,
    batchnorm,
    concat,
    conv2d,
    fully_connected,
    gated_linear_unit,
    leaky_relu,
    load_checkpoint,
    maxpool2d,
    no_grad,
    one_hot,
    save_checkpoint,
    softmax,
    softmax_nll,
)
from stsnet.autodiff.functional import LeakyReLU, sigmoid_array
from stsnet.errors import ConfigurationError, DimensionError, InputError, ParseError, StateError
from stsnet.gradcheck import check_gradients, numerical_gradient, relative_error


def leaf(a):
    return Tensor(np.asarray(a, dtype=float), requires_grad=True)


# Tensor and graph -------------------------------------------------------------

class TestTensor:
    def test_float64_and_shape(self):
        t = Tensor([[1, 2], [3, 4]])
        assert t.data.dtype == np.float64
        assert t.shape == (2, 2) and t.size == 4 and t.ndim == 2

    def test_rank_limit(self):
        with pytest.raises(DimensionError):
            Tensor(np.zeros((1, 1, 1, 1, 1)))

    def test_sum_grad_is_ones(self, rng):
        x = leaf(rng.normal(size=(3, 4)))
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, np.ones((3, 4)))

    def test_half_square_grad_is_identity(self, rng):
        x = leaf(rng.normal(size=(2, 3)))
        ((x * x).sum() / 2.0).backward()
        np.testing.assert_allclose(x.grad, x.data, rtol=0, atol=1e-15)

    def test_fan_out_accumulates(self, rng):
        x = leaf(rng.normal(size=5))
        (x * 3.0 + x * x + x).sum().backward()
        np.testing.assert_allclose(x.grad, 4.0 + 2 * x.data)

    def test_repeated_backward_accumulates_into_leaves(self):
        x = leaf([1.0, 2.0])
        x.sum().backward()
        x.sum().backward()
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_backward_without_graph_is_state_error(self):
        with pytest.raises(StateError):
            Tensor([1.0]).sum().backward()

    def test_backward_needs_scalar(self):
        x = leaf([1.0, 2.0])
        with pytest.raises(DimensionError):
            (x * 2.0).backward()

    def test_no_grad_records_nothing(self):
        x = leaf([1.0, 2.0])
        with no_grad():
            y = (x * x).sum()
        assert not y.requires_grad and y.is_leaf

    def test_graph_is_topologically_ordered(self, rng):
        x = leaf(rng.normal(size=3))
        h = x * x
        loss = (h + h * 2.0).sum()
        graph = ComputeGraph(loss)
        position = graph.order
        for node in graph.nodes:
            if node._ctx is not None:
                for parent in node._ctx.inputs:
                    if parent.requires_grad:
                        assert position[id(parent)] < position[id(node)]
        assert len({id(n) for n in graph.nodes}) == len(graph.nodes)

    def test_unused_branch_gets_no_grad(self):
        x, y = leaf([1.0]), leaf([2.0])
        (x * 2.0).sum().backward()
        assert y.grad is None

    def test_indexing_and_reshape_grads(self, rng):
        x = leaf(rng.normal(size=(2, 3, 4)))
        loss = (x[:, 1:, ::2].reshape(2, -1) * 3.0).sum()
        loss.backward()
        expected = np.zeros((2, 3, 4))
        expected[:, 1:, ::2] = 3.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_concat_grad_splits(self, rng):
        a, b = leaf(rng.normal(size=(2, 1, 3))), leaf(rng.normal(size=(2, 2, 3)))
        w = rng.normal(size=(2, 3, 3))
        (concat([a, b], axis=1) * Tensor(w)).sum().backward()
        np.testing.assert_array_equal(a.grad, w[:, :1])
        np.testing.assert_array_equal(b.grad, w[:, 1:])

    def test_forward_is_bitwise_deterministic(self, rng):
        x = rng.normal(size=(2, 3, 8, 8))
        k = rng.normal(size=(4, 3, 3, 3))
        a = conv2d(Tensor(x), Tensor(k), padding=1).data
        b = conv2d(Tensor(x.copy()), Tensor(k.copy()), padding=1).data
        assert a.tobytes() == b.tobytes()


# conv2d --------------------------------------------------------------------------

class TestConv2d:
    def test_window_sum(self):
        x = Tensor([[[1.0, 2.0], [3.0, 4.0]]])
        out = conv2d(x, Tensor(np.ones((1, 1, 2, 2))), Tensor([0.0]))
        assert out.shape == (1, 1, 1)
        assert out.data[0, 0, 0] == 10.0

    def test_identity_kernel(self, rng):
        x = rng.normal(size=(1, 5, 6))
        out = conv2d(Tensor(x), Tensor(np.ones((1, 1, 1, 1))), Tensor([0.0]))
        np.testing.assert_array_equal(out.data, x)

    def test_random_matches_direct_summation(self, rng):
        x = rng.normal(size=(1, 2, 5, 5))
        w = rng.normal(size=(3, 2, 3, 3))
        b = rng.normal(size=3)
        out = conv2d(Tensor(x[0]), Tensor(w), Tensor(b)).data
        np.testing.assert_allclose(out, conv2d_loops(x, w, b, 1, 0)[0], rtol=0, atol=1e-10)

    @given(
        batch=st.integers(1, 2),
        c_in=st.integers(1, 3),
        c_out=st.integers(1, 3),
        h=st.integers(1, 7),
        w=st.integers(1, 7),
        kh=st.integers(1, 4),
        kw=st.integers(1, 4),
        stride=st.integers(1, 3),
        padding=st.integers(0, 2),
        bias=st.booleans(),
        seed=st.integers(0, 2**31),
    )
    def test_oracle_property(self, batch, c_in, c_out, h, w, kh, kw, stride, padding, bias, seed):
        assume(kh <= h + 2 * padding and kw <= w + 2 * padding)
        r = np.random.default_rng(seed)
        x, k = r.normal(size=(batch, c_in, h, w)), r.normal(size=(c_out, c_in, kh, kw))
        b = r.normal(size=c_out) if bias else None
        out = conv2d(Tensor(x), Tensor(k), None if b is None else Tensor(b), stride, padding).data
        assert np.abs(out - conv2d_loops(x, k, b, stride, padding)).max() <= 1e-10

    def test_output_extent_formula(self):
        out = conv2d(Tensor(np.zeros((1, 1, 9, 7))), Tensor(np.zeros((2, 1, 3, 2))), stride=2, padding=1)
        assert out.shape == (1, 2, (9 + 2 - 3) // 2 + 1, (7 + 2 - 2) // 2 + 1)

    def test_channel_mismatch(self):
        with pytest.raises(DimensionError):
            conv2d(Tensor(np.zeros((1, 2, 4, 4))), Tensor(np.zeros((1, 3, 3, 3))))

    def test_kernel_too_large(self):
        with pytest.raises(ConfigurationError):
            conv2d(Tensor(np.zeros((1, 1, 2, 2))), Tensor(np.zeros((1, 1, 3, 3))))

    def test_bad_stride(self):
        with pytest.raises(ConfigurationError):
            conv2d(Tensor(np.zeros((1, 1, 4, 4))), Tensor(np.zeros((1, 1, 3, 3))), stride=0)

    @pytest.mark.parametrize("stride,padding", [(1, 0), (1, 2), (2, 1), (3, 0)])
    def test_gradients(self, rng, stride, padding):
        x, k, b = leaf(rng.normal(size=(2, 2, 6, 5))), leaf(rng.normal(size=(3, 2, 3, 2))), leaf(rng.normal(size=3))
        probe = Tensor(rng.normal(size=conv2d(x, k, b, stride, padding).shape))
        errors = check_gradients(lambda: (conv2d(x, k, b, stride, padding) * probe).sum(), {"x": x, "k": k, "b": b})
        assert max(errors.values()) < 1e-7


# maxpool2d -----------------------------------------------------------------------

class TestMaxPool:
    def test_simple(self):
        out = maxpool2d(Tensor([[[1.0, 2.0], [3.0, 4.0]]]), 2, 2)
        assert out.data.ravel().tolist() == [4.0]

    def test_constant(self):
        out = maxpool2d(Tensor(np.full((2, 4, 6), 1.5)), 2, 2)
        assert out.shape == (2, 2, 3) and (out.data == 1.5).all()

    def test_window_scan_oracle(self, rng):
        x = rng.normal(size=(1, 1, 6, 6))
        expected, _ = maxpool_loops(x, 2, 2)
        np.testing.assert_array_equal(maxpool2d(Tensor(x[0]), 2, 2).data, expected[0])

    @given(
        batch=st.integers(1, 2),
        channels=st.integers(1, 3),
        h=st.integers(1, 8),
        w=st.integers(1, 8),
        size=st.integers(1, 3),
        stride=st.integers(1, 3),
        ties=st.booleans(),
        seed=st.integers(0, 2**31),
    )
    def test_oracle_property(self, batch, channels, h, w, size, stride, ties, seed):
        assume(size <= h and size <= w)
        r = np.random.default_rng(seed)
        x = r.integers(0, 3, size=(batch, channels, h, w)).astype(float) if ties else r.normal(size=(batch, channels, h, w))
        expected, arg = maxpool_loops(x, size, stride)
        xt = leaf(x)
        out = maxpool2d(xt, size, stride)
        assert np.abs(out.data - expected).max() <= 1e-10
        g = r.normal(size=out.shape)
        (out * Tensor(g)).sum().backward()
        routed = np.zeros_like(x)
        for idx in np.ndindex(*expected.shape):
            n, c = idx[0], idx[1]
            routed[n, c, arg[idx][0], arg[idx][1]] += g[idx]
        np.testing.assert_allclose(xt.grad, routed, rtol=0, atol=1e-12)

    def test_tie_goes_to_first_row_major(self):
        x = leaf(np.ones((1, 1, 2, 2)))
        maxpool2d(x, 2, 2).sum().backward()
        np.testing.assert_array_equal(x.grad[0, 0], [[1.0, 0.0], [0.0, 0.0]])

    def test_size_too_large(self):
        with pytest.raises(ConfigurationError):
            maxpool2d(Tensor(np.zeros((1, 3, 1))), 2, 2)


# batchnorm -------------------------------------------------------------------------

class TestBatchNorm:
    def params(self, c, gamma=1.0, beta=0.0):
        return leaf(np.full(c, gamma)), leaf(np.full(c, beta))

    def test_constant_input(self):
        g, b = self.params(2)
        out = batchnorm(Tensor(np.full((3, 2, 4, 4), 7.0)), g, b, RunningStats(), True)
        assert np.abs(out.data).max() <= 1e-2

    def test_zero_gamma_gives_beta(self, rng):
        g, b = leaf(np.zeros(3)), leaf(np.array([0.5, -1.0, 2.0]))
        out = batchnorm(Tensor(rng.normal(size=(4, 3, 2, 2))), g, b, RunningStats(), True)
        np.testing.assert_array_equal(out.data, np.broadcast_to(b.data.reshape(1, 3, 1, 1), out.shape))

    def test_moments(self, rng):
        g, b = leaf(rng.uniform(0.5, 1.5, 3)), leaf(rng.normal(size=3))
        x = rng.normal(2.0, 10.0, size=(5, 3, 4, 4))
        out = batchnorm(Tensor(x), g, b, RunningStats(), True).data
        np.testing.assert_allclose(out.mean(axis=(0, 2, 3)), b.data, rtol=0, atol=1e-9)
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), g.data**2, rtol=0, atol=1e-6)
        # exact relation: epsilon shrinks the variance by var / (var + eps)
        var = x.var(axis=(0, 2, 3))
        np.testing.assert_allclose(out.var(axis=(0, 2, 3)), g.data**2 * var / (var + 1e-5), rtol=1e-12)

    def test_running_stats_update(self, rng):
        g, b = self.params(2)
        stats = RunningStats()
        x1, x2 = rng.normal(size=(4, 2, 3, 3)), rng.normal(1.0, 2.0, size=(4, 2, 3, 3))
        batchnorm(Tensor(x1), g, b, stats, True)
        np.testing.assert_allclose(stats.mean, x1.mean(axis=(0, 2, 3)))
        np.testing.assert_allclose(stats.var, x1.var(axis=(0, 2, 3), ddof=1))
        batchnorm(Tensor(x2), g, b, stats, True)
        np.testing.assert_allclose(stats.mean, 0.9 * x1.mean(axis=(0, 2, 3)) + 0.1 * x2.mean(axis=(0, 2, 3)))

    def test_eval_uses_running_stats(self, rng):
        g, b = leaf([2.0]), leaf([1.0])
        stats = RunningStats(mean=np.array([3.0]), var=np.array([4.0]))
        x = rng.normal(size=(2, 1, 3, 3))
        out = batchnorm(Tensor(x), g, b, stats, False).data
        np.testing.assert_allclose(out, 2.0 * (x - 3.0) / np.sqrt(4.0 + 1e-5) + 1.0)
        assert stats.mean[0] == 3.0

    def test_eval_before_train_is_state_error(self):
        g, b = self.params(1)
        with pytest.raises(StateError):
            batchnorm(Tensor(np.zeros((2, 1, 2, 2))), g, b, RunningStats(), False)

    def test_train_needs_two_values(self):
        g, b = self.params(1)
        with pytest.raises(ConfigurationError):
            batchnorm(Tensor(np.zeros((1, 1, 1, 1))), g, b, RunningStats(), True)

    @pytest.mark.parametrize("training", [True, False])
    def test_gradients(self, rng, training):
        x, g, b = leaf(rng.normal(size=(3, 2, 3, 2))), leaf(rng.normal(size=2)), leaf(rng.normal(size=2))
        probe = Tensor(rng.normal(size=x.shape))
        mean, var = rng.normal(size=2), rng.uniform(0.5, 2, 2)

        def loss():
            return (batchnorm(x, g, b, RunningStats(mean, var), training) * probe).sum()

        assert max(check_gradients(loss, {"x": x, "g": g, "b": b}).values()) < 1e-7


# activations -------------------------------------------------------------------

class TestLeakyReLU:
    def test_values(self):
        out = leaky_relu(Tensor([-3.0, 5.0, 0.0]), 0.1).data
        np.testing.assert_allclose(out, [-0.3, 5.0, 0.0])

    @pytest.mark.parametrize("x0,expected", [(-2.0, 0.1), (2.0, 1.0)])
    def test_gradient_matches_differences(self, x0, expected):
        x = leaf([x0])
        leaky_relu(x, 0.1).sum().backward()
        numeric = numerical_gradient(lambda: leaky_relu(Tensor(x.data), 0.1).item(), x.data)
        assert x.grad[0] == expected
        assert abs(numeric[0] - expected) < 1e-8

    @pytest.mark.parametrize("slope", [0.0, 1.0, -0.5])
    def test_slope_must_be_in_open_interval(self, slope):
        with pytest.raises(ConfigurationError):
            leaky_relu(Tensor([1.0]), slope)


class TestGLU:
    def test_zero_gate_halves(self):
        out = gated_linear_unit(Tensor([2.0, -4.0, 0.0, 0.0]))
        np.testing.assert_array_equal(out.data, [1.0, -2.0])

    def test_exact_construction(self, rng):
        y = rng.normal(size=(2, 6, 3, 3))
        out = gated_linear_unit(Tensor(y), axis=1).data
        assert np.array_equal(out, y[:, :3] * sigmoid_array(y[:, 3:]))

    def test_zero_a_gives_zero(self, rng):
        y = np.concatenate([np.zeros((4, 2)), rng.normal(size=(4, 2))], axis=1)
        assert (gated_linear_unit(Tensor(y)).data == 0).all()

    def test_saturated_gate_passes_a(self, rng):
        a = rng.normal(size=(3, 4))
        out = gated_linear_unit(Tensor(np.concatenate([a, np.full((3, 4), 20.0)], axis=1))).data
        assert np.abs(out - a).max() <= 1e-8

    def test_odd_extent(self):
        with pytest.raises(DimensionError):
            gated_linear_unit(Tensor(np.zeros((2, 3))))

    def test_gradient(self, rng):
        y = leaf(rng.normal(size=(2, 4, 2, 2)))
        probe = Tensor(rng.normal(size=(2, 2, 2, 2)))
        errors = check_gradients(lambda: (gated_linear_unit(y, axis=1) * probe).sum(), {"y": y})
        assert errors["y"] < 1e-8


# fully connected -------------------------------------------------------------------

class TestFullyConnected:
    def test_identity(self, rng):
        x = rng.normal(size=(3, 4))
        out = fully_connected(Tensor(x), Tensor(np.eye(4)), Tensor(np.zeros(4))).data
        np.testing.assert_array_equal(out, x)

    def test_zero_weight(self, rng):
        b = rng.normal(size=3)
        out = fully_connected(Tensor(rng.normal(size=(5, 2))), Tensor(np.zeros((2, 3))), Tensor(b)).data
        np.testing.assert_array_equal(out, np.tile(b, (5, 1)))

    def test_triple_loop(self, rng):
        x, w, b = rng.normal(size=(2, 3)), rng.normal(size=(3, 4)), rng.normal(size=4)
        out = fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
        assert np.abs(out - fc_loops(x, w, b)).max() <= 1e-12

    @given(batch=st.integers(1, 5), d=st.integers(1, 12), k=st.integers(1, 6), seed=st.integers(0, 2**31))
    def test_oracle_property(self, batch, d, k, seed):
        r = np.random.default_rng(seed)
        x, w, b = r.normal(size=(batch, d)), r.normal(size=(d, k)), r.normal(size=k)
        out = fully_connected(Tensor(x), Tensor(w), Tensor(b)).data
        assert np.abs(out - fc_loops(x, w, b)).max() <= 1e-10

    def test_mismatch(self):
        with pytest.raises(DimensionError):
            fully_connected(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 2))), Tensor(np.zeros(2)))


# loss ------------------------------------------------------------------------------

class TestSoftmaxNLL:
    def test_uniform_logits(self):
        loss = softmax_nll(Tensor(np.zeros((1, 3))), one_hot([2], 3))
        assert loss.item() == pytest.approx(math.log(3), abs=1e-12)

    def test_half_probability(self):
        loss = softmax_nll(Tensor([[0.0, 0.0]]), one_hot([0], 2))
        assert loss.item() == pytest.approx(math.log(2), abs=1e-12)

    def test_large_logits_stable(self):
        loss = softmax_nll(Tensor([[1000.0, 0.0]]), one_hot([0], 2))
        assert np.isfinite(loss.item()) and loss.item() < 1e-12

    def test_mean_over_batch(self, rng):
        logits = rng.normal(size=(4, 5))
        labels = np.array([0, 3, 1, 4])
        p = softmax(logits)
        expected = -np.mean(np.log(p[np.arange(4), labels]))
        assert softmax_nll(Tensor(logits), one_hot(labels, 5)).item() == pytest.approx(expected, abs=1e-12)

    @given(scale=st.floats(0.0, 1000.0), seed=st.integers(0, 2**31))
    def test_rows_sum_to_one(self, scale, seed):
        logits = np.random.default_rng(seed).uniform(-1, 1, size=(3, 6)) * scale
        np.testing.assert_allclose(softmax(logits).sum(axis=1), 1.0, rtol=0, atol=1e-9)

    def test_all_zero_label_row(self):
        with pytest.raises(InputError):
            softmax_nll(Tensor(np.zeros((2, 3))), np.array([[1.0, 0, 0], [0, 0, 0]]))

    def test_single_class_rejected(self):
        with pytest.raises(DimensionError):
            softmax_nll(Tensor(np.zeros((2, 1))), np.ones((2, 1)))

    def test_gradient(self, rng):
        logits = leaf(rng.normal(size=(3, 4)))
        labels = one_hot([1, 0, 3], 4)
        assert check_gradients(lambda: softmax_nll(logits, labels), {"z": logits})["z"] < 1e-8


# Adam ------------------------------------------------------------------------------

def reference_adam(p, grads, lr=1e-3, b1=0.9, b2=0.999, eps=1e-8):
    """Textbook Adam with explicit bias-corrected moments."""
    m = v = np.zeros_like(p)
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p = p - lr * (m / (1 - b1**t)) / (np.sqrt(v / (1 - b2**t)) + eps)
    return p


class TestAdam:
    def test_first_step(self):
        p = np.zeros(1)
        state = AdamState()
        adam_step([p], [np.array([2.0])], state)
        assert p[0] == pytest.approx(-1e-3, rel=1e-6)
        assert state.t == 1

    def test_zero_grad_leaves_params(self, rng):
        p = rng.normal(size=(3, 2))
        before = p.copy()
        state = AdamState()
        for _ in range(5):
            adam_step([p], [np.zeros_like(p)], state)
        np.testing.assert_array_equal(p, before)
        assert state.t == 5

    def test_constant_grad_step_tends_to_lr(self):
        p = np.zeros(1)
        state = AdamState()
        for _ in range(2000):
            prev = p.copy()
            adam_step([p], [np.array([0.37])], state)
        assert abs(abs(p[0] - prev[0]) - 1e-3) < 1e-6

    def test_matches_textbook_form(self, rng):
        p0 = rng.normal(size=4)
        grads = [rng.normal(size=4) for _ in range(30)]
        p = p0.copy()
        state = AdamState()
        for g in grads:
            adam_step([p], [g], state)
        np.testing.assert_allclose(p, reference_adam(p0, grads), rtol=0, atol=1e-12)
        assert (state.v[0] >= 0).all()

    def test_shape_mismatch(self):
        state = AdamState.for_shapes([(2,)])
        with pytest.raises(DimensionError):
            adam_step([np.zeros(3)], [np.zeros(3)], state)

    def test_optimizer_wrapper(self, rng):
        w = leaf(rng.normal(size=3))
        opt = Adam([w], lr=0.1)
        for _ in range(200):
            opt.zero_grad()
            ((w - Tensor([1.0, 2.0, 3.0])) * (w - Tensor([1.0, 2.0, 3.0]))).sum().backward()
            opt.step()
        np.testing.assert_allclose(w.data, [1.0, 2.0, 3.0], atol=1e-2)


# checkpoint ----------------------------------------------------------------------------

class TestCheckpoint:
    @pytest.mark.parametrize("suffix", [".npz", ".json"])
    def test_round_trip_exact(self, tmp_path, rng, suffix):
        tensors = {"a.b.weight": rng.normal(size=(2, 3, 1, 4)), "a.b.bias": rng.normal(size=3) * 1e-17}
        path = tmp_path / f"ckpt{suffix}"
        save_checkpoint(path, tensors)
        back = load_checkpoint(path)
        assert set(back) == set(tensors)
        for name in tensors:
            assert back[name].shape == tensors[name].shape
            assert back[name].tobytes() == tensors[name].tobytes()

    def test_json_format_tag(self, tmp_path):
        path = tmp_path / "bad.json"
        path.write_text('{"format": "other", "tensors": {}}')
        with pytest.raises(ParseError):
            load_checkpoint(path)

    def test_no_temp_files_left(self, tmp_path):
        save_checkpoint(tmp_path / "c.npz", {"x": np.zeros(2)})
        assert [p.name for p in tmp_path.iterdir()] == ["c.npz"]


# finite-difference helpers ---------------------------------------------------------------

def test_relative_error_floor():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.1])) == pytest.approx(0.1 / 1.1)


def test_gradcheck_detects_corrupted_backward(monkeypatch, rng):
    x = leaf(rng.normal(size=(4, 3)))
    monkeypatch.setattr(LeakyReLU, "backward", lambda self, grad: (grad,))
    errors = check_gradients(lambda: leaky_relu(x, 0.1).sum(), {"x": x})
    assert errors["x"] > 1e-4
