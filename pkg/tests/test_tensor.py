import threading

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from dicycle import tensor as T
from dicycle.errors import ConfigurationError, ContractError, DataError, DegenerateInputError, DimensionError
from dicycle.tensor import Tensor, check_gradients, no_grad


def param(arr):
    return Tensor(np.array(arr, dtype=np.float64), requires_grad=True)


def projected(out_fn, shape_rng):
    """Scalar loss sum(w * out) with a fixed random projection w."""
    cache = {}

    def forward():
        out = out_fn()
        if "w" not in cache:
            cache["w"] = shape_rng.normal(size=out.shape)
        return T.sum(T.mul(out, Tensor(cache["w"])))

    return forward


def assert_gradcheck(forward, params, rtol=1e-4, atol=1e-6):
    results = check_gradients(forward, params, rtol=rtol, atol=atol)
    for r in results:
        assert r.passed, r


class TestTensorBasics:
    def test_data_is_float64_and_contiguous(self):
        t = Tensor(np.arange(6, dtype=np.int32).reshape(2, 3).T)
        assert t.data.dtype == np.float64
        assert t.data.flags.c_contiguous
        assert t.shape == (3, 2)

    def test_scalar_keeps_zero_rank(self):
        assert Tensor(1.0).shape == ()

    def test_backward_sum_of_squares(self):
        x = param([1.0, 2.0, 3.0])
        T.sum(T.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0, 6.0])

    def test_constant_loss_gives_zero_grads(self):
        x = param([1.0, 2.0])
        loss = T.add(T.scale(T.sum(x), 0.0), 3.0)
        loss.backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0])

    def test_non_scalar_loss_is_contract_error(self):
        x = param([1.0, 2.0])
        with pytest.raises(ContractError):
            T.mul(x, x).backward()

    def test_second_backward_without_reset_is_error(self):
        x = param([1.0, 2.0])
        T.sum(T.mul(x, x)).backward()
        with pytest.raises(ContractError, match="zero_grad"):
            T.sum(T.mul(x, x)).backward()
        x.zero_grad()
        T.sum(T.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_every_reachable_tensor_gets_matching_grad(self):
        x = param(np.ones((2, 3)))
        mid = T.relu(x)
        loss = T.sum(T.sigmoid(mid))
        loss.backward()
        for t in T.tensor.topological_order(loss):
            assert t.grad is not None and t.grad.shape == t.shape

    def test_topological_order_puts_inputs_first(self):
        x = param([1.0])
        y = T.scale(x, 2.0)
        z = T.add(y, x)
        order = T.tensor.topological_order(z)
        pos = {id(t): k for k, t in enumerate(order)}
        assert pos[id(x)] < pos[id(y)] < pos[id(z)]
        assert len(order) == len({id(t) for t in order})

    def test_reused_tensor_accumulates(self):
        rng = np.random.default_rng(0)
        x = param(rng.normal(size=4))
        assert_gradcheck(lambda: T.sum(T.mul(T.sin(x), T.cos(x)) + T.mul(x, x)), [x])

    def test_no_grad_records_nothing(self):
        x = param([1.0])
        with no_grad():
            y = T.scale(x, 2.0)
        assert not y.requires_grad and y.is_leaf

    def test_no_grad_is_thread_local(self):
        seen = []
        ready, release = threading.Event(), threading.Event()

        def other():
            ready.wait()
            seen.append(T.is_grad_enabled())
            release.set()

        worker = threading.Thread(target=other)
        worker.start()
        with no_grad():
            ready.set()
            release.wait()
        worker.join()
        assert seen == [True]


class TestElementwise:
    def test_relu_values_and_grad_mask(self):
        x = param([-1.0, 0.0, 2.0])
        y = T.relu(x)
        np.testing.assert_array_equal(y.data, [0.0, 0.0, 2.0])
        T.sum(y).backward()
        np.testing.assert_array_equal(x.grad, [0.0, 0.0, 1.0])

    def test_sigmoid_zero_and_extremes(self):
        np.testing.assert_array_equal(T.sigmoid(Tensor([0.0])).data, [0.5])
        out = T.sigmoid(Tensor([-800.0, 800.0])).data
        assert np.all(np.isfinite(out))
        np.testing.assert_allclose(out, [0.0, 1.0], atol=1e-300)

    def test_trig_gradients_on_100_points(self):
        x = param(np.random.default_rng(1).uniform(-10, 10, 100))
        for fn in (T.cos, T.sin):
            x.zero_grad()
            assert_gradcheck(lambda: T.sum(fn(x)), [x], rtol=1e-6, atol=1e-8)

    def test_scalar_broadcast(self):
        a = param([1.0, 2.0])
        b = param(3.0)
        assert_gradcheck(lambda: T.sum(T.mul(a, b)), [a, b])

    def test_incompatible_shapes_raise(self):
        with pytest.raises(DimensionError, match=r"\(2,\).*\(3,\)"):
            T.add(Tensor([1.0, 2.0]), Tensor([1.0, 2.0, 3.0]))

    def test_dispatcher(self):
        x = Tensor([1.0, -2.0])
        np.testing.assert_array_equal(T.elementwise("relu", x).data, [1.0, 0.0])
        np.testing.assert_array_equal(T.elementwise("scale", x, factor=2.0).data, [2.0, -4.0])
        np.testing.assert_array_equal(T.elementwise("add", x, x).data, [2.0, -4.0])
        with pytest.raises(ConfigurationError):
            T.elementwise("tanh", x)
        with pytest.raises(ConfigurationError):
            T.elementwise("add", x)


class TestMatmul:
    def test_identity_and_hand_values(self):
        np.testing.assert_array_equal(T.matmul(Tensor(np.eye(2)), Tensor([[5, 6], [7, 8]])).data, [[5, 6], [7, 8]])
        np.testing.assert_array_equal(T.matmul(Tensor([[1, 2]]), Tensor([[3], [4]])).data, [[11]])

    def test_gradient_of_sum(self):
        rng = np.random.default_rng(2)
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        assert_gradcheck(lambda: T.sum(T.matmul(a, b)), [a, b], rtol=1e-5)

    def test_batched_with_shared_right_operand(self):
        rng = np.random.default_rng(3)
        a, b = param(rng.normal(size=(2, 3, 4))), param(rng.normal(size=(4, 5)))
        assert_gradcheck(projected(lambda: T.matmul(a, b), rng), [a, b])

    def test_shape_mismatch_reports_shapes(self):
        with pytest.raises(DimensionError, match=r"\(2, 3\).*\(2, 3\)"):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))


class TestSequenceOps:
    def test_conv_identity_kernel(self):
        x = Tensor(np.random.default_rng(0).normal(size=(5, 2)))
        k = Tensor(np.array([[0.0, 0.0], [1.0, 1.0], [0.0, 0.0]]))
        out = T.conv1d_depthwise(x, k)
        assert out.shape == (5, 2)
        np.testing.assert_array_equal(out.data, x.data)

    @settings(max_examples=30, deadline=None)
    @given(length=st.integers(1, 9), d=st.integers(1, 5), half=st.integers(0, 3), seed=st.integers(0, 2**16))
    def test_conv_identity_kernel_any_shape(self, length, d, half, seed):
        n = 2 * half + 1
        k = np.zeros((n, d))
        k[half] = 1.0
        x = np.random.default_rng(seed).normal(size=(length, d))
        np.testing.assert_array_equal(T.conv1d_depthwise(Tensor(x), Tensor(k)).data, x)

    def test_conv_matches_direct_formula(self):
        rng = np.random.default_rng(4)
        x, k = rng.normal(size=(6, 3)), rng.normal(size=(3, 3))
        xp = np.vstack([np.zeros((1, 3)), x, np.zeros((1, 3))])
        expected = np.array([sum(xp[i + m] * k[m] for m in range(3)) for i in range(6)])
        np.testing.assert_allclose(T.conv1d_depthwise(Tensor(x), Tensor(k)).data, expected, rtol=0, atol=1e-14)

    def test_conv_gradients(self):
        rng = np.random.default_rng(5)
        x, k = param(rng.normal(size=(7, 4))), param(rng.normal(size=(3, 4)))
        assert_gradcheck(projected(lambda: T.conv1d_depthwise(x, k), rng), [x, k], rtol=1e-5)

    def test_conv_even_kernel_rejected(self):
        with pytest.raises(ConfigurationError):
            T.conv1d_depthwise(Tensor(np.ones((4, 2))), Tensor(np.ones((2, 2))))

    def test_maxpool_values(self):
        np.testing.assert_array_equal(T.maxpool_over_length(Tensor([[1, 5], [3, 2]])).data, [3, 5])
        np.testing.assert_array_equal(T.maxpool_over_length(Tensor([[4, -1]])).data, [4, -1])

    def test_maxpool_grad_is_one_hot_at_first_argmax(self):
        x = param([[1.0, 2.0], [1.0, 0.0], [0.0, 2.0]])
        T.sum(T.maxpool_over_length(x)).backward()
        np.testing.assert_array_equal(x.grad, [[1.0, 1.0], [0.0, 0.0], [0.0, 0.0]])

    def test_maxpool_gradcheck(self):
        rng = np.random.default_rng(6)
        x = param(rng.normal(size=(6, 3)))
        assert_gradcheck(lambda: T.sum(T.maxpool_over_length(x)), [x])
        x.zero_grad()
        T.sum(T.maxpool_over_length(x)).backward()
        expected = np.zeros((6, 3))
        expected[np.argmax(x.data, axis=0), np.arange(3)] = 1.0
        np.testing.assert_array_equal(x.grad, expected)

    def test_maxpool_empty(self):
        with pytest.raises(DimensionError):
            T.maxpool_over_length(Tensor(np.zeros((0, 3))))

    def test_softmax_examples(self):
        np.testing.assert_allclose(T.softmax_masked(Tensor([0.0, 0.0, 0.0]), [True] * 3).data, [1 / 3] * 3)
        np.testing.assert_array_equal(T.softmax_masked(Tensor([10.0, 0.0]), [True, False]).data, [1.0, 0.0])

    def test_softmax_matches_direct_formula(self):
        z = np.random.default_rng(7).normal(size=8)
        expected = np.exp(z) / np.exp(z).sum()
        np.testing.assert_allclose(T.softmax_masked(Tensor(z), np.ones(8, bool)).data, expected, rtol=0, atol=1e-12)

    def test_softmax_fully_masked_row(self):
        with pytest.raises(DegenerateInputError):
            T.softmax_masked(Tensor(np.zeros((2, 3))), [[True, False, False], [False, False, False]])

    @settings(max_examples=40, deadline=None)
    @given(seed=st.integers(0, 2**16), shift=st.floats(-50, 50), length=st.integers(1, 10))
    def test_softmax_shift_invariance(self, seed, shift, length):
        rng = np.random.default_rng(seed)
        z = rng.normal(size=length)
        mask = rng.random(length) < 0.7
        mask[rng.integers(length)] = True
        base = T.softmax_masked(Tensor(z), mask).data
        moved = T.softmax_masked(Tensor(z + shift), mask).data
        np.testing.assert_allclose(moved, base, rtol=0, atol=1e-9)
        assert np.all(base[~mask] == 0.0)
        assert abs(base.sum() - 1.0) < 1e-9

    def test_take_rows_accumulates_repeats(self):
        table = param(np.arange(6.0).reshape(3, 2))
        out = T.take_rows(table, np.array([[0, 2], [2, 2]]))
        np.testing.assert_array_equal(out.data[1, 1], [4.0, 5.0])
        T.sum(out).backward()
        np.testing.assert_array_equal(table.grad, [[1, 1], [0, 0], [3, 3]])

    def test_take_rows_out_of_range(self):
        with pytest.raises(DimensionError):
            T.take_rows(Tensor(np.zeros((3, 2))), [3])


def _instance_ops():
    """(name, builder) pairs; builder(rng) -> (forward, params) for one random instance."""

    def binary(fn):
        def build(rng):
            a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(3, 4)))
            return projected(lambda: fn(a, b), rng), [a, b]
        return build

    def unary(fn, low=-3.0, high=3.0):
        def build(rng):
            a = param(rng.uniform(low, high, size=(3, 4)))
            return projected(lambda: fn(a), rng), [a]
        return build

    def relu_build(rng):
        # keep inputs away from the kink where finite differences are undefined
        x = rng.normal(size=(3, 4))
        x = np.where(np.abs(x) < 0.1, 0.5, x)
        a = param(x)
        return projected(lambda: T.relu(a), rng), [a]

    def matmul_build(rng):
        a, b = param(rng.normal(size=(3, 4))), param(rng.normal(size=(4, 2)))
        return projected(lambda: T.matmul(a, b), rng), [a, b]

    def conv_build(rng):
        x, k = param(rng.normal(size=(5, 3))), param(rng.normal(size=(3, 3)))
        return projected(lambda: T.conv1d_depthwise(x, k), rng), [x, k]

    def pool_build(rng):
        x = param(rng.normal(size=(5, 3)))
        return projected(lambda: T.maxpool_over_length(x), rng), [x]

    def softmax_build(rng):
        x = param(rng.normal(size=(2, 6)))
        mask = rng.random((2, 6)) < 0.7
        mask[:, 0] = True
        return projected(lambda: T.softmax_masked(x, mask), rng), [x]

    def take_build(rng):
        table = param(rng.normal(size=(5, 3)))
        idx = rng.integers(0, 5, size=(4, 2))
        return projected(lambda: T.take_rows(table, idx), rng), [table]

    def shape_build(rng):
        a, b = param(rng.normal(size=(2, 3))), param(rng.normal(size=(2, 2)))
        def fn():
            cat = T.concat([a, b], axis=-1)
            st_ = T.stack([cat, T.scale(cat, 2.0)], axis=0)
            return T.transpose(T.reshape(st_, (2, 10)))
        return projected(fn, rng), [a, b]

    def reduce_build(rng):
        a = param(rng.normal(size=(3, 4)))
        bias = param(rng.normal(size=(4,)))
        return projected(lambda: T.mean(T.add(a, T.broadcast_to(bias, (3, 4))), axis=0), rng), [a, bias]

    return [
        ("add", binary(T.add)), ("sub", binary(T.sub)), ("mul", binary(T.mul)),
        ("scale", unary(lambda a: T.scale(a, -1.7))), ("relu", relu_build), ("sigmoid", unary(T.sigmoid)),
        ("cos", unary(T.cos)), ("sin", unary(T.sin)), ("exp", unary(T.exp)), ("log", unary(T.log, 0.5, 3.0)),
        ("matmul", matmul_build), ("conv1d_depthwise", conv_build), ("maxpool", pool_build),
        ("softmax_masked", softmax_build), ("take_rows", take_build), ("shape_ops", shape_build),
        ("reductions", reduce_build),
    ]


@pytest.mark.parametrize("name,build", _instance_ops(), ids=[n for n, _ in _instance_ops()])
def test_op_gradients_on_20_random_instances(name, build):
    for k in range(20):
        rng = np.random.default_rng([k, 99])
        forward, params = build(rng)
        assert_gradcheck(forward, params, rtol=1e-4, atol=1e-6)


class TestAdam:
    def test_zero_gradient_is_fixed_point(self):
        w = param([1.0, -2.0])
        opt = T.Adam({"w": w}, lr=0.1)
        w.grad = np.zeros(2)
        opt.step()
        np.testing.assert_array_equal(w.data, [1.0, -2.0])
        assert opt.state.t == 1

    def test_first_step_moves_by_lr(self):
        w = param([0.0])
        opt = T.Adam({"w": w}, lr=0.01)
        w.grad = np.ones(1)
        opt.step()
        np.testing.assert_allclose(w.data, [-0.01], rtol=1e-6)

    def test_quadratic_decreases_monotonically(self):
        w = param([1.0])
        opt = T.Adam({"w": w}, lr=0.1)
        values = [1.0]
        for _ in range(10):
            opt.zero_grad()
            loss = T.sum(T.mul(w, w))
            loss.backward()
            opt.step()
            values.append(float(w.data[0] ** 2))
        assert all(b < a for a, b in zip(values, values[1:]))

    def test_lr_scale_per_parameter(self):
        a, b = param([0.0]), param([0.0])
        opt = T.Adam({"a": a, "b": b}, lr=0.01, lr_scale={"b": 0.1})
        a.grad, b.grad = np.ones(1), np.ones(1)
        opt.step()
        np.testing.assert_allclose(b.data, 0.1 * a.data, rtol=1e-12)

    def test_shape_mismatch(self):
        w = param([1.0, 2.0])
        state = T.AdamState.for_params({"w": w})
        with pytest.raises(ContractError):
            T.adam_step({"w": w}, {"w": np.zeros(3)}, state)
        with pytest.raises(ContractError):
            T.adam_step({"w": w}, {"w": np.zeros(2)}, T.AdamState())


class TestCheckpoint:
    def arrays(self):
        rng = np.random.default_rng(0)
        return {"b": rng.normal(size=(2, 3)), "a.scalar": np.array(3.5), "ü": rng.normal(size=4)}

    def test_round_trip_is_bit_exact(self, tmp_path):
        arrays = self.arrays()
        arrays["b"][0, 0] = -0.0
        arrays["ü"][1] = np.nextafter(1.0, 2.0)
        path = tmp_path / "m.ckpt"
        T.save_checkpoint(path, arrays)
        back = T.load_checkpoint(path)
        assert list(back) == sorted(arrays)
        for k, v in arrays.items():
            assert back[k].shape == v.shape
            assert back[k].tobytes() == np.asarray(v, dtype="<f8").tobytes()

    def test_layout(self):
        raw = T.dump_checkpoint({"w": np.array([[1.0, 2.0]])})
        expected = (b"DICYCKPT" + np.array([1, 1, 1], "<u4").tobytes() + b"w" + np.array([2], "<u4").tobytes()
                    + np.array([1, 2], "<u8").tobytes() + np.array([1.0, 2.0], "<f8").tobytes())
        assert raw == expected

    def test_same_params_same_bytes(self):
        a = self.arrays()
        b = dict(reversed(list(a.items())))
        assert T.dump_checkpoint(a) == T.dump_checkpoint(b)

    @pytest.mark.parametrize("mutate", [
        lambda raw: b"NOTACKPT" + raw[8:],
        lambda raw: raw[:-3],
        lambda raw: raw + b"\x00",
        lambda raw: raw[:8] + np.array([9], "<u4").tobytes() + raw[12:],
    ], ids=["magic", "truncated", "trailing", "version"])
    def test_corrupt_input_rejected(self, mutate):
        raw = T.dump_checkpoint(self.arrays())
        with pytest.raises(DataError):
            T.load_checkpoint_bytes(mutate(raw))

    def test_restore_into_checks_names_and_shapes(self):
        params = {"w": param(np.zeros((2, 2)))}
        T.restore_into(params, {"w": np.ones((2, 2))})
        np.testing.assert_array_equal(params["w"].data, np.ones((2, 2)))
        with pytest.raises(ContractError):
            T.restore_into(params, {"w": np.ones(3)})
        with pytest.raises(ContractError):
            T.restore_into(params, {"v": np.ones((2, 2))})
