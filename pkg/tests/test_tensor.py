"""Autodiff engine checks: forward values, tape semantics, gradients vs central differences."""

import zlib

import numpy as np
import pytest

from moltext import tensor as T
from moltext.tensor import (
    NonScalarLossError,
    ShapeMismatchError,
    Tape,
    Tensor,
    check_gradient,
    stop_gradient,
)
from primitive_cases import PRIMITIVE_CASES


class TestForward:
    def test_matmul(self):
        a = Tensor([[1.0, 2.0], [3.0, 4.0]])
        b = Tensor([[1.0], [1.0]])
        np.testing.assert_array_equal(T.matmul(a, b).data, [[3.0], [7.0]])

    def test_row_softmax_uniform(self):
        out = T.row_softmax(Tensor([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1 / 3, 1 / 3, 1 / 3]])

    def test_row_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x = Tensor(rng.normal(scale=5.0, size=(6, 9)))
            np.testing.assert_allclose(T.row_softmax(x).data.sum(axis=1), 1.0, atol=1e-12)

    def test_row_softmax_shift_invariance(self):
        rng = np.random.default_rng(1)
        for _ in range(20):
            x = rng.normal(size=(4, 7))
            c = rng.normal()
            base = T.row_softmax(Tensor(x)).data
            shifted = T.row_softmax(Tensor(x + c)).data
            np.testing.assert_allclose(shifted, base, atol=1e-12)

    def test_row_log_softmax_matches_log_of_softmax(self):
        rng = np.random.default_rng(2)
        x = Tensor(rng.normal(size=(5, 6)))
        np.testing.assert_allclose(T.row_log_softmax(x).data, np.log(T.row_softmax(x).data), atol=1e-12)

    def test_row_log_softmax_extreme_logits_finite(self):
        x = Tensor([[0.0, -2000.0, 1000.0]])
        out = T.row_log_softmax(x).data
        assert np.all(np.isfinite(out))

    def test_cosine_self_is_one(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.normal(size=(4, 8)))
        c = T.cosine_similarity_matrix(a, a)
        np.testing.assert_allclose(np.diag(c.data), 1.0, atol=1e-12)
        assert np.all(c.data <= 1.0 + 1e-12) and np.all(c.data >= -1.0 - 1e-12)

    def test_concat_rows_stacks(self):
        out = T.concat_rows([Tensor([1.0, 2.0]), Tensor([[3.0, 4.0], [5.0, 6.0]])])
        np.testing.assert_array_equal(out.data, [[1, 2], [3, 4], [5, 6]])

    def test_embedding_lookup(self):
        table = Tensor([[0.0, 1.0], [2.0, 3.0], [4.0, 5.0]])
        out = T.embedding_lookup(table, [2, 0, 2])
        np.testing.assert_array_equal(out.data, [[4, 5], [0, 1], [4, 5]])
        with pytest.raises(IndexError):
            T.embedding_lookup(table, [3])

    def test_shape_errors(self):
        with pytest.raises(ShapeMismatchError):
            T.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeMismatchError):
            T.add(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 4))))
        with pytest.raises(ShapeMismatchError):
            T.row_softmax(Tensor(np.ones(3)))
        with pytest.raises(ShapeMismatchError):
            T.diag_part(Tensor(np.ones((2, 3))))
        with pytest.raises(ShapeMismatchError):
            T.concat_rows([Tensor(np.ones(3)), Tensor(np.ones(4))])


class TestBackward:
    def test_sum_gives_ones(self):
        x = Tensor(np.arange(6.0).reshape(2, 3), requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(x)
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, np.ones((2, 3)))

    def test_square_gives_two_x(self):
        x = Tensor([1.0, -2.0, 3.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x, x))
        tape.backward(loss)
        np.testing.assert_allclose(x.grad, 2.0 * x.data)

    def test_diamond_accumulates(self):
        x = Tensor([1.0, 1.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.add(x, x))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, [2.0, 2.0])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            y = T.mul(x, x)
        with pytest.raises(NonScalarLossError):
            tape.backward(y)

    def test_no_recording_without_tape(self):
        x = Tensor([1.0], requires_grad=True)
        tape = Tape()
        y = T.mul(x, x)  # outside any active tape
        assert len(tape) == 0 and y.requires_grad

    def test_constants_not_recorded(self):
        with Tape() as tape:
            T.mul(Tensor([1.0]), Tensor([2.0]))
        assert len(tape) == 0

    def test_replay_determinism(self):
        def run():
            rng = np.random.default_rng(77)
            x = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            w = Tensor(rng.normal(size=(4, 4)), requires_grad=True)
            with Tape() as tape:
                loss = T.mean(T.relu(T.matmul(x, w)))
            tape.backward(loss)
            return loss.data.copy(), x.grad.copy(), w.grad.copy()

        first, second = run(), run()
        for a, b in zip(first, second):
            assert np.array_equal(a, b)


class TestStopGradient:
    def test_forward_identity(self):
        x = Tensor([[1.0, -2.0], [0.5, 3.0]], requires_grad=True)
        y = stop_gradient(x)
        np.testing.assert_array_equal(y.data, x.data)
        assert not y.requires_grad

    def test_blocks_all_gradient(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(stop_gradient(x))
        tape.backward(loss)
        assert x.grad is None

    def test_partial_block_exact(self):
        # d/dx sum(x * sg(x)) must equal the frozen copy of x, bit for bit
        x = Tensor([1.5, -0.25, 4.0], requires_grad=True)
        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x, stop_gradient(x)))
        tape.backward(loss)
        np.testing.assert_array_equal(x.grad, x.data)

    def test_matches_frozen_copy_oracle(self):
        rng = np.random.default_rng(5)
        x = Tensor(rng.normal(size=(3, 4)), requires_grad=True)
        frozen = Tensor(x.data.copy())  # independent constant snapshot

        with Tape() as tape:
            loss = T.tensor_sum(T.mul(x, stop_gradient(x)))
        tape.backward(loss)
        live_grad = x.grad.copy()

        err = check_gradient(lambda t: T.tensor_sum(T.mul(t, frozen)), x)
        assert err <= 1e-7
        np.testing.assert_array_equal(live_grad, frozen.data)

    def test_tape_audit_no_flow_into_blocked_branch(self):
        w = Tensor(np.random.default_rng(6).normal(size=(3, 3)), requires_grad=True)
        x = Tensor(np.eye(3))
        with Tape() as tape:
            m0 = tape.mark()
            branch = T.matmul(x, w)  # will be cut off below
            m1 = tape.mark()
            loss = T.tensor_sum(T.add(T.matmul(x, w), stop_gradient(branch)))
        tape.backward(loss)
        assert w.grad is not None
        for out in tape.outputs_between(m0, m1):
            assert out.grad is None


class TestCheckGradient:
    def test_quadratic_is_clean(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.normal(size=(5,)), requires_grad=True)
        assert check_gradient(lambda t: T.tensor_sum(T.mul(t, t)), x) <= 1e-7

    def test_softmax_log_sum_composition(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.normal(size=(3, 5)), requires_grad=True)
        err = check_gradient(lambda t: T.tensor_sum(T.log(T.row_softmax(t))), x)
        assert err <= 1e-6

    def test_unused_input_reports_zero(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        assert check_gradient(lambda t: T.tensor_sum(Tensor([3.0])), x) == 0.0

    def test_rejects_non_scalar(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(NonScalarLossError):
            check_gradient(lambda t: T.mul(t, t), x)


class TestPrimitiveGradients:
    @pytest.mark.parametrize("name,build", PRIMITIVE_CASES, ids=[n for n, _ in PRIMITIVE_CASES])
    def test_primitive(self, name, build):
        rng = np.random.default_rng(zlib.crc32(name.encode()))
        worst = 0.0
        for _ in range(20):
            f, x = build(rng)
            worst = max(worst, check_gradient(f, x))
        assert worst <= 1e-4, f"{name}: worst relative error {worst:.3e}"
