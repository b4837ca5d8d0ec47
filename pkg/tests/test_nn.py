"""Gradient engine: every primitive against central finite differences."""

from __future__ import annotations

import numpy as np
import pytest

from dro.nn import (
    AdamState,
    Tape,
    Tensor,
    adam_step,
    add,
    backward,
    causal_mask,
    dropout,
    embed,
    gelu,
    interleave3,
    layernorm,
    load_checkpoint,
    matmul,
    mse,
    reshape,
    save_checkpoint,
    scale,
    sigmoid,
    softmax,
    take_every3,
    transpose,
)

H = 1e-4
TOL = 1e-3


def _fd_check(build_loss, tensors, h=H, tol=TOL):
    """Compare analytic grads of a scalar loss against central differences."""
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = build_loss()
        backward(tape, loss)
    analytic = [t.grad.copy() if t.grad is not None else np.zeros_like(t.data) for t in tensors]
    for t, an in zip(tensors, analytic):
        flat = t.data.reshape(-1)
        fd = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            up = float(build_loss().data)
            flat[i] = orig - h
            dn = float(build_loss().data)
            flat[i] = orig
            fd[i] = (up - dn) / (2 * h)
        fd = fd.reshape(t.data.shape)
        denom = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(an - fd) / denom) < tol, f"gradient mismatch on {t.shape}"


class TestForwardBasics:
    def test_softmax_symmetry(self):
        out = softmax(Tensor([0.0, 0.0]))
        np.testing.assert_allclose(out.data, [0.5, 0.5])

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(0)
        out = softmax(Tensor(rng.standard_normal((3, 5))))
        np.testing.assert_allclose(out.data.sum(axis=-1), 1.0)

    def test_layernorm_constant_vector_is_zero(self):
        w = Tensor(np.ones(4))
        b = Tensor(np.zeros(4))
        out = layernorm(Tensor(np.full((2, 4), 3.7)), w, b)
        np.testing.assert_allclose(out.data, 0.0, atol=1e-12)

    def test_matmul_identity(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal((4, 4))
        out = matmul(Tensor(np.eye(4)), Tensor(x))
        np.testing.assert_allclose(out.data, x)

    def test_matmul_shape_error(self):
        with pytest.raises(ValueError):
            matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))

    def test_add_shape_error_names_shapes(self):
        with pytest.raises(ValueError) as err:
            add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4, 5))))
        assert "(2, 3)" in str(err.value) and "(4, 5)" in str(err.value)

    def test_dropout_eval_is_identity(self):
        x = Tensor(np.arange(6.0))
        assert dropout(x, 0.5, np.random.default_rng(0), train=False) is x

    def test_dropout_expectation(self):
        rng = np.random.default_rng(2)
        x = Tensor(np.ones(100_000))
        out = dropout(x, 0.1, rng, train=True)
        assert out.data.mean() == pytest.approx(1.0, abs=0.01)

    def test_causal_mask_zeroes_softmax(self):
        scores = Tensor(np.zeros((1, 3, 3)))
        allowed = np.tril(np.ones((3, 3), dtype=bool))
        w = softmax(causal_mask(scores, allowed[np.newaxis]))
        assert w.data[0, 0, 1] == 0.0
        assert w.data[0, 0, 2] == 0.0
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0)


class TestGradients:
    def test_matmul_2d(self):
        rng = np.random.default_rng(3)
        a = Tensor(rng.standard_normal((3, 4)))
        b = Tensor(rng.standard_normal((4, 2)))
        _fd_check(lambda: mse(matmul(a, b), np.zeros((3, 2))), [a, b])

    def test_matmul_batched(self):
        rng = np.random.default_rng(4)
        a = Tensor(rng.standard_normal((2, 2, 3, 4)))
        b = Tensor(rng.standard_normal((2, 2, 4, 3)))
        _fd_check(lambda: mse(matmul(a, b), np.zeros((2, 2, 3, 3))), [a, b])

    def test_matmul_stacked_times_2d(self):
        rng = np.random.default_rng(5)
        a = Tensor(rng.standard_normal((2, 3, 4)))
        w = Tensor(rng.standard_normal((4, 5)))
        _fd_check(lambda: mse(matmul(a, w), np.zeros((2, 3, 5))), [a, w])

    def test_add_broadcast_bias(self):
        rng = np.random.default_rng(6)
        x = Tensor(rng.standard_normal((2, 3, 4)))
        bias = Tensor(rng.standard_normal(4))
        _fd_check(lambda: mse(add(x, bias), np.zeros((2, 3, 4))), [x, bias])

    def test_layernorm(self):
        rng = np.random.default_rng(7)
        x = Tensor(rng.standard_normal((2, 5)))
        w = Tensor(rng.standard_normal(5))
        b = Tensor(rng.standard_normal(5))
        _fd_check(lambda: mse(layernorm(x, w, b), np.zeros((2, 5))), [x, w, b])

    def test_softmax_grad(self):
        rng = np.random.default_rng(8)
        x = Tensor(rng.standard_normal((3, 4)))
        target = rng.random((3, 4))
        _fd_check(lambda: mse(softmax(x), target), [x])

    def test_softmax_jacobian_rows_sum_to_zero(self):
        # d(softmax)^T 1 = 0: uniform output gradient yields zero input gradient
        rng = np.random.default_rng(9)
        x = Tensor(rng.standard_normal(5))
        with Tape() as tape:
            y = softmax(x)
            # sum(y) is constant 1, so its gradient w.r.t. x must vanish
            loss = mse(y, y.data - 1.0)  # grad of mean((y - c)^2) with c = y - 1
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 0.0, atol=1e-12)

    def test_gelu(self):
        rng = np.random.default_rng(10)
        x = Tensor(rng.standard_normal((2, 6)))
        _fd_check(lambda: mse(gelu(x), np.zeros((2, 6))), [x])

    def test_sigmoid(self):
        rng = np.random.default_rng(11)
        x = Tensor(rng.standard_normal(7))
        _fd_check(lambda: mse(sigmoid(x), np.full(7, 0.3)), [x])

    def test_embed(self):
        rng = np.random.default_rng(12)
        table = Tensor(rng.standard_normal((5, 3)))
        idx = np.array([[0, 2, 2], [4, 0, 1]])
        _fd_check(lambda: mse(embed(table, idx), np.zeros((2, 3, 3))), [table])

    def test_causal_mask_grad(self):
        rng = np.random.default_rng(13)
        x = Tensor(rng.standard_normal((2, 3, 3)))
        allowed = np.tril(np.ones((3, 3), dtype=bool))[np.newaxis]
        target = rng.random((2, 3, 3))
        _fd_check(lambda: mse(softmax(causal_mask(x, allowed)), target), [x])

    def test_dropout_grad_uses_same_mask(self):
        x = Tensor(np.ones(1000))
        with Tape() as tape:
            out = dropout(x, 0.3, np.random.default_rng(5), train=True)
            loss = mse(out, np.zeros(1000))
        backward(tape, loss)
        # gradient is zero exactly where the activation was dropped
        np.testing.assert_array_equal(x.grad == 0.0, out.data == 0.0)

    def test_structural_ops(self):
        rng = np.random.default_rng(14)
        x = Tensor(rng.standard_normal((2, 3, 4)))
        target = rng.random((2, 4, 3))
        _fd_check(lambda: mse(transpose(x, (0, 2, 1)), target), [x])
        _fd_check(lambda: mse(reshape(x, (2, 12)), np.zeros((2, 12))), [x])

    def test_interleave_roundtrip_grad(self):
        rng = np.random.default_rng(15)
        a = Tensor(rng.standard_normal((2, 3, 4)))
        b = Tensor(rng.standard_normal((2, 3, 4)))
        c = Tensor(rng.standard_normal((2, 3, 4)))
        merged = interleave3(a, b, c)
        np.testing.assert_array_equal(merged.data[:, 1::3], b.data)
        target = rng.random((2, 3, 4))
        _fd_check(lambda: mse(take_every3(interleave3(a, b, c), 1), target), [a, b, c])

    def test_mse_of_identical_inputs_has_zero_grad(self):
        x = Tensor(np.array([1.0, 2.0, 3.0]))
        with Tape() as tape:
            loss = mse(x, x.data.copy())
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 0.0)

    def test_masked_mse(self):
        rng = np.random.default_rng(16)
        x = Tensor(rng.standard_normal((2, 3)))
        mask = np.array([[1.0, 1.0, 0.0], [0.0, 1.0, 0.0]])
        target = rng.random((2, 3))
        _fd_check(lambda: mse(x, target, mask=mask), [x])
        with Tape() as tape:
            loss = mse(x, target, mask=mask)
            backward(tape, loss)
        assert x.grad[0, 2] == 0.0 and x.grad[1, 0] == 0.0


class TestAdam:
    def test_zero_grad_no_decay_is_fixed_point(self):
        p = Tensor(np.array([1.0, -2.0]))
        state = AdamState([p], lr=0.1, weight_decay=0.0)
        before = p.data.copy()
        adam_step([p], [np.zeros(2)], state)
        np.testing.assert_array_equal(p.data, before)

    def test_moves_against_gradient_sign(self):
        p = Tensor(np.array([0.0]))
        state = AdamState([p], lr=0.01)
        for _ in range(20):
            adam_step([p], [np.array([2.5])], state)
        assert p.data[0] < 0

    def test_scalar_quadratic_convergence(self):
        w = Tensor(np.array([0.0]))
        state = AdamState([w], lr=0.1)
        for _ in range(100):
            grad = 2.0 * (w.data - 3.0)
            adam_step([w], [grad], state)
        assert abs(w.data[0] - 3.0) < 0.1

    def test_decoupled_weight_decay(self):
        p = Tensor(np.array([4.0]))
        state = AdamState([p], lr=0.5, weight_decay=0.1)
        adam_step([p], [np.zeros(1)], state)
        # zero gradient: only the decay term acts, p <- p - lr*wd*p
        assert p.data[0] == pytest.approx(4.0 * (1 - 0.05))


class TestCheckpoint:
    def test_roundtrip(self, tmp_path):
        rng = np.random.default_rng(17)
        arrays = [rng.standard_normal((3, 4)), rng.standard_normal(7), np.array(2.0)]
        path = tmp_path / "params.bin"
        save_checkpoint(path, arrays)
        loaded = load_checkpoint(path)
        assert len(loaded) == 3
        for a, b in zip(arrays, loaded):
            np.testing.assert_array_equal(np.asarray(a), b)

    def test_header_is_16_bytes_little_endian(self, tmp_path):
        path = tmp_path / "p.bin"
        save_checkpoint(path, [np.zeros(2)])
        raw = path.read_bytes()
        assert raw[:8] == b"DROTENS\x00"
        assert int.from_bytes(raw[8:12], "little") == 1  # version
        assert int.from_bytes(raw[12:16], "little") == 1  # tensor count

    def test_bad_magic_rejected(self, tmp_path):
        path = tmp_path / "junk.bin"
        path.write_bytes(b"NOTMAGIC" + bytes(16))
        with pytest.raises(ValueError):
            load_checkpoint(path)


class TestTapeSemantics:
    def test_eval_mode_records_nothing(self):
        x = Tensor(np.ones(3))
        y = gelu(x)
        assert y.grad is None  # no error; nothing recorded without a tape

    def test_backward_requires_scalar(self):
        x = Tensor(np.ones(3))
        with Tape() as tape:
            y = gelu(x)
        with pytest.raises(ValueError):
            backward(tape, y)

    def test_tapes_do_not_nest(self):
        with Tape():
            with pytest.raises(RuntimeError):
                with Tape():
                    pass

    def test_reuse_accumulates(self):
        x = Tensor(np.array([1.0, 2.0]))
        with Tape() as tape:
            y = add(x, x)
            loss = mse(y, np.zeros(2))
        backward(tape, loss)
        np.testing.assert_allclose(x.grad, 2.0 * 2.0 * x.data * 2.0 / 2.0)
