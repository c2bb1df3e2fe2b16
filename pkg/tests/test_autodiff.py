"""Unit tests for the reverse-mode tape engine."""

import numpy as np
import pytest

from monomap import autodiff as ad


def make_store():
    store = ad.ParamStore()
    store.add_group("main", 0.01)
    return store


class TestForwardOps:
    def test_sigmoid_at_zero(self):
        tape = ad.Tape()
        x = tape.constant(np.array([0.0]))
        assert ad.sigmoid(x).value[0] == pytest.approx(0.5, abs=0.0)

    def test_matmul_identity(self):
        tape = ad.Tape()
        v = np.array([[1.7], [-2.3], [0.4]])
        x = tape.constant(np.eye(3))
        out = ad.matmul(x, v)
        np.testing.assert_array_equal(out.value, v)

    def test_matmul_vector_rhs(self):
        tape = ad.Tape()
        x = tape.constant(np.eye(3))
        out = ad.matmul(x, np.array([1.0, 2.0, 3.0]))
        np.testing.assert_array_equal(out.value, [1.0, 2.0, 3.0])

    def test_gather_direct_indexing(self):
        tape = ad.Tape()
        buf = tape.constant(np.array([1.0, 2.0, 3.0]))
        out = ad.gather(buf, np.array([2, 0]))
        np.testing.assert_array_equal(out.value, [3.0, 1.0])

    def test_matmul_shape_error_names_op(self):
        tape = ad.Tape()
        a = tape.constant(np.zeros((2, 3)))
        with pytest.raises(ValueError, match="matmul"):
            ad.matmul(a, np.zeros((4, 2)))

    def test_add_shape_error_names_op(self):
        tape = ad.Tape()
        a = tape.constant(np.zeros(3))
        with pytest.raises(ValueError, match="add"):
            a + np.zeros(4)

    def test_gather_out_of_range(self):
        tape = ad.Tape()
        buf = tape.constant(np.zeros(3))
        with pytest.raises(ValueError, match="gather"):
            ad.gather(buf, np.array([3]))

    def test_matmul_chunk_stability(self):
        # chunked forward evaluation must compose bitwise with single-pass
        rng = np.random.default_rng(7)
        for k, m in [(12, 32), (32, 32), (67, 32), (32, 3), (32, 1)]:
            a = rng.standard_normal((4096, k))
            b = rng.standard_normal((k, m))
            tape = ad.Tape()
            full = ad.matmul(tape.constant(a), b).value
            for split in (2, 49, 1234):
                top = ad.matmul(tape.constant(a[:split]), b).value
                bot = ad.matmul(tape.constant(a[split:]), b).value
                assert np.array_equal(np.concatenate([top, bot]), full), (k, m, split)


class TestBackward:
    def test_sigmoid_grad_at_zero(self):
        store = make_store()
        p = store.add_param("x", np.array([0.0]), "main")
        tape = ad.Tape()
        out = ad.reduce_sum(ad.sigmoid(tape.leaf(p)))
        tape.backward(out)
        assert p.grad[0] == pytest.approx(0.25, abs=1e-15)

    def test_grad_of_dot_is_other_operand(self):
        store = make_store()
        rng = np.random.default_rng(0)
        b = rng.standard_normal(5)
        p = store.add_param("a", rng.standard_normal(5), "main")
        tape = ad.Tape()
        out = ad.reduce_sum(tape.leaf(p) * b)
        tape.backward(out)
        np.testing.assert_allclose(p.grad, b, rtol=0, atol=0)

    def test_non_scalar_output_is_hard_error(self):
        store = make_store()
        p = store.add_param("a", np.zeros(3), "main")
        tape = ad.Tape()
        v = tape.leaf(p) * 2.0
        with pytest.raises(ValueError, match="scalar"):
            tape.backward(v)

    def test_empty_tape_backward_is_noop(self):
        store = make_store()
        p = store.add_param("a", np.ones(3), "main")
        tape = ad.Tape()
        out = tape.constant(np.array(1.0))
        tape.backward(out)
        np.testing.assert_array_equal(p.grad, np.zeros(3))

    def test_mlp_grads_match_finite_differences(self):
        # random 2-layer MLP against the central-difference oracle, per parameter
        rng = np.random.default_rng(42)
        store = make_store()
        w1 = store.add_param("w1", 0.5 * rng.standard_normal((4, 8)), "main")
        b1 = store.add_param("b1", 0.1 * rng.standard_normal(8), "main")
        w2 = store.add_param("w2", 0.5 * rng.standard_normal((8, 1)), "main")
        b2 = store.add_param("b2", 0.1 * rng.standard_normal(1), "main")
        x = rng.standard_normal((6, 4))

        def forward():
            tape = ad.Tape()
            h = ad.relu(ad.matmul(x, tape.leaf(w1)) + tape.leaf(b1))
            y = ad.matmul(h, tape.leaf(w2)) + tape.leaf(b2)
            out = ad.reduce_sum(ad.sigmoid(y))
            return tape, out

        tape, out = forward()
        store.zero_grad()
        tape.backward(out)
        for p in (w1, b1, w2, b2):
            def loss_at(arr, _p=p):
                keep = _p.value.copy()
                _p.value[...] = arr
                _, o = forward()
                _p.value[...] = keep
                return o.value
            fd = ad.finite_difference(loss_at, p.value, h=1e-5)
            assert ad.relative_error(p.grad, fd) <= 1e-4, p.name

    def test_per_op_gradients_match_finite_differences(self):
        # >= 100 random trials spread across every primitive op
        rng = np.random.default_rng(3)
        builders = {
            "add": lambda t, a, b: t.leaf(a) + t.leaf(b),
            "sub": lambda t, a, b: t.leaf(a) - t.leaf(b),
            "mul": lambda t, a, b: t.leaf(a) * t.leaf(b),
            "div": lambda t, a, b: t.leaf(a) / (ad.sigmoid(t.leaf(b)) + 0.5),
            "neg": lambda t, a, b: -t.leaf(a) * t.leaf(b),
            "sigmoid": lambda t, a, b: ad.sigmoid(t.leaf(a)) * t.leaf(b),
            "relu": lambda t, a, b: ad.relu(t.leaf(a)) * t.leaf(b),
            "exp": lambda t, a, b: ad.exp(t.leaf(a)) * t.leaf(b),
            "log": lambda t, a, b: ad.log(ad.exp(t.leaf(a)) + 1.0) * t.leaf(b),
            "abs": lambda t, a, b: ad.absolute(t.leaf(a)) * t.leaf(b),
            "cumsum": lambda t, a, b: ad.cumsum_exclusive(t.leaf(a)) * t.leaf(b),
            "concat": lambda t, a, b: ad.concat([t.leaf(a), t.leaf(b)]) * 1.0,
            "reshape": lambda t, a, b: ad.reshape(t.leaf(a), (2, 3)) *
            ad.reshape(t.leaf(b), (2, 3)),
            "gather": lambda t, a, b: ad.gather(t.leaf(a), np.array([4, 1, 1, 0])) *
            ad.gather(t.leaf(b), np.array([0, 2, 3, 5])),
            "clip": lambda t, a, b: ad.clip(t.leaf(a), -0.5, 0.5) * t.leaf(b),
        }
        trials_per_op = 8  # 15 ops x 8 = 120 trials
        for name, build in builders.items():
            for _ in range(trials_per_op):
                store = make_store()
                a = store.add_param("a", rng.standard_normal(6), "main")
                b = store.add_param("b", rng.standard_normal(6), "main")

                def run():
                    tape = ad.Tape()
                    return tape, ad.reduce_sum(build(tape, a, b))

                tape, out = run()
                store.zero_grad()
                tape.backward(out)
                for p in (a, b):
                    def loss_at(arr, _p=p):
                        keep = _p.value.copy()
                        _p.value[...] = arr
                        _, o = run()
                        _p.value[...] = keep
                        return o.value
                    fd = ad.finite_difference(loss_at, p.value)
                    assert ad.relative_error(p.grad, fd) <= 1e-4, name

    def test_matmul_gradients_match_finite_differences(self):
        rng = np.random.default_rng(11)
        for _ in range(10):
            store = make_store()
            a = store.add_param("a", rng.standard_normal((3, 4)), "main")
            b = store.add_param("b", rng.standard_normal((4, 2)), "main")

            def run():
                tape = ad.Tape()
                return tape, ad.reduce_sum(ad.matmul(tape.leaf(a), tape.leaf(b)) * 0.7)

            tape, out = run()
            store.zero_grad()
            tape.backward(out)
            for p in (a, b):
                def loss_at(arr, _p=p):
                    keep = _p.value.copy()
                    _p.value[...] = arr
                    _, o = run()
                    _p.value[...] = keep
                    return o.value
                fd = ad.finite_difference(loss_at, p.value)
                assert ad.relative_error(p.grad, fd) <= 1e-4

    def test_backward_is_bitwise_deterministic(self):
        rng = np.random.default_rng(5)
        store = make_store()
        a = store.add_param("a", rng.standard_normal((20, 3)), "main")
        idx = rng.integers(0, 20, size=200)

        def run_once():
            store.zero_grad()
            tape = ad.Tape()
            g = ad.gather(tape.leaf(a), idx)
            out = ad.reduce_sum(ad.sigmoid(g) * rng2)
            tape.backward(out)
            return a.grad.copy()

        rng2 = np.random.default_rng(6).standard_normal((200, 3))
        first = run_once()
        second = run_once()
        assert np.array_equal(first, second)

    def test_grad_accumulation_linearity(self):
        rng = np.random.default_rng(8)
        store = make_store()
        a = store.add_param("a", rng.standard_normal(7), "main")
        w1 = rng.standard_normal(7)
        w2 = rng.standard_normal(7)

        store.zero_grad()
        t1 = ad.Tape()
        t1.backward(ad.reduce_sum(ad.sigmoid(t1.leaf(a)) * w1))
        t2 = ad.Tape()
        t2.backward(ad.reduce_sum(ad.exp(t2.leaf(a)) * w2))
        separate = a.grad.copy()

        store.zero_grad()
        t3 = ad.Tape()
        combined = ad.reduce_sum(ad.sigmoid(t3.leaf(a)) * w1) + \
            ad.reduce_sum(ad.exp(t3.leaf(a)) * w2)
        t3.backward(combined)
        np.testing.assert_allclose(separate, a.grad, rtol=1e-15, atol=1e-15)


class TestZeroGrad:
    def test_zeroes_after_backward(self):
        store = make_store()
        p = store.add_param("a", np.ones(4), "main")
        tape = ad.Tape()
        tape.backward(ad.reduce_sum(tape.leaf(p) * 2.0))
        assert np.any(p.grad != 0.0)
        store.zero_grad()
        np.testing.assert_array_equal(p.grad, np.zeros(4))

    def test_empty_store_noop(self):
        store = ad.ParamStore()
        store.zero_grad()

    def test_idempotent(self):
        store = make_store()
        p = store.add_param("a", np.ones(4), "main")
        p.grad += 3.0
        store.zero_grad()
        once = p.grad.copy()
        store.zero_grad()
        np.testing.assert_array_equal(once, p.grad)


class TestAdam:
    def test_zero_gradient_leaves_params_unchanged(self):
        store = make_store()
        p = store.add_param("a", np.array([1.0, -2.0]), "main")
        before = p.value.copy()
        for t in range(1, 6):
            store.zero_grad()
            store.adam_step(t)
        np.testing.assert_array_equal(p.value, before)

    def test_first_step_closed_form(self):
        store = make_store()
        p = store.add_param("a", np.array([0.5]), "main")
        p.grad[...] = 1.0
        store.adam_step(1)
        # bias-corrected first step = lr * g / (|g| + eps)
        expected = 0.5 - 0.01 * 1.0 / (1.0 + 1e-8)
        assert p.value[0] == pytest.approx(expected, abs=1e-12)

    def test_group_lr_ratio(self):
        store = ad.ParamStore()
        store.add_group("grid_geo", 0.01)
        store.add_group("mlp_geo", 1e-5)
        a = store.add_param("a", np.array([0.0]), "grid_geo")
        b = store.add_param("b", np.array([0.0]), "mlp_geo")
        a.grad[...] = 0.37
        b.grad[...] = 0.37
        store.adam_step(1)
        assert abs(a.value[0]) / abs(b.value[0]) == pytest.approx(1000.0, rel=1e-9)

    def test_step_zero_is_hard_error(self):
        store = make_store()
        store.add_param("a", np.zeros(1), "main")
        with pytest.raises(ValueError, match="t must be >= 1"):
            store.adam_step(0)

    def test_moment_state_persists(self):
        store = make_store()
        p = store.add_param("a", np.array([0.0]), "main")
        for t in range(1, 4):
            store.zero_grad()
            p.grad[...] = 1.0
            store.adam_step(t)
        # constant gradient: every bias-corrected step is ~lr
        assert p.value[0] == pytest.approx(-3 * 0.01, rel=1e-6)


class TestStore:
    def test_duplicate_group_rejected(self):
        store = make_store()
        with pytest.raises(ValueError):
            store.add_group("main", 0.1)

    def test_unknown_group_rejected(self):
        store = make_store()
        with pytest.raises(ValueError):
            store.add_param("a", np.zeros(1), "nope")

    def test_duplicate_param_rejected(self):
        store = make_store()
        store.add_param("a", np.zeros(1), "main")
        with pytest.raises(ValueError):
            store.add_param("a", np.zeros(1), "main")

    def test_grad_shape_tracks_value_shape(self):
        store = make_store()
        p = store.add_param("a", np.zeros((3, 4)), "main")
        assert p.grad.shape == p.value.shape
