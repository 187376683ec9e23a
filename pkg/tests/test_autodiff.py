import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from gophormer import autodiff as ad
from gophormer.autodiff import ShapeError, Tape, Tensor, backward, gradient_check


def P(shape, seed=0, scale=1.0):
    return Tensor(np.random.default_rng(seed).normal(scale=scale, size=shape), requires_grad=True)


def test_softmax_example():
    y = ad.softmax(Tensor(np.array([0.0, math.log(3)])))
    assert y.data == pytest.approx([0.25, 0.75], abs=1e-15)


def test_layernorm_constant_is_zero():
    x = Tensor(np.full((2, 5), 3.7))
    y = ad.layer_norm(x, Tensor(np.ones(5)), Tensor(np.zeros(5)))
    assert np.all(y.data == 0.0)


def test_dropout_eval_identity():
    x = P((3, 4))
    assert ad.dropout(x, 0.5, None, train=False) is x
    y = ad.dropout(x, 0.5, np.random.default_rng(0), train=True)
    kept = y.data != 0
    assert np.allclose(y.data[kept], 2 * x.data[kept])
    with pytest.raises(ValueError):
        ad.dropout(x, 0.5, None, train=True)


def test_backward_sum_and_dot():
    x = P((4,))
    with Tape() as t:
        loss = ad.sum_(x)
    (g,) = backward(t, loss, [x])
    assert np.array_equal(g, np.ones(4))
    x = P((4,), seed=1)
    with Tape() as t:
        loss = ad.sum_(x * x)
    (g,) = backward(t, loss, [x])
    assert np.allclose(g, 2 * x.data, rtol=0, atol=1e-15)


def test_fan_out_accumulates_and_unused_zero():
    x, unused = P((3,)), P((2,))
    with Tape() as t:
        loss = ad.sum_(x + x * 2.0)
    gx, gu = backward(t, loss, [x, unused])
    assert np.allclose(gx, 3.0)
    assert np.array_equal(gu, np.zeros(2))


def test_backward_errors():
    x = P((3,))
    with Tape() as t:
        y = x * 2.0
    with pytest.raises(ShapeError, match="scalar"):
        backward(t, y)
    with pytest.raises(ValueError):
        backward(Tape(), Tensor(1.0))


def test_shape_errors_report_both_shapes():
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(4,\)"):
        ad.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros(4)))
    with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
        ad.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ShapeError):
        ad.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((3, 2)))], axis=0)


def test_gradient_check_square():
    theta = Tensor(np.array([3.0]), requires_grad=True)
    assert gradient_check(lambda: ad.sum_(ad.square(theta)), [theta]) < 1e-10


def test_gradient_check_rejects_nondeterministic_and_float32():
    theta = P((5,))
    rng = np.random.default_rng(0)
    with pytest.raises(ValueError, match="deterministic"):
        gradient_check(lambda: ad.sum_(ad.dropout(theta, 0.5, rng, True)), [theta])
    t32 = Tensor(np.ones(3, dtype=np.float32), requires_grad=True)
    with pytest.raises(TypeError):
        gradient_check(lambda: ad.sum_(t32), [t32])


def test_no_grad_records_nothing():
    x = P((2,))
    with Tape() as t:
        with ad.no_grad():
            ad.sum_(x * x)
        assert len(t) == 0


# Per-primitive finite-difference checks. A fixed random projection turns each
# output into a scalar so every output coordinate contributes.
def _scalarize(y, seed=99):
    w = np.random.default_rng(seed).normal(size=y.shape)
    return ad.sum_(ad.mul(y, Tensor(w)))


PRIMITIVE_CASES = {
    "add_broadcast": (lambda a, b: ad.add(a, b), [(3, 4), (4,)]),
    "sub_broadcast": (lambda a, b: ad.sub(a, b), [(2, 3, 4), (3, 1)]),
    "mul_broadcast": (lambda a, b: ad.mul(a, b), [(2, 3, 4), (1, 4)]),
    "scalar_ops": (lambda a: (a * 3.0 - 1.5) / 2.0 + 0.25, [(3, 3)]),
    "square": (lambda a: ad.square(a), [(5,)]),
    "matmul_batched": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (4, 5)]),
    "matmul_both_batched": (lambda a, b: ad.matmul(a, b), [(2, 3, 4), (2, 4, 2)]),
    "transpose": (lambda a: ad.transpose(a, (0, 2, 1)), [(2, 3, 4)]),
    "reshape": (lambda a: ad.reshape(a, (6, 2)), [(3, 4)]),
    "concat": (lambda a, b: ad.concat([a, b], axis=1), [(2, 3), (2, 2)]),
    "slice": (lambda a: ad.slice_(a, (slice(None), 1)), [(3, 4)]),
    "take_rows": (lambda a: ad.take_rows(a, np.array([[0, 2], [2, 2]])), [(3, 4)]),
    "sum_axis": (lambda a: ad.sum_(a, axis=1, keepdims=True), [(3, 4)]),
    "mean_axes": (lambda a: ad.mean(a, axis=(0, 2)), [(2, 3, 4)]),
    "softmax": (lambda a: ad.softmax(a), [(3, 5)]),
    "softmax_masked": (
        lambda a: ad.softmax(a, mask=np.array([[True, False, True], [False, True, False], [True, True, True]])),
        [(3, 3)],
    ),
    "layer_norm": (lambda a, g, b: ad.layer_norm(a, g, b), [(3, 6), (6,), (6,)]),
    "relu": (lambda a: ad.relu(a), [(4, 5)]),
    "log": (lambda a: ad.log(ad.add(ad.square(a), 0.5)), [(6,)]),
    "cross_entropy": (lambda a: ad.cross_entropy_logits(a, np.array([0, 2, 1])), [(3, 4)]),
    "sq_l2": (lambda a, b: ad.sq_l2(a, b), [(3, 4), (3, 4)]),
    "dropout_fixed_mask": (lambda a: ad.dropout(a, 0.3, np.random.default_rng(5), True), [(4, 4)]),
}


@pytest.mark.parametrize("name", sorted(PRIMITIVE_CASES))
def test_primitive_adjoint_matches_finite_differences(name):
    fn, shapes = PRIMITIVE_CASES[name]
    params = [P(s, seed=i + 1) for i, s in enumerate(shapes)]
    if name == "relu":  # keep away from the kink
        params[0].data += np.sign(params[0].data) * 0.1
    err = gradient_check(lambda: _scalarize(fn(*params)), params, eps=1e-6)
    assert err < 1e-6, f"{name}: {err}"


def test_log_floor_blocks_gradient():
    x = Tensor(np.array([0.0, 1.0]), requires_grad=True)
    with Tape() as t:
        loss = ad.sum_(ad.log(x, floor=1e-12))
    (g,) = backward(t, loss, [x])
    assert math.isfinite(g[0]) and g[1] == 1.0


@settings(max_examples=40, deadline=None)
@given(
    scores=arrays(np.float64, (4, 6), elements=st.floats(-30, 30)),
    mask=arrays(bool, (4, 6)),
)
def test_masked_softmax_rows_sum_to_one(scores, mask):
    mask = mask.copy()
    mask[np.arange(4), np.arange(4)] = True  # diagonal always attendable
    y = ad.softmax(Tensor(scores), mask=mask).data
    assert np.all(np.isfinite(y))
    assert np.allclose(y.sum(axis=-1), 1.0, atol=1e-12)
    assert np.all(y[~mask] == 0.0)


def test_self_only_row_is_one_hot():
    mask = np.eye(3, dtype=bool)
    y = ad.softmax(Tensor(np.zeros((3, 3))), mask=mask).data
    assert np.array_equal(y, np.eye(3))


def test_backward_is_deterministic():
    def run():
        a, b = P((4, 5), 1), P((5, 3), 2)
        with Tape() as t:
            loss = ad.sum_(ad.softmax(ad.relu(a @ b)) * 2.0)
        return [g.tobytes() for g in backward(t, loss, [a, b])]

    assert run() == run()


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_debug_checks_trip_on_nonfinite(monkeypatch):
    monkeypatch.setattr(ad, "debug_checks", True)
    with pytest.raises(ad.NonFiniteError):
        ad.log(Tensor(np.array([-1.0])))


def test_glorot_bounds():
    w = ad.glorot(np.random.default_rng(0), 30, 70)
    assert w.shape == (30, 70)
    assert np.abs(w).max() <= math.sqrt(6 / 100)
