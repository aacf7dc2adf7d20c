import math

import numpy as np
import pytest

from smlm import numerics as nm
from smlm.numerics import (
    ContractViolation,
    GradientTape,
    Tensor,
    affine,
    cross_entropy,
    finite_difference,
    gelu,
    layer_norm,
    matmul,
    mean_all,
    nll_rows,
    relative_error,
    softmax,
    sum_all,
)


def test_affine_identity():
    y = affine([[1.0, 0.0], [0.0, 1.0]], np.eye(2), [0.0, 0.0])
    np.testing.assert_allclose(y.numpy(), [[1, 0], [0, 1]])


def test_affine_zero_weights_return_bias():
    y = affine([[5.0, 6.0]], np.zeros((2, 2)), [7.0, 8.0])
    np.testing.assert_allclose(y.numpy(), [[7, 8]])


def test_affine_matches_scalar_loop():
    x = np.array([[1.0, 2.0]])
    w = np.array([[1.0, 2.0], [3.0, 4.0]])
    b = np.array([0.0, 0.0])
    # independent scalar-loop multiply
    expected = np.zeros((1, 2))
    for i in range(1):
        for j in range(2):
            acc = b[j]
            for k in range(2):
                acc += x[i, k] * w[k, j]
            expected[i, j] = acc
    np.testing.assert_allclose(expected, [[7, 10]])
    y = affine(x, w, b)
    np.testing.assert_allclose(y.numpy(), expected)


def test_affine_shape_mismatch():
    with pytest.raises(ContractViolation):
        affine([[1.0, 2.0, 3.0]], np.eye(2), [0.0, 0.0])
    with pytest.raises(ContractViolation):
        affine([[1.0, 2.0]], np.eye(2), [0.0, 0.0, 0.0])


def test_softmax_symmetry():
    p = softmax([0.0, 0.0], 1.0)
    np.testing.assert_allclose(p.numpy(), [0.5, 0.5], atol=1e-7)


def test_softmax_analytic():
    p = softmax([math.log(2.0), 0.0], 1.0)
    np.testing.assert_allclose(p.numpy(), [2 / 3, 1 / 3], atol=1e-6)


def test_softmax_saturation():
    p = softmax(np.array([1e9, 0.0], dtype=np.float32), 1.0)
    np.testing.assert_allclose(p.numpy(), [1.0, 0.0], atol=1e-7)


def test_softmax_sums_to_one_and_shift_invariant():
    rng = np.random.default_rng(0)
    for _ in range(20):
        z = rng.normal(size=17).astype(np.float32)
        p = softmax(z).numpy()
        assert abs(p.sum() - 1.0) <= 1e-6
        q = softmax(z + 3.25).numpy()
        assert np.max(np.abs(p - q)) <= 1e-6


def test_softmax_rejects_bad_temperature():
    with pytest.raises(ContractViolation):
        softmax([1.0, 2.0], 0.0)
    with pytest.raises(ContractViolation):
        softmax([1.0, 2.0], -1.0)


def test_layer_norm_constant_input_is_zero():
    for c in (0.0, 3.5, -2.0):
        y = layer_norm(np.full(4, c), np.ones(4), np.zeros(4))
        np.testing.assert_allclose(y.numpy(), np.zeros(4), atol=1e-6)


def test_layer_norm_already_normalized():
    y = layer_norm(np.array([1.0, -1.0]), np.ones(2), np.zeros(2), eps=1e-5)
    np.testing.assert_allclose(y.numpy(), [1.0, -1.0], atol=1e-2)


def test_layer_norm_shift_preserved():
    y = layer_norm(np.array([1.0, 2.0, 3.0]), np.ones(3), np.full(3, 5.0))
    assert abs(y.numpy().mean() - 5.0) <= 1e-6


def test_cross_entropy_uniform():
    z = np.zeros(37)
    assert abs(cross_entropy(z, 5).item() - math.log(37)) <= 1e-6


def test_cross_entropy_saturated():
    z = np.full(10, -1e9, dtype=np.float32)
    z[3] = 1e9
    assert cross_entropy(z, 3).item() <= 1e-6


def test_cross_entropy_analytic():
    assert abs(cross_entropy(np.array([0.0, math.log(3.0)]), 0).item() - math.log(4)) <= 1e-6


def test_cross_entropy_target_out_of_range():
    with pytest.raises(ContractViolation):
        cross_entropy(np.zeros(4), 4)
    with pytest.raises(ContractViolation):
        cross_entropy(np.zeros(4), -1)


def test_gradient_of_sum_is_ones():
    w = Tensor(np.arange(6, dtype=np.float64).reshape(2, 3))
    with GradientTape() as tape:
        tape.watch(w)
        loss = sum_all(w)
    (g,) = tape.gradients(loss, [w])
    np.testing.assert_allclose(g, np.ones((2, 3)))


def test_gradient_unused_parameter_is_zero():
    w = Tensor(np.ones((2, 2), dtype=np.float64))
    u = Tensor(np.ones(3, dtype=np.float64))
    with GradientTape() as tape:
        tape.watch(w, u)
        loss = sum_all(w)
    gw, gu = tape.gradients(loss, [w, u])
    assert gw.sum() == 4.0
    np.testing.assert_array_equal(gu, np.zeros(3))


def test_gradient_seed_must_be_scalar():
    w = Tensor(np.ones((2, 2), dtype=np.float64))
    with GradientTape() as tape:
        tape.watch(w)
        y = nm.scale(w, 2.0)
    with pytest.raises(ContractViolation):
        tape.gradients(y, [w])


def test_gradient_accumulates_through_shared_input():
    x = Tensor(np.array([3.0], dtype=np.float64))
    with GradientTape() as tape:
        tape.watch(x)
        y = nm.add(x, x)
        loss = sum_all(y)
    (g,) = tape.gradients(loss, [x])
    np.testing.assert_allclose(g, [2.0])


def test_each_node_visited_once():
    # diamond: loss = sum(a*b + a*b); the shared product node must only be
    # traversed once, giving grad a = 2b, grad b = 2a
    a = Tensor(np.array([2.0], dtype=np.float64))
    b = Tensor(np.array([5.0], dtype=np.float64))
    with GradientTape() as tape:
        tape.watch(a, b)
        prod = nm.mul(a, b)
        loss = sum_all(nm.add(prod, prod))
    ga, gb = tape.gradients(loss, [a, b])
    np.testing.assert_allclose(ga, [10.0])
    np.testing.assert_allclose(gb, [4.0])


def test_affine_cross_entropy_gradient_vs_finite_differences():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(1, 5))
    w = rng.normal(size=(5, 4))
    b = rng.normal(size=4)
    t = 2

    def f(xa, wa, ba):
        return cross_entropy(affine(xa, wa, ba).numpy()[0], t).item()

    fd = finite_difference(f, [x, w, b], h=1e-4)

    xt, wt, bt = Tensor(x), Tensor(w), Tensor(b)
    with GradientTape() as tape:
        tape.watch(xt, wt, bt)
        logits = affine(xt, wt, bt)
        loss = cross_entropy(reshape_row(logits), t)
    gx, gw, gb = tape.gradients(loss, [xt, wt, bt])
    assert relative_error(gx, fd[0]) <= 1e-5
    assert relative_error(gw, fd[1]) <= 1e-5
    assert relative_error(gb, fd[2]) <= 1e-5


def reshape_row(t):
    return nm.reshape(t, (t.shape[-1],))


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_primitive_gradients_vs_finite_differences(seed):
    rng = np.random.default_rng(seed)
    x = rng.normal(size=(3, 6))
    w = rng.normal(size=(6, 4))
    b = rng.normal(size=4)
    gain = rng.normal(size=6) * 0.1 + 1.0
    shift = rng.normal(size=6) * 0.1
    targets = rng.integers(0, 4, size=3)

    def f(xa, wa, ba, ga, sa):
        h = layer_norm(xa, ga, sa)
        h = gelu(h)
        z = affine(h, wa, ba)
        p = softmax(z, 0.7)
        nll = nll_rows(z, targets)
        return (mean_all(p).item() + mean_all(nll).item())

    fd = finite_difference(f, [x, w, b, gain, shift], h=1e-4)

    xt, wt, bt, gt, st = (Tensor(a) for a in (x, w, b, gain, shift))
    with GradientTape() as tape:
        tape.watch(xt, wt, bt, gt, st)
        h = layer_norm(xt, gt, st)
        h = gelu(h)
        z = affine(h, wt, bt)
        p = softmax(z, 0.7)
        loss = nm.add(mean_all(p), mean_all(nll_rows(z, targets)))
    grads = tape.gradients(loss, [xt, wt, bt, gt, st])
    for g, ref in zip(grads, fd):
        assert relative_error(g, ref) <= 1e-5


def test_batched_matmul_gradient():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(2, 3, 4))
    b = rng.normal(size=(2, 4, 5))

    def f(aa, bb):
        return float(np.matmul(aa, bb).sum())

    fd = finite_difference(f, [a, b], h=1e-4)
    at, bt = Tensor(a), Tensor(b)
    with GradientTape() as tape:
        tape.watch(at, bt)
        loss = sum_all(matmul(at, bt))
    ga, gb = tape.gradients(loss, [at, bt])
    assert relative_error(ga, fd[0]) <= 1e-5
    assert relative_error(gb, fd[1]) <= 1e-5


def test_matmul_shape_mismatch():
    with pytest.raises(ContractViolation):
        matmul(np.ones((2, 3)), np.ones((2, 3)))


def test_operations_are_deterministic():
    rng = np.random.default_rng(11)
    x = rng.normal(size=(8, 8)).astype(np.float32)
    w = rng.normal(size=(8, 8)).astype(np.float32)
    first = matmul(x, w).numpy()
    second = matmul(x, w).numpy()
    np.testing.assert_array_equal(first, second)


def test_no_tape_means_no_recording():
    x = Tensor(np.ones((2, 2)))
    y = nm.add(x, x)
    assert isinstance(y, Tensor)
    with GradientTape() as tape:
        # untracked inputs are not recorded either
        nm.add(x, x)
        assert len(tape) == 0
        tape.watch(x)
        nm.add(x, x)
        assert len(tape) == 1
