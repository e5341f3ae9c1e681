import numpy as np
import pytest
from scipy.stats import norm

from graphsel import tensor as T
from graphsel.errors import EmptySegment, NonFinite


def rand(shape, seed, scale=1.0):
    return np.random.default_rng(seed).standard_normal(shape) * scale


def check_unary(build, shape, seed, tol=1e-6):
    """Gradient-check a scalar sum of a unary op at random inputs."""
    x = T.parameter(rand(shape, seed))
    err = T.grad_check(lambda: T.sum_all(build(x)), [x], eps=1e-5)
    assert err < tol, f"finite-difference mismatch: {err}"


def test_add_and_mul_values():
    a = T.constant([[1.0, 2.0], [3.0, 4.0]])
    b = T.constant([[10.0, 20.0], [30.0, 40.0]])
    assert np.array_equal(T.add(a, b).data, [[11.0, 22.0], [33.0, 44.0]])
    assert np.array_equal(T.mul(a, b).data, [[10.0, 40.0], [90.0, 160.0]])
    with pytest.raises(ValueError):
        T.add(a, T.constant([1.0, 2.0]))


def test_matmul_matches_numpy():
    a, b = rand((4, 3), 1), rand((3, 5), 2)
    out = T.matmul(T.constant(a), T.constant(b))
    np.testing.assert_allclose(out.data, a @ b, rtol=0, atol=0)


def test_gelu_values():
    x = T.constant([0.0, 1.0, -1.0])
    out = T.gelu(x).data
    assert out[0] == 0.0
    # definitional check: gelu(1) = Phi(1)
    assert abs(out[1] - norm.cdf(1.0)) < 1e-12
    assert abs(out[1] - 0.841345) < 1e-6
    # x*Phi(x) identity: gelu(x) + gelu(-x) = x*(2*Phi(x) - 1)
    assert abs(out[1] + out[2] - (2.0 * norm.cdf(1.0) - 1.0)) < 1e-12


def test_sigmoid_values():
    out = T.sigmoid(T.constant([0.0, 30.0, -30.0])).data
    assert out[0] == 0.5
    assert 0.0 < out[2] < out[1] < 1.0


def test_segment_softmax_values():
    vals = T.constant([5.0, 5.0, 5.0, 7.0, 1.0, 2.0, 3.0])
    out = T.segment_softmax(vals, np.array([3, 1, 3])).data
    np.testing.assert_allclose(out[:3], [1 / 3] * 3, atol=1e-12)
    assert out[3] == 1.0
    brute = np.exp([1.0, 2.0, 3.0])
    brute /= brute.sum()
    np.testing.assert_allclose(out[4:], brute, atol=1e-12)


def test_segment_softmax_sums_to_one():
    rng = np.random.default_rng(3)
    lengths = rng.integers(1, 6, size=20)
    vals = T.constant(rng.standard_normal(int(lengths.sum())) * 30)
    out = T.segment_softmax(vals, lengths).data
    bounds = np.concatenate(([0], np.cumsum(lengths)))
    for i in range(len(lengths)):
        seg = out[bounds[i]:bounds[i + 1]]
        assert np.all(seg > 0.0) and np.all(seg <= 1.0)
        assert abs(seg.sum() - 1.0) < 1e-12


def test_segment_softmax_rejects_empty_segment():
    with pytest.raises(EmptySegment):
        T.segment_softmax(T.constant([1.0]), np.array([1, 0]))


def test_nonfinite_is_trapped():
    with pytest.raises(NonFinite):
        T.log(T.constant([0.0]))
    with pytest.raises(NonFinite):
        T.Tensor([np.inf])


def test_ops_deterministic_bitwise():
    a = rand((6, 4), 9)
    first = T.gelu(T.matmul(T.constant(a), T.constant(a.T))).data
    second = T.gelu(T.matmul(T.constant(a), T.constant(a.T))).data
    assert np.array_equal(first, second)


def test_grad_check_analytic_case():
    # f(x) = sum(x^2) at x=[1,2]: gradient is exactly [2,4]
    x = T.parameter([1.0, 2.0])
    err = T.grad_check(lambda: T.sum_all(T.mul(x, x)), [x], eps=1e-5)
    assert err < 1e-8
    np.testing.assert_allclose(x.grad, [2.0, 4.0], atol=1e-12)


@pytest.mark.parametrize("seed", [0, 1])
def test_unary_op_gradients(seed):
    check_unary(T.gelu, (5, 3), seed)
    check_unary(T.sigmoid, (5, 3), seed + 10)
    check_unary(lambda t: T.log(T.sigmoid(t)), (4, 2), seed + 20)
    check_unary(lambda t: T.affine(t, -2.5, 0.75), (6,), seed + 30)
    check_unary(lambda t: T.clamp(t, -0.5, 0.5), (8,), seed + 40)
    check_unary(T.flatten, (3, 4), seed + 50)


def test_matmul_and_concat_gradients():
    a = T.parameter(rand((4, 3), 5))
    b = T.parameter(rand((3, 2), 6))
    c = T.parameter(rand((4, 2), 7))

    def f():
        prod = T.matmul(a, b)
        both = T.concat_cols([prod, c])
        return T.sum_all(T.gelu(both))

    assert T.grad_check(f, [a, b, c], eps=1e-5) < 1e-6


def test_bias_gather_scale_gradients():
    mat = T.parameter(rand((5, 3), 8))
    bias = T.parameter(rand((3,), 9))
    vec = T.parameter(rand((4,), 10))
    idx = np.array([0, 2, 2, 4])

    def f():
        rows = T.gather_rows(T.add_bias(mat, bias), idx)
        return T.sum_all(T.mul(T.scale_rows(rows, vec), rows))

    assert T.grad_check(f, [mat, bias, vec], eps=1e-5) < 1e-6


def test_segment_ops_gradients():
    mat = T.parameter(rand((6, 3), 11))
    vals = T.parameter(rand((6,), 12))
    lengths = np.array([2, 1, 3])
    targets = np.array([1, 3, 0])

    def f():
        alpha = T.segment_softmax(vals, lengths)
        agg = T.segment_sum(T.scale_rows(mat, alpha), lengths, targets, 5)
        return T.sum_all(T.mul(agg, agg))

    assert T.grad_check(f, [mat, vals], eps=1e-5) < 1e-5


def test_rowdot_logsumexp_pick_gradients():
    q = T.parameter(rand((5, 4), 13))
    k = T.parameter(rand((5, 4), 14))

    def f():
        scores = T.row_dot(q, k)
        return T.add(T.logsumexp(scores), T.affine(T.pick(scores, 2), -1.0))

    assert T.grad_check(f, [q, k], eps=1e-5) < 1e-6


def test_two_layer_mlp_gradient():
    w1 = T.parameter(rand((6, 8), 15, 0.4))
    b1 = T.parameter(np.zeros(8))
    w2 = T.parameter(rand((8, 1), 16, 0.4))
    x = T.constant(rand((10, 6), 17))

    def f():
        hidden = T.gelu(T.add_bias(T.matmul(x, w1), b1))
        return T.mean_all(T.matmul(hidden, w2))

    assert T.grad_check(f, [w1, b1, w2], eps=1e-5) < 1e-5


def test_shared_parent_accumulates():
    x = T.parameter([3.0])
    with T.Tape() as tape:
        y = T.add(T.mul(x, x), T.mul(x, x))  # 2x^2, dy/dx = 4x = 12
        tape.backward(T.sum_all(y))
    np.testing.assert_allclose(x.grad, [12.0], atol=1e-12)


def test_no_tape_keeps_no_history():
    x = T.parameter([1.0, 2.0])
    out = T.mul(x, x)
    assert not out.requires_grad


def test_checkpoint_roundtrip(tmp_path):
    named = {
        "weights": T.parameter(rand((3, 4), 20)),
        "bias": T.parameter(rand((4,), 21)),
    }
    path = tmp_path / "ckpt.bin"
    T.save_tensors(path, named)
    loaded = load = T.load_tensors(path)
    assert set(load) == {"weights", "bias"}
    for name, tensor in named.items():
        assert np.array_equal(loaded[name], tensor.data)
    # identical content writes identical bytes
    path2 = tmp_path / "ckpt2.bin"
    T.save_tensors(path2, named)
    assert path.read_bytes() == path2.read_bytes()
