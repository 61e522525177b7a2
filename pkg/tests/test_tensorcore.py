import numpy as np
import pytest

from vist import tensorcore as tc
from vist.tensorcore import Tensor, gradient_check


def P(a):
    return Tensor(np.array(a, dtype=np.float64), requires_grad=True)


@pytest.fixture
def rng():
    return np.random.default_rng(0)


def test_softmax_uniform():
    out = tc.softmax(Tensor(np.zeros(3)))
    np.testing.assert_allclose(out.data, [1 / 3] * 3)


def test_layer_norm_constant_vector_is_zero():
    out = tc.layer_norm(Tensor(np.full(6, 2.5)))
    assert np.all(out.data == 0.0)


def test_masked_softmax_exact_zeros(rng):
    x = Tensor(rng.normal(size=(4, 7)))
    mask = np.zeros((4, 7))
    mask[:, 2] = -np.inf
    mask[1, 5:] = -np.inf
    p = tc.softmax(x, mask=mask).data
    assert np.all(p[:, 2] == 0.0)
    assert np.all(p[1, 5:] == 0.0)
    np.testing.assert_allclose(p.sum(-1), 1.0, atol=1e-6)


def test_fully_masked_row_raises():
    with pytest.raises(ValueError):
        tc.softmax(Tensor(np.zeros((2, 3))), mask=np.array([[0, 0, 0], [-np.inf] * 3]))


def test_shape_mismatch_raises():
    with pytest.raises(tc.ShapeError):
        tc.matmul(Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3))))
    with pytest.raises(tc.ShapeError):
        tc.add(Tensor(np.zeros((2, 3))), Tensor(np.zeros((4,))))


def test_gradient_check_closed_form():
    x = P([1.0, 2.0])
    err = gradient_check(lambda v: tc.sum_(tc.mul(v[0], v[0])), [x])
    assert err <= 1e-9
    np.testing.assert_allclose(x.grad, [2.0, 4.0])


def test_matmul_gradient(rng):
    a, b = P(rng.normal(size=(3, 4))), P(rng.normal(size=(4, 2)))
    assert gradient_check(lambda v: tc.sum_(tc.mul(tc.matmul(v[0], v[1]), tc.matmul(v[0], v[1]))), [a, b]) <= 1e-6


def _w(rng, shape):
    return Tensor(rng.normal(size=shape))


# (name, builder(rng) -> (f, inputs)); weights keep the scalar outputs generic
PRIMITIVES = {
    "matmul": lambda r: (lambda v: tc.sum_(tc.mul(tc.matmul(v[0], v[1]), _fixed(r, (2, 3, 5)))),
                         [P(r.normal(size=(2, 3, 4))), P(r.normal(size=(2, 4, 5)))]),
    "matmul_2d_weight": lambda r: (lambda v: tc.sum_(tc.mul(tc.matmul(v[0], v[1]), _fixed(r, (2, 3, 5)))),
                                   [P(r.normal(size=(2, 3, 4))), P(r.normal(size=(4, 5)))]),
    "add_broadcast": lambda r: (lambda v: tc.sum_(tc.mul(tc.add(v[0], v[1]), _fixed(r, (3, 4)))),
                                [P(r.normal(size=(3, 4))), P(r.normal(size=(4,)))]),
    "mul": lambda r: (lambda v: tc.sum_(tc.mul(v[0], v[1])), [P(r.normal(size=(3, 4))), P(r.normal(size=(3, 1)))]),
    "scale": lambda r: (lambda v: tc.sum_(tc.mul(tc.scale(v[0], -2.5), _fixed(r, (5,)))), [P(r.normal(size=5))]),
    "transpose": lambda r: (lambda v: tc.sum_(tc.mul(tc.transpose(v[0], (2, 0, 1)), _fixed(r, (4, 2, 3)))),
                            [P(r.normal(size=(2, 3, 4)))]),
    "reshape": lambda r: (lambda v: tc.sum_(tc.mul(tc.reshape(v[0], (3, 4)), _fixed(r, (3, 4)))), [P(r.normal(size=(2, 6)))]),
    "concat": lambda r: (lambda v: tc.sum_(tc.mul(tc.concat([v[0], v[1]], axis=1), _fixed(r, (2, 5)))),
                         [P(r.normal(size=(2, 2))), P(r.normal(size=(2, 3)))]),
    "slice": lambda r: (lambda v: tc.sum_(tc.mul(v[0][1:, ::2], _fixed(r, (2, 2)))), [P(r.normal(size=(3, 4)))]),
    "softmax_masked": lambda r: (lambda v: tc.sum_(tc.mul(tc.softmax(v[0], mask=np.array([0, -np.inf, 0, 0])), _fixed(r, (3, 4)))),
                                 [P(r.normal(size=(3, 4)))]),
    "layer_norm": lambda r: (lambda v: tc.sum_(tc.mul(tc.layer_norm(v[0], v[1], v[2]), _fixed(r, (3, 6)))),
                             [P(r.normal(size=(3, 6))), P(r.normal(size=6)), P(r.normal(size=6))]),
    "gelu": lambda r: (lambda v: tc.sum_(tc.mul(tc.gelu(v[0]), _fixed(r, (7,)))), [P(r.normal(size=7) * 2)]),
    "embedding": lambda r: (lambda v: tc.sum_(tc.mul(tc.embedding(v[0], [[0, 2], [2, 1]]), _fixed(r, (2, 2, 3)))),
                            [P(r.normal(size=(4, 3)))]),
    "mean_pool_masked": lambda r: (lambda v: tc.sum_(tc.mul(tc.mean_pool(v[0], mask=np.array([[1, 0, 1], [1, 1, 1]], bool)), _fixed(r, (2, 4)))),
                                   [P(r.normal(size=(2, 3, 4)))]),
    "l2_normalize": lambda r: (lambda v: tc.sum_(tc.mul(tc.l2_normalize(v[0]), _fixed(r, (2, 5)))), [P(r.normal(size=(2, 5)))]),
    "cross_entropy": lambda r: (lambda v: tc.cross_entropy(v[0], [1, 0, 3], weights=[1.0, 0.0, 2.0]), [P(r.normal(size=(3, 4)))]),
    "log": lambda r: (lambda v: tc.sum_(tc.log(v[0])), [P(r.uniform(0.5, 2.0, size=5))]),
    "exp": lambda r: (lambda v: tc.sum_(tc.mul(tc.exp(v[0]), _fixed(r, (5,)))), [P(r.normal(size=5))]),
}

_FIXED = {}


def _fixed(rng, shape):
    # constant weights, drawn once per shape so f is the same function on every call
    if shape not in _FIXED:
        _FIXED[shape] = Tensor(np.random.default_rng(hash(shape) % 2**32).normal(size=shape))
    return _FIXED[shape]


@pytest.mark.parametrize("name", sorted(PRIMITIVES))
def test_primitive_gradients(name):
    f, inputs = PRIMITIVES[name](np.random.default_rng(1))
    assert gradient_check(f, inputs, eps=1e-6) <= 1e-6


def test_no_grad_builds_no_graph():
    x = P([1.0, 2.0])
    with tc.no_grad():
        y = tc.mul(x, x)
    assert not y.requires_grad and y._backward is None


def test_shared_subexpression_accumulates():
    x = P([3.0])
    y = tc.mul(x, x)
    z = tc.add(y, y)
    tc.sum_(z).backward()
    np.testing.assert_allclose(x.grad, [12.0])
