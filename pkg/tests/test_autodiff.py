"""Finite-difference oracle for every autodiff primitive, plus graph mechanics.

Each primitive is checked against central differences on 50 random
instances.  The loss is always a weighted sum of the op output with fixed
random weights, so every output element receives a distinct adjoint and
transposition mistakes cannot cancel out.
"""

import numpy as np
import pytest

import dyndepth.autodiff as ad
from dyndepth.autodiff import Tensor

STEP = 1e-4
REL_TOL = 1e-3


def rel_err(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-6)


def max_fd_error(make_loss, params) -> float:
    """Backprop once, then centrally difference every element of every param."""
    for p in params:
        p.grad = None
    loss = make_loss()
    loss.backward()
    grads = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]
    worst = 0.0
    for p, g in zip(params, grads):
        flat = p.data.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + STEP
            up = make_loss().item()
            flat[i] = orig - STEP
            down = make_loss().item()
            flat[i] = orig
            fd = (up - down) / (2.0 * STEP)
            worst = max(worst, rel_err(gflat[i], fd))
    return worst


def weighted_sum(out: Tensor, weights: np.ndarray) -> Tensor:
    return ad.sum_(ad.mul(out, weights))


@pytest.mark.parametrize("seed", range(50))
def test_add_with_broadcasting(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4,)))
    w = rng.normal(size=(3, 4))
    assert max_fd_error(lambda: weighted_sum(ad.add(a, b), w), [a, b]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_sub(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(2, 3)))
    b = ad.parameter(rng.normal(size=(2, 3)))
    w = rng.normal(size=(2, 3))
    assert max_fd_error(lambda: weighted_sum(ad.sub(a, b), w), [a, b]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_mul_with_broadcasting(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 1)))
    b = ad.parameter(rng.normal(size=(1, 4)))
    w = rng.normal(size=(3, 4))
    assert max_fd_error(lambda: weighted_sum(ad.mul(a, b), w), [a, b]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_scalar_mul(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(5,)))
    c = float(rng.normal())
    w = rng.normal(size=(5,))
    assert max_fd_error(lambda: weighted_sum(ad.mul(a, c), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_matmul(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 4)))
    b = ad.parameter(rng.normal(size=(4, 2)))
    w = rng.normal(size=(3, 2))
    assert max_fd_error(lambda: weighted_sum(ad.matmul(a, b), w), [a, b]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_transpose(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 5)))
    w = rng.normal(size=(5, 3))
    assert max_fd_error(lambda: weighted_sum(ad.transpose(a), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_reshape(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(2, 6)))
    w = rng.normal(size=(3, 4))
    assert max_fd_error(lambda: weighted_sum(ad.reshape(a, (3, 4)), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_index_row_and_slice(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(4, 3)))
    w_row = rng.normal(size=(3,))
    w_slice = rng.normal(size=(2, 3))
    assert max_fd_error(lambda: weighted_sum(a[1], w_row), [a]) < REL_TOL
    assert max_fd_error(lambda: weighted_sum(a[1:3], w_slice), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_concat(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(2, 3)))
    b = ad.parameter(rng.normal(size=(4, 3)))
    w = rng.normal(size=(6, 3))
    assert max_fd_error(lambda: weighted_sum(ad.concat([a, b], axis=0), w), [a, b]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_sum_full_and_axis(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=(4,))
    assert max_fd_error(lambda: ad.sum_(a), [a]) < REL_TOL
    assert max_fd_error(lambda: weighted_sum(ad.sum_(a, axis=0), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_mean_full_and_axis(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3,))
    assert max_fd_error(lambda: ad.mean(a), [a]) < REL_TOL
    assert max_fd_error(lambda: weighted_sum(ad.mean(a, axis=1), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_sigmoid(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(6,)) * 2.0)
    w = rng.normal(size=(6,))
    assert max_fd_error(lambda: weighted_sum(ad.sigmoid(a), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_gelu(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(6,)) * 2.0)
    w = rng.normal(size=(6,))
    assert max_fd_error(lambda: weighted_sum(ad.gelu(a), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_softmax(seed):
    rng = np.random.default_rng(seed)
    a = ad.parameter(rng.normal(size=(3, 4)))
    w = rng.normal(size=(3, 4))
    assert max_fd_error(lambda: weighted_sum(ad.softmax(a, axis=-1), w), [a]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_layer_norm(seed):
    rng = np.random.default_rng(seed)
    x = ad.parameter(rng.normal(size=(3, 5)))
    gain = ad.parameter(rng.normal(size=(5,)) + 1.0)
    bias = ad.parameter(rng.normal(size=(5,)))
    w = rng.normal(size=(3, 5))
    err = max_fd_error(lambda: weighted_sum(ad.layer_norm(x, gain, bias), w), [x, gain, bias])
    assert err < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_embedding(seed):
    rng = np.random.default_rng(seed)
    table = ad.parameter(rng.normal(size=(7, 4)))
    ids = rng.integers(0, 7, size=5)  # repeats exercise scatter-add
    w = rng.normal(size=(5, 4))
    assert max_fd_error(lambda: weighted_sum(ad.embedding(table, ids), w), [table]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_cross_entropy(seed):
    rng = np.random.default_rng(seed)
    probs = ad.parameter(rng.uniform(0.05, 1.0, size=(4, 3)))
    labels = rng.integers(0, 3, size=4)
    assert max_fd_error(lambda: ad.cross_entropy(probs, labels), [probs]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_softmax_then_cross_entropy_chain(seed):
    rng = np.random.default_rng(seed)
    logits = ad.parameter(rng.normal(size=(3, 4)))
    labels = rng.integers(0, 4, size=3)
    assert max_fd_error(lambda: ad.cross_entropy(ad.softmax(logits), labels), [logits]) < REL_TOL


@pytest.mark.parametrize("seed", range(50))
def test_fanout_adjoints_accumulate(seed):
    rng = np.random.default_rng(seed)
    x = ad.parameter(rng.normal(size=(4,)))
    w = rng.normal(size=(4,))

    def make_loss():
        # x feeds two consumers; its adjoint must be the sum of both paths
        return weighted_sum(ad.add(ad.mul(x, x), x), w)

    assert max_fd_error(make_loss, [x]) < REL_TOL


# -- exact-value and mechanics checks -----------------------------------------------


def test_fanout_gradient_exact_value():
    x = ad.parameter(np.array([3.0]))
    loss = ad.sum_(ad.add(ad.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
    loss.backward()
    assert x.grad[0] == pytest.approx(7.0)


def test_backward_twice_rejected():
    x = ad.parameter(np.array([1.0]))
    loss = ad.sum_(ad.mul(x, x))
    loss.backward()
    with pytest.raises(RuntimeError):
        loss.backward()


def test_backward_needs_scalar():
    x = ad.parameter(np.ones((2, 2)))
    out = ad.mul(x, 2.0)
    with pytest.raises(ValueError):
        out.backward()


def test_leaf_gradients_accumulate_across_graphs():
    x = ad.parameter(np.array([2.0]))
    ad.sum_(ad.mul(x, x)).backward()
    first = x.grad.copy()
    ad.sum_(ad.mul(x, x)).backward()
    assert np.allclose(x.grad, 2.0 * first)


def test_no_grad_suppresses_taping():
    x = ad.parameter(np.array([1.0, 2.0]))
    with ad.no_grad():
        out = ad.mul(x, 3.0)
    assert not out.requires_grad
    assert out._parents == ()


def test_sigmoid_output_strictly_inside_unit_interval():
    out = ad.sigmoid(Tensor(np.array([-1000.0, 0.0, 1000.0])))
    assert np.all(out.data > 0.0)
    assert np.all(out.data < 1.0)


def test_softmax_rows_sum_to_one_and_shift_invariant():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(4, 6)) * 50.0
    a = ad.softmax(Tensor(x)).data
    b = ad.softmax(Tensor(x + 123.0)).data
    assert np.allclose(a.sum(axis=-1), 1.0)
    assert np.allclose(a, b)


def test_cross_entropy_handles_zero_probability_label():
    probs = ad.parameter(np.array([[0.0, 1.0]]))
    loss = ad.cross_entropy(probs, [0])
    assert np.isfinite(loss.item())
    loss.backward()
    assert probs.grad[0, 0] == 0.0  # clamped entry gets no gradient


def test_cross_entropy_rejects_bad_shapes():
    with pytest.raises(ValueError):
        ad.cross_entropy(Tensor(np.ones(3)), [0])
    with pytest.raises(ValueError):
        ad.cross_entropy(Tensor(np.ones((2, 3)) / 3.0), [0])
    with pytest.raises(IndexError):
        ad.cross_entropy(Tensor(np.ones((1, 3)) / 3.0), [5])


def test_matmul_requires_2d():
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones(3)), Tensor(np.ones((3, 2))))
    with pytest.raises(ValueError):
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((4, 2))))


def test_embedding_rejects_out_of_range_ids():
    table = ad.parameter(np.ones((4, 2)))
    with pytest.raises(IndexError):
        ad.embedding(table, [0, 4])


def test_layer_norm_rejects_nonpositive_eps():
    with pytest.raises(ValueError):
        ad.layer_norm(Tensor(np.ones((2, 3))), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=0.0)


def test_operator_sugar_matches_functions():
    rng = np.random.default_rng(1)
    a = Tensor(rng.normal(size=(2, 3)))
    b = Tensor(rng.normal(size=(2, 3)))
    assert np.allclose((a + b).data, ad.add(a, b).data)
    assert np.allclose((a - b).data, ad.sub(a, b).data)
    assert np.allclose((a * b).data, ad.mul(a, b).data)
    assert np.allclose((-a).data, -a.data)
    assert np.allclose((a @ ad.transpose(b)).data, a.data @ b.data.T)
    assert np.allclose(a[0].data, a.data[0])
