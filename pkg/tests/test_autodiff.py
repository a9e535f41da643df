import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from adnn_energy_lab import autodiff as ad
from adnn_energy_lab.autodiff import (
    NonFiniteError,
    ShapeError,
    Tensor,
    gradients,
)
from adnn_energy_lab.optim import Adam

from oracles import (
    adam_reference_steps,
    finite_difference,
    max_relative_error,
    random_op_mix_graph,
)


def fd_check(build, arrays, tol=1e-6):
    tensors = [Tensor(a) for a in arrays]
    loss = build(tensors)
    ad_grads = gradients(loss, tensors)
    fd_grads = finite_difference(lambda arrs: build([Tensor(a) for a in arrs]).item(), arrays)
    assert max_relative_error(ad_grads, fd_grads) < tol


def test_add_sub_mul_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(3, 4))
    b = rng.normal(size=(3, 4))
    fd_check(lambda ts: ad.tsum(ad.mul(ad.add(ts[0], ts[1]), ad.sub(ts[0], ts[1]))), [a, b])


def test_broadcast_add_and_mul_gradients():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(4, 3))
    row = rng.normal(size=(3,))
    col = rng.normal(size=(4, 1))
    fd_check(lambda ts: ad.tsum(ad.mul(ad.add(ts[0], ts[1]), ts[2])), [x, row, col])


def test_matmul_vector_and_batch_gradients():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(5,))
    xb = rng.normal(size=(3, 5))
    w = rng.normal(size=(5, 2))
    fd_check(lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])), [x, w])
    fd_check(lambda ts: ad.tsum(ad.matmul(ts[0], ts[1])), [xb, w])


def test_activation_gradients():
    rng = np.random.default_rng(3)
    # keep away from the relu kink so central differences are exact
    x = rng.uniform(0.1, 2.0, size=(6,)) * rng.choice([-1.0, 1.0], size=6)
    fd_check(lambda ts: ad.tsum(ad.relu(ts[0])), [x])
    fd_check(lambda ts: ad.tsum(ad.sigmoid(ts[0])), [x])
    fd_check(lambda ts: ad.tsum(ad.tanh(ts[0])), [x])


def test_log_and_norm_gradients():
    rng = np.random.default_rng(4)
    x = rng.uniform(0.2, 3.0, size=(5,))
    fd_check(lambda ts: ad.tsum(ad.log(ts[0])), [x])
    fd_check(lambda ts: ad.l2_norm(ts[0]), [x])
    xb = rng.uniform(0.2, 3.0, size=(3, 5))
    fd_check(lambda ts: ad.tsum(ad.l2_norm(ts[0], axis=-1)), [xb])


def test_softmax_rows_are_distributions():
    rng = np.random.default_rng(5)
    logits = rng.normal(scale=3.0, size=(7, 4))
    probs = ad.softmax(Tensor(logits)).data
    assert np.all(probs > 0)
    assert np.allclose(probs.sum(axis=-1), 1.0, atol=1e-12)


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(3, 4))
    mix = rng.uniform(0.1, 1.0, size=(3, 4))
    fd_check(lambda ts: ad.tsum(ad.mul(ad.softmax(ts[0]), ts[1])), [logits, mix])


def test_reduction_gradients():
    rng = np.random.default_rng(7)
    x = rng.normal(size=(4, 3))
    fd_check(lambda ts: ad.tsum(ts[0]), [x])
    fd_check(lambda ts: ad.tmean(ts[0]), [x])
    fd_check(lambda ts: ad.tsum(ad.tmean(ts[0], axis=0)), [x])
    fd_check(lambda ts: ad.tsum(ad.tsum(ts[0], axis=-1)), [x])


def test_maximum_threshold_gradient_and_kink_subgradient():
    x = Tensor([-1.0, 0.5, 2.0])
    out = ad.maximum(x, 0.5)
    assert out.data.tolist() == [0.5, 0.5, 2.0]
    (g,) = gradients(ad.tsum(out), [x])
    # the tied coordinate sits exactly at the kink: subgradient 0
    assert g.tolist() == [0.0, 0.0, 1.0]


def test_relu_subgradient_at_zero_is_zero():
    x = Tensor([0.0, -1.0, 1.0])
    (g,) = gradients(ad.tsum(ad.relu(x)), [x])
    assert g.tolist() == [0.0, 0.0, 1.0]


def test_l2_norm_subgradient_at_origin_is_zero():
    x = Tensor([0.0, 0.0])
    (g,) = gradients(ad.l2_norm(x), [x])
    assert g.tolist() == [0.0, 0.0]


def test_gradient_accumulates_when_tensor_is_reused():
    x = Tensor([2.0, 3.0])
    loss = ad.tsum(ad.add(ad.mul(x, x), x))  # d/dx (x^2 + x) = 2x + 1
    (g,) = gradients(loss, [x])
    assert g.tolist() == [5.0, 7.0]


def test_unused_parameter_gets_zero_gradient():
    x = Tensor([1.0])
    unused = Tensor([[1.0, 2.0]])
    (gx, gu) = gradients(ad.tsum(ad.mul(x, 3.0)), [x, unused])
    assert gx.tolist() == [3.0]
    assert gu.tolist() == [[0.0, 0.0]]


def test_gradients_requires_scalar_output():
    x = Tensor([1.0, 2.0])
    with pytest.raises(ShapeError):
        gradients(ad.mul(x, 2.0), [x])


def test_shape_mismatch_raises_named_error():
    with pytest.raises(ShapeError) as err:
        ad.matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    assert "matmul" in str(err.value)
    with pytest.raises(ShapeError):
        ad.add(Tensor(np.ones(3)), Tensor(np.ones(4)))


def test_log_of_nonpositive_raises_nonfinite_error():
    with pytest.raises(NonFiniteError):
        ad.log(Tensor([1.0, 0.0]))
    with pytest.raises(NonFiniteError):
        ad.log(Tensor([-1.0]))


def test_construction_rejects_nan():
    with pytest.raises(NonFiniteError):
        Tensor([np.nan])


def test_evaluation_is_pure_and_bitwise_repeatable():
    rng = np.random.default_rng(8)
    arrays = [rng.normal(size=(3, 4)), rng.normal(size=(4, 2)), rng.normal(size=(2,))]

    def run():
        x, w, b = [Tensor(a) for a in arrays]
        return ad.tmean(ad.softmax(ad.add(ad.matmul(ad.tanh(x), w), b)))

    first, second = run(), run()
    assert first.data.tobytes() == second.data.tobytes()
    # downstream evaluation never mutates the inputs
    assert arrays[0].tobytes() == arrays[0].tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 10_000))
def test_random_graph_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    build, arrays = random_op_mix_graph(rng)
    tensors = [Tensor(a) for a in arrays]
    loss = build(tensors)
    assert np.isfinite(loss.item())
    ad_grads = gradients(loss, tensors)
    fd = finite_difference(lambda arrs: build([Tensor(a) for a in arrs]).item(), arrays)
    assert max_relative_error(ad_grads, fd) < 1e-6


def test_adam_matches_hand_recurrence():
    grads = [0.5, 0.5, -0.25, 1.5, -0.75]
    expected = adam_reference_steps(1.0, grads, lr=0.01)
    p = Tensor([1.0])
    opt = Adam([p], lr=0.01)
    seen = []
    for g in grads:
        opt.step([np.array([g])])
        seen.append(float(p.data[0]))
    assert np.allclose(seen, expected, rtol=0, atol=1e-15)


def test_adam_first_step_magnitude_is_learning_rate():
    rng = np.random.default_rng(9)
    for lr in (0.01, 0.1):
        p = Tensor(rng.normal(size=(6,)))
        before = p.data.copy()
        g = rng.normal(size=(6,))
        g[np.abs(g) < 1e-3] = 1e-3
        Adam([p], lr=lr).step([g])
        steps = np.abs(p.data - before)
        assert np.all(steps < lr * (1 + 1e-6))
        assert np.all(steps > lr * 0.99)


def test_adam_converges_on_quadratic():
    p = Tensor([0.0])
    opt = Adam([p], lr=0.05)
    for _ in range(2000):
        diff = ad.sub(p, 3.0)
        opt.step_loss(ad.tsum(ad.mul(diff, diff)))
    assert abs(float(p.data[0]) - 3.0) < 1e-3
