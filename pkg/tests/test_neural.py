"""Forward/backward/Adam behavior against analytic and finite-difference oracles."""

import numpy as np
import pytest

from swarmengage.neural import (
    IDENTITY,
    RELU,
    TANH,
    MlpParams,
    MlpSpec,
    adam_step,
    gradient_check,
    init_adam,
    init_mlp,
    mlp_backward,
    mlp_forward,
)

ACTOR_SPEC = MlpSpec((36, 1024, 500, 300, 100, 21),
                     (RELU, RELU, RELU, RELU, TANH))
CRITIC_SPEC = MlpSpec((57, 1024, 500, 300, 100, 1),
                      (RELU, RELU, RELU, RELU, IDENTITY))


def test_spec_validation():
    with pytest.raises(ValueError):
        MlpSpec((4,), ())
    with pytest.raises(ValueError):
        MlpSpec((4, 3), (RELU, RELU))
    with pytest.raises(ValueError):
        MlpSpec((4, 3), ("softmax",))
    with pytest.raises(ValueError):
        MlpSpec((4, 0), (RELU,))


def test_zero_weights_forward_is_activated_bias():
    spec = MlpSpec((3, 2), (TANH,))
    params = MlpParams(weights=(np.zeros((2, 3)),),
                       biases=(np.array([0.5, -2.0]),))
    out, _ = mlp_forward(params, spec, np.array([9.0, -4.0, 1.0]))
    assert np.allclose(out, np.tanh([0.5, -2.0]))


def test_identity_layer_with_identity_weights_passes_input_through():
    spec = MlpSpec((4, 4), (IDENTITY,))
    params = MlpParams(weights=(np.eye(4),), biases=(np.zeros(4),))
    x = np.array([1.0, -2.0, 3.5, 0.0])
    out, _ = mlp_forward(params, spec, x)
    assert np.array_equal(out, x)


def test_actor_stack_shapes_and_bounded_output():
    params = init_mlp(ACTOR_SPEC, np.random.default_rng(0))
    out, _ = mlp_forward(params, ACTOR_SPEC, np.random.default_rng(1).normal(size=36))
    assert out.shape == (21,)
    assert (np.abs(out) <= 1.0).all()
    batch, _ = mlp_forward(params, ACTOR_SPEC,
                           np.random.default_rng(2).normal(size=(8, 36)))
    assert batch.shape == (8, 21)
    assert (np.abs(batch) <= 1.0).all()


def test_batched_forward_matches_per_row():
    spec = MlpSpec((5, 7, 3), (RELU, TANH))
    params = init_mlp(spec, np.random.default_rng(3))
    xs = np.random.default_rng(4).normal(size=(6, 5))
    batch, _ = mlp_forward(params, spec, xs)
    for i, x in enumerate(xs):
        row, _ = mlp_forward(params, spec, x)
        assert np.allclose(batch[i], row, atol=1e-14)


def test_input_width_mismatch_rejected():
    spec = MlpSpec((5, 2), (IDENTITY,))
    params = init_mlp(spec, np.random.default_rng(0))
    with pytest.raises(ValueError):
        mlp_forward(params, spec, np.zeros(4))


def test_linear_layer_weight_gradient_is_input():
    spec = MlpSpec((4, 1), (IDENTITY,))
    params = init_mlp(spec, np.random.default_rng(5))
    x = np.array([2.0, -1.0, 0.5, 3.0])
    _, cache = mlp_forward(params, spec, x)
    grads, grad_in = mlp_backward(params, spec, cache, np.array([1.0]))
    assert np.allclose(grads.weights[0], x[None, :])
    assert np.allclose(grads.biases[0], [1.0])
    assert np.allclose(grad_in, params.weights[0][0])


def test_zero_grad_output_gives_zero_gradients():
    spec = MlpSpec((6, 8, 2), (RELU, TANH))
    params = init_mlp(spec, np.random.default_rng(6))
    _, cache = mlp_forward(params, spec, np.random.default_rng(7).normal(size=6))
    grads, grad_in = mlp_backward(params, spec, cache, np.zeros(2))
    for w in grads.weights:
        assert not w.any()
    for b in grads.biases:
        assert not b.any()
    assert not grad_in.any()


def test_gradient_check_linear_net_is_exact():
    spec = MlpSpec((7, 5, 2), (IDENTITY, IDENTITY))
    assert gradient_check(spec, seed=0) < 1e-10


def test_gradient_check_tanh_and_relu_nets():
    assert gradient_check(MlpSpec((6, 16, 4), (TANH, TANH)), seed=1) < 1e-6
    assert gradient_check(MlpSpec((6, 16, 4), (RELU, IDENTITY)), seed=2) < 1e-6


def test_gradient_check_random_architectures():
    rng = np.random.default_rng(8)
    tags = (RELU, TANH, IDENTITY)
    for trial in range(10):
        depth = int(rng.integers(1, 5))
        sizes = tuple(int(rng.integers(1, 24)) for _ in range(depth + 1))
        acts = tuple(tags[rng.integers(0, 3)] for _ in range(depth))
        err = gradient_check(MlpSpec(sizes, acts), seed=trial)
        assert err < 1e-6, f"{sizes} {acts}: {err}"


def test_gradient_check_full_scale_stacks():
    assert gradient_check(ACTOR_SPEC, seed=3, coords_per_tensor=12) < 1e-6
    assert gradient_check(CRITIC_SPEC, seed=4, coords_per_tensor=12) < 1e-6


def test_input_gradient_matches_finite_differences():
    spec = MlpSpec((5, 9, 3), (TANH, TANH))
    params = init_mlp(spec, np.random.default_rng(9))
    rng = np.random.default_rng(10)
    x = rng.normal(size=5)
    u = rng.normal(size=3)
    _, cache = mlp_forward(params, spec, x)
    _, grad_in = mlp_backward(params, spec, cache, u)
    h = 1e-6
    for i in range(5):
        e = np.zeros(5)
        e[i] = h
        up, _ = mlp_forward(params, spec, x + e)
        dn, _ = mlp_forward(params, spec, x - e)
        fd = (up @ u - dn @ u) / (2.0 * h)
        assert fd == pytest.approx(grad_in[i], abs=1e-7)


def test_adam_zero_gradient_is_identity():
    spec = MlpSpec((3, 2), (IDENTITY,))
    params = init_mlp(spec, np.random.default_rng(11))
    zeros = MlpParams(weights=(np.zeros((2, 3)),), biases=(np.zeros(2),))
    state = init_adam(params, lr=0.01)
    new_params, new_state = adam_step(params, zeros, state)
    assert np.array_equal(new_params.weights[0], params.weights[0])
    assert np.array_equal(new_params.biases[0], params.biases[0])
    assert new_state.step == 1


def test_adam_first_step_moves_by_learning_rate():
    spec = MlpSpec((2, 2), (IDENTITY,))
    params = init_mlp(spec, np.random.default_rng(12))
    grads = MlpParams(weights=(np.array([[3.0, -1.0], [0.5, 2.0]]),),
                      biases=(np.array([-4.0, 1.0]),))
    state = init_adam(params, lr=0.05)
    new_params, _ = adam_step(params, grads, state)
    step_w = params.weights[0] - new_params.weights[0]
    assert np.allclose(np.abs(step_w), 0.05, atol=1e-6)
    assert np.allclose(np.sign(step_w), np.sign(grads.weights[0]))
    step_b = params.biases[0] - new_params.biases[0]
    assert np.allclose(np.abs(step_b), 0.05, atol=1e-6)


def test_adam_minimizes_quadratic():
    spec = MlpSpec((1, 4), (IDENTITY,))
    params = MlpParams(weights=(np.ones((4, 1)),), biases=(np.ones(4),))
    state = init_adam(params, lr=0.1)
    for _ in range(500):
        grads = MlpParams(weights=(2.0 * params.weights[0],),
                          biases=(2.0 * params.biases[0],))
        params, state = adam_step(params, grads, state)
    norm = np.sqrt(sum(float((a * a).sum()) for a in params.weights + params.biases))
    assert norm < 1e-3


def test_init_is_seed_deterministic_and_bounded():
    spec = MlpSpec((10, 20, 5), (RELU, TANH))
    a = init_mlp(spec, np.random.default_rng(13))
    b = init_mlp(spec, np.random.default_rng(13))
    for wa, wb in zip(a.weights, b.weights):
        assert np.array_equal(wa, wb)
    assert np.abs(a.weights[0]).max() <= np.sqrt(6.0 / 10)
    assert np.abs(a.weights[1]).max() <= np.sqrt(6.0 / 25)
    for bias in a.biases:
        assert not bias.any()
