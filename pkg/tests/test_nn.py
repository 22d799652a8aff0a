import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import max_fd_error
from promptdiff.errors import ConfigError, EmptyInputError, LoadError, ShapeError, StateError
from promptdiff.nn import (
    Adam,
    AdamState,
    AttentionBlock,
    Dense,
    LayerNorm,
    Mlp,
    activate,
    activation_grad,
    adam_step,
    frozen,
    load_snapshot,
    mean_pool,
    mean_pool_backward,
    numerical_gradient,
    relative_error,
    save_snapshot,
    sinusoidal_embed,
    softmax,
)


def dense_with(W, b, activation):
    layer = Dense(len(W), len(W[0]), activation)
    layer.params["W"][...] = W
    layer.params["b"][...] = b
    return layer


# -- dense layers --------------------------------------------------------------

def test_dense_identity_weights_pass_input_through():
    layer = dense_with(np.eye(2), [0.0, 0.0], "identity")
    np.testing.assert_array_equal(layer.forward([[1.0, 2.0]]), [[1.0, 2.0]])


def test_dense_relu_zeroes_negative_entries():
    layer = dense_with(np.eye(2), [0.0, 0.0], "relu")
    np.testing.assert_array_equal(layer.forward([[-1.0, 2.0]]), [[0.0, 2.0]])


def test_dense_hand_arithmetic():
    layer = dense_with([[1.0], [1.0]], [0.5], "identity")
    np.testing.assert_array_equal(layer.forward([[1.0, 2.0]]), [[3.5]])


def test_dense_rejects_wrong_width():
    with pytest.raises(ShapeError):
        Dense(3, 2).forward(np.zeros((1, 4)))


def test_linear_chain_rule_by_hand():
    layer = dense_with([[1.0]], [0.0], "identity")
    layer.forward([[3.0]])
    dx = layer.backward(np.ones((1, 1)))
    np.testing.assert_array_equal(layer.grads["W"], [[3.0]])
    np.testing.assert_array_equal(layer.grads["b"], [1.0])
    np.testing.assert_array_equal(dx, [[1.0]])


def test_dead_relu_passes_no_gradient():
    layer = dense_with([[1.0, 2.0]], [-5.0, -5.0], "relu")
    layer.forward([[1.0]])
    dx = layer.backward(np.ones((1, 2)))
    assert not layer.grads["W"].any()
    assert not layer.grads["b"].any()
    assert not dx.any()


def test_backward_without_forward_is_a_state_error():
    with pytest.raises(StateError):
        Dense(2, 2).backward(np.ones((1, 2)))
    with pytest.raises(StateError):
        Mlp([2, 3, 1]).backward(np.ones((1, 1)))


def test_uncached_forward_leaves_tape_empty():
    net = Mlp([2, 3, 1])
    net.forward(np.ones((4, 2)), cache=False)
    assert all(layer.tape_depth() == 0 for layer in net.layers)


def test_tape_is_lifo_across_repeated_application(rng):
    # applying a net twice and differentiating both uses equals summing per-use gradients
    net = Mlp([2, 4, 2], rng=rng)
    x1, x2 = rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
    g1, g2 = rng.standard_normal((3, 2)), rng.standard_normal((5, 2))
    net.forward(x1)
    net.forward(x2)
    net.backward(g2)
    net.backward(g1)
    both = {k: g.copy() for k, g in net.gradients().items()}
    expected = {}
    for x, g in ((x1, g1), (x2, g2)):
        net.zero_grad()
        net.forward(x)
        net.backward(g)
        for k, v in net.gradients().items():
            expected[k] = expected.get(k, 0.0) + v
    for k in both:
        np.testing.assert_allclose(both[k], expected[k], rtol=1e-12, atol=1e-14)


def test_two_layer_mlp_matches_finite_differences(rng):
    net = Mlp([3, 4, 2], rng=rng)
    x = rng.standard_normal((5, 3))
    err = max_fd_error(net, lambda c: net.forward(x, c),
                       lambda w: {"x": net.backward(w)}, {"x": x}, rng)
    assert err < 1e-4


@pytest.mark.parametrize("name", ["identity", "relu", "mish"])
def test_activation_derivatives(name, rng):
    z = rng.uniform(-6, 6, 200)
    z = z[np.abs(z) > 1e-3]  # keep away from the relu kink
    x = z.copy()
    # every output depends only on its own input, so the gradient of the sum is the elementwise derivative
    numeric = numerical_gradient(lambda: float(np.sum(activate(name, x))), x)
    np.testing.assert_allclose(activation_grad(name, z), numeric, atol=1e-7)


def test_mish_matches_reference_formula():
    z = np.linspace(-60, 80, 4001)
    np.testing.assert_allclose(activate("mish", z), z * np.tanh(np.logaddexp(0.0, z)),
                               rtol=1e-12, atol=1e-14)


def test_unknown_activation_is_a_config_error():
    with pytest.raises(ConfigError):
        activate("gelu", np.zeros(2))
    with pytest.raises(ConfigError):
        Dense(2, 2, "swish")


def test_mlp_needs_a_layer():
    with pytest.raises(ConfigError):
        Mlp([3])


def test_zero_last_layer_gives_zero_output(rng):
    net = Mlp([3, 8, 2], rng=rng)
    net.zero_last_layer()
    assert not net.forward(rng.standard_normal((4, 3))).any()


@settings(max_examples=30, deadline=None)
@given(dims=st.lists(st.integers(1, 16), min_size=2, max_size=4), rows=st.integers(1, 16),
       seed=st.integers(0, 2**31 - 1))
def test_mlp_shape_closure_and_finiteness(dims, rows, seed):
    rng = np.random.default_rng(seed)
    net = Mlp(dims, rng=rng)
    x = rng.uniform(-10, 10, (rows, dims[0]))
    y = net.forward(x)
    assert y.shape == (rows, dims[-1])
    dx = net.backward(np.ones_like(y))
    assert dx.shape == x.shape
    assert np.all(np.isfinite(y)) and np.all(np.isfinite(dx))
    assert all(g.shape == p.shape for (_, g), (_, p) in zip(net.named_grads(), net.named_parameters()))


def test_frozen_blocks_parameter_grads_but_not_input_grads(rng):
    net = Mlp([2, 3, 1], rng=rng)
    x = rng.standard_normal((4, 2))
    with frozen(net):
        net.forward(x)
        dx = net.backward(np.ones((4, 1)))
    assert net.trainable
    assert not any(g.any() for g in net.gradients().values())
    assert np.abs(dx).sum() > 0


def test_load_state_dict_validates_before_copying(rng):
    net = Mlp([2, 3, 1], rng=rng)
    before = net.state_dict()
    bad = net.state_dict()
    bad["1.W"] = np.zeros((4, 1))
    bad["0.b"] = np.full(3, 7.0)
    with pytest.raises(ShapeError):
        net.load_state_dict(bad)
    for k, v in net.state_dict().items():
        np.testing.assert_array_equal(v, before[k])
    with pytest.raises(ShapeError):
        net.load_state_dict({"0.W": before["0.W"]})


# -- layer norm, pooling, attention ---------------------------------------------

def test_layer_norm_normalizes_rows(rng):
    x = rng.normal(3.0, 5.0, (6, 8))
    y = LayerNorm(8).forward(x)
    np.testing.assert_allclose(y.mean(axis=1), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=1), 1.0, rtol=1e-3)


def test_layer_norm_gradients(rng):
    ln = LayerNorm(5)
    ln.params["scale"][...] = rng.standard_normal(5)
    ln.params["offset"][...] = rng.standard_normal(5)
    x = rng.standard_normal((3, 5))
    assert max_fd_error(ln, lambda c: ln.forward(x, c), lambda w: {"x": ln.backward(w)}, {"x": x}, rng) < 1e-6


def test_mean_pool_examples():
    np.testing.assert_array_equal(mean_pool([[1.0, 3.0], [3.0, 1.0]]), [[2.0, 2.0]])
    np.testing.assert_array_equal(mean_pool([[5.0, 7.0]]), [[5.0, 7.0]])
    np.testing.assert_array_equal(mean_pool_backward([[2.0, 2.0]], 2), [[1.0, 1.0], [1.0, 1.0]])


def test_mean_pool_rejects_empty_input():
    with pytest.raises(EmptyInputError):
        mean_pool(np.zeros((0, 3)))
    with pytest.raises(EmptyInputError):
        mean_pool_backward(np.ones((1, 3)), 0)


def test_softmax_is_shift_invariant_and_normalized(rng):
    s = rng.standard_normal((3, 4, 5)) * 50
    p = softmax(s)
    np.testing.assert_allclose(p.sum(axis=-1), 1.0, atol=1e-12)
    np.testing.assert_allclose(softmax(s + 123.0), p, atol=1e-12)


def test_attention_output_shape_and_row_sums(rng):
    block = AttentionBlock(8, 2, rng=rng)
    x = rng.standard_normal((7, 8))
    y = block.forward(x, cache=False)
    assert y.shape == x.shape
    assert block.last_attention.shape == (2, 7, 7)
    np.testing.assert_allclose(block.last_attention.sum(axis=-1), 1.0, atol=1e-6)


def test_attention_rejects_bad_dims():
    with pytest.raises(ConfigError):
        AttentionBlock(6, 4)
    with pytest.raises(ShapeError):
        AttentionBlock(8, 2).forward(np.zeros((3, 6)))


def test_attention_gradients(rng):
    block = AttentionBlock(8, 2, rng=rng)
    x = rng.standard_normal((5, 8))
    err = max_fd_error(block, lambda c: block.forward(x, c), lambda w: {"x": block.backward(w)}, {"x": x}, rng)
    assert err < 1e-3


# -- sinusoidal embedding ---------------------------------------------------------

def test_sinusoidal_at_zero_is_sin0_cos1():
    e = sinusoidal_embed(0, 8)
    np.testing.assert_array_equal(e[0, 0::2], 0.0)
    np.testing.assert_array_equal(e[0, 1::2], 1.0)


def test_sinusoidal_closed_form():
    dim, k = 6, 3
    expected = []
    for i in range(dim // 2):
        f = 10000.0 ** (-2 * i / dim)
        expected += [np.sin(k * f), np.cos(k * f)]
    np.testing.assert_allclose(sinusoidal_embed(k, dim)[0], expected, rtol=1e-14)


def test_sinusoidal_is_deterministic_and_rejects_odd_width():
    np.testing.assert_array_equal(sinusoidal_embed(4, 16), sinusoidal_embed(4, 16))
    with pytest.raises(ConfigError):
        sinusoidal_embed(1, 7)


@pytest.mark.parametrize("dim", [2, 8, 16])
def test_sinusoidal_distinguishes_every_step_pair(dim):
    K = 64
    e = sinusoidal_embed(np.arange(1, K + 1), dim)
    for i in range(K):
        for j in range(i + 1, K):
            assert np.max(np.abs(e[i] - e[j])) > 1e-6


# -- Adam ---------------------------------------------------------------------

def test_adam_zero_gradient_leaves_parameters():
    p = {"w": np.array([1.0, -2.0])}
    adam_step(p, {"w": np.zeros(2)}, AdamState())
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])


def test_adam_first_step_is_lr_times_sign():
    p = {"w": np.array([0.0, 0.0, 0.0])}
    g = np.array([0.3, -2.0, 1e-3])
    state = AdamState(learning_rate=0.01)
    adam_step(p, {"w": g}, state)
    # m_hat = g and v_hat = g^2 after bias correction
    expected = -0.01 * g / (np.abs(g) + 1e-8)
    np.testing.assert_allclose(p["w"], expected, rtol=1e-12)
    assert state.step == 1


def test_adam_matches_reference_loop(rng):
    p = rng.standard_normal(4)
    grads = rng.standard_normal((5, 4))
    params = {"w": p.copy()}
    state = AdamState(learning_rate=0.05, beta1=0.8, beta2=0.95, eps=1e-6)
    for g in grads:
        adam_step(params, {"w": g}, state)
    m = v = np.zeros(4)
    ref = p.copy()
    for t, g in enumerate(grads, start=1):
        m = 0.8 * m + 0.2 * g
        v = 0.95 * v + 0.05 * g * g
        ref = ref - 0.05 * (m / (1 - 0.8**t)) / (np.sqrt(v / (1 - 0.95**t)) + 1e-6)
    np.testing.assert_allclose(params["w"], ref, rtol=1e-12)


def test_adam_shape_mismatch_changes_nothing():
    p = {"a": np.zeros(2), "b": np.zeros(3)}
    state = AdamState()
    with pytest.raises(ShapeError):
        adam_step(p, {"a": np.ones(2), "b": np.ones(4)}, state)
    assert state.step == 0 and not p["a"].any()


def test_adam_is_deterministic(rng):
    def run():
        net = Mlp([3, 5, 1], rng=np.random.default_rng(7))
        opt = Adam({"net": net}, 1e-2)
        data = np.random.default_rng(8).standard_normal((10, 3))
        for _ in range(5):
            opt.zero_grad()
            net.forward(data)
            net.backward(np.ones((10, 1)))
            opt.step()
        return net.state_dict()

    a, b = run(), run()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_adam_updates_in_place(rng):
    net = Mlp([2, 2], rng=rng)
    ref = net.layers[0].params["W"]
    opt = Adam({"net": net}, 0.1)
    net.forward(np.ones((1, 2)))
    net.backward(np.ones((1, 2)))
    before = ref.copy()
    opt.step()
    assert ref is net.layers[0].params["W"]
    assert not np.array_equal(ref, before)


# -- gradient checker -----------------------------------------------------------

def test_numerical_gradient_of_a_quadratic():
    x = np.array([1.0, -2.0, 0.5])
    g = numerical_gradient(lambda: float(np.sum(x**2)), x)
    np.testing.assert_allclose(g, 2 * x, rtol=1e-8)
    np.testing.assert_array_equal(x, [1.0, -2.0, 0.5])


def test_relative_error_of_equal_and_zero_vectors():
    assert relative_error(np.ones(3), np.ones(3)) == 0.0
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([-1.0])) == 1.0


# -- snapshots ------------------------------------------------------------------

def test_snapshot_round_trip_is_bit_exact(tmp_path, rng):
    sections = {"net": {"w": rng.standard_normal((3, 4)), "b": np.array([np.pi, -0.0, 1e-300])},
                "other": {"s": np.array(2.5)}}
    path = tmp_path / "s.bin"
    save_snapshot(path, sections, {"epoch": 3})
    loaded, meta = load_snapshot(path)
    assert meta == {"epoch": 3}
    for sec, arrays in sections.items():
        for name, a in arrays.items():
            assert loaded[sec][name].shape == np.shape(a)
            assert loaded[sec][name].tobytes() == np.asarray(a, dtype=np.float64).tobytes()


def test_snapshot_saves_are_byte_identical(tmp_path, rng):
    sections = {"net": Mlp([3, 4, 2], rng=rng).state_dict()}
    save_snapshot(tmp_path / "a.bin", sections, {"x": 1})
    save_snapshot(tmp_path / "b.bin", sections, {"x": 1})
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_snapshot_load_errors(tmp_path):
    with pytest.raises(LoadError):
        load_snapshot(tmp_path / "missing.bin")
    (tmp_path / "junk.bin").write_bytes(b"not a snapshot")
    with pytest.raises(LoadError):
        load_snapshot(tmp_path / "junk.bin")
    save_snapshot(tmp_path / "t.bin", {"n": {"w": np.ones(10)}})
    data = (tmp_path / "t.bin").read_bytes()
    (tmp_path / "t.bin").write_bytes(data[:-8])
    with pytest.raises(LoadError, match="truncated"):
        load_snapshot(tmp_path / "t.bin")
