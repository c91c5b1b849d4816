import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtdfl import tensorkit as tk
from mtdfl.errors import AggregationError, TrainingError


def test_dense_forward_zero_weights_broadcasts_bias():
    layer = tk.DenseLayer(np.zeros((3, 2)), np.array([1.5, -0.5]), "identity")
    net = tk.DenseNet([layer])
    out = net.predict(np.ones((4, 3)))
    assert np.allclose(out, [[1.5, -0.5]] * 4)


def test_dense_forward_affine_arithmetic():
    layer = tk.DenseLayer(np.array([[2.0]]), np.array([1.0]), "identity")
    out = tk.DenseNet([layer]).predict(np.array([[3.0]]))
    assert out[0, 0] == pytest.approx(7.0)


def test_softmax_symmetry():
    assert np.allclose(tk.softmax(np.array([[0.0, 0.0]])), [[0.5, 0.5]])


@given(
    st.lists(st.floats(min_value=-30, max_value=30), min_size=2, max_size=6),
    st.floats(min_value=-50, max_value=50),
)
def test_softmax_sums_to_one_and_shift_invariant(logits, shift):
    row = np.array([logits])
    p = tk.softmax(row)
    assert p.sum() == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(tk.softmax(row + shift), p, atol=1e-12)


def test_mse_values():
    assert tk.mse_loss(np.array([1.0]), np.array([1.0])) == 0.0
    assert tk.mse_loss(np.array([0.0, 2.0]), np.array([1.0, 0.0])) == pytest.approx(2.5)


def test_cross_entropy_uniform_is_ln2():
    loss = tk.cross_entropy_loss(np.array([[0.5, 0.5]]), np.array([0]))
    assert loss == pytest.approx(np.log(2.0), rel=1e-12)


def test_gru_zero_weights_convention():
    # All-zero parameters pin the gate convention: z=0.5, candidate=0,
    # so the new state is half the old one.
    rng = np.random.default_rng(0)
    cell = tk.GruCell.new(rng, 1, 1)
    for p in cell.param_dict().values():
        p[...] = 0.0
    h, _ = cell.step(np.array([[0.3]]), np.array([[0.8]]))
    assert h[0, 0] == pytest.approx(0.4, rel=1e-12)


def test_gru_zero_state_fixed_point():
    rng = np.random.default_rng(1)
    cell = tk.GruCell.new(rng, 2, 3)
    for p in cell.param_dict().values():
        p[...] = 0.0
    h, _ = cell.step(np.zeros((1, 2)), np.zeros((1, 3)))
    assert np.allclose(h, 0.0)


def test_gru_saturated_update_gate_opens_onto_zero_candidate():
    rng = np.random.default_rng(2)
    cell = tk.GruCell.new(rng, 1, 1)
    for p in cell.param_dict().values():
        p[...] = 0.0
    cell.param_dict()["bz"][...] = 30.0  # sigmoid(30) ~ 1
    h, _ = cell.step(np.array([[0.5]]), np.array([[0.9]]))
    assert abs(h[0, 0]) < 1e-10


@given(st.lists(st.floats(min_value=-0.99, max_value=0.99), min_size=2, max_size=4))
@settings(max_examples=50)
def test_gru_output_stays_in_unit_box(h_vals):
    rng = np.random.default_rng(3)
    cell = tk.GruCell.new(rng, 2, len(h_vals))
    h = np.array([h_vals])
    x = rng.normal(size=(1, 2))
    h_new, _ = cell.step(x, h)
    assert np.all(np.abs(h_new) < 1.0)


def test_sgd_step_and_zero_grad():
    params = {"w": np.array([1.0])}
    opt = tk.Sgd(0.1)
    opt.step(params, {"w": np.array([2.0])})
    assert params["w"][0] == pytest.approx(0.8)
    before = params["w"].copy()
    opt.step(params, {"w": np.zeros(1)})
    assert np.array_equal(params["w"], before)


def test_adam_first_step_magnitude_is_learning_rate():
    # Bias correction makes the first update lr * g/|g| up to eps.
    for g in (0.5, -3.0, 1e-3):
        params = {"w": np.array([1.0])}
        opt = tk.Adam(learning_rate=0.01)
        opt.step(params, {"w": np.array([g])})
        assert abs(params["w"][0] - 1.0) == pytest.approx(0.01, rel=1e-4)


def test_adam_zero_gradient_keeps_params():
    params = {"w": np.array([1.0, -2.0])}
    opt = tk.Adam()
    opt.step(params, {"w": np.zeros(2)})
    assert np.array_equal(params["w"], np.array([1.0, -2.0]))


def test_nonfinite_gradient_raises():
    params = {"w": np.array([1.0])}
    with pytest.raises(TrainingError):
        tk.Sgd(0.1).step(params, {"w": np.array([np.nan])})


def test_optimizer_determinism():
    def run():
        rng = np.random.default_rng(11)
        net = tk.DenseNet.new(rng, [3, 4, 2], ["relu", "softmax"])
        opt = tk.Adam(1e-2)
        x = np.random.default_rng(5).normal(size=(8, 3))
        y = np.array([0, 1] * 4)
        for _ in range(20):
            probs, caches = net.forward(x)
            dprobs = tk.cross_entropy_grad(probs, y)
            grads, _ = net.backward(caches, dprobs)
            opt.step(net.param_dict(), grads)
        return {k: v.copy() for k, v in net.param_dict().items()}

    a, b = run(), run()
    for name in a:
        assert np.array_equal(a[name], b[name])


def _dense_loss_and_grads(net, x, y):
    def loss_fn():
        probs, _ = net.forward(x)
        return tk.cross_entropy_loss(probs, y)

    probs, caches = net.forward(x)
    grads, _ = net.backward(caches, tk.cross_entropy_grad(probs, y))
    return loss_fn, grads


def test_grad_check_dense_two_layer():
    rng = np.random.default_rng(7)
    net = tk.DenseNet.new(rng, [4, 5, 2], ["relu", "softmax"])
    x = rng.normal(size=(3, 4))
    y = np.array([0, 1, 0])
    loss_fn, grads = _dense_loss_and_grads(net, x, y)
    assert tk.grad_check(net.param_dict(), loss_fn, grads) <= 1e-4


def test_grad_check_dense_softmax_hidden_layer():
    # The Q-networks use a softmax hidden activation with linear heads.
    rng = np.random.default_rng(8)
    net = tk.DenseNet.new(rng, [6, 5, 2], ["softmax", "identity"])
    x = rng.normal(size=(2, 6))
    target = rng.normal(size=(2, 2))

    def loss_fn():
        out, _ = net.forward(x)
        return tk.mse_loss(out, target)

    out, caches = net.forward(x)
    grads, _ = net.backward(caches, tk.mse_grad(out, target))
    assert tk.grad_check(net.param_dict(), loss_fn, grads) <= 1e-4


@pytest.mark.parametrize("arch", ["gru", "lstm"])
def test_grad_check_recurrent_three_steps(arch):
    rng = np.random.default_rng(7)
    model = tk.RecurrentClassifier.new(rng, arch, input_width=3, hidden_width=4)
    x = rng.normal(size=(2, 3, 3))
    y = np.array([1, 0])

    def loss_fn():
        probs, _ = model.forward(x)
        onehot = np.zeros_like(probs)
        onehot[np.arange(2), y] = 1.0
        return tk.mse_loss(probs, onehot)

    probs, cache = model.forward(x)
    onehot = np.zeros_like(probs)
    onehot[np.arange(2), y] = 1.0
    grads = model.backward(cache, tk.mse_grad(probs, onehot))
    assert tk.grad_check(model.param_dict(), loss_fn, grads) <= 1e-4


def test_grad_check_zero_parameter_model():
    assert tk.grad_check({}, lambda: 0.0, {}) == 0.0


def test_checkpoint_roundtrip_and_shape_rejection(tmp_path):
    rng = np.random.default_rng(9)
    net = tk.DenseNet.new(rng, [3, 4, 2], ["relu", "softmax"])
    path = tmp_path / "model.json"
    tk.save_params(path, "dense", net.param_dict(), meta={"widths": [3, 4, 2]})
    kind, meta, params = tk.load_params(path, expect_kind="dense")
    assert kind == "dense" and meta["widths"] == [3, 4, 2]
    clone = tk.DenseNet.new(np.random.default_rng(1), [3, 4, 2], ["relu", "softmax"])
    clone.load_param_dict(params)
    x = rng.normal(size=(2, 3))
    assert np.allclose(net.predict(x), clone.predict(x))

    wrong = tk.DenseNet.new(np.random.default_rng(1), [3, 5, 2], ["relu", "softmax"])
    with pytest.raises(AggregationError):
        wrong.load_param_dict(params)


def test_checkpoint_rejects_corrupt_payload(tmp_path):
    from mtdfl.errors import CheckpointError

    path = tmp_path / "bad.json"
    path.write_text('{"format": "mtdfl-checkpoint", "version": 1, "arrays": '
                    '[{"name": "w", "shape": [2, 2], "data": [1.0, 2.0]}]}')
    with pytest.raises(CheckpointError):
        tk.load_params(path)


def test_shape_mismatch_raises():
    rng = np.random.default_rng(0)
    net = tk.DenseNet.new(rng, [3, 2], ["identity"])
    with pytest.raises(AggregationError):
        net.forward(np.zeros((1, 4)))
