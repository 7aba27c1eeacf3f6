import numpy as np
import pytest
from scipy import signal

from tograsp.tensorcore import (
    CorruptWeights,
    LayerSpec,
    Network,
    ShapeMismatch,
    StaleCache,
    adam_state,
    gradient_check,
    load_network,
    mse_loss,
    optimizer_step,
    save_network,
    sigmoid_ce_loss,
    WEIGHT_MAGIC,
)


def mse_on(name):
    def loss_fn(out):
        y = out[name]
        loss, g = mse_loss(y, np.zeros_like(y))
        return loss, {name: g}

    return loss_fn


# ---------------------------------------------------------------------------
# forward correctness
# ---------------------------------------------------------------------------


def test_dense_forward_matches_matmul():
    net = Network([LayerSpec("fc", "dense", ["x"], units=4)], {"x": (3,)}, ["fc"], seed=1)
    x = np.random.default_rng(0).normal(size=(5, 3))
    out = net.forward({"x": x})["fc"]
    expected = x @ net.params["fc.w"] + net.params["fc.b"]
    np.testing.assert_allclose(out, expected, rtol=0, atol=0)


@pytest.mark.parametrize("stride,padding", [(1, 0), (1, 1), (2, 1), (2, 0)])
def test_conv2d_matches_scipy(stride, padding):
    net = Network(
        [LayerSpec("cv", "conv2d", ["x"], channels=3, kernel=3, stride=stride, padding=padding)],
        {"x": (2, 7, 6)},
        ["cv"],
        seed=7,
    )
    rng = np.random.default_rng(3)
    x = rng.normal(size=(4, 2, 7, 6))
    out = net.forward({"x": x})["cv"]
    w = net.params["cv.w"]
    b = net.params["cv.b"]
    for n in range(4):
        for f in range(3):
            xp = np.pad(x[n], ((0, 0), (padding, padding), (padding, padding)))
            acc = sum(signal.correlate2d(xp[c], w[f, c], mode="valid") for c in range(2))
            expected = acc[::stride, ::stride] + b[f]
            np.testing.assert_allclose(out[n, f], expected, atol=1e-12)


def test_conv3d_matches_bruteforce():
    net = Network(
        [LayerSpec("cv", "conv3d", ["x"], channels=2, kernel=3, stride=2, padding=1)],
        {"x": (2, 5, 4, 6)},
        ["cv"],
        seed=5,
    )
    rng = np.random.default_rng(11)
    x = rng.normal(size=(2, 2, 5, 4, 6))
    out = net.forward({"x": x})["cv"]
    w = net.params["cv.w"]
    b = net.params["cv.b"]
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1), (1, 1)))
    expected = np.zeros_like(out)
    for n in range(2):
        for f in range(2):
            for d in range(out.shape[2]):
                for i in range(out.shape[3]):
                    for j in range(out.shape[4]):
                        patch = xp[n, :, 2 * d : 2 * d + 3, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3]
                        expected[n, f, d, i, j] = np.sum(patch * w[f]) + b[f]
    np.testing.assert_allclose(out, expected, atol=1e-12)


def test_conv2d_impulse_reads_out_kernel():
    # cross-correlation of a centered delta reproduces the kernel
    # mirrored in both spatial axes
    net = Network(
        [LayerSpec("cv", "conv2d", ["x"], channels=1, kernel=3, stride=1, padding=1)],
        {"x": (1, 5, 5)},
        ["cv"],
        seed=2,
    )
    x = np.zeros((1, 1, 5, 5))
    x[0, 0, 2, 2] = 1.0
    out = net.forward({"x": x})["cv"][0, 0]
    w = net.params["cv.w"][0, 0]
    np.testing.assert_allclose(out[1:4, 1:4], w[::-1, ::-1] + net.params["cv.b"][0], atol=1e-15)


def test_flatten_and_concat():
    specs = [
        LayerSpec("fa", "flatten", ["a"]),
        LayerSpec("fb", "flatten", ["b"]),
        LayerSpec("cat", "concat", ["fa", "fb"]),
    ]
    net = Network(specs, {"a": (2, 3), "b": (4,)}, ["cat"])
    a = np.arange(12.0).reshape(2, 2, 3)
    b = np.arange(8.0).reshape(2, 4) + 100
    out = net.forward({"a": a, "b": b})["cat"]
    assert out.shape == (2, 10)
    np.testing.assert_array_equal(out[:, :6], a.reshape(2, 6))
    np.testing.assert_array_equal(out[:, 6:], b)


def test_sigmoid_extremes_stable():
    net = Network([LayerSpec("s", "sigmoid", ["x"])], {"x": (3,)}, ["s"])
    x = np.array([[-1000.0, 0.0, 1000.0]])
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        out = net.forward({"x": x})["s"]
    np.testing.assert_allclose(out, [[0.0, 0.5, 1.0]], atol=1e-12)


def test_relu_forward():
    net = Network([LayerSpec("r", "relu", ["x"])], {"x": (4,)}, ["r"])
    x = np.array([[-2.0, -0.5, 0.0, 3.0]])
    np.testing.assert_array_equal(net.forward({"x": x})["r"], [[0.0, 0.0, 0.0, 3.0]])


# ---------------------------------------------------------------------------
# shape and graph validation
# ---------------------------------------------------------------------------


def test_bad_input_shape_raises():
    net = Network([LayerSpec("fc", "dense", ["x"], units=2)], {"x": (3,)}, ["fc"])
    with pytest.raises(ShapeMismatch):
        net.forward({"x": np.zeros((2, 4))})
    with pytest.raises(ShapeMismatch):
        net.forward({"x": np.zeros(3)})


def test_unknown_reference_rejected():
    with pytest.raises(ValueError):
        Network([LayerSpec("fc", "dense", ["nope"], units=2)], {"x": (3,)}, ["fc"])
    with pytest.raises(ValueError):
        Network([LayerSpec("fc", "dense", ["x"], units=2)], {"x": (3,)}, ["other"])


def test_mismatched_batch_sizes_raise():
    specs = [
        LayerSpec("ca", "concat", ["a", "b"]),
    ]
    net = Network(specs, {"a": (2,), "b": (3,)}, ["ca"])
    with pytest.raises(ShapeMismatch):
        net.forward({"a": np.zeros((2, 2)), "b": np.zeros((3, 3))})


# ---------------------------------------------------------------------------
# gradients
# ---------------------------------------------------------------------------


def tiny_conv_net(seed=0):
    specs = [
        LayerSpec("c1", "conv2d", ["img"], channels=2, kernel=3, stride=2, padding=1),
        LayerSpec("r1", "relu", ["c1"]),
        LayerSpec("fl", "flatten", ["r1"]),
        LayerSpec("fc", "dense", ["fl"], units=3),
        LayerSpec("sg", "sigmoid", ["fc"]),
    ]
    return Network(specs, {"img": (2, 6, 6)}, ["sg"], seed=seed)


def test_gradient_check_dense_stack():
    specs = [
        LayerSpec("f1", "dense", ["x"], units=5),
        LayerSpec("r", "relu", ["f1"]),
        LayerSpec("f2", "dense", ["r"], units=2),
    ]
    net = Network(specs, {"x": (4,)}, ["f2"], seed=3)
    x = np.random.default_rng(1).normal(size=(3, 4))
    worst, _ = gradient_check(net, {"x": x}, mse_on("f2"))
    assert worst < 1e-4


def test_gradient_check_conv2d_pipeline():
    net = tiny_conv_net(seed=4)
    x = np.random.default_rng(2).normal(size=(2, 2, 6, 6))
    worst, _ = gradient_check(net, {"img": x}, mse_on("sg"))
    assert worst < 1e-4


def test_gradient_check_conv3d():
    specs = [
        LayerSpec("c", "conv3d", ["v"], channels=2, kernel=3, stride=2, padding=1),
        LayerSpec("fl", "flatten", ["c"]),
        LayerSpec("fc", "dense", ["fl"], units=1),
    ]
    net = Network(specs, {"v": (1, 4, 4, 4)}, ["fc"], seed=6)
    x = np.random.default_rng(5).normal(size=(2, 1, 4, 4, 4))
    worst, _ = gradient_check(net, {"v": x}, mse_on("fc"))
    assert worst < 1e-4


def test_gradient_check_concat_two_branches():
    specs = [
        LayerSpec("fa", "dense", ["a"], units=3),
        LayerSpec("fb", "dense", ["b"], units=2),
        LayerSpec("cat", "concat", ["fa", "fb"]),
        LayerSpec("out", "dense", ["cat"], units=1),
    ]
    net = Network(specs, {"a": (2,), "b": (3,)}, ["out"], seed=8)
    rng = np.random.default_rng(8)
    ins = {"a": rng.normal(size=(4, 2)), "b": rng.normal(size=(4, 3))}
    worst, _ = gradient_check(net, ins, mse_on("out"))
    assert worst < 1e-4


def test_gradient_check_shared_trunk_two_heads():
    specs = [
        LayerSpec("trunk", "dense", ["x"], units=4),
        LayerSpec("tr", "relu", ["trunk"]),
        LayerSpec("h1", "dense", ["tr"], units=2),
        LayerSpec("h2", "dense", ["tr"], units=3),
    ]
    net = Network(specs, {"x": (3,)}, ["h1", "h2"], seed=9)
    x = np.random.default_rng(9).normal(size=(2, 3))

    def loss_fn(out):
        l1, g1 = mse_loss(out["h1"], np.zeros_like(out["h1"]))
        l2, g2 = mse_loss(out["h2"], np.ones_like(out["h2"]))
        return l1 + l2, {"h1": g1, "h2": g2}

    worst, _ = gradient_check(net, {"x": x}, loss_fn)
    assert worst < 1e-4


def test_negative_control_detects_wrong_gradient():
    net = tiny_conv_net(seed=10)
    x = np.random.default_rng(4).normal(size=(2, 2, 6, 6))

    def flipped(out):
        loss, g = mse_loss(out["sg"], np.zeros_like(out["sg"]))
        return loss, {"sg": -g}

    worst, _ = gradient_check(net, {"img": x}, flipped)
    assert worst > 1e-2


def test_dropout_train_gradient_manual_fd():
    specs = [
        LayerSpec("f1", "dense", ["x"], units=6),
        LayerSpec("dp", "dropout", ["f1"], rate=0.5),
        LayerSpec("f2", "dense", ["dp"], units=1),
    ]
    net = Network(specs, {"x": (3,)}, ["f2"], seed=12)
    x = np.random.default_rng(12).normal(size=(4, 3))

    def run():
        out = net.forward({"x": x}, train=True, dropout_seed=77)
        return mse_loss(out["f2"], np.zeros_like(out["f2"]))

    _, g = run()
    analytic = net.backward({"f2": g})
    h = 1e-4
    for key in ("f1.w", "f2.w"):
        flat = net.params[key].reshape(-1)
        an = analytic[key].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp, _ = run()
            flat[i] = orig - h
            lm, _ = run()
            flat[i] = orig
            fd = (lp - lm) / (2 * h)
            assert abs(fd - an[i]) / max(abs(fd), abs(an[i]), 1e-8) < 1e-4


def test_partial_loss_grads_zero_unused_head():
    specs = [
        LayerSpec("trunk", "dense", ["x"], units=4),
        LayerSpec("h1", "dense", ["trunk"], units=2),
        LayerSpec("h2", "dense", ["trunk"], units=2),
    ]
    net = Network(specs, {"x": (3,)}, ["h1", "h2"], seed=13)
    x = np.random.default_rng(13).normal(size=(2, 3))
    out = net.forward({"x": x})
    _, g1 = mse_loss(out["h1"], np.zeros_like(out["h1"]))
    grads = net.backward({"h1": g1})
    assert np.all(grads["h2.w"] == 0.0)
    assert np.all(grads["h2.b"] == 0.0)
    assert np.any(grads["trunk.w"] != 0.0)


def test_input_gradients_exposed():
    net = Network([LayerSpec("fc", "dense", ["x"], units=1)], {"x": (3,)}, ["fc"], seed=14)
    x = np.random.default_rng(14).normal(size=(2, 3))
    out = net.forward({"x": x})
    _, g = mse_loss(out["fc"], np.zeros_like(out["fc"]))
    net.backward({"fc": g})
    np.testing.assert_allclose(net.input_grads["x"], g @ net.params["fc.w"].T)


# ---------------------------------------------------------------------------
# cache discipline
# ---------------------------------------------------------------------------


def test_backward_without_forward_raises():
    net = Network([LayerSpec("fc", "dense", ["x"], units=1)], {"x": (2,)}, ["fc"])
    with pytest.raises(StaleCache):
        net.backward({"fc": np.zeros((1, 1))})


def test_mutated_input_raises_stale_cache():
    net = Network([LayerSpec("fc", "dense", ["x"], units=1)], {"x": (2,)}, ["fc"])
    x = np.ones((3, 2))
    out = net.forward({"x": x})
    _, g = mse_loss(out["fc"], np.zeros_like(out["fc"]))
    x[0, 0] = 99.0
    with pytest.raises(StaleCache):
        net.backward({"fc": g})


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------


def test_mse_value_and_gradient():
    loss, g = mse_loss(np.array([[2.0]]), np.array([[0.0]]))
    assert loss == 4.0
    np.testing.assert_array_equal(g, [[4.0]])
    # mean over elements: two entries halve the per-entry gradient
    loss2, g2 = mse_loss(np.array([[2.0, 2.0]]), np.zeros((1, 2)))
    assert loss2 == 4.0
    np.testing.assert_array_equal(g2, [[2.0, 2.0]])


def test_sigmoid_ce_known_value():
    loss, g = sigmoid_ce_loss(np.array([[0.0]]), np.array([[1.0]]))
    np.testing.assert_allclose(loss, np.log(2.0), rtol=1e-15)
    np.testing.assert_allclose(g, [[-0.5]], rtol=1e-15)


def test_sigmoid_ce_extreme_logits_finite():
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        loss, g = sigmoid_ce_loss(np.array([[-1000.0, 1000.0]]), np.array([[0.0, 1.0]]))
    assert loss == 0.0
    np.testing.assert_allclose(g, [[0.0, 0.0]], atol=1e-12)
    with np.errstate(over="raise", invalid="raise", divide="raise"):
        loss_bad, _ = sigmoid_ce_loss(np.array([[1000.0]]), np.array([[0.0]]))
    np.testing.assert_allclose(loss_bad, 1000.0, rtol=1e-12)


def test_loss_gradients_match_fd():
    rng = np.random.default_rng(20)
    x = rng.normal(size=(3, 4))
    t = rng.normal(size=(3, 4))
    y = (rng.random((3, 4)) > 0.5).astype(float)
    h = 1e-6
    for fn, target in ((mse_loss, t), (sigmoid_ce_loss, y)):
        _, g = fn(x, target)
        for idx in np.ndindex(x.shape):
            xp = x.copy()
            xp[idx] += h
            xm = x.copy()
            xm[idx] -= h
            fd = (fn(xp, target)[0] - fn(xm, target)[0]) / (2 * h)
            np.testing.assert_allclose(g[idx], fd, rtol=1e-5, atol=1e-9)


# ---------------------------------------------------------------------------
# optimizer
# ---------------------------------------------------------------------------


def test_adam_first_step_magnitude():
    params = {"p": np.array([1.0, -1.0])}
    state = adam_state(params)
    g = np.array([0.5, -2.0])
    optimizer_step(params, {"p": g}, state, lr=1e-3)
    # bias-corrected first step moves each weight by almost exactly lr
    # against the gradient sign
    expected = np.array([1.0, -1.0]) - 1e-3 * np.sign(g) * (np.abs(g) / (np.abs(g) + 1e-8))
    np.testing.assert_allclose(params["p"], expected.astype(np.float32), rtol=1e-6)
    assert state["t"] == 1


def test_adam_zero_gradient_is_noop():
    params = {"p": np.array([0.25, -0.125])}
    state = adam_state(params)
    before = params["p"].copy()
    optimizer_step(params, {"p": np.zeros(2)}, state)
    np.testing.assert_array_equal(params["p"], before)


def test_adam_converges_on_quadratic():
    params = {"p": np.array([5.0, -3.0])}
    state = adam_state(params)
    for _ in range(4000):
        g = 2.0 * params["p"]
        optimizer_step(params, {"p": g}, state, lr=1e-2)
    np.testing.assert_allclose(params["p"], [0.0, 0.0], atol=1e-3)


def test_adam_subset_keys_leave_rest_alone():
    params = {"a": np.array([1.0]), "b": np.array([1.0])}
    state = adam_state(params)
    grads = {"a": np.array([1.0]), "b": np.array([1.0])}
    optimizer_step(params, grads, state, keys=["a"])
    assert params["a"][0] != 1.0
    assert params["b"][0] == 1.0


def test_params_stay_on_float32_grid():
    net = tiny_conv_net(seed=21)
    for v in net.params.values():
        np.testing.assert_array_equal(v, v.astype(np.float32).astype(np.float64))
    x = np.random.default_rng(21).normal(size=(2, 2, 6, 6))
    out = net.forward({"img": x})
    _, g = mse_loss(out["sg"], np.zeros_like(out["sg"]))
    grads = net.backward({"sg": g})
    state = adam_state(net.params)
    optimizer_step(net.params, grads, state)
    for v in net.params.values():
        np.testing.assert_array_equal(v, v.astype(np.float32).astype(np.float64))


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def test_save_load_bit_exact(tmp_path):
    net = tiny_conv_net(seed=30)
    x = np.random.default_rng(30).normal(size=(3, 2, 6, 6))
    before = net.forward({"img": x})["sg"]
    path = tmp_path / "net.tgw"
    save_network(net, path)
    loaded = load_network(path)
    after = loaded.forward({"img": x})["sg"]
    np.testing.assert_array_equal(before, after)
    for k in net.params:
        np.testing.assert_array_equal(net.params[k], loaded.params[k])


def test_weight_file_magic(tmp_path):
    path = tmp_path / "net.tgw"
    net = Network([LayerSpec("fc", "dense", ["x"], units=1)], {"x": (2,)}, ["fc"])
    save_network(net, path)
    raw = path.read_bytes()
    assert raw[:4] == WEIGHT_MAGIC
    bad = tmp_path / "bad.tgw"
    bad.write_bytes(b"XXXX" + raw[4:])
    with pytest.raises(CorruptWeights):
        load_network(bad)


def test_truncated_weight_file_rejected(tmp_path):
    path = tmp_path / "net.tgw"
    net = Network([LayerSpec("fc", "dense", ["x"], units=3)], {"x": (4,)}, ["fc"])
    save_network(net, path)
    raw = path.read_bytes()
    cut = tmp_path / "cut.tgw"
    cut.write_bytes(raw[:-5])
    with pytest.raises(CorruptWeights):
        load_network(cut)
    tail = tmp_path / "tail.tgw"
    tail.write_bytes(raw + b"\x00\x00\x00\x00")
    with pytest.raises(CorruptWeights):
        load_network(tail)


# ---------------------------------------------------------------------------
# determinism
# ---------------------------------------------------------------------------


def test_same_seed_same_init():
    a = tiny_conv_net(seed=42)
    b = tiny_conv_net(seed=42)
    c = tiny_conv_net(seed=43)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    assert any(not np.array_equal(a.params[k], c.params[k]) for k in a.params)


def test_dropout_seeded_and_eval_identity():
    specs = [LayerSpec("dp", "dropout", ["x"], rate=0.4)]
    net = Network(specs, {"x": (200,)}, ["dp"])
    x = np.ones((2, 200))
    e = net.forward({"x": x})["dp"]
    np.testing.assert_array_equal(e, x)
    a = net.forward({"x": x}, train=True, dropout_seed=5)["dp"]
    b = net.forward({"x": x}, train=True, dropout_seed=5)["dp"]
    c = net.forward({"x": x}, train=True, dropout_seed=6)["dp"]
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)
    # mask only: survivors keep their value, no 1/(1-rate) rescale
    assert set(np.unique(a)) <= {0.0, 1.0}
    drop_frac = float((a == 0.0).mean())
    assert 0.3 < drop_frac < 0.5


# ---------------------------------------------------------------------------
# closed-form and oracle spot checks
# ---------------------------------------------------------------------------


def test_identity_network_passes_input_through():
    net = Network([], {"x": (3,)}, ["x"])
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(net.forward({"x": x})["x"], x)


def test_zero_dense_outputs_zero():
    net = Network([LayerSpec("fc", "dense", ["x"], units=4)], {"x": (3,)}, ["fc"], seed=5)
    net.params["fc.w"][:] = 0.0
    net.params["fc.b"][:] = 0.0
    out = net.forward({"x": np.random.default_rng(0).normal(size=(2, 3))})["fc"]
    np.testing.assert_array_equal(out, np.zeros((2, 4)))


def test_dense_weight_gradient_closed_form():
    net = Network([LayerSpec("fc", "dense", ["x"], units=2)], {"x": (3,)}, ["fc"], seed=15)
    rng = np.random.default_rng(15)
    x = rng.normal(size=(4, 3))
    g = rng.normal(size=(4, 2))
    net.forward({"x": x})
    grads = net.backward({"fc": g})
    np.testing.assert_allclose(grads["fc.w"], x.T @ g, atol=1e-12)
    np.testing.assert_allclose(grads["fc.b"], g.sum(axis=0), atol=1e-12)


def test_mse_trivial_values():
    x = np.random.default_rng(1).normal(size=(3, 5))
    loss, g = mse_loss(x, x)
    assert loss == 0.0
    np.testing.assert_array_equal(g, np.zeros_like(x))
    loss1, _ = mse_loss(x + 1.0, x)
    np.testing.assert_allclose(loss1, 1.0, rtol=1e-12)


def test_conv3d_impulse_reads_out_mirrored_kernel():
    net = Network(
        [LayerSpec("cv", "conv3d", ["x"], channels=1, kernel=3, stride=1, padding=1)],
        {"x": (1, 5, 5, 5)},
        ["cv"],
        seed=17,
    )
    net.params["cv.b"][:] = 0.0
    x = np.zeros((1, 1, 5, 5, 5))
    x[0, 0, 2, 2, 2] = 1.0
    out = net.forward({"x": x})["cv"][0, 0]
    w = net.params["cv.w"][0, 0]
    np.testing.assert_allclose(out[1:4, 1:4, 1:4], w[::-1, ::-1, ::-1], atol=1e-15)


def test_adam_quadratic_bowl_spec_settings():
    params = {"x": np.ones(4)}
    state = adam_state(params)
    for _ in range(500):
        optimizer_step(params, {"x": 2.0 * params["x"]}, state, lr=0.05)
    assert np.linalg.norm(params["x"]) < 1e-3


def test_gradient_check_exactly_linear_net():
    # loss is quadratic in the parameters, so central differences are
    # exact up to rounding
    net = Network([LayerSpec("fc", "dense", ["x"], units=2)], {"x": (3,)}, ["fc"], seed=19)
    x = np.random.default_rng(19).normal(size=(4, 3))
    worst, _ = gradient_check(net, {"x": x}, mse_on("fc"))
    assert worst < 1e-8


def test_gradient_check_relu_away_from_kink():
    specs = [
        LayerSpec("f1", "dense", ["x"], units=5),
        LayerSpec("r", "relu", ["f1"]),
        LayerSpec("f2", "dense", ["r"], units=2),
    ]
    net = Network(specs, {"x": (4,)}, ["f2"], seed=23)
    x = np.random.default_rng(23).normal(size=(3, 4))
    # finite differences are only trustworthy away from the relu kink
    pre_act = x @ net.params["f1.w"] + net.params["f1.b"]
    assert np.min(np.abs(pre_act)) > 1e-3
    worst, _ = gradient_check(net, {"x": x}, mse_on("f2"))
    assert worst < 1e-4


def test_sigmoid_ce_matches_longdouble_reference():
    rng = np.random.default_rng(31)
    x = rng.normal(scale=4.0, size=(5, 7))
    y = (rng.random((5, 7)) > 0.5).astype(float)
    loss, _ = sigmoid_ce_loss(x, y)
    xl = x.astype(np.longdouble)
    sig = 1.0 / (1.0 + np.exp(-xl))
    ref = -(y * np.log(sig) + (1.0 - y) * np.log1p(-sig)).mean()
    np.testing.assert_allclose(loss, float(ref), rtol=1e-12)


def test_gradient_check_sigmoid_ce_pipeline():
    net = tiny_conv_net(seed=33)
    x = np.random.default_rng(6).normal(size=(2, 2, 6, 6))
    labels = np.array([[1.0, 0.0, 1.0], [0.0, 1.0, 0.0]])

    def loss_fn(out):
        # the net's final sigmoid is bypassed: CE consumes the dense
        # logits directly
        loss, g = sigmoid_ce_loss(out["fc"], labels)
        return loss, {"fc": g}

    net_logits = Network(net.specs[:-1], {"img": (2, 6, 6)}, ["fc"], seed=33)
    worst, _ = gradient_check(net_logits, {"img": x}, loss_fn)
    assert worst < 1e-4
