import struct

import numpy as np
import pytest

from handverify import neuralnet as nn
from handverify.errors import ContractError, FormatError, ShapeError

from gradcheck import max_fd_relative_error, model_zoo


def test_infer_shapes_chain():
    spec = [nn.conv2d(8), nn.maxpool(), nn.flatten(), nn.dense(5), nn.softmax()]
    shapes = nn.infer_shapes(spec, (1, 16, 16))
    assert shapes == [(8, 16, 16), (8, 8, 8), (512,), (5,), (5,)]
    valid = nn.infer_shapes([nn.conv2d(2, padding="valid")], (3, 7, 9))
    assert valid == [(2, 5, 7)]


def test_infer_shapes_errors_name_layer():
    with pytest.raises(ShapeError, match="layer 0 .conv2d."):
        nn.infer_shapes([nn.conv2d(4)], (16,))
    with pytest.raises(ShapeError, match="layer 1 .maxpool2x2."):
        nn.infer_shapes([nn.conv2d(4), nn.maxpool()], (1, 5, 6))
    with pytest.raises(ShapeError, match="layer 0 .dense."):
        nn.infer_shapes([nn.dense(4)], (2, 3))
    with pytest.raises(ShapeError, match="reshape"):
        nn.infer_shapes([nn.reshape(2, 3)], (7,))
    with pytest.raises(ShapeError):
        nn.conv2d(4, padding="full")


def test_dense_identity_forward_and_backward():
    spec = [nn.dense(4)]
    params = {"layer0.w": np.eye(4), "layer0.b": np.zeros(4)}
    x = np.array([[1.0, -2.0, 3.0, 0.5], [0.0, 1.0, 2.0, 3.0]])
    y, cache = nn.forward(spec, params, x)
    assert np.array_equal(y, x)
    upstream = np.array([[1.0, 2.0, 3.0, 4.0], [-1.0, 0.0, 1.0, 0.0]])
    grads, dx = nn.backward(cache, upstream)
    assert np.array_equal(dx, upstream)
    assert np.array_equal(grads["layer0.b"], upstream.sum(axis=0))


def test_conv_all_ones_kernel_constant_input():
    spec = [nn.conv2d(1)]
    params = {
        "layer0.w": np.ones((1, 1, 3, 3)),
        "layer0.b": np.zeros(1),
    }
    c = 0.7
    x = np.full((1, 1, 6, 6), c)
    y, _ = nn.forward(spec, params, x)
    assert np.allclose(y[0, 0, 1:-1, 1:-1], 9 * c)
    assert np.allclose(y[0, 0, 0, 0], 4 * c)  # zero padded corner


def test_maxpool_window_example():
    x = np.array([[1.0, 2.0], [3.0, 4.0]]).reshape(1, 1, 2, 2)
    y, _ = nn.forward([nn.maxpool()], {}, x)
    assert y.reshape(()) == 4.0


def test_maxpool_matches_argmax_reference():
    rng = np.random.default_rng(880)
    for _ in range(200):
        b = int(rng.integers(1, 3))
        c = int(rng.integers(1, 4))
        h = int(rng.integers(1, 5)) * 2
        w = int(rng.integers(1, 5)) * 2
        # integer-valued inputs force frequent ties inside windows
        x = rng.integers(0, 3, size=(b, c, h, w)).astype(np.float64)
        y, cache = nn.forward([nn.maxpool()], {}, x)
        dy = rng.standard_normal(y.shape)
        _, dx = nn.backward(cache, dy)
        for bi in range(b):
            for ci in range(c):
                for wy in range(h // 2):
                    for wx in range(w // 2):
                        win = x[bi, ci, 2 * wy : 2 * wy + 2, 2 * wx : 2 * wx + 2]
                        flat = win.reshape(-1)
                        pick = int(np.argmax(flat))  # first max in scan order
                        assert y[bi, ci, wy, wx] == flat[pick]
                        dwin = dx[
                            bi, ci, 2 * wy : 2 * wy + 2, 2 * wx : 2 * wx + 2
                        ].reshape(-1)
                        want = np.zeros(4)
                        want[pick] = dy[bi, ci, wy, wx]
                        assert np.array_equal(dwin, want)


def test_forward_requires_batch_and_matching_channels():
    with pytest.raises(ShapeError):
        nn.forward([nn.dense(3)], {"layer0.w": np.eye(3), "layer0.b": np.zeros(3)},
                   np.zeros(3))
    params = {"layer0.w": np.zeros((4, 2, 3, 3)), "layer0.b": np.zeros(4)}
    with pytest.raises(ShapeError, match="layer 0"):
        nn.forward([nn.conv2d(4)], params, np.zeros((1, 3, 8, 8)))


def test_backward_contract_errors():
    spec = [nn.dense(2)]
    params = {"layer0.w": np.eye(2), "layer0.b": np.zeros(2)}
    y, cache = nn.forward(spec, params, np.zeros((3, 2)))
    with pytest.raises(ContractError):
        nn.backward(cache, np.zeros((2, 2)))
    with pytest.raises(ContractError):
        nn.backward({"valid": False}, np.zeros((3, 2)))
    with pytest.raises(ContractError):
        nn.backward("not a cache", np.zeros((3, 2)))


def test_softmax_cce_combined_gradient():
    y, cache = nn.forward([nn.softmax()], {}, np.zeros((1, 2)))
    assert np.allclose(y, [[0.5, 0.5]])
    loss, dprobs = nn.cce_loss_mean(y, np.array([0]))
    assert loss == pytest.approx(np.log(2.0))
    _, dlogits = nn.backward(cache, dprobs)
    assert np.allclose(dlogits, [[-0.5, 0.5]])


def test_softmax_properties():
    rng = np.random.default_rng(881)
    for _ in range(200):
        b = int(rng.integers(1, 5))
        k = int(rng.integers(2, 8))
        logits = rng.standard_normal((b, k)) * rng.uniform(0.1, 30)
        y, _ = nn.forward([nn.softmax()], {}, logits)
        assert np.all(y >= 0)
        assert np.allclose(y.sum(axis=1), 1.0, atol=1e-9)
        shifted, _ = nn.forward([nn.softmax()], {}, logits + rng.uniform(-50, 50))
        assert np.allclose(y, shifted, atol=1e-9)
    big, _ = nn.forward([nn.softmax()], {}, np.array([[1e4, -1e4, 0.0]]))
    assert np.isfinite(big).all()
    assert big.sum() == pytest.approx(1.0)


def test_cce_loss_examples():
    assert nn.cce_loss(np.array([1.0, 0.0]), 0) == pytest.approx(1e-7, rel=0.1)
    assert nn.cce_loss(np.array([0.5, 0.5]), 0) == pytest.approx(np.log(2.0))
    assert nn.cce_loss(np.array([0.9, 0.1]), 1) == pytest.approx(-np.log(0.1))
    with pytest.raises(ContractError):
        nn.cce_loss(np.array([0.5, 0.5]), 2)
    with pytest.raises(ContractError):
        nn.cce_loss(np.array([0.7, 0.7]), 0)


def test_cce_loss_mean_matches_single():
    rng = np.random.default_rng(882)
    for _ in range(50):
        b, k = 4, 3
        logits = rng.standard_normal((b, k))
        probs, _ = nn.forward([nn.softmax()], {}, logits)
        targets = rng.integers(0, k, size=b)
        mean_loss, _ = nn.cce_loss_mean(probs, targets)
        singles = [nn.cce_loss(probs[i], int(targets[i])) for i in range(b)]
        assert mean_loss == pytest.approx(np.mean(singles))
    with pytest.raises(ContractError):
        nn.cce_loss_mean(np.full((2, 2), 0.5), np.array([0, 2]))


def test_mae_examples_and_gradient():
    x = np.array([0.3, 0.6])
    assert nn.mae_loss(x, x) == 0.0
    assert nn.mae_loss(np.ones((3, 3)), np.zeros((3, 3))) == 1.0
    assert nn.mae_loss(np.array([0.2, 0.8]), np.array([0.0, 1.0])) == pytest.approx(0.2)
    with pytest.raises(ShapeError):
        nn.mae_loss(np.zeros(3), np.zeros(4))
    r = np.array([0.5, 0.1, 0.9])
    o = np.array([0.2, 0.4, 0.9])
    loss, grad = nn.mae_loss_grad(r, o)
    assert loss == pytest.approx(0.2)
    assert np.allclose(grad, np.array([1.0, -1.0, 0.0]) / 3.0)


def test_gradients_match_finite_differences_smoke():
    name, spec, shape, loss = model_zoo()[4]  # two conv + pool stack
    assert max_fd_relative_error(spec, shape, loss, seed=17) < 1e-4
    name, spec, shape, loss = model_zoo()[6]  # autoencoder shape
    assert max_fd_relative_error(spec, shape, loss, seed=23) < 1e-4


def test_adam_zero_gradient_fixed_point():
    p = np.array([1.0, -2.0], dtype=np.float32)
    tensors = {"w": p.copy()}
    state = nn.AdamState()
    nn.adam_step(tensors, {"w": np.zeros(2, dtype=np.float32)}, state)
    assert np.array_equal(tensors["w"], p)
    assert not state.m["w"].any()


def test_adam_first_step_magnitude():
    rng = np.random.default_rng(883)
    g = rng.uniform(0.5, 2.0, size=32) * rng.choice([-1.0, 1.0], size=32)
    tensors = {"w": np.zeros(32)}
    nn.adam_step(tensors, {"w": g}, nn.AdamState(), lr=1e-3)
    assert np.allclose(tensors["w"], -1e-3 * np.sign(g), atol=1e-7)


def test_adam_determinism_ten_steps():
    def run():
        rng = np.random.default_rng(884)
        spec = [nn.dense(8), nn.relu(), nn.dense(2), nn.softmax()]
        tensors = nn.init_params(spec, (4,), rng, dtype=np.float32)
        state = nn.AdamState()
        for _ in range(10):
            x = rng.standard_normal((6, 4)).astype(np.float32)
            t = rng.integers(0, 2, size=6)
            y, cache = nn.forward(spec, tensors, x)
            _, dy = nn.cce_loss_mean(y, t)
            grads, _ = nn.backward(cache, dy)
            nn.adam_step(tensors, grads, state)
        return tensors

    a, b = run(), run()
    for name in a:
        assert np.array_equal(a[name], b[name])


def test_adam_shape_mismatch():
    with pytest.raises(ShapeError):
        nn.adam_step({"w": np.zeros(3)}, {"w": np.zeros(4)}, nn.AdamState())


def test_init_bounds_and_determinism():
    spec = [nn.conv2d(8), nn.relu(), nn.flatten(), nn.dense(4), nn.softmax()]
    t1 = nn.init_params(spec, (2, 6, 6), np.random.default_rng([3, 7]))
    t2 = nn.init_params(spec, (2, 6, 6), np.random.default_rng([3, 7]))
    for name in t1:
        assert np.array_equal(t1[name], t2[name])
    he = np.sqrt(6.0 / (2 * 9))
    assert np.abs(t1["layer0.w"]).max() <= he  # conv feeds relu
    fan_in = 8 * 6 * 6
    glorot = np.sqrt(6.0 / (fan_in + 4))
    assert np.abs(t1["layer3.w"]).max() <= glorot  # dense feeds softmax
    assert not t1["layer0.b"].any()
    assert not t1["layer3.b"].any()


def test_save_load_round_trip():
    rng = np.random.default_rng(885)
    params = nn.ModelParams(
        tensors={
            "a.w": rng.standard_normal((3, 4)).astype(np.float32),
            "a.b": rng.standard_normal(4).astype(np.float32),
            "scalar": np.float32(rng.standard_normal()).reshape(()),
        },
        hyper={"lr": 0.001, "mode": "concat", "seed": 7},
    )
    blob = nn.save_model(params)
    back = nn.load_model(blob)
    assert nn.save_model(back) == blob
    assert back.hyper == params.hyper
    assert set(back.tensors) == set(params.tensors)
    for name in params.tensors:
        assert np.array_equal(back.tensors[name], params.tensors[name])
        assert back.tensors[name].dtype == np.float32


def test_save_empty_model_exact_bytes():
    blob = nn.save_model(nn.ModelParams())
    want = b"HVNN" + struct.pack("<I", 1) + struct.pack("<I", 0)
    want += struct.pack("<I", 2) + b"{}"
    assert blob == want


def test_save_payload_encoding():
    params = nn.ModelParams(
        tensors={"w": np.array([1.5, -2.0], dtype=np.float32)}, hyper={}
    )
    blob = nn.save_model(params)
    assert struct.pack("<2f", 1.5, -2.0) in blob


def test_load_error_offsets():
    good = nn.save_model(
        nn.ModelParams(tensors={"w": np.ones(2, dtype=np.float32)}, hyper={})
    )
    with pytest.raises(FormatError) as exc:
        nn.load_model(b"XXXX" + good[4:])
    assert exc.value.offset == 0
    with pytest.raises(FormatError) as exc:
        nn.load_model(good[:4] + struct.pack("<I", 9) + good[8:])
    assert exc.value.offset == 4
    with pytest.raises(FormatError) as exc:
        nn.load_model(good[:-3])
    assert exc.value.offset is not None
    with pytest.raises(FormatError, match="trailing"):
        nn.load_model(good + b"\x00")


def test_load_duplicate_tensor_name():
    one = nn.save_model(
        nn.ModelParams(tensors={"w": np.ones(2, dtype=np.float32)}, hyper={})
    )
    # tensor block sits between the 12-byte header and the 6-byte hyper tail
    block = one[12:-6]
    doubled = one[:8] + struct.pack("<I", 2) + block + block + one[-6:]
    with pytest.raises(FormatError, match="duplicate"):
        nn.load_model(doubled)
