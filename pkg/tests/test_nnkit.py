import numpy as np
import pytest

from ecgdx.errors import ConfigError, FormatError, ParameterError, ShapeError, StateError
from ecgdx.nnkit import (ENSEMBLE_ROWS, ModelParams, TrainConfig, bce_grad, bce_logits, classifier_arch,
                         cosine_lr, ftl, ftl_grad, init_params, load_weights, model_backward,
                         model_forward, pixel_dropout, random_rotation, rotate, save_weights,
                         segmenter_arch, sgd_step, stream, tversky_index)
from ecgdx.nnkit.weights import decode_weights, encode_weights

from oracles import central_diff, rel_err

TOY_CLS = classifier_arch((8, 8), channels=(2, 3, 4))
TOY_SEG = segmenter_arch((8, 8), channels=(2, 3))


# --- losses -------------------------------------------------------------------

def test_ftl_perfect_prediction():
    t = np.array([1.0, 0, 1, 0])
    assert tversky_index(t, t) == 1.0
    assert ftl(t, t) == 0.0


def test_ftl_opposite_prediction():
    truth = np.array([1.0, 0.0])
    ti = tversky_index(1 - truth, truth)
    assert ti == pytest.approx(1e-6 / (1e-6 + 1 + 10), rel=1e-12)
    assert ti == pytest.approx(9.09e-8, rel=1e-3)
    assert ftl(1 - truth, truth) == pytest.approx(1.0, abs=1e-6)


def test_ftl_half_index():
    # one TP pixel and FP mass 1: TI = (1+e)/(2+e) ~ 1/2 with eps 0
    pred, truth = np.array([1.0, 1.0]), np.array([1.0, 0.0])
    assert ftl(pred, truth, eps=0.0) == pytest.approx(0.5 ** (4 / 3), rel=1e-12)
    assert 0.5 ** (4 / 3) == pytest.approx(0.39685, abs=5e-6)


def test_ftl_shape_error():
    with pytest.raises(ShapeError):
        ftl(np.zeros(3), np.zeros(4))


def test_ftl_grad_at_perfect_prediction_is_zero_and_finite():
    t = (np.random.default_rng(0).random(16) < 0.5).astype(float)
    t[0] = 1.0
    g = ftl_grad(t, t)
    assert np.all(np.isfinite(g)) and np.all(g == 0)
    # the loss is flat to order h^(1/3) there (exponent 4/3 > 1)
    fd = central_diff(lambda p: ftl(np.clip(p, 0, 1), t), t, h=1e-9)
    assert np.max(np.abs(fd)) < 1e-3


def test_ftl_grad_matches_finite_differences():
    rng = np.random.default_rng(1)
    for _ in range(100):
        truth = (rng.random(16) < 0.4).astype(float)
        pred = rng.uniform(0.05, 0.95, 16)
        assert rel_err(ftl_grad(pred, truth), central_diff(lambda p: ftl(p, truth), pred)) < 1e-4


def test_ftl_grad_nonnegative_on_negative_pixels():
    rng = np.random.default_rng(2)
    for _ in range(100):
        truth = (rng.random(16) < 0.4).astype(float)
        g = ftl_grad(rng.random(16), truth)
        assert np.all(g[truth == 0] >= 0)


def test_ftl_monotone_towards_truth():
    rng = np.random.default_rng(3)
    truth = (rng.random(32) < 0.5).astype(float)
    pred = rng.random(32)
    losses = [ftl(pred + a * (truth - pred), truth) for a in np.linspace(0, 1, 11)]
    assert all(b <= a + 1e-12 for a, b in zip(losses, losses[1:]))
    assert all(0 <= v <= 1 + 1e-6 for v in losses)


def test_bce_values():
    assert bce_logits([0.0], [1.0]) == pytest.approx(np.log(2))
    assert bce_logits([10.0], [1.0]) == pytest.approx(np.log1p(np.exp(-10.0)), rel=1e-12)
    assert bce_logits([10.0], [1.0]) == pytest.approx(4.53989e-5, rel=1e-5)
    assert np.isfinite(bce_logits([1000.0, -1000.0], [0.0, 1.0]))


def test_bce_grad_values():
    assert bce_grad([0.0, 0.0, 0.0, 0.0], [1, 1, 1, 1]).tolist() == [-0.125] * 4
    z = np.array([-1.0, 0.3, 2.0])
    assert np.allclose(bce_grad(z, 1 / (1 + np.exp(-z))), 0.0, atol=1e-15)


def test_bce_grad_matches_finite_differences():
    rng = np.random.default_rng(4)
    for _ in range(100):
        z = rng.normal(0, 3, (4, 5))
        y = (rng.random((4, 5)) < 0.5).astype(float)
        assert rel_err(bce_grad(z, y), central_diff(lambda v: bce_logits(v, y), z, h=1e-4), floor=1e-6) < 1e-4


def test_bce_nonnegative(rng):
    z = rng.normal(0, 5, 100)
    y = (rng.random(100) < 0.5).astype(float)
    assert bce_logits(z, y) >= 0
    with pytest.raises(ShapeError):
        bce_logits(z, y[:10])


# --- models ------------------------------------------------------------------

def test_zero_weights_give_zero_logits():
    p = init_params(classifier_arch((16, 32)), 0)
    zero = ModelParams(p.arch, [np.zeros_like(t) for t in p.tensors])
    out, _ = model_forward(zero, np.random.default_rng(0).random((2, 16, 32, 1)))
    assert np.array_equal(out, np.zeros((2, 5)))


def test_periodic_input_shift_by_pooled_stride():
    p = init_params(classifier_arch((64, 64)), 1, np.float64)
    tile = np.random.default_rng(1).random((16, 16))
    img = np.tile(tile, (4, 4))[None, ..., None]
    a, _ = model_forward(p, img)
    b, _ = model_forward(p, np.roll(img, (16, 16), axis=(1, 2)))
    assert np.max(np.abs(a - b)) < 1e-6


@pytest.mark.parametrize("hw", [(16, 16), (32, 48), (48, 64)])
def test_classifier_output_shape(hw):
    p = init_params(classifier_arch(hw), 0)
    out, _ = model_forward(p, np.zeros((3, *hw, 1)))
    assert out.shape == (3, 5)


def test_input_shape_errors():
    p = init_params(classifier_arch((48, 64)), 0)
    with pytest.raises(ShapeError):
        model_forward(p, np.zeros((1, 40, 64, 1)))
    with pytest.raises(ShapeError):
        model_forward(p, np.zeros((1, 48, 64, 3)))


def _fd_check(arch, seed, n_coords=None):
    rng = np.random.default_rng(seed)
    p = init_params(arch, seed, np.float64)
    p = ModelParams(p.arch, [t + rng.normal(0, 0.1, t.shape) for t in p.tensors])
    x = rng.random((2, 8, 8, 1))
    out, cache = model_forward(p, x, "train")
    r = rng.normal(size=out.shape)
    grads, dx = model_backward(cache, r)

    def loss_params(k):
        def f(t):
            ts = list(p.tensors)
            ts[k] = t
            return float(np.sum(model_forward(ModelParams(p.arch, ts), x)[0] * r))
        return f

    errs = [rel_err(grads[k], central_diff(loss_params(k), p.tensors[k]), floor=1e-6)
            for k in range(len(p.tensors))]
    errs.append(rel_err(dx, central_diff(lambda v: float(np.sum(model_forward(p, v)[0] * r)), x), floor=1e-6))
    return max(errs)


@pytest.mark.parametrize("seed", range(3))
def test_classifier_backward_matches_finite_differences(seed):
    assert _fd_check(TOY_CLS, seed) < 1e-3


@pytest.mark.parametrize("seed", range(3))
def test_segmenter_backward_matches_finite_differences(seed):
    assert _fd_check(TOY_SEG, seed) < 1e-3


def test_backward_zero_and_linear(rng):
    p = init_params(TOY_CLS, 0, np.float64)
    out, cache = model_forward(p, rng.random((3, 8, 8, 1)), "train")
    zero, _ = model_backward(cache, np.zeros_like(out))
    assert all(not g.any() for g in zero)
    g = rng.normal(size=out.shape)
    g1, d1 = model_backward(cache, g)
    g2, d2 = model_backward(cache, 2 * g)
    assert all(np.allclose(2 * a, b, rtol=1e-12, atol=1e-15) for a, b in zip(g1, g2))
    assert np.allclose(2 * d1, d2, rtol=1e-12, atol=1e-15)


def test_backward_state_errors(rng):
    p = init_params(TOY_CLS, 0)
    out, cache = model_forward(p, rng.random((1, 8, 8, 1)), "eval")
    with pytest.raises(StateError):
        model_backward(cache, np.ones_like(out))
    out, cache = model_forward(p, rng.random((1, 8, 8, 1)), "train")
    with pytest.raises(StateError):
        model_backward(cache, np.ones((2, 5)))


def test_init_zero_bias_and_he_scale():
    p = init_params(classifier_arch(), 7)
    assert all(not p[n].any() for n in p.names if n.endswith(".b"))
    w = p["conv4.w"]
    assert w.std() == pytest.approx(np.sqrt(2 / (9 * 32)), rel=0.05)
    assert all(np.array_equal(a, b) for a, b in zip(p.tensors, init_params(classifier_arch(), 7).tensors))


# --- schedule and optimizer ---------------------------------------------------

def test_cosine_lr_values():
    cfg = TrainConfig(epochs=100)
    assert cosine_lr(0, cfg) == 0.001
    assert cosine_lr(100, cfg) == pytest.approx(0.0, abs=1e-18)
    assert cosine_lr(50, cfg) == pytest.approx(0.0005, rel=1e-12)
    cfg2 = TrainConfig(epochs=10, lr0=0.1, lr_min=0.01)
    assert cosine_lr(10, cfg2) == pytest.approx(0.01)
    lrs = [cosine_lr(t, cfg2) for t in range(11)]
    assert all(b <= a for a, b in zip(lrs, lrs[1:]))
    with pytest.raises(ParameterError):
        cosine_lr(11, cfg2)
    with pytest.raises(ParameterError):
        cosine_lr(-1, cfg2)


@pytest.mark.parametrize("kw", [dict(lr0=0.0), dict(lr0=0.1, lr_min=0.2), dict(pixel_drop=(1.5, 0.1)),
                                dict(rotation=(-1, 0.5)), dict(batch_size=0), dict(epochs=-1)])
def test_train_config_validation(kw):
    with pytest.raises(ConfigError):
        TrainConfig(**kw)


def test_table_rows_accepted():
    for row in ENSEMBLE_ROWS:
        cfg = TrainConfig(**row)
        assert cfg.batch_size in (5, 16)
    assert TrainConfig(**ENSEMBLE_ROWS[2]).pixel_drop == (1.0, 0.01)
    assert TrainConfig(**ENSEMBLE_ROWS[0]).rotation == (10.0, 0.5)


def test_sgd_step_definition():
    p = init_params(TOY_CLS, 0, np.float64)
    ones = ModelParams(p.arch, [np.ones_like(t) for t in p.tensors])
    grads = [np.full_like(t, 2.0) for t in p.tensors]
    assert all(np.array_equal(a, b) for a, b in zip(sgd_step(ones, grads, 0.0).tensors, ones.tensors))
    assert all(np.allclose(t, 0.8) for t in sgd_step(ones, grads, 0.1).tensors)
    with pytest.raises(ShapeError):
        sgd_step(ones, grads[:-1], 0.1)


def test_sgd_convex_quadratic_monotone(rng):
    p = init_params(TOY_CLS, 0, np.float64)
    target = [rng.normal(size=t.shape) for t in p.tensors]
    loss = lambda q: sum(0.5 * np.sum((a - b) ** 2) for a, b in zip(q.tensors, target))
    prev = loss(p)
    for _ in range(50):
        p = sgd_step(p, [a - b for a, b in zip(p.tensors, target)], 0.1)
        cur = loss(p)
        assert cur < prev
        prev = cur


# --- augmentation -------------------------------------------------------------

def test_dropout_identity_when_not_applied(rng):
    img = rng.random((10, 10, 1))
    assert pixel_dropout(img, 0.0, 0.5, rng) is img


def test_dropout_rate_concentration():
    img = np.ones((1000, 1000, 1))
    out = pixel_dropout(img, 1.0, 0.01, stream(0, "augment", 0, 0))
    frac = np.mean(out == 0)
    assert 0.008 <= frac <= 0.012


def test_dropout_zeroes_all_channels(rng):
    out = pixel_dropout(np.ones((50, 50, 3)), 1.0, 0.2, rng)
    dropped = out.sum(axis=-1)
    assert set(np.unique(dropped)) <= {0.0, 3.0}


def test_rotation_zero_limit_is_identity(rng):
    img = rng.random((12, 16, 1))
    assert np.array_equal(random_rotation(img, 0.0, 1.0, rng), img)
    assert random_rotation(img, 30.0, 0.0, rng) is img


def test_rotation_roundtrip():
    y, x = np.mgrid[0:64, 0:64]
    img = (0.5 + 0.4 * np.sin(x / 6.0) * np.cos(y / 5.0))[..., None]
    back = rotate(rotate(img, 10.0), -10.0)
    inner = (slice(16, 48), slice(16, 48))
    assert np.mean(np.abs(back[inner] - img[inner])) < 0.03


def test_rotation_direction_and_fill():
    img = np.zeros((21, 21, 1))
    img[10, 15] = 1.0          # right of centre
    out = rotate(img, 90.0)
    # counter-clockwise on screen moves "right" to "up"
    assert out[5, 10, 0] == pytest.approx(1.0)
    assert rotate(np.ones((20, 30, 1)), 45.0)[0, 0, 0] == 0.0


def test_streams_are_independent_of_order():
    a = stream(5, "augment", 2, 7).random(3)
    stream(5, "augment", 2, 6).random(10)
    assert np.array_equal(a, stream(5, "augment", 2, 7).random(3))
    assert not np.array_equal(a, stream(5, "augment", 3, 7).random(3))


# --- weights -----------------------------------------------------------------

def test_weights_roundtrip_bit_exact(tmp_path):
    for arch in (classifier_arch(), segmenter_arch()):
        p = init_params(arch, 3)
        save_weights(p, tmp_path / "w.ecgw")
        q = load_weights(tmp_path / "w.ecgw")
        assert q.same_arch(p)
        assert all(a.tobytes() == b.tobytes() for a, b in zip(p.tensors, q.tensors))


def test_weights_header_layout():
    buf = encode_weights(init_params(TOY_CLS, 0))
    assert buf[:4] == b"ECGW"
    assert int.from_bytes(buf[4:8], "little") == 1


def test_weights_truncated(tmp_path):
    buf = encode_weights(init_params(TOY_CLS, 0))
    for cut in (3, 10, 20, len(buf) - 1):
        with pytest.raises(FormatError):
            decode_weights(buf[:cut])
    with pytest.raises(FormatError):
        decode_weights(buf + b"\x00")


def test_weights_bad_magic_and_version():
    buf = encode_weights(init_params(TOY_CLS, 0))
    with pytest.raises(FormatError):
        decode_weights(b"ECGX" + buf[4:])
    with pytest.raises(FormatError):
        decode_weights(buf[:4] + (2).to_bytes(4, "little") + buf[8:])


def test_weights_descriptor_shape_corruption():
    buf = encode_weights(init_params(TOY_CLS, 0))
    n = int.from_bytes(buf[8:12], "little")
    desc = buf[12:12 + n].decode()
    bad = desc.replace('"shape":[3,3,1,2]', '"shape":[3,3,1,3]')
    assert bad != desc
    body = bad.encode()
    with pytest.raises(FormatError):
        decode_weights(buf[:8] + len(body).to_bytes(4, "little") + body + buf[12 + n:])
