import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fixsearch import nn
from fixsearch.errors import ConfigError, ShapeError
from fixsearch.fdm import DensityMap
from fixsearch.model import ModelConfig, build_model, cross_convolve, kl_loss, l1_normalize, normalize_output
from fixsearch.synthetic import argmax_in_target, dataset_digest, generate_synthetic, similar_category
from fixsearch.train import View, augment_views, draw_view, evaluate_loss, lr_at, shift_range, train

SMALL = dict(image_dims=(32, 64), target_dims=(16, 16), base_channels=2, feature_channels=4)


@pytest.fixture(scope="module")
def small_model():
    return build_model(ModelConfig(**SMALL))


def test_config_validation():
    with pytest.raises(ConfigError, match="multiples of 8"):
        ModelConfig(image_dims=(30, 64))
    with pytest.raises(ConfigError, match="batch"):
        ModelConfig(batch=2)
    with pytest.raises(ConfigError):
        ModelConfig(target_dims=(64, 64), image_dims=(32, 64))
    with pytest.raises(ConfigError, match="unknown"):
        ModelConfig.from_dict({"depth": 3})
    cfg = ModelConfig()
    assert ModelConfig.from_dict(cfg.to_dict()) == cfg


def test_widths_scale_like_vgg():
    cfg = ModelConfig(base_channels=64, feature_channels=256)
    assert cfg.encoder_widths == (64, 128, 256, 512, 512)
    assert cfg.concat_channels == 1280
    assert cfg.decoder_widths == (128, 64, 32)


def test_shapes(small_model):
    img = np.random.default_rng(0).random((3, 32, 64))
    enc = small_model.encode(nn.Tensor(img[None]))
    assert enc.shape == (1, ModelConfig(**SMALL).concat_channels, 4, 8)
    out = small_model(img, img[:, :16, :16])
    assert out.shape == (1, 1, 32, 64)
    assert abs(out.data.sum() - 1.0) < 1e-9


def test_weight_sharing_bit_identical(small_model):
    x = np.random.default_rng(1).random((1, 3, 16, 16))
    a = small_model.features(nn.Tensor(x)).data
    b = small_model.features(nn.Tensor(x.copy())).data
    assert a.tobytes() == b.tobytes()


def test_two_stream_needs_target(small_model):
    with pytest.raises(ShapeError, match="target"):
        small_model(np.zeros((3, 32, 64)))


def test_one_stream_and_no_decoder_variants():
    img = np.random.default_rng(2).random((3, 32, 64))
    m1 = build_model(ModelConfig(two_stream=False, **SMALL))
    assert m1(img).shape == (1, 1, 32, 64)
    m2 = build_model(ModelConfig(decoder_convs=False, **SMALL))
    assert m2(img, img[:, :16, :16]).shape == (1, 1, 32, 64)
    assert m2.parameter_count() < build_model(ModelConfig(**SMALL)).parameter_count()


def _flip_pair(img, tgt):
    a = cross_convolve(nn.Tensor(img[..., ::-1].copy()), nn.Tensor(tgt[..., ::-1].copy())).data
    b = cross_convolve(nn.Tensor(img), nn.Tensor(tgt)).data[..., ::-1]
    return a, b


@pytest.mark.parametrize("k", [1, 3, 5])
def test_cross_convolve_flip_equivariance_odd_kernel(k):
    rng = np.random.default_rng(3)
    # small dyadic values: every partial sum is exact, so tap order cannot matter
    img = rng.integers(-8, 9, size=(1, 4, 6, 9)) / 4.0
    tgt = rng.integers(-8, 9, size=(1, 4, k, k)) / 4.0
    a, b = _flip_pair(img, tgt)
    assert a.tobytes() == b.tobytes()
    # general floats: equal up to reassociation of the tap sum
    a, b = _flip_pair(rng.standard_normal((1, 4, 6, 9)), rng.standard_normal((1, 4, k, k)))
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-13)


def test_cross_convolve_even_kernel_shifts_under_flip():
    # "same" padding puts the extra column on the right, so even kernels are off by one after a flip
    rng = np.random.default_rng(4)
    img = rng.integers(-8, 9, size=(1, 2, 5, 8)) / 4.0
    tgt = rng.integers(-8, 9, size=(1, 2, 2, 2)) / 4.0
    a, b = _flip_pair(img, tgt)
    assert not np.array_equal(a, b)
    np.testing.assert_array_equal(a[..., :-1], b[..., 1:])


def test_l1_normalize_sums_to_one():
    x = nn.Tensor(np.random.default_rng(6).random((1, 3, 2, 2)))
    total = x.data.sum()
    # the 1e-12 guard shifts the sum to S / (S + eps), i.e. 1 - eps/S
    assert l1_normalize(x).data.sum() == pytest.approx(total / (total + 1e-12), abs=1e-15)
    assert abs(l1_normalize(x).data.sum() - 1.0) < 1e-12
    assert np.all(l1_normalize(nn.Tensor(np.zeros((1, 2, 2, 2)))).data == 0)


def test_centered_input_ignores_brightness_offset(small_model):
    rng = np.random.default_rng(8)
    img = rng.random((3, 32, 64))
    tgt = img[:, 4:20, 10:26].copy()
    a = small_model(img, tgt).data
    b = small_model(img + np.array([0.2, -0.1, 0.05])[:, None, None], tgt - 0.3).data
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)
    raw = build_model(ModelConfig(center_input=False, **SMALL))
    assert not np.allclose(raw(img, tgt).data, raw(img + 0.2, tgt).data)


def test_cross_convolve_checks():
    with pytest.raises(ShapeError, match="channel"):
        cross_convolve(nn.Tensor(np.zeros((1, 3, 4, 4))), nn.Tensor(np.zeros((1, 2, 2, 2))))
    with pytest.raises(ShapeError, match="larger"):
        cross_convolve(nn.Tensor(np.zeros((1, 2, 2, 2))), nn.Tensor(np.zeros((1, 2, 4, 4))))


def test_normalize_output_constant_is_uniform():
    out = normalize_output(nn.Tensor(np.full((1, 1, 2, 4), 3.0)))
    assert np.allclose(out.data, 1 / 8)


def test_kl_loss_matches_metric():
    from fixsearch.metrics import kld

    rng = np.random.default_rng(4)
    p, q = rng.random((6, 6)), rng.random((6, 6))
    p, q = p / p.sum(), q / q.sum()
    loss = kl_loss(nn.Tensor(p[None, None]), DensityMap(q)).item()
    assert loss == pytest.approx(kld(p, q), abs=1e-12)


def test_end_to_end_gradient_check():
    cfg = ModelConfig(image_dims=(32, 64), target_dims=(16, 16), base_channels=2, feature_channels=4, seed=3)
    model = build_model(cfg)
    rng = np.random.default_rng(5)
    for t in model.parameters():
        if t.name.endswith("bias"):
            t.data[:] = rng.uniform(0.01, 0.1, t.shape)
    sample = generate_synthetic(1, 1, dims=(32, 64), glyph_size=(8, 10), n_distractors=(1, 2))[0]
    rep = nn.grad_check(lambda: kl_loss(model(sample.image, sample.targets[0]), sample.gt),
                        model.parameters(), n_coords=100)
    assert rep.n_checked == 100
    assert rep.passed, rep


def test_checkpoint_state_round_trip(small_model):
    raw = nn.dump_params(small_model.state())
    other = build_model(ModelConfig(seed=99, **SMALL))
    other.load_state(nn.load_params(raw))
    assert all(a.data.tobytes() == b.data.tobytes() for a, b in zip(small_model.parameters(), other.parameters()))
    with pytest.raises(ConfigError):
        build_model(ModelConfig(two_stream=True, decoder_convs=False, **SMALL)).load_state(nn.load_params(raw))


# -- synthetic data ------------------------------------------------------

def test_synthetic_properties():
    data = generate_synthetic(11, 20)
    for s in data:
        assert abs(s.gt.values.sum() - 1.0) < 1e-9
        assert argmax_in_target(s.gt.values, s)
        assert s.image.shape == (3, 64, 128)
        assert len(s.targets) == 5 and s.targets[0].shape == (3, 16, 16)
    assert dataset_digest(data) == dataset_digest(generate_synthetic(11, 20))
    assert dataset_digest(data) != dataset_digest(generate_synthetic(12, 20))


def test_similar_category_pairs():
    assert [similar_category(c) for c in range(6)] == [1, 0, 3, 2, 5, 4]


def test_synthetic_rejects_bad_dims():
    with pytest.raises(ConfigError):
        generate_synthetic(0, 1, dims=(60, 128))


# -- training ------------------------------------------------------------

def tiny_setup(**kw):
    cfg = ModelConfig(epochs=2, **SMALL, **kw)
    data = generate_synthetic(3, 6, dims=(32, 64), glyph_size=(8, 10), n_distractors=(1, 2))
    return cfg, data[:4], data[4:]


def test_train_is_deterministic(tmp_path):
    cfg, tr, va = tiny_setup()
    r1 = train(build_model(cfg), tr, cfg, valid=va, checkpoint_path=tmp_path / "a.fdmp")
    r2 = train(build_model(cfg), tr, cfg, valid=va, checkpoint_path=tmp_path / "b.fdmp")
    assert r1.train_loss == r2.train_loss and r1.valid_loss == r2.valid_loss
    assert (tmp_path / "a.fdmp").read_bytes() == (tmp_path / "b.fdmp").read_bytes()


def test_lr_zero_freezes_model():
    cfg, tr, va = tiny_setup(lr=0.0)
    model = build_model(cfg)
    before = evaluate_loss(model, va)
    rep = train(model, tr, cfg, valid=va)
    assert rep.valid_loss == [before, before]


def test_identity_view_changes_nothing():
    s = generate_synthetic(2, 1)[0]
    img, tgt, gt = augment_views(s.image, s.targets[0], s.gt, View())
    assert img.tobytes() == s.image.tobytes() and tgt.tobytes() == s.targets[0].tobytes()
    assert gt.values.tobytes() == s.gt.values.tobytes()


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10 ** 6), st.floats(0, 0.999), st.floats(0, 0.999), st.booleans(), st.booleans())
def test_view_keeps_glyphs_whole(seed, uy, ux, hf, vf):
    s = generate_synthetic(seed, 1)[0]
    view = draw_view(s, (2, 0, 1), hf, vf, (uy, ux))
    ylo, yhi, xlo, xhi = shift_range(s)
    assert ylo <= view.shift[0] <= yhi and xlo <= view.shift[1] <= xhi
    img, tgt, gt = augment_views(s.image, s.targets[0], s.gt, view)
    h, w = s.image.shape[1:]
    x0, y0, x1, y1 = s.target_box
    dy, dx = view.shift
    ys, xs = np.arange(y0, y1 + 1) + dy, np.arange(x0, x1 + 1) + dx
    assert ys.min() >= 0 and ys.max() < h and xs.min() >= 0 and xs.max() < w
    if vf:
        ys = h - 1 - ys
    if hf:
        xs = w - 1 - xs
    # the glyph pixels arrive where the view says, channels reordered
    moved = img[:, ys.min():ys.max() + 1, xs.min():xs.max() + 1]
    orig = s.image[[2, 0, 1], y0:y1 + 1, x0:x1 + 1]
    if vf:
        orig = orig[:, ::-1]
    if hf:
        orig = orig[:, :, ::-1]
    assert np.array_equal(moved, orig)
    assert abs(gt.values.sum() - 1.0) < 1e-12
    assert np.array_equal(tgt, np.flip(s.targets[0][[2, 0, 1]], [a for a, f in ((2, hf), (1, vf)) if f]))


def test_cosine_schedule():
    cfg = ModelConfig(lr=1e-3, lr_floor=0.1)
    assert lr_at(cfg, 0, 11) == 1e-3
    assert lr_at(cfg, 10, 11) == pytest.approx(1e-4)
    assert lr_at(cfg, 5, 11) == pytest.approx(0.55e-3)
    lrs = [lr_at(cfg, k, 11) for k in range(11)]
    assert all(a >= b for a, b in zip(lrs, lrs[1:]))
    assert lr_at(ModelConfig(lr=1e-3, lr_decay="none"), 7, 11) == 1e-3
    with pytest.raises(ConfigError):
        ModelConfig(lr_decay="step")


def test_on_epoch_callback():
    cfg, tr, _ = tiny_setup()
    seen = []
    train(build_model(cfg), tr, cfg, on_epoch=lambda e, m, r: seen.append((e, len(r.train_loss))))
    assert seen == [(0, 1), (1, 2)]


def test_train_dims_mismatch():
    cfg, tr, _ = tiny_setup()
    with pytest.raises(ConfigError, match="dims"):
        train(build_model(ModelConfig()), tr, ModelConfig())
    with pytest.raises(ConfigError, match="empty"):
        train(build_model(cfg), [], cfg)


@settings(max_examples=10, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_output_is_density_for_any_parameters(seed):
    model = build_model(ModelConfig(seed=seed % 1000, **SMALL))
    rng = np.random.default_rng(seed)
    for t in model.parameters():
        t.data *= rng.uniform(0.1, 3.0)
    img = rng.random((3, 32, 64))
    out = model(img, img[:, 8:24, 8:24]).data
    assert (out >= 0).all() and abs(out.sum() - 1.0) < 1e-9
