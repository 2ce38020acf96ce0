import numpy as np
import pytest

from fdcheck import directional_check
from mvembed import models, nn
from mvembed.models import (
    AUTOENCODER,
    CLASSIFICATION,
    COMBINED,
    EncoderConfig,
    TrainConfig,
    TrainingError,
    classifier_forward,
    decoder_forward,
    embed,
    embed_many,
    encoder_forward,
    init_params,
    load_model,
    model_loss,
    save_model,
    train,
)
from mvembed.nn import Tensor

MINI = EncoderConfig(in_channels=2, resolution=16, base_channels=2, bottleneck_dim=8)


def _data(rng, n=6, cfg=MINI):
    stacks = rng.random((n, cfg.in_channels, cfg.resolution, cfg.resolution)).astype(np.float32)
    labels = rng.integers(0, 3, n)
    return stacks, labels


# -- configuration arithmetic --------------------------------------------------

def test_desk_width_channels():
    cfg = EncoderConfig(in_channels=3)
    assert cfg.block_channels == (16, 32, 64, 128)
    assert cfg.feature_resolution == 4
    assert cfg.flat_features == 128 * 16


def test_paper_width_channels():
    cfg = EncoderConfig(in_channels=4, base_channels=64)
    assert cfg.block_channels == (128, 256, 512, 1024)


def test_resolution_must_divide():
    with pytest.raises(ValueError):
        EncoderConfig(in_channels=2, resolution=60)


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(iterations=0)


# -- parameters and forward shapes ---------------------------------------------

def test_init_params_shapes_and_kinds():
    p = init_params(COMBINED, MINI, n_classes=3, seed=0)
    assert p["enc.b1.conv1.w"].shape == (4, 2, 5, 5)
    assert p["enc.b4.conv2.w"].shape == (32, 32, 5, 5)
    assert p["enc.fc.w"].shape == (32, 8)
    assert p["dec.fc.w"].shape == (8, 32)
    assert p["dec.b1.deconv.w"].shape == (32, 16, 5, 5)
    assert p["dec.b4.deconv.w"].shape == (4, 2, 5, 5)
    assert p["cls.w"].shape == (8, 3)
    ae = init_params(AUTOENCODER, MINI, seed=0)
    assert "cls.w" not in ae and "dec.fc.w" in ae
    cls = init_params(CLASSIFICATION, MINI, n_classes=3, seed=0)
    assert "dec.fc.w" not in cls and "cls.w" in cls


def test_init_params_rejects_bad_args():
    with pytest.raises(ValueError):
        init_params("vae", MINI)
    with pytest.raises(ValueError):
        init_params(CLASSIFICATION, MINI, n_classes=1)


def test_shared_params_identical_across_kinds():
    # one seed, fixed draw order: encoder weights agree between all kinds
    ae = init_params(AUTOENCODER, MINI, seed=3)
    cb = init_params(COMBINED, MINI, n_classes=3, seed=3)
    for name in ae:
        assert np.array_equal(ae[name].data, cb[name].data), name


def test_encoder_spatial_halving_and_bottleneck():
    p = init_params(AUTOENCODER, MINI, seed=0)
    x = Tensor(np.random.default_rng(0).random((3, 2, 16, 16)).astype(np.float32))
    z, indices = encoder_forward(p, MINI, x)
    assert z.shape == (3, 8)
    assert [i.shape[2] for i in indices] == [8, 4, 2, 1]
    assert [i.shape[1] for i in indices] == [4, 8, 16, 32]


def test_decoder_restores_input_shape():
    p = init_params(AUTOENCODER, MINI, seed=0)
    z = Tensor(np.random.default_rng(1).random((3, 8)).astype(np.float32))
    out = decoder_forward(p, MINI, z)
    assert out.shape == (3, 2, 16, 16)


def test_encoder_rejects_wrong_input_shape():
    p = init_params(AUTOENCODER, MINI, seed=0)
    with pytest.raises(nn.ShapeError):
        encoder_forward(p, MINI, Tensor(np.zeros((1, 3, 16, 16), np.float32)))


def test_classifier_output_shape():
    p = init_params(CLASSIFICATION, MINI, n_classes=5, seed=0)
    z = Tensor(np.zeros((4, 8), np.float32))
    assert classifier_forward(p, z).shape == (4, 5)


# -- end-to-end gradients (miniature config) -----------------------------------

@pytest.mark.parametrize("kind", [AUTOENCODER, CLASSIFICATION, COMBINED])
def test_model_gradient_directional(kind):
    rng = np.random.default_rng(11)
    batch = rng.random((2, 2, 16, 16))
    labels = rng.integers(0, 3, 2)
    params = init_params(kind, MINI, n_classes=3, seed=11, dtype=np.float64)
    names = list(params)
    arrays = [params[n].data for n in names]

    def value(arrs):
        pd = {n: Tensor(a) for n, a in zip(names, arrs)}
        return model_loss(kind, pd, MINI, batch, labels)[0].item()

    def grads(arrs):
        pd = {n: nn.parameter(a) for n, a in zip(names, arrs)}
        loss, _ = model_loss(kind, pd, MINI, batch, labels)
        loss.backward()
        return [pd[n].grad for n in names]

    # h = 1e-5: small enough that curvature along the gradient direction does
    # not dominate, large enough for clean float64 differences
    err = directional_check(value, grads, arrays, seed=11, h=1e-5)
    assert err < 1e-4, err


# -- training behaviour ----------------------------------------------------------

def test_train_deterministic_same_seed():
    rng = np.random.default_rng(4)
    stacks, labels = _data(rng)
    cfg = TrainConfig(iterations=8, batch_size=2, seed=5, lr=1e-3)
    a = train(COMBINED, stacks, labels, cfg, MINI, 3)
    b = train(COMBINED, stacks, labels, cfg, MINI, 3)
    assert a.loss_curve == b.loss_curve
    for name in a.params:
        assert np.array_equal(a.params[name].data, b.params[name].data)


def test_train_seed_changes_trajectory():
    rng = np.random.default_rng(4)
    stacks, labels = _data(rng)
    a = train(AUTOENCODER, stacks, labels, TrainConfig(iterations=5, batch_size=2, seed=0, lr=1e-3), MINI)
    b = train(AUTOENCODER, stacks, labels, TrainConfig(iterations=5, batch_size=2, seed=1, lr=1e-3), MINI)
    assert a.loss_curve != b.loss_curve


def test_combined_with_zero_lambda_matches_autoencoder():
    # lam = 0 silences the classifier path, so the shared parameters follow
    # the autoencoder trajectory bit for bit
    rng = np.random.default_rng(6)
    stacks, labels = _data(rng)
    cfg = TrainConfig(iterations=6, batch_size=2, seed=2, lr=1e-3, lam=0.0)
    ae = train(AUTOENCODER, stacks, labels, cfg, MINI)
    cb = train(COMBINED, stacks, labels, cfg, MINI, 3)
    assert ae.loss_curve == pytest.approx(cb.loss_curve)
    for name in ae.params:
        assert np.array_equal(ae.params[name].data, cb.params[name].data), name


def test_autoencoder_loss_decreases():
    rng = np.random.default_rng(7)
    stacks, labels = _data(rng, n=4)
    cfg = TrainConfig(iterations=200, batch_size=4, seed=0, lr=3e-3)
    m = train(AUTOENCODER, stacks, None, cfg, MINI)
    first = np.mean(m.loss_curve[:5])
    last = np.mean(m.loss_curve[-5:])
    assert last < 0.5 * first


def test_train_error_paths():
    rng = np.random.default_rng(8)
    stacks, labels = _data(rng)
    cfg = TrainConfig(iterations=2, batch_size=1, seed=0)
    with pytest.raises(TrainingError):
        train(CLASSIFICATION, stacks, None, cfg, MINI, 3)
    with pytest.raises(TrainingError):
        train(CLASSIFICATION, stacks, labels[:2], cfg, MINI, 3)
    with pytest.raises(TrainingError):
        train(CLASSIFICATION, stacks, labels, cfg, MINI, n_classes=1)
    with pytest.raises(TrainingError):
        train(AUTOENCODER, np.zeros((0, 2, 16, 16), np.float32), None, cfg, MINI)


def test_batch_indices_cover_epochs():
    rng = np.random.default_rng(0)
    drawn = np.concatenate(list(models._batch_indices(6, 4, 3, rng)))
    assert len(drawn) == 12
    assert sorted(drawn[:6].tolist()) == list(range(6))
    assert sorted(drawn[6:].tolist()) == list(range(6))


# -- embeddings and persistence --------------------------------------------------

def test_embedding_is_encoder_bottleneck():
    rng = np.random.default_rng(9)
    stacks, labels = _data(rng)
    m = train(AUTOENCODER, stacks, None, TrainConfig(iterations=3, batch_size=2, seed=0, lr=1e-3), MINI)
    vecs = embed_many(m, stacks)
    assert vecs.shape == (6, 8)
    frozen = {k: Tensor(v.data) for k, v in m.params.items()}
    z, _ = encoder_forward(frozen, MINI, Tensor(stacks))
    assert np.allclose(vecs, z.data, atol=1e-6)
    single = embed(m, stacks[2])
    assert np.allclose(single, vecs[2], atol=1e-6)


def test_save_load_roundtrip(tmp_path):
    rng = np.random.default_rng(10)
    stacks, labels = _data(rng)
    cfg = TrainConfig(iterations=3, batch_size=2, seed=0, lr=1e-3)
    m = train(COMBINED, stacks, labels, cfg, MINI, 3)
    path = tmp_path / "m.mvnn"
    save_model(m, path)
    back = load_model(path, COMBINED, MINI, cfg, 3)
    assert np.array_equal(embed_many(back, stacks), embed_many(m, stacks))
