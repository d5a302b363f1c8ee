import numpy as np
import pytest

from gnngen import tensor as T
from gnngen.pae import (
    ENC_CHANNELS,
    STRIDE_OVERRIDES,
    LatentCorpus,
    Pae,
    PaeConfig,
    choose_stride,
    conv_lengths,
    encode_corpus,
    fit_normalization,
    train_pae,
)
from gnngen.rng import Rng


def test_conv_lengths_recurrence():
    # hand recurrence: l_next = (l - s)//s + 1, valid conv with kernel == stride
    assert conv_lengths(10038, 5) == [10038, 2007, 401, 80, 16]
    assert conv_lengths(23063, 6) == [23063, 3843, 640, 106, 17]
    assert conv_lengths(16, 2) == [16, 8, 4, 2, 1]
    assert conv_lengths(5, 6) == []  # shorter than one kernel


@pytest.mark.parametrize("d_w,stride", sorted(STRIDE_OVERRIDES.items()))
def test_stride_overrides_used(d_w, stride):
    assert choose_stride(d_w) == stride
    # every published stride must survive the length recurrence
    lengths = conv_lengths(d_w, stride)
    assert lengths and lengths[-1] >= 1


def test_choose_stride_prefers_largest_in_band():
    d_w = 5000
    s = choose_stride(d_w)
    assert 8 <= conv_lengths(d_w, s)[-1] <= 16
    # no larger stride may also land in band
    for bigger in range(s + 1, s + 20):
        lengths = conv_lengths(d_w, bigger)
        if lengths:
            assert not (8 <= lengths[-1] <= 16)


def test_choose_stride_too_short():
    with pytest.raises(ValueError):
        choose_stride(10)


def test_config_for_size():
    cfg = PaeConfig.for_size(10038)
    assert cfg.stride == 5
    assert cfg.latent_len == 16
    assert cfg.d_p == ENC_CHANNELS[-1] * 16  # 96
    with pytest.raises(ValueError):
        PaeConfig.for_size(100, stride=200)


def test_encode_decode_shapes_exact_length():
    cfg = PaeConfig.for_size(997, stride=3)
    pae = Pae.create(cfg, Rng(0))
    w = np.random.default_rng(1).normal(size=(4, 997))
    z = pae.encode(w)
    assert z.shape == (4, pae.d_p)
    back = pae.decode(z)
    assert back.shape == (4, 997)  # decoder restores the exact input length
    assert np.all(np.isfinite(back))


def test_encode_decode_accept_1d():
    cfg = PaeConfig.for_size(500, stride=3)
    pae = Pae.create(cfg, Rng(0))
    w = np.random.default_rng(2).normal(size=500)
    z = pae.encode(w)
    assert z.shape == (1, pae.d_p)
    assert pae.decode(z[0]).shape == (1, 500)


def test_encode_shape_errors():
    cfg = PaeConfig.for_size(500, stride=3)
    pae = Pae.create(cfg, Rng(0))
    with pytest.raises(T.ShapeError):
        pae.encode(np.zeros((2, 499)))
    with pytest.raises(T.ShapeError):
        pae.decode(np.zeros((2, pae.d_p + 1)))


def test_fit_normalization_guards_constant_dims():
    corpus = np.ones((5, 4))
    corpus[:, 1] = np.arange(5)
    mean, std = fit_normalization(corpus)
    assert std[0] == 1e-8  # constant dimension clamped, not zero
    assert std[1] > 1.0
    pae = Pae.create(PaeConfig.for_size(500, stride=3), Rng(0))
    w = np.random.default_rng(3).normal(size=(3, 500))
    pae.norm_mean, pae.norm_std = fit_normalization(w)
    assert np.allclose(pae.destandardize(pae.standardize(w)), w)


def test_train_pae_reduces_loss_and_reconstructs():
    rng = np.random.default_rng(4)
    base = rng.normal(size=300)
    corpus = base + 0.05 * rng.normal(size=(40, 300))
    pae, latents, losses = train_pae(corpus, epochs=30, seed=0, stride=3)
    assert len(losses) == 30
    assert losses[-1] < losses[0]
    assert latents.latents.shape == (40, pae.d_p)
    recon = pae.decode(pae.encode(corpus))
    rel = np.mean((recon - corpus) ** 2) / np.mean((corpus - corpus.mean(0)) ** 2 + 1e-12)
    assert np.isfinite(rel)


def test_train_pae_deterministic():
    rng = np.random.default_rng(5)
    corpus = rng.normal(size=(10, 200))
    _, l1, loss1 = train_pae(corpus, epochs=5, seed=9, stride=3)
    _, l2, loss2 = train_pae(corpus, epochs=5, seed=9, stride=3)
    assert np.array_equal(l1.latents, l2.latents)
    assert loss1 == loss2


def test_train_pae_empty_corpus():
    with pytest.raises(ValueError):
        train_pae(np.zeros((0, 0)), epochs=1)


def test_encode_corpus_batches_match():
    cfg = PaeConfig.for_size(200, stride=3)
    pae = Pae.create(cfg, Rng(1))
    corpus = np.random.default_rng(6).normal(size=(7, 200))
    whole = pae.encode(corpus)
    batched = encode_corpus(pae, corpus, batch=3)
    assert np.allclose(whole, batched)


def test_latent_corpus_d_p():
    lc = LatentCorpus(np.zeros((3, 48)), np.zeros(10), np.ones(10))
    assert lc.d_p == 48
