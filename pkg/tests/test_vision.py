import numpy as np
import pytest

from vist import tensorcore as tc
from vist.render import RenderConfig, patchify, rasterize
from vist.tensorcore import Tensor, gradient_check
from vist.vision import (
    Resampler,
    ResamplerConfig,
    VisionConfig,
    VisionEncoder,
    VisualFeatures,
    encode_images,
    param_checksum,
    pool_groups,
    pool_visual,
    pretrain_vision,
    reconstruction_error,
    resample,
)

SMALL = VisionConfig(d_model=16, layers=1, heads=2)


@pytest.fixture(scope="module")
def encoder():
    return VisionEncoder(SMALL, np.random.default_rng(0), np.float64)


def grid(text):
    return patchify(rasterize(text))


def test_feature_shape_default_geometry(encoder):
    feats = encode_images([grid(f"page {i}") for i in range(7)], encoder)
    assert feats.F.shape == (7, 257, 16)
    assert feats.valid[:, 0].all()
    assert feats.valid.sum(axis=1).tolist() == [1 + grid(f"page {i}").n_valid for i in range(7)]


def test_zero_images(encoder):
    feats = encode_images([], encoder)
    assert feats.F.shape == (0, 257, 16) and feats.num_images == 0


def test_all_empty_grid_rejected(encoder):
    with pytest.raises(ValueError):
        encode_images([grid("")], encoder)


def test_image_permutation(encoder):
    a, b = grid("first image"), grid("second one")
    f1 = encode_images([a, b], encoder).F.data
    f2 = encode_images([b, a], encoder).F.data
    np.testing.assert_allclose(f1[0], f2[1], atol=1e-12)
    np.testing.assert_allclose(f1[1], f2[0], atol=1e-12)


def test_compact_inference_matches_full_forward(encoder):
    g = [grid("compact path"), grid("x")]
    fast = encode_images(g, encoder)
    full, valid = encoder(np.stack([x.patches for x in g]), np.stack([x.empty_mask for x in g]))
    np.testing.assert_allclose(fast.F.data[valid], full.data[valid], atol=1e-12)


def test_empty_patch_content_is_ignored(encoder):
    g = grid("abc")
    feats = encode_images([g], encoder)
    noisy = g.patches.copy()
    noisy[g.empty_mask] = np.random.default_rng(1).random((g.empty_mask.sum(), g.patches.shape[1]))
    F, valid = encoder(noisy[None], g.empty_mask[None])
    np.testing.assert_array_equal(F.data[valid], encode_images([g], encoder).F.data[feats.valid])


def test_resampler_shape_and_cls_first(encoder):
    rs = Resampler(ResamplerConfig(latents=64, d_model=16, heads=2), np.random.default_rng(0), np.float64)
    feats = encode_images([grid(f"p{i}") for i in range(7)], encoder)
    out = resample(feats, rs)
    assert out.shape == (7, 65, 16)
    assert resample(encode_images([], encoder), rs).shape == (0, 65, 16)


def test_resampler_ignores_invalid_rows():
    rng = np.random.default_rng(0)
    rs = Resampler(ResamplerConfig(latents=4, d_model=8, heads=2), rng, np.float64)
    F = rng.normal(size=(2, 6, 8))
    valid = np.array([[1, 1, 0, 1, 0, 0], [1, 0, 1, 1, 1, 0]], bool)
    base = rs(VisualFeatures(Tensor(F), valid)).data
    F2 = F.copy()
    F2[~valid] = rng.normal(size=((~valid).sum(), 8)) * 100
    assert np.abs(rs(VisualFeatures(Tensor(F2), valid)).data - base).max() == 0.0


@pytest.mark.parametrize("self_attn", [False, True])
def test_resampler_gradient(self_attn):
    rng = np.random.default_rng(3)
    rs = Resampler(ResamplerConfig(latents=3, d_model=8, heads=2, depth=2, latent_self_attention=self_attn), rng, np.float64)
    F = Tensor(rng.normal(size=(2, 5, 8)), requires_grad=True)
    valid = np.array([[1, 1, 1, 0, 0], [1, 1, 1, 1, 1]], bool)
    w = Tensor(rng.normal(size=(2, 4, 8)))
    params = [F, rs.latents] + rs.blocks[0].parameters()[:4]

    def f(_):
        return tc.sum_(tc.mul(rs(VisualFeatures(F, valid)), w))

    assert gradient_check(f, params) <= 1e-4


def test_pool_visual():
    u, v = np.array([1.0, 2.0]), np.array([3.0, -2.0])
    toks = Tensor(np.stack([np.stack([u, np.zeros(2)]), np.stack([v, np.ones(2)])]))
    np.testing.assert_allclose(pool_visual(toks).data, (u + v) / 2)
    np.testing.assert_allclose(pool_visual(toks[:1]).data, u)
    np.testing.assert_allclose(pool_visual(toks[::-1]).data, (u + v) / 2)
    with pytest.raises(ValueError):
        pool_visual(Tensor(np.zeros((0, 2, 2))))


def test_pool_groups():
    cls = Tensor(np.array([[1.0], [3.0], [10.0]]))
    np.testing.assert_allclose(pool_groups(cls, [2, 1]).data, [[2.0], [10.0]])
    with pytest.raises(ValueError):
        pool_groups(cls, [3, 0])


def test_frozen_encoder_gets_no_gradient(encoder):
    before = param_checksum(encoder)
    feats = encode_images([grid("frozen")], encoder)
    assert not feats.F.requires_grad
    assert param_checksum(encoder) == before


def test_zero_head_error_is_ink_energy():
    # targets are ink (1 - pixel): background costs nothing, glyph pixels cost 1 each
    rng = np.random.default_rng(0)
    enc = VisionEncoder(SMALL, rng, np.float64)
    from vist.layers import Linear

    head = Linear(16, SMALL.patch_dim, rng, np.float64)
    head.weight.data[...] = 0
    head.bias.data[...] = 0
    g = grid("a")
    err = reconstruction_error(enc, head, [g], rng, hide_frac=1.0)
    ink = 1.0 - g.patches[~g.empty_mask]
    assert float(err.data) == pytest.approx(float((ink**2).mean()))


def test_pretraining_beats_frozen_random():
    texts = [f"the {w} of line {i} is here" for i, w in enumerate(["river", "copper", "beacon", "ember"] * 6)]
    grids = [grid(t) for t in texts]
    train, held = grids[:20], grids[20:]
    cfg = SMALL.__class__(d_model=16, layers=1, heads=2, pretrain_mode="masked-pixel-reconstruction")
    enc_p, head_p, losses = pretrain_vision(train, cfg, steps=60, batch=4, lr=3e-3, seed=0, dtype=np.float64)
    enc_r, head_r, _ = pretrain_vision(train, cfg, steps=60, batch=4, lr=3e-3, seed=0, train_encoder=False,
                                       dtype=np.float64)
    assert losses[-1] < losses[0]
    with tc.no_grad():
        e_p = float(reconstruction_error(enc_p, head_p, held, np.random.default_rng(9)).data)
        e_r = float(reconstruction_error(enc_r, head_r, held, np.random.default_rng(9)).data)
    assert e_p < e_r
    assert not any(p.requires_grad for p in enc_p.parameters())


def test_pretrain_rejects_empty_corpus():
    with pytest.raises(ValueError):
        pretrain_vision([], SMALL)


def test_config_validation():
    with pytest.raises(ValueError):
        VisionConfig(d_model=10, heads=4)
    with pytest.raises(ValueError):
        VisionConfig(pretrain_mode="clip")
    assert VisionConfig().seq_len == 257 == RenderConfig().num_patches + 1
