import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gradcheck import numeric_grad, rel_error
from oracles import cross_attention_oracle, temporal_attention_oracle
from talc.conditioning import MultiSceneScript, build_plan
from talc.denoiser import (
    Denoiser, DenoiserConfig, cross_attention_block, forward, forward_batch, init_params, patchify,
    preconditioning, temporal_attention_block, unpatchify,
)
from talc.errors import ConfigError, ShapeError
from talc.numerics import Rng, Tensor, mse
from talc.schedule import make_schedule
from talc.textenc import FrameConditioning, TextEncoder, Vocabulary

WORDS = "a red blue square circle moves left right up down dog cat".split()
VOCAB = Vocabulary.build(WORDS)


def small_cfg(**kw):
    base = dict(frames=8, height=8, width=8, dim=8, heads=2, blocks=1, patch=4, mix_hidden=4, ff_mult=2)
    base.update(kw)
    return DenoiserConfig(**base)


def random_caption(rng, lo=1, hi=5):
    return " ".join(WORDS[int(i)] for i in rng.integers(0, len(WORDS), int(rng.integers(lo, hi + 1))))


def random_conditioning(encoder, rng, L, k=2):
    embs = [encoder.encode(random_caption(rng)) for _ in range(k)]
    return FrameConditioning(tuple(embs[int(rng.integers(k))] for _ in range(L)))


class TestConfig:
    def test_validation(self):
        with pytest.raises(ConfigError):
            DenoiserConfig(height=15)
        with pytest.raises(ConfigError):
            DenoiserConfig(dim=30, heads=4)
        with pytest.raises(ConfigError):
            DenoiserConfig(sigma_data=0)

    def test_dict_round_trip(self):
        cfg = small_cfg(temporal=False)
        assert DenoiserConfig.from_dict(cfg.to_dict()) == cfg


class TestPatchify:
    def test_round_trip(self):
        cfg = small_cfg()
        z = Rng(0).normal((2, 3, 3, 8, 8))
        back = unpatchify(Tensor(patchify(z, cfg)), cfg, 2, 3).data
        np.testing.assert_array_equal(back, z)

    def test_patch_contents(self):
        cfg = small_cfg()
        z = Rng(1).normal((1, 1, 3, 8, 8))
        tok = patchify(z, cfg)[0, 0]
        np.testing.assert_array_equal(tok[1], z[0, 0, :, 0:4, 4:8].reshape(-1))


class TestPreconditioning:
    @given(st.integers(1, 1000))
    def test_unit_variance_identity(self, tau):
        cfg = DenoiserConfig()
        c_in, c_skip, c_out = (v[0] for v in preconditioning([tau], cfg))
        a = make_schedule().signal(tau)
        var = a * a * 0.25 + (1 - a * a)
        # skip explains part of the noise; c_out is the std of the rest
        assert abs(c_skip ** 2 * var + c_out ** 2 - 1.0) < 1e-12
        assert abs(c_in ** 2 * var - 1.0) < 1e-12

    def test_zero_head_is_skip(self):
        cfg = small_cfg()
        model = Denoiser.init(cfg, VOCAB, Rng(2))
        z = Rng(3).normal((4, 3, 8, 8))
        cond = FrameConditioning((model.encoder.null(),) * 4)
        out = forward(500, z, cond, model.params, cfg).data
        _, c_skip, _ = preconditioning([500], cfg)
        np.testing.assert_allclose(out, c_skip[0] * z, rtol=0, atol=1e-15)

    def test_disabled(self):
        cfg = small_cfg(precondition=False)
        model = Denoiser.init(cfg, VOCAB, Rng(2))
        out = forward(5, Rng(3).normal((2, 3, 8, 8)), FrameConditioning((model.encoder.null(),) * 2),
                      model.params, cfg).data
        assert np.all(out == 0)

    def test_timestep_range(self):
        cfg = small_cfg()
        model = Denoiser.init(cfg, VOCAB, Rng(2))
        with pytest.raises(ShapeError):
            forward(0, np.zeros((2, 3, 8, 8)), FrameConditioning((model.encoder.null(),) * 2), model.params, cfg)


class TestAttentionOracles:
    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_cross_attention(self, seed):
        rng = Rng(seed)
        cfg = small_cfg(heads=int(rng.choice([1, 2, 4])))
        params = init_params(cfg, rng.child("p"))
        enc = TextEncoder.init(VOCAB, cfg.dim, 6, rng.child("t"))
        B, L = int(rng.integers(1, 3)), int(rng.integers(1, 4))
        conds = [random_conditioning(enc, rng, L) for _ in range(B)]
        z = rng.normal((B, L, cfg.positions, cfg.dim))
        got = cross_attention_block(Tensor(z), conds, params, cfg).data
        np.testing.assert_allclose(got, cross_attention_oracle(z, conds, params, cfg.heads), rtol=0, atol=1e-10)

    @settings(max_examples=15, deadline=None)
    @given(st.integers(0, 10_000))
    def test_temporal_attention(self, seed):
        rng = Rng(seed)
        cfg = small_cfg(heads=int(rng.choice([1, 2, 4])))
        params = init_params(cfg, rng.child("p"))
        B, L = int(rng.integers(1, 3)), int(rng.integers(1, 5))
        z = rng.normal((B, L, cfg.positions, cfg.dim))
        got = temporal_attention_block(Tensor(z), params, cfg).data
        np.testing.assert_allclose(got, temporal_attention_oracle(z, params, cfg.heads), rtol=0, atol=1e-10)

    def test_pad_keys_get_no_weight(self):
        cfg = small_cfg()
        params = init_params(cfg, Rng(4))
        enc = TextEncoder.init(VOCAB, cfg.dim, 6, Rng(5))
        emb = enc.encode("a red square")
        _, w = cross_attention_block(Tensor(Rng(6).normal((1, 2, cfg.positions, cfg.dim))),
                                     [FrameConditioning((emb, emb))], params, cfg, return_weights=True)
        assert np.all(w.data[..., 3:] == 0)
        np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-12)

    def test_conditioning_frame_mismatch(self):
        cfg = small_cfg()
        params = init_params(cfg, Rng(4))
        enc = TextEncoder.init(VOCAB, cfg.dim, 6, Rng(5))
        with pytest.raises(ShapeError):
            cross_attention_block(Tensor(np.zeros((1, 3, cfg.positions, cfg.dim))),
                                  [FrameConditioning((enc.null(),) * 2)], params, cfg)


class TestForward:
    def test_shape_errors(self):
        cfg = small_cfg()
        model = Denoiser.init(cfg, VOCAB, Rng(0))
        cond = FrameConditioning((model.encoder.null(),) * 2)
        with pytest.raises(ShapeError):
            forward(3, np.zeros((2, 3, 4, 4)), cond, model.params, cfg)
        with pytest.raises(ShapeError):
            forward(3, np.zeros((9, 3, 8, 8)), FrameConditioning((model.encoder.null(),) * 9), model.params, cfg)
        with pytest.raises(ShapeError):
            forward_batch([3], np.zeros((2, 2, 3, 8, 8)), [cond, cond], model.params, cfg)

    def test_batch_matches_single(self):
        cfg = small_cfg()
        rng = Rng(7)
        model = Denoiser(cfg, init_params(cfg, rng.child("p"), zero_head=False), TextEncoder.init(VOCAB, 8, 6, rng))
        conds = [random_conditioning(model.encoder, rng, 3) for _ in range(3)]
        z = rng.normal((3, 3, 3, 8, 8))
        batch = model([10, 200, 900], z, conds).data
        for b, tau in enumerate([10, 200, 900]):
            single = forward(tau, z[b], conds[b], model.params, cfg).data
            np.testing.assert_allclose(batch[b], single, rtol=0, atol=1e-12)

    def test_frames_independent_without_temporal(self):
        cfg = small_cfg(temporal=False)
        rng = Rng(8)
        params = init_params(cfg, rng.child("p"), zero_head=False)
        enc = TextEncoder.init(VOCAB, 8, 6, rng)
        cond = random_conditioning(enc, rng, 4)
        z = rng.normal((4, 3, 8, 8))
        base = forward(50, z, cond, params, cfg).data
        z2 = z.copy()
        z2[0] += 1.0
        moved = forward(50, z2, cond, params, cfg).data
        assert np.max(np.abs(moved[1:] - base[1:])) < 1e-12
        assert np.max(np.abs(moved[0] - base[0])) > 1e-6

    def test_gradients_small(self):
        cfg = small_cfg()
        rng = Rng(9)
        model = Denoiser(cfg, init_params(cfg, rng.child("p"), zero_head=False), TextEncoder.init(VOCAB, 8, 4, rng))
        z, eps = rng.normal((2, 2, 3, 8, 8)), rng.normal((2, 2, 3, 8, 8))

        def loss():
            # re-encode so finite differences on the embedding table are seen
            cond_rng = Rng(11)
            conds = [random_conditioning(model.encoder, cond_rng, 2) for _ in range(2)]
            return mse(model([40, 700], z, conds), eps)

        loss().backward()
        pick = Rng(10)
        for name, p in model.parameters().items():
            idx = int(pick.integers(p.data.size))
            analytic = p.grad.reshape(-1)[idx] if p.grad is not None else 0.0
            num = numeric_grad(lambda: loss().item(), p, idx)
            assert rel_error(analytic, num) < 1e-4, name


class TestDenoiserInit:
    def test_deterministic(self):
        a = Denoiser.init(DenoiserConfig(), VOCAB, Rng(3))
        b = Denoiser.init(DenoiserConfig(), VOCAB, Rng(3))
        pa, pb = a.parameters(), b.parameters()
        assert list(pa) == list(pb)
        assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
        assert all(p.requires_grad for p in pa.values())

    def test_plan_integration(self):
        model = Denoiser.init(small_cfg(), VOCAB, Rng(3))
        plan = build_plan(MultiSceneScript(("a red square moves left", "a red square moves up")), 8, "talc",
                          model.encoder)
        out = forward(100, np.zeros((8, 3, 8, 8)), plan.frame_conditioning, model.params, model.cfg)
        assert out.shape == (8, 3, 8, 8)
