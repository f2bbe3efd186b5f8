import numpy as np
import pytest

from roomagent.motion.autodiff import Tensor, no_grad
from roomagent.motion.frames import MotionClip, stance_clip
from roomagent.motion.vae import CausalVae, LatentSeq, ModelConfig


@pytest.fixture(scope="module")
def vae():
    model = CausalVae(ModelConfig(), np.random.default_rng(0))
    # the zero-initialized heads would make sensitivity checks vacuous
    rng = np.random.default_rng(99)
    for head in (model.mean_head, model.logvar_head, model.out_head):
        head.weight.data = rng.normal(0, 0.05, head.weight.data.shape)
    return model


def random_latents(rng, n, h=64, r=4):
    return LatentSeq(rng.standard_normal((n, h)), r)


class TestEncode:
    def test_token_count(self, vae):
        clip = stance_clip(40)
        mean, logvar, sample = vae.encode(clip)
        assert mean.n_tokens == 10

    def test_indivisible_frame_count_rejected(self, vae):
        with pytest.raises(ValueError, match="divisible"):
            vae.encode(stance_clip(41))

    def test_deterministic_mode_repeats(self, vae):
        clip = stance_clip(20)
        a = vae.encode(clip)[0]
        b = vae.encode(clip)[0]
        assert np.array_equal(a.tokens, b.tokens)

    def test_zero_clip_zero_head_gives_zero_mean(self):
        cfg = ModelConfig()
        fresh = CausalVae(cfg, np.random.default_rng(3))
        clip = MotionClip(np.zeros((8, cfg.frame_dim)))
        mean, _, _ = fresh.encode(clip)
        assert np.abs(mean.tokens).max() == 0.0

    def test_sampling_uses_rng(self, vae):
        clip = stance_clip(20)
        _, _, s1 = vae.encode(clip, sample_rng=np.random.default_rng(1))
        _, _, s2 = vae.encode(clip, sample_rng=np.random.default_rng(2))
        mean, _, s_det = vae.encode(clip)
        assert not np.array_equal(s1.tokens, s2.tokens)
        assert np.array_equal(s_det.tokens, mean.tokens)


class TestDecodePrefixExactness:
    def test_prefix_bit_exact(self, vae):
        rng = np.random.default_rng(5)
        zg = random_latents(rng, 5)
        zf = random_latents(rng, 10)
        joint = vae.decode(zg.concat(zf), 60)
        solo = vae.decode(zg, 20)
        assert np.array_equal(joint.frames[:20], solo.frames)

    def test_perturbing_last_token_only_touches_its_span(self, vae):
        rng = np.random.default_rng(6)
        z = random_latents(rng, 8)
        base = vae.decode(z, 32)
        z2 = LatentSeq(z.tokens.copy(), z.frames_per_token)
        z2.tokens[-1] += 1.0
        bumped = vae.decode(z2, 32)
        # frames before the last token's span are bit-identical
        assert np.array_equal(base.frames[:28], bumped.frames[:28])
        assert not np.array_equal(base.frames[28:], bumped.frames[28:])

    def test_single_token_decode(self, vae):
        z = random_latents(np.random.default_rng(7), 1)
        out = vae.decode(z, 4)
        assert out.frames.shape == (4, vae.cfg.frame_dim)

    def test_masked_graph_path_matches_sliced(self, vae):
        rng = np.random.default_rng(8)
        z = random_latents(rng, 6)
        sliced = vae.decode(z, 24)
        with no_grad():
            masked = vae._decode_graph(Tensor(z.tokens[None]), 24)
        assert np.abs(masked.data[0] - sliced.frames).max() < 1e-10

    def test_shape_mismatch_rejected(self, vae):
        z = random_latents(np.random.default_rng(9), 5)
        with pytest.raises(ValueError):
            vae.decode(z, 24)


class TestCausalLeakage:
    def test_zero_gradient_region_by_perturbation(self, vae):
        """For every frame n and token k > floor(n/r): zero influence."""
        rng = np.random.default_rng(10)
        z = random_latents(rng, 4)
        base = vae.decode(z, 16)
        r = vae.cfg.frames_per_token
        for k in range(4):
            z2 = LatentSeq(z.tokens.copy(), r)
            z2.tokens[k] += 0.5
            out = vae.decode(z2, 16)
            for n in range(16):
                if n // r < k:
                    assert np.array_equal(out.frames[n], base.frames[n]), (n, k)

    def test_encoder_token_causality(self, vae):
        """Token k of the encoding ignores frames after its span."""
        rng = np.random.default_rng(11)
        frames = rng.standard_normal((16, vae.cfg.frame_dim))
        mean_a, _, _ = vae.encode(MotionClip(frames))
        bumped = frames.copy()
        bumped[12:] += 1.0  # frames in the last token's span only
        mean_b, _, _ = vae.encode(MotionClip(bumped))
        assert np.allclose(mean_a.tokens[:3], mean_b.tokens[:3], atol=1e-12)
        assert not np.allclose(mean_a.tokens[3], mean_b.tokens[3], atol=1e-12)
