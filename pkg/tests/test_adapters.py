import numpy as np
import pytest

from lumaflux import adapters as ad
from lumaflux import colorimetry as cm
from lumaflux.errors import ConfigError, DimensionError, DomainError

CFG = ad.ToyBlockConfig(d=8, n_tokens=8, heads=4, layers=2, rank=4,
                        d_p=8, c_phys=4, d_g=4, k_bands=4, psi_hidden=8)


@pytest.fixture(scope="module")
def backbone():
    return ad.BackboneWeights.seeded(CFG, seed=0)


@pytest.fixture(scope="module")
def inputs():
    return ad.demo_inputs(CFG, seed=2)


class TestConfig:
    def test_head_divisibility(self):
        with pytest.raises(ConfigError):
            ad.ToyBlockConfig(d=10, heads=4)

    def test_default_scale_matches_module_contract(self):
        cfg = ad.ToyBlockConfig()
        assert (cfg.d, cfg.n_tokens, cfg.heads, cfg.layers, cfg.rank, cfg.d_p) == \
            (64, 64, 4, 2, 8, 32)


class TestPsi:
    def test_nonnegative_gates(self):
        state = ad.AdapterState.seeded(CFG, seed=1)
        mod, _ = ad.psi(0.3, 0, state, CFG)
        assert mod.n_spec >= 0.0 and mod.lam >= 0.0

    def test_continuity_in_t(self):
        state = ad.AdapterState.seeded(CFG, seed=1)
        a, _ = ad.psi(0.5, 1, state, CFG)
        b, _ = ad.psi(0.5 + 1e-6, 1, state, CFG)
        for name in ("alpha_pga", "beta_pga", "alpha_pcm", "beta_pcm", "n_spec", "lam"):
            assert abs(getattr(a, name) - getattr(b, name)) <= 1e-4

    def test_layer_embedding_matters(self):
        state = ad.AdapterState.seeded(CFG, seed=1)
        a, _ = ad.psi(0.5, 0, state, CFG)
        b, _ = ad.psi(0.5, 1, state, CFG)
        assert a.alpha_pga != b.alpha_pga

    def test_domain_checks(self):
        state = ad.AdapterState.null(CFG)
        with pytest.raises(DomainError):
            ad.psi(1.5, 0, state, CFG)
        with pytest.raises(IndexError):
            ad.psi(0.5, 5, state, CFG)


class TestPga:
    def test_null_state_zero_residual(self):
        state = ad.AdapterState.null(CFG)
        mod, _ = ad.psi(0.5, 0, state, CFG)
        r, _ = ad.pga_residual(state, np.zeros(CFG.c_phys + CFG.d_g),
                               np.zeros(CFG.k_bands), mod, CFG)
        np.testing.assert_array_equal(r, 0.0)

    def test_zero_inputs_give_half_gates(self):
        state = ad.AdapterState.null(CFG)
        mod = ad.ModulationParams(0.0, 1.0, 0.0, 0.0, 0.0, 0.0)
        r, cache = ad.pga_residual(state, np.zeros(CFG.c_phys + CFG.d_g),
                                   np.zeros(CFG.k_bands), mod, CFG)
        np.testing.assert_allclose(cache["gate"], 0.5, atol=1e-12)
        # beta=1 with sigmoid(0) gates -> 0.5 * I column scaling
        np.testing.assert_allclose(r, 0.5 * np.eye(CFG.d), atol=1e-12)

    def test_rank_bounded(self):
        state = ad.AdapterState.seeded(CFG, seed=3)
        assert ad.low_rank_svd_tail(state, CFG) <= 1e-9

    def test_shape_checks(self):
        state = ad.AdapterState.null(CFG)
        mod = ad.ModulationParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(DimensionError):
            ad.pga_residual(state, np.zeros(3), np.zeros(CFG.k_bands), mod, CFG)


class TestPcm:
    def test_null_state_is_layer_norm(self, backbone):
        state = ad.AdapterState.null(CFG)
        mod, _ = ad.psi(0.5, 0, state, CFG)
        h = np.random.default_rng(4).normal(size=(CFG.n_tokens, CFG.d))
        t_perc = np.random.default_rng(5).normal(size=(CFG.n_tokens, CFG.d_p))
        out, _ = ad.pcm_film(h, t_perc, state, mod)
        from lumaflux import tensorcore as tc
        np.testing.assert_array_equal(out, tc.layer_norm(h, ad.LN_EPS))

    def test_scale_invariance_of_normalized_path(self):
        # FiLM acts on layer-normed input, so positive rescaling of h is absorbed
        state = ad.AdapterState.seeded(CFG, seed=6)
        mod, _ = ad.psi(0.4, 0, state, CFG)
        rng = np.random.default_rng(7)
        h = rng.normal(size=(CFG.n_tokens, CFG.d))
        t_perc = rng.normal(size=(CFG.n_tokens, CFG.d_p))
        a, _ = ad.pcm_film(h, t_perc, state, mod)
        b, _ = ad.pcm_film(37.0 * h, t_perc, state, mod)
        # exact only in the eps -> 0 limit of layer norm
        np.testing.assert_allclose(a, b, atol=1e-5)

    def test_token_count_mismatch(self):
        state = ad.AdapterState.null(CFG)
        mod = ad.ModulationParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        with pytest.raises(DimensionError):
            ad.pcm_film(np.zeros((4, CFG.d)), np.zeros((3, CFG.d_p)), state, mod)


class TestCoupler:
    def test_lambda_zero_passthrough(self):
        state = ad.AdapterState.seeded(CFG, seed=8)
        mod = ad.ModulationParams(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
        rng = np.random.default_rng(9)
        z = rng.normal(size=(CFG.n_tokens, CFG.d))
        out, _ = ad.coupler(z, rng.normal(size=(CFG.n_tokens, CFG.c_phys)),
                            rng.normal(size=(CFG.n_tokens, CFG.d)), state, mod)
        np.testing.assert_array_equal(out, z)

    def test_linear_in_lambda(self):
        state = ad.AdapterState.seeded(CFG, seed=10)
        rng = np.random.default_rng(11)
        z = rng.normal(size=(CFG.n_tokens, CFG.d))
        tp = rng.normal(size=(CFG.n_tokens, CFG.c_phys))
        conn = rng.normal(size=(CFG.n_tokens, CFG.d))
        m1 = ad.ModulationParams(0, 0, 0, 0, 0, 1.0)
        m2 = ad.ModulationParams(0, 0, 0, 0, 0, 2.0)
        o1, _ = ad.coupler(z, tp, conn, state, m1)
        o2, _ = ad.coupler(z, tp, conn, state, m2)
        np.testing.assert_allclose(o2 - z, 2.0 * (o1 - z), atol=1e-12)


class TestBlock:
    def test_null_adapters_preserve_backbone_bit_exact(self, backbone, inputs):
        state = ad.AdapterState.null(CFG)
        z = inputs[0]
        adapted, _ = ad.block_forward(z, *inputs[1:], backbone, state, CFG,
                                      t=0.5, layer=0)
        vanilla = ad.vanilla_block_forward(z, backbone, CFG.heads)
        assert np.array_equal(adapted, vanilla)

    def test_adapters_change_output(self, backbone, inputs):
        state = ad.AdapterState.seeded(CFG, seed=12)
        z = inputs[0]
        adapted, _ = ad.block_forward(z, *inputs[1:], backbone, state, CFG)
        vanilla = ad.vanilla_block_forward(z, backbone, CFG.heads)
        assert not np.allclose(adapted, vanilla)

    def test_latent_shape_check(self, backbone, inputs):
        state = ad.AdapterState.null(CFG)
        with pytest.raises(DimensionError):
            ad.block_forward(np.zeros((3, CFG.d)), *inputs[1:], backbone, state, CFG)


class TestGradients:
    def test_all_groups_pass(self, backbone, inputs):
        state = ad.AdapterState.seeded(CFG, seed=1)
        report = ad.grad_check_adapters(backbone, state, CFG, inputs=inputs)
        assert report["passed"], report
        for group, entry in report["groups"].items():
            assert entry["max_rel_error"] <= 1e-4, (group, entry)

    def test_zeroed_av_kills_bv_gradient(self, backbone, inputs):
        state = ad.AdapterState.seeded(CFG, seed=13)
        state.a_v[:] = 0.0
        z = inputs[0]
        out, cache = ad.block_forward(z, *inputs[1:], backbone, state, CFG)
        grads = ad.block_backward(cache, backbone, state, CFG, out)
        np.testing.assert_array_equal(grads.b_v, 0.0)
        assert np.any(grads.a_v != 0.0)

    def test_psi_gradient_flow(self, backbone, inputs):
        state = ad.AdapterState.seeded(CFG, seed=14)
        z = inputs[0]
        out, cache = ad.block_forward(z, *inputs[1:], backbone, state, CFG,
                                      t=0.25, layer=1)
        grads = ad.block_backward(cache, backbone, state, CFG, out)
        assert np.any(grads.psi_w_head != 0.0)
        # only the active layer's embedding receives gradient
        assert np.all(grads.psi_emb[0] == 0.0)
        assert np.any(grads.psi_emb[1] != 0.0)


class TestPerceptualStub:
    def test_deterministic(self):
        rng = np.random.default_rng(15)
        sdr = cm.TaggedImage(rng.uniform(0, 1, (32, 32, 3)),
                             cm.ColorSpaceTag(cm.Primaries.BT709,
                                              cm.Transfer.GAMMA709, 100.0))
        a = ad.perceptual_stub(sdr, d_p=8, seed=3)
        b = ad.perceptual_stub(sdr, d_p=8, seed=3)
        assert np.array_equal(a, b)
        assert a.shape == (4, 8)

    def test_seed_changes_projection(self):
        rng = np.random.default_rng(16)
        sdr = cm.TaggedImage(rng.uniform(0, 1, (16, 16, 3)),
                             cm.ColorSpaceTag(cm.Primaries.BT709,
                                              cm.Transfer.GAMMA709, 100.0))
        assert not np.allclose(ad.perceptual_stub(sdr, 8, seed=0),
                               ad.perceptual_stub(sdr, 8, seed=1))

    def test_too_small_image(self):
        sdr = cm.TaggedImage(np.zeros((8, 8, 3)),
                             cm.ColorSpaceTag(cm.Primaries.BT709,
                                              cm.Transfer.GAMMA709, 100.0))
        with pytest.raises(ConfigError):
            ad.perceptual_stub(sdr, 8)


class TestPipelineWrapper:
    def test_feature_fed_block(self):
        from lumaflux import features as ft
        cfg = ad.ToyBlockConfig(d=8, n_tokens=4, heads=2, layers=2, rank=2,
                                d_p=8, c_phys=3, d_g=4, k_bands=4, psi_hidden=8)
        rng = np.random.default_rng(17)
        sdr = cm.TaggedImage(rng.uniform(0, 1, (32, 32, 3)),
                             cm.ColorSpaceTag(cm.Primaries.BT709,
                                              cm.Transfer.GAMMA709, 100.0))
        w = np.zeros((3, 3, 3, 3))
        for c in range(3):
            w[c, 1, 1, c] = 1.0
        feats = ft.extract_phys(sdr, w)
        desc = ft.spectral_descriptor(feats.y_map, cfg.k_bands)
        t_perc = ad.perceptual_stub(sdr, cfg.d_p, seed=0)[: cfg.n_tokens]
        backbone = ad.BackboneWeights.seeded(cfg, 0)
        state = ad.AdapterState.seeded(cfg, 1)
        z = rng.normal(size=(cfg.n_tokens, cfg.d))
        out = ad.toy_block_forward(z, feats, desc, t_perc, backbone, state, cfg)
        assert out.shape == z.shape
        assert np.all(np.isfinite(out))
