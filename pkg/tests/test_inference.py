import itertools

import numpy as np
import pytest
import torch
from scipy.special import gamma

from urgan.data_sim import Volume, extract_slabs, make_phantom
from urgan.inference import (
    BUNDLE_KEYS,
    InferenceConfig,
    UncertaintyMaps,
    merge_slabs,
    mc_predict,
    predict_volume,
    write_bundle,
)
from urgan.io import read_volume
from urgan.networks import GeneratorConfig, build_generator


def make_gen(rate=0.2, seed=0):
    torch.manual_seed(seed)
    return build_generator(GeneratorConfig(in_channels=3, base_width=8, depth=2, dropout_rate=rate))


@pytest.fixture(scope="module")
def slabs():
    return extract_slabs(make_phantom(0, (6, 16, 16)), 3)


def brute_force_merge(items, depth, shape):
    out = np.zeros((depth, *shape))
    for k in range(depth):
        for i in range(shape[0]):
            for j in range(shape[1]):
                total, n = 0.0, 0
                for arr, (a, b) in items:
                    if a <= k < b:
                        total += arr[k - a, i, j]
                        n += 1
                out[k, i, j] = total / n
    return out


class TestConfig:
    def test_invalid_passes(self):
        with pytest.raises(ValueError):
            InferenceConfig(mc_passes=0)

    def test_defaults(self):
        assert InferenceConfig().mc_passes == 50


class TestUncertaintyMaps:
    def test_quadrature_sum(self):
        u = UncertaintyMaps.from_variances(np.array([9.0]), np.array([16.0]))
        assert u.sigma[0] == 5.0


class TestMcPredict:
    def test_zero_dropout(self, slabs):
        params, unc = mc_predict(make_gen(0.0), slabs, InferenceConfig(mc_passes=5))
        assert np.all(unc.sigma_epistemic == 0)
        np.testing.assert_array_equal(unc.sigma, unc.sigma_aleatoric)

    def test_single_pass(self, slabs):
        _, unc = mc_predict(make_gen(0.5), slabs, InferenceConfig(mc_passes=1))
        assert np.all(unc.sigma_epistemic == 0)

    def test_dropout_inactive(self, slabs):
        _, unc = mc_predict(make_gen(0.5), slabs, InferenceConfig(mc_passes=4, dropout_active=False))
        assert np.all(unc.sigma_epistemic == 0)

    def test_loop_oracle(self, slabs):
        gen = make_gen(0.3)
        cfg = InferenceConfig(mc_passes=6, seed=4)
        params, unc = mc_predict(gen, slabs, cfg)
        gen.eval()
        xs, als, bes = [], [], []
        with torch.no_grad():
            for r in range(6):
                out = gen(torch.as_tensor(slabs.data, dtype=torch.float32), dropout_active=True,
                          generator=torch.Generator().manual_seed(4 + r))
                xs.append(out.x_hat.double().numpy())
                als.append(out.alpha_hat.double().numpy())
                bes.append(out.beta_hat.double().numpy())
        x_mean = sum(xs) / 6
        a_mean = sum(als) / 6
        b_mean = sum(bes) / 6
        var_e = sum((x - x_mean) ** 2 for x in xs) / 6
        var_a = a_mean**2 * gamma(3 / b_mean) / gamma(1 / b_mean)
        np.testing.assert_allclose(params.x_hat, x_mean, rtol=0, atol=1e-10)
        np.testing.assert_allclose(params.alpha_hat, a_mean, rtol=1e-12, atol=1e-10)
        np.testing.assert_allclose(params.beta_hat, b_mean, rtol=0, atol=1e-10)
        np.testing.assert_allclose(unc.sigma_epistemic**2, var_e, rtol=1e-10, atol=1e-12)
        np.testing.assert_allclose(unc.sigma_aleatoric**2, var_a, rtol=1e-10, atol=1e-10)
        assert unc.sigma_epistemic.max() > 0

    def test_identities(self, slabs):
        _, unc = mc_predict(make_gen(0.3), slabs, InferenceConfig(mc_passes=5))
        np.testing.assert_allclose(unc.sigma**2, unc.sigma_aleatoric**2 + unc.sigma_epistemic**2, rtol=1e-10, atol=1e-10)
        assert np.all(unc.sigma >= np.maximum(unc.sigma_aleatoric, unc.sigma_epistemic))

    def test_reproducible(self, slabs):
        gen = make_gen(0.3)
        cfg = InferenceConfig(mc_passes=3, seed=9)
        a, ua = mc_predict(gen, slabs, cfg)
        b, ub = mc_predict(gen, slabs, cfg)
        np.testing.assert_array_equal(a.x_hat, b.x_hat)
        np.testing.assert_array_equal(ua.sigma, ub.sigma)

    def test_aleatoric_seed_invariant_without_dropout(self, slabs):
        gen = make_gen(0.0)
        _, u1 = mc_predict(gen, slabs, InferenceConfig(mc_passes=3, seed=1))
        _, u2 = mc_predict(gen, slabs, InferenceConfig(mc_passes=3, seed=2))
        np.testing.assert_array_equal(u1.sigma_aleatoric, u2.sigma_aleatoric)

    def test_mean_variance_mode(self, slabs):
        gen = make_gen(0.3)
        p1, u1 = mc_predict(gen, slabs, InferenceConfig(mc_passes=4))
        p2, u2 = mc_predict(gen, slabs, InferenceConfig(mc_passes=4, aleatoric="mean_variance"))
        np.testing.assert_array_equal(p1.x_hat, p2.x_hat)
        np.testing.assert_array_equal(u1.sigma_epistemic, u2.sigma_epistemic)
        assert not np.array_equal(u1.sigma_aleatoric, u2.sigma_aleatoric)

    def test_single_slab(self, slabs):
        params, unc = mc_predict(make_gen(0.2), slabs.data[0], InferenceConfig(mc_passes=2))
        assert params.shape == (3, 16, 16) and unc.sigma.shape == (3, 16, 16)

    def test_generator_mode_restored(self, slabs):
        gen = make_gen(0.2).train()
        mc_predict(gen, slabs, InferenceConfig(mc_passes=2))
        assert gen.training


class TestMerge:
    def test_single_slab(self):
        arr = np.random.default_rng(0).random((4, 3, 3))
        np.testing.assert_array_equal(merge_slabs([(arr, (0, 4))]), arr)

    def test_overlap(self):
        zero, one = np.zeros((3, 2, 2)), np.ones((3, 2, 2))
        out = merge_slabs([(zero, (0, 3)), (one, (2, 5))])
        assert np.all(out[:2] == 0) and np.all(out[2] == 0.5) and np.all(out[3:] == 1)

    def test_gap(self):
        with pytest.raises(ValueError, match=r"\[3\]"):
            merge_slabs([(np.zeros((3, 2, 2)), (0, 3)), (np.zeros((3, 2, 2)), (4, 7))])

    def test_trailing_gap(self):
        with pytest.raises(ValueError):
            merge_slabs([(np.zeros((3, 2, 2)), (0, 3))], depth=5)

    def test_span_mismatch(self):
        with pytest.raises(ValueError):
            merge_slabs([(np.zeros((2, 2, 2)), (0, 3))])

    def test_brute_force(self):
        rng = np.random.default_rng(1)
        slabs = extract_slabs(Volume(np.zeros((9, 4, 5))), 3, 1)
        items = [(rng.random((3, 4, 5)), span) for span in slabs.spans]
        np.testing.assert_array_equal(merge_slabs(items, 9), brute_force_merge(items, 9, (4, 5)))

    def test_order_independent(self):
        rng = np.random.default_rng(2)
        items = [(rng.random((3, 2, 2)), (k, k + 3)) for k in range(4)]
        ref = merge_slabs(items)
        for perm in itertools.permutations(items):
            np.testing.assert_allclose(merge_slabs(perm), ref, rtol=0, atol=1e-12)


class TestPredictVolume:
    def test_bundle(self, tmp_path):
        vol = make_phantom(2, (5, 16, 16))
        bundle = predict_volume(make_gen(0.2), vol, InferenceConfig(mc_passes=3))
        assert set(bundle) == set(BUNDLE_KEYS)
        for v in bundle.values():
            assert v.shape == vol.shape
        np.testing.assert_allclose(bundle["sigma"] ** 2,
                                   bundle["sigma_aleatoric"] ** 2 + bundle["sigma_epistemic"] ** 2, rtol=1e-10)
        write_bundle(tmp_path, "vol_000", bundle, render=True, nl="NL0")
        back = {k: read_volume(tmp_path / f"vol_000.{k}")[0].data for k in BUNDLE_KEYS}
        np.testing.assert_allclose(back["sigma"] ** 2, back["sigma_aleatoric"] ** 2 + back["sigma_epistemic"] ** 2,
                                   rtol=1e-6, atol=1e-6)
        assert len(list((tmp_path / "png").glob("*.png"))) == 6 * 5
