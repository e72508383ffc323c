import numpy as np
import pytest

from kiebm import mri
from kiebm.ebm import EnergyModel, LangevinConfig
from kiebm.recon import (
    METHODS,
    ConfigurationError,
    ReconConfig,
    dc_image,
    dc_kspace,
    recon_kebm,
    recon_ski,
    reconstruct,
)

N = 16


@pytest.fixture(scope="module")
def models():
    return (EnergyModel.create("image", width=2, seed=0, dtype=np.float64),
            EnergyModel.create("weighted-kspace", width=2, seed=1, dtype=np.float64))


def _acq(R, seed=0, coils=3):
    truth = mri.shepp_logan(N)
    maps = mri.synth_sensitivities(coils, N, N)
    mask = mri.generate_mask("random2d", R, N, N, seed=seed)
    return truth, maps, mask, mri.simulate_acquisition(truth, maps, mask)


def _cfg(method, iters=3, **kw):
    lv = kw.pop("langevin", LangevinConfig(step=0.05, steps=2, noise_scale=1e-3, grad_clip=np.inf))
    return ReconConfig(method=method, outer_iters=iters, langevin=lv, **kw)


def _cplx(rng, shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


# -- data consistency --------------------------------------------------------

def test_dc_kspace_examples(rng):
    K, f = _cplx(rng, (2, 8, 8)), _cplx(rng, (2, 8, 8))
    mask = mri.generate_mask("random2d", 2, 8, 8, seed=0)
    om = mask.pattern.astype(bool)
    out = dc_kspace(K, f, mask, 0.0)
    np.testing.assert_array_equal(out[:, om], f[:, om])
    np.testing.assert_array_equal(out[:, ~om], K[:, ~om])
    np.testing.assert_allclose(dc_kspace(K, f, mask, 1e12), K, atol=1e-10)
    one = dc_kspace(np.zeros((1, 1, 1), complex), np.ones((1, 1, 1), complex), np.ones((1, 1)), 1.0)
    assert one[0, 0, 0] == 0.5 + 0j
    with pytest.raises(ValueError):
        dc_kspace(K, f[:1], mask, 0.0)


def test_dc_image_examples(rng):
    I, f = _cplx(rng, (2, 8, 8)), _cplx(rng, (2, 8, 8))
    np.testing.assert_allclose(dc_image(I, f, np.ones((8, 8)), 0.0), mri.ifft2c(f), atol=1e-12)
    np.testing.assert_allclose(dc_image(I, f, np.zeros((8, 8)), 0.0), I, atol=1e-12)
    single = np.zeros((8, 8))
    single[3, 5] = 1
    out = mri.fft2c(dc_image(I, f, single, 1.0))
    np.testing.assert_allclose(out[:, 3, 5], 0.5 * (f[:, 3, 5] + mri.fft2c(I)[:, 3, 5]), atol=1e-12)


@pytest.mark.parametrize("lam", [0.0, 0.5, 3.0])
def test_dc_does_not_increase_residual(rng, lam):
    K, f = _cplx(rng, (2, 8, 8)), _cplx(rng, (2, 8, 8))
    pattern = mri.generate_mask("random2d", 2, 8, 8, seed=1).pattern
    f = f * pattern
    res = lambda k: np.linalg.norm(pattern * k - f)  # noqa: E731
    assert res(dc_kspace(K, f, pattern, lam)) <= res(K) + 1e-12


# -- solvers -----------------------------------------------------------------

@pytest.mark.parametrize("method", METHODS)
def test_full_sampling_recovers_truth(models, method):
    truth, _, mask, f = _acq(1)
    r = reconstruct(f, mask, _cfg(method, iters=1), model_i=models[0], model_k=models[1], truth=truth)
    np.testing.assert_allclose(r.image, truth, atol=1e-10)
    assert r.psnr_trace[-1] > 150


def test_full_sampling_sensitivity_known(models):
    truth, maps, mask, f = _acq(1)
    cfg = _cfg("i-ebm", iters=1, calibration="sensitivity-known")
    r = reconstruct(f, mask, cfg, model_i=models[0], maps=maps)
    np.testing.assert_allclose(r.image, truth, atol=1e-10)
    with pytest.raises(ConfigurationError):
        reconstruct(f, mask, cfg, model_i=models[0])


@pytest.mark.parametrize("R", [2, 4])
@pytest.mark.parametrize("method", METHODS)
def test_hard_data_consistency(models, method, R):
    _, _, mask, f = _acq(R)
    r = reconstruct(f, mask, _cfg(method), model_i=models[0], model_k=models[1])
    om = mask.pattern.astype(bool)
    np.testing.assert_array_equal(r.kspace[:, om], f[:, om])
    assert np.all(r.image >= 0)


@pytest.mark.parametrize("method", METHODS)
def test_solver_determinism(models, method):
    _, _, mask, f = _acq(4)
    a = reconstruct(f, mask, _cfg(method), model_i=models[0], model_k=models[1], rng=5)
    b = reconstruct(f, mask, _cfg(method), model_i=models[0], model_k=models[1], rng=5)
    np.testing.assert_array_equal(a.image, b.image)
    np.testing.assert_array_equal(a.kspace, b.kspace)


def test_ski_without_stage2_equals_kebm(models):
    truth, _, mask, f = _acq(4)
    k = recon_kebm(f, mask, models[1], _cfg("k-ebm"), rng=3, truth=truth)
    s = recon_ski(f, mask, models[1], models[0], _cfg("ski-ebm", stage2_iters=0), rng=3, truth=truth)
    np.testing.assert_array_equal(s.image, k.image)
    np.testing.assert_array_equal(s.stage1_image, k.image)
    assert s.psnr_trace == k.psnr_trace


def test_kebm_without_weighting_uses_identity_weight(models):
    _, _, mask, f = _acq(4)
    cfg = _cfg("k-ebm", weight_p=0.0)
    # p = 0 means the weighted domain is the raw k-space
    assert np.all(mri.weight_matrix(cfg.weight_r, 0.0, N, N).values == 1)
    r = recon_kebm(f, mask, models[1], cfg, rng=0)
    assert np.all(np.isfinite(r.image))


def test_pki_with_identical_branches_is_plain_average(models):
    # a zero-energy prior without noise leaves both branches equal to the input
    zi, zk = EnergyModel.zeros("image", 2), EnergyModel.zeros("weighted-kspace", 2)
    _, _, mask, f = _acq(4)
    lv = LangevinConfig(step=0.1, steps=2, noise_scale=0.0)
    r = reconstruct(f, mask, _cfg("pki-ebm", langevin=lv), model_i=zi, model_k=zk)
    np.testing.assert_allclose(r.kspace, f, atol=1e-12)


def test_sos_output_invariant_to_coil_phase():
    zi = EnergyModel.zeros("image", 2)
    _, _, mask, f = _acq(4)
    lv = LangevinConfig(step=0.1, steps=2, noise_scale=0.0)
    phases = np.exp(1j * np.array([0.3, 1.1, -2.0]))[:, None, None]
    a = reconstruct(f, mask, _cfg("i-ebm", langevin=lv), model_i=zi)
    b = reconstruct(f * phases, mask, _cfg("i-ebm", langevin=lv), model_i=zi)
    np.testing.assert_allclose(a.image, b.image, atol=1e-12)


def test_domain_tag_mismatch(models):
    _, _, mask, f = _acq(2)
    with pytest.raises(ConfigurationError):
        reconstruct(f, mask, _cfg("i-ebm"), model_i=models[1])
    with pytest.raises(ConfigurationError):
        reconstruct(f, mask, _cfg("k-ebm"), model_k=models[0])


def test_config_validation():
    with pytest.raises(ConfigurationError):
        ReconConfig(outer_iters=0)
    with pytest.raises(ConfigurationError):
        ReconConfig(method="admm")
    with pytest.raises(ConfigurationError):
        ReconConfig(lambda_k=-1)
