import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from kiebm import datasets, mri
from kiebm.ebm import EnergyModel
from kiebm.estimators import EnergyPrior, KIEBMReconstructor, check_complex_images, check_kspace

TINY = dict(width=2, langevin_steps=2, batch_size=4, max_steps=2, epochs=1)


@pytest.fixture(scope="module")
def images():
    return datasets.coil_images(6, 16, 16, seed=0, coils=2)


def test_validation_helpers():
    assert check_complex_images(np.zeros((4, 4))).shape == (1, 4, 4)
    with pytest.raises(ValueError):
        check_complex_images(np.zeros((4,)))
    with pytest.raises(ValueError):
        check_complex_images(np.full((1, 4, 4), np.nan))
    with pytest.raises(ValueError):
        check_complex_images(np.zeros((0, 4, 4)))
    with pytest.raises(ValueError):
        check_kspace(np.zeros((2, 4, 4)), np.ones((4, 5)))
    with pytest.raises(ValueError):
        check_kspace(np.zeros((2, 4, 4)), np.full((4, 4), 2))


def test_energy_prior_params_and_clone():
    est = EnergyPrior(domain="weighted-kspace", width=4, weight_p=0.0)
    params = est.get_params()
    assert params["domain"] == "weighted-kspace" and params["weight_p"] == 0.0
    twin = clone(est)
    assert twin is not est and twin.get_params() == params
    assert est.set_params(width=8).width == 8


@pytest.mark.parametrize("domain", ["image", "weighted-kspace"])
def test_energy_prior_fit_and_score(images, domain):
    est = EnergyPrior(domain=domain, **TINY)
    with pytest.raises(NotFittedError):
        est.energy(images)
    assert est.fit(images) is est
    assert est.model_.domain == domain
    assert len(est.loss_trace_) == 2
    e = est.energy(images)
    assert e.shape == (6,) and np.all(np.isfinite(e))
    np.testing.assert_allclose(est.score_samples(images), -e)


def test_energy_prior_crops(images):
    est = EnergyPrior(crop=8, **TINY).fit(images)
    assert np.isfinite(est.loss_trace_).all()


def test_reconstructor_fit_predict(images):
    truth = mri.shepp_logan(16)
    maps = mri.synth_sensitivities(2, 16, 16)
    mask = mri.generate_mask("random2d", 1, 16, 16)
    f = mri.simulate_acquisition(truth, maps, mask)
    rec = KIEBMReconstructor(method="pki-ebm", image_prior=EnergyPrior(**TINY),
                             kspace_prior=EnergyPrior(**TINY), outer_iters=2)
    with pytest.raises(NotFittedError):
        rec.predict(f, mask)
    rec.fit(images)
    assert rec.image_model_.domain == "image" and rec.kspace_model_.domain == "weighted-kspace"
    np.testing.assert_allclose(rec.predict(f, mask), truth, atol=1e-10)


def test_reconstructor_accepts_ready_models():
    truth = mri.shepp_logan(16)
    mask = mri.generate_mask("random2d", 2, 16, 16, seed=1)
    f = mri.simulate_acquisition(truth, mri.synth_sensitivities(2, 16, 16), mask)
    rec = KIEBMReconstructor(method="k-ebm", kspace_prior=EnergyModel.create("weighted-kspace", width=2),
                             outer_iters=2, grad_clip=1e9, langevin_step=0.01)
    res = rec.reconstruct(f, mask, truth=truth)
    assert len(res.psnr_trace) == 2
    np.testing.assert_array_equal(res.kspace[:, mask.pattern == 1], f[:, mask.pattern == 1])
