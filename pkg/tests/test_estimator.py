import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conftest import epi_dataset
from reactmc.estimator import REACT
from reactmc.exceptions import ValidationError
from reactmc.metrics import gradient_entropy
from reactmc.react import ReactConfig, estimate
from reactmc.recon import reconstruct_sos


@pytest.fixture(scope="module")
def data():
    X = np.zeros((4, 6))
    X[:, :2] = np.random.default_rng(3).uniform(-1.5, 1.5, (4, 2))
    return epi_dataset(32, 4, X=X)


def test_params_and_clone():
    est = REACT(n_iters=2, seed=4)
    assert clone(est).get_params() == est.get_params()
    assert est.set_params(tol_mm=0.05).tol_mm == 0.05


def test_fit_matches_functional_api(data):
    est = REACT(n_iters=2, seed=1).fit(data.acq, mask=data.mask)
    X, rep = estimate(data.acq, ReactConfig.numerical_study(n_iters=2, seed=1), mask=data.mask)
    assert np.array_equal(est.motion_.params, X.params)
    assert est.report_.evals == rep.evals and est.n_segments_ == 4
    assert est.predict() == est.motion_


def test_transform_and_score(data):
    est = REACT(n_iters=2, seed=1)
    img = est.fit_transform(data.acq, mask=data.mask)
    ref = reconstruct_sos(data.acq, est.motion_)
    np.testing.assert_allclose(img.data, ref.data, rtol=1e-12)
    assert est.score(data.acq, mask=data.mask) == pytest.approx(-gradient_entropy(img, data.mask))
    # the optimized objective went down
    assert est.report_.entropy[-1] < est.report_.entropy[0]


def test_transform_other_acquisition_same_trajectory(data):
    est = REACT(n_iters=1).fit(data.acq, mask=data.mask)
    other = epi_dataset(32, 4, phantom_seed=8)
    np.testing.assert_allclose(est.transform(other.acq).data,
                               reconstruct_sos(other.acq, est.motion_).data, rtol=1e-12)


def test_errors(data):
    with pytest.raises(NotFittedError):
        REACT().predict()
    with pytest.raises(NotFittedError):
        REACT().transform(data.acq)
    with pytest.raises(ValidationError):
        REACT().fit("not an acquisition")
    with pytest.raises(ValidationError):
        REACT().fit(data.acq, mask=np.ones((16, 16)))
    with pytest.raises(ValidationError):
        REACT(variant="grouped").fit(data.acq)
    est = REACT(n_iters=0).fit(data.acq)
    with pytest.raises(ValidationError):
        est.predict(epi_dataset(32, 8).acq)
