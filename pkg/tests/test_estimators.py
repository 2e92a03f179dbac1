import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from conformal_spectrum import (
    AtomDetector,
    ConfigurationError,
    ConformalEigenvalueMaximizer,
    DensityField,
)
from conformal_spectrum.estimators import jittered_start

from .synthetic import bump_density


def test_params_roundtrip_and_clone():
    est = ConformalEigenvalueMaximizer(k=3, caps=(2.0, 4.0), budget=7)
    params = est.get_params()
    assert params["k"] == 3 and params["budget"] == 7
    twin = clone(est)
    assert twin.get_params() == params and twin is not est
    est.set_params(window=0.1)
    assert est.window == 0.1
    assert AtomDetector(threshold=0.1).get_params()["threshold"] == 0.1


def test_unfitted_access_raises():
    with pytest.raises(NotFittedError):
        ConformalEigenvalueMaximizer().score()
    with pytest.raises(NotFittedError):
        AtomDetector().transform()


def test_fit_small_torus(torus16):
    est = ConformalEigenvalueMaximizer(k=2, caps=(2.0, 4.0), budget=5).fit(torus16)
    assert est.n_features_in_ == torus16.n_vertices
    assert est.score() == est.lambda_k_ == est.spectrum_.eigenvalues[2]
    assert len(est.stages_) == 2 and est.stages_[0][0] == 2.0
    mu = est.density_
    assert np.isclose(mu.values @ mu.weights, 1.0)
    assert mu.values.max() <= 4.0 + 1e-12 and mu.values.min() >= -1e-12


def test_fit_from_given_start_and_jitter(torus16):
    w = torus16.vertex_weights()
    start = jittered_start(torus16, 0.2, 3, 0.0, 4.0)
    assert np.isclose(start.values @ w, 1.0)
    assert not np.allclose(start.values, start.values[0])
    a = ConformalEigenvalueMaximizer(k=1, caps=(4.0,), budget=2).fit(torus16, start.values)
    b = ConformalEigenvalueMaximizer(k=1, caps=(4.0,), budget=2, start="jitter", jitter=0.2,
                                     random_state=3).fit(torus16)
    assert np.allclose(a.density_.values, b.density_.values)


@pytest.mark.parametrize(
    "kwargs, exc",
    [
        ({"k": 0}, ConfigurationError),
        ({"k": True}, ConfigurationError),
        ({"caps": (4.0, 2.0)}, ConfigurationError),
        ({"caps": ()}, ConfigurationError),
        ({"lower_bound": -0.3}, ValueError),
        ({"start": "random"}, ValueError),
    ],
)
def test_invalid_parameters(torus16, kwargs, exc):
    with pytest.raises(exc):
        ConformalEigenvalueMaximizer(budget=1, **kwargs).fit(torus16)


def test_invalid_inputs(torus16):
    with pytest.raises(TypeError):
        ConformalEigenvalueMaximizer().fit(np.zeros((3, 3)))
    with pytest.raises(ValueError):
        AtomDetector().fit(torus16, np.ones(5))
    bad = np.ones(torus16.n_vertices)
    bad[0] = np.nan
    with pytest.raises(ValueError):
        AtomDetector().fit(torus16, bad)
    with pytest.raises(ConfigurationError):
        AtomDetector().fit(torus16, np.ones(torus16.n_vertices), stages=[(4.0, np.ones(torus16.n_vertices)), (2.0, np.ones(torus16.n_vertices))])


def test_detector_transform_zeroes_atom(torus64):
    rng = np.random.default_rng(0)
    mu = bump_density(torus64, [2000], [0.25], 0.7 * torus64.mean_edge_length(), rng)
    det = AtomDetector(k=2).fit(torus64, DensityField(mu, torus64.vertex_weights()))
    assert len(det.atoms_) == 1
    reg = det.transform()
    assert reg[2000] == 0 and np.isclose(reg @ torus64.vertex_weights(), det.regular_mass_)
    assert det.normalized_stages_ is None
    assert det.decomposition_.normalization == {"applied": False}
