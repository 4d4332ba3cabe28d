import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from dahsi import DAHSI
from dahsi.dynamics import get_preset
from dahsi.library import mask_key


@pytest.fixture(scope="module")
def lv_fit():
    pre = get_preset("lotka_volterra")
    data = pre.dataset(omega=0.05, seed=1, n_points=401)
    est = DAHSI(lambdas=(0.05, 0.1), n_init=2, beta_max=20, random_state=0)
    est.fit(data.Y[:201], dt=pre.dt)
    return pre, data, est


def test_params_round_trip():
    est = DAHSI(lambdas=(0.2, 0.3), n_init=3)
    assert est.get_params()["n_init"] == 3
    twin = clone(est)
    assert twin.get_params() == est.get_params()
    est.set_params(alpha=1.2)
    assert est.alpha == 1.2


def test_unfitted():
    with pytest.raises(NotFittedError):
        DAHSI().predict(np.zeros(3), 5)


def test_fit_recovers_lotka_volterra(lv_fit):
    pre, _, est = lv_fit
    assert mask_key(est.model_.mask) == mask_key(pre.model.mask)
    assert est.pool_.to_dict()["runs"] == 4
    assert "dx/dt" in est.equations()


def test_select_and_score(lv_fit):
    pre, data, est = lv_fit
    est.select(data.Y[201:], window_points=20)
    assert mask_key(est.model_.mask) == mask_key(pre.model.mask)
    assert min(s.dAIC for s in est.validation_.scores) == 0.0
    assert est.score(data.Y[201:]) <= 0.0


def test_predict_follows_truth(lv_fit):
    pre, _, est = lv_fit
    path = est.predict(pre.x0, 20)
    np.testing.assert_allclose(path, pre.simulate(20), atol=0.05)
    with pytest.raises(ValueError):
        est.predict(np.zeros(3), 5)


@pytest.mark.parametrize("kw, fit_kw", [
    ({}, {"dt": -1.0}),
    ({"random_state": -3}, {"dt": 0.05}),
    ({}, {"dt": 0.05, "measured_indices": (0, 0)}),
])
def test_input_checks(kw, fit_kw):
    Y = get_preset("lotka_volterra").simulate(30)
    with pytest.raises(ValueError):
        DAHSI(**kw).fit(Y, **fit_kw)


def test_nan_rejected():
    Y = get_preset("lotka_volterra").simulate(30)
    Y[4, 1] = np.nan
    with pytest.raises(ValueError, match="row 4"):
        DAHSI().fit(Y, dt=0.05)


def test_cutoff_below_everything():
    pre = get_preset("lotka_volterra")
    with pytest.raises(RuntimeError):
        DAHSI(lambdas=(0.1,), n_init=1, beta_max=3, cutoff=1e-30).fit(pre.simulate(50), dt=pre.dt)
