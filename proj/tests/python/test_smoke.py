import math
from pathlib import Path

import numpy as np
import pytest

import deepmide

FIXTURES = Path(__file__).resolve().parents[2] / "fixtures"


def test_box_cox_round_trip():
    v = np.array([0.5, 2.0, 7.5, 14.0])
    for lam in (0.0, 0.5, 1.0):
        w = deepmide.box_cox(v, lam)
        np.testing.assert_allclose(deepmide.inverse_box_cox(w, lam), v, rtol=1e-12)
    assert deepmide.box_cox(4.0, 0.5) == pytest.approx(2.0)
    with pytest.raises(deepmide.DomainError):
        deepmide.box_cox(0.0, 0.0)


def test_fit_box_cox_recovers_power():
    rng = np.random.default_rng(3)
    w = rng.normal(2.0, 0.6, 20000)
    w = w[1 + 0.5 * w > 0]
    lam = deepmide.fit_box_cox(deepmide.inverse_box_cox(w, 0.5))
    assert abs(lam - 0.5) <= 0.05


def test_propagator_matches_scalar_kernel():
    sites = np.array([[0.0, 0.0], [12.0, 5.0]])
    theta = np.array([[3.0, -1.0], [1.0, 2.0]])
    k = deepmide.propagator(2.0, theta, sites, 9.0, 14.0)
    assert k.shape == (4, 4)
    s, x = sites[0], sites[1]
    d = s - x - theta[0] * 2.0 + theta[1] * 3.0
    assert k[0, 3] == pytest.approx(math.exp(-(d @ d) / 14.0**2), rel=1e-12)
    kn = deepmide.propagator(2.0, theta, sites, 30.0, 30.0, normalize=True)
    assert kn.sum(axis=1).max() <= 1.0 + 1e-12
    assert deepmide.spectral_radius(kn) <= 1.0 + 1e-10


def test_noise_covariance_is_psd():
    sites = np.array([[0.0, 0.0], [10.0, 0.0], [3.0, 8.0]])
    c = deepmide.noise_covariance(sites, 2, 0.5, 10.0)
    assert c.shape == (6, 6)
    np.testing.assert_array_equal(c, c.T)
    assert np.linalg.eigvalsh(c).min() >= -1e-12
    assert np.all(c[:3, 3:] == 0.0)


def test_metric_arithmetic():
    assert deepmide.instance_count(deepmide.roll_count(10080, 144, 144), 144, 3, 3) == 90720
    assert abs(deepmide.improvement(0.660, 0.689) - 4.21) < 0.01
    assert deepmide.wind_shear(10.0, 9.0, 180.0, 140.0) == pytest.approx(math.log(10 / 9) / math.log(180 / 140), rel=1e-14)
    assert deepmide.wind_shear(10.0, 9.0, 180.0, 140.0) == pytest.approx(0.4192, abs=1e-4)


def test_gradcheck_passes():
    r = deepmide.gradcheck(seed=7, instances=2, coords=20)
    assert r["passed"]
    assert r["max_rel_error"] <= 1e-3


def test_simulate_is_reproducible(tmp_path):
    cfg = tmp_path / "sim.cfg"
    cfg.write_text(
        "[simulate]\nsites = A 0 0; B 40 0\nheights = 100, 140\nn_times = 200\n"
        "kernel_epoch = 1\nell_same = 12\nell_cross = 3\nraster_width = 8\nraster_height = 8\n"
    )
    a = deepmide.simulate(str(cfg), seed=4, out=str(tmp_path / "fx"))
    b = deepmide.simulate(str(cfg), seed=4)
    assert a["speeds"].shape == (200, 2, 2)
    assert a["theta"].shape == (200, 2, 2)
    np.testing.assert_array_equal(a["speeds"], b["speeds"])
    assert (tmp_path / "fx" / "obs.csv").exists()
    with pytest.raises(deepmide.ConfigError):
        bad = tmp_path / "bad.cfg"
        bad.write_text("[simulate]\nn_times = lots\n")
        deepmide.simulate(str(bad))


def test_fit_and_forecast(tmp_path):
    cfg = tmp_path / "fit.cfg"
    text = (FIXTURES / "small-3x3.cfg").read_text()
    cfg.write_text(text.replace("max_epochs = 1500", "max_epochs = 2"))
    fx = FIXTURES / "small-3x3"
    model = deepmide.fit(str(fx / "obs.csv"), str(fx / "maps"), str(cfg), sites=str(fx / "sites.csv"))
    assert model.epochs >= 1
    assert set(model.omega) == {"ell_same", "ell_cross", "sigma_eps", "ell_eps", "sigma_eta", "ell_eta"}
    assert all(v > 0 for v in model.omega.values())
    path = tmp_path / "model.bin"
    model.save(str(path))
    back = deepmide.Model.load(str(path))
    assert back.checksum == model.checksum

    f = back.forecast(str(fx / "obs.csv"), str(fx / "maps"), horizon=12, issue="2020-07-10T17:10:00Z", history=300)
    assert f["mean"].shape == (12, 9)
    assert np.all(f["lo"] <= f["mean"]) and np.all(f["mean"] <= f["hi"])
    assert f["theta"].shape == (12, 3, 2)
