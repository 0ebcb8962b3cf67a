import warnings

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from notchkit.chain import ImpairmentConfig, apply_skew
from notchkit.estimators import EyeClosureRegressor, NotchPerturbation, SkewEstimator, SpectralStitcher
from notchkit.perturbation import NotchSpec
from notchkit.stitching import StitchPlan, run_plan, stitch


class TestNotchPerturbation:
    def test_params_and_clone(self):
        est = NotchPerturbation(kind="single", center_hz=20e9, width_hz=2e9)
        params = est.get_params()
        assert params["kind"] == "single" and params["center_hz"] == 20e9
        c = clone(est)
        assert c.get_params() == params and not hasattr(c, "filter_")
        est.set_params(width_hz=4e9)
        assert est.width_hz == 4e9

    def test_fit_transform(self, rrc_small):
        est = NotchPerturbation(kind="dual", center_hz=21e9, width_hz=2e9, boi_lo=-44e9, boi_hi=44e9)
        out = est.fit_transform(rrc_small)
        assert est.notch_ == NotchSpec("dual", 21e9, 2e9)
        assert 0.9 < est.norm_ < 1
        m = rrc_small.fft_band_mask(-44e9, 44e9)
        p_in = np.sum(np.abs(np.fft.fft(rrc_small.pol_x)[m]) ** 2)
        p_out = np.sum(np.abs(np.fft.fft(out.pol_x)[m]) ** 2)
        assert p_out == pytest.approx(p_in, rel=1e-9)

    def test_not_fitted(self, rrc_small):
        with pytest.raises(NotFittedError):
            NotchPerturbation().transform(rrc_small)


def test_spectral_stitcher(rrc_small, boi44):
    plan = StitchPlan.uniform(boi44, 2e9, "dual")
    traces = run_plan(plan, rrc_small, ImpairmentConfig(nfl_tx_db=-21, seed=1), "Card2OSA", 500e6, averaging=4)
    est = SpectralStitcher().fit(traces)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ref = stitch(traces)
    assert np.array_equal(est.nfl_.psd, ref.nfl.psd)
    assert np.array_equal(est.sndr_, ref.sndr_db, equal_nan=True)
    assert np.array_equal(est.freqs_, ref.freqs)
    assert clone(SpectralStitcher(boi_lo=-1e9, boi_hi=1e9)).boi_lo == -1e9


class TestSkewEstimator:
    def test_fit_transform(self, rrc_small):
        cfg = ImpairmentConfig(skew_ps=0.5)
        est = SkewEstimator(n_repeats=1, n_traces_avg=1).fit(rrc_small, cfg)
        assert est.tau_hat_ == pytest.approx(0.5, abs=1e-3)
        assert est.std_ == 0 and est.cost_curve_.shape == (12, 2)
        fixed = est.transform(rrc_small)
        assert np.allclose(apply_skew(fixed, 0.5).pol_x, rrc_small.pol_x, atol=1e-3)

    def test_not_fitted(self, rrc_small):
        with pytest.raises(NotFittedError):
            SkewEstimator().transform(rrc_small)
        assert clone(SkewEstimator(step=0.1)).step == 0.1


class TestEyeClosureRegressor:
    def test_exact(self):
        x = np.linspace(0.001, 0.05, 10)
        y = (0.01 + x) / 0.9
        reg = EyeClosureRegressor().fit(x[:, None], y)
        assert reg.ec_ == pytest.approx(0.9) and reg.nsr_trx_ == pytest.approx(0.01)
        assert reg.score(x[:, None], y) == pytest.approx(1.0)
        assert np.allclose(reg.predict(x[:, None]), y)
        assert reg.coef_[0] == pytest.approx(1 / 0.9) and reg.intercept_ == pytest.approx(0.01 / 0.9)

    def test_errors(self):
        with pytest.raises(NotFittedError):
            EyeClosureRegressor().predict([[0.1]])
        with pytest.raises(ValueError):
            EyeClosureRegressor().fit(np.ones((4, 2)), np.ones(4))
