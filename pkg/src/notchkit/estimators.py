"""scikit-learn style wrappers over the functional API."""
from __future__ import annotations

import warnings

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin, TransformerMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .chain import ImpairmentConfig, InterfaceStage, apply_skew
from .estimation import SkewScenario, estimate_skew, eye_closure_fit
from .perturbation import BandOfInterest, NotchSpec, apply_perturbation, build_filter
from .signal import psd_grid
from .stitching import compute_sndr, recover_signal_psd, stitch_nfl


def _boi(lo, hi):
    return None if lo is None or hi is None else BandOfInterest(lo, hi)


class NotchPerturbation(TransformerMixin, BaseEstimator):
    """Notch a waveform and renormalize it.

    ``fit`` builds the filter on the waveform's PSD grid and records the
    normalization factor in ``norm_``; ``transform`` returns the perturbed
    waveform.
    """

    def __init__(self, kind="dual", center_hz=1e9, width_hz=2e9, rbw=500e6,
                 normalize=True, boi_lo=None, boi_hi=None):
        self.kind = kind
        self.center_hz = center_hz
        self.width_hz = width_hz
        self.rbw = rbw
        self.normalize = normalize
        self.boi_lo = boi_lo
        self.boi_hi = boi_hi

    def fit(self, X, y=None):
        self.notch_ = NotchSpec(self.kind, self.center_hz, self.width_hz)
        self.grid_ = psd_grid(X.sample_rate, self.rbw, X.n_samples)
        self.filter_ = build_filter(self.notch_, self.grid_)
        _, self.norm_ = apply_perturbation(X, self.filter_, False, _boi(self.boi_lo, self.boi_hi))
        return self

    def transform(self, X):
        check_is_fitted(self, "filter_")
        out, _ = apply_perturbation(X, self.filter_, self.normalize, _boi(self.boi_lo, self.boi_hi))
        return out


class SpectralStitcher(BaseEstimator):
    """Stitch the noise floor and recover signal PSD and SNDR from a list of traces."""

    def __init__(self, boi_lo=None, boi_hi=None):
        self.boi_lo = boi_lo
        self.boi_hi = boi_hi

    def fit(self, X, y=None):
        boi = _boi(self.boi_lo, self.boi_hi)
        self.nfl_ = stitch_nfl(X, boi)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            self.signal_ = recover_signal_psd(X, boi)
        prof = compute_sndr(self.signal_, self.nfl_)
        self.sndr_ = prof.sndr_db
        self.freqs_ = prof.freqs
        return self


class SkewEstimator(BaseEstimator):
    """Estimate IQ skew from a waveform and chain configuration; ``transform`` deskews."""

    def __init__(self, center_hz=20e9, width_hz=2e9, stage="Card2OSA", rbw=500e6,
                 sweep_lo=-1.4, sweep_hi=1.4, step=0.25, n_repeats=8, n_traces_avg=40,
                 boi_lo=None, boi_hi=None):
        self.center_hz = center_hz
        self.width_hz = width_hz
        self.stage = stage
        self.rbw = rbw
        self.sweep_lo = sweep_lo
        self.sweep_hi = sweep_hi
        self.step = step
        self.n_repeats = n_repeats
        self.n_traces_avg = n_traces_avg
        self.boi_lo = boi_lo
        self.boi_hi = boi_hi

    def fit(self, X, y=None):
        """``X`` is the original waveform; ``y`` the :class:`ImpairmentConfig` of the chain."""
        cfg = y if y is not None else ImpairmentConfig()
        scen = SkewScenario(X, NotchSpec("single", self.center_hz, self.width_hz), cfg,
                            InterfaceStage.parse(self.stage), self.rbw, _boi(self.boi_lo, self.boi_hi))
        est = estimate_skew(scen, self.sweep_lo, self.sweep_hi, self.step, self.n_repeats, self.n_traces_avg)
        self.tau_hat_ = est.tau_hat
        self.std_ = est.std
        self.cost_curve_ = np.array(est.cost_curve)
        self.curvature_db_ = est.curvature_db
        return self

    def transform(self, X):
        """Pre-compensate ``X`` by delaying Q by ``-tau_hat_``."""
        check_is_fitted(self, "tau_hat_")
        return apply_skew(X, -self.tau_hat_)


class EyeClosureRegressor(RegressorMixin, BaseEstimator):
    """Fit NSR_RX = (NSR_TRX + NSR_ASE) / EC; ``X`` is NSR_ASE (one column), ``y`` NSR_RX."""

    def fit(self, X, y):
        X, y = check_X_y(X, y, ensure_min_samples=2)
        if X.shape[1] != 1:
            raise ValueError("X must have exactly one feature (NSR_ASE)")
        fit = eye_closure_fit(np.column_stack([X[:, 0], y]))
        self.ec_ = fit.ec
        self.nsr_trx_ = fit.nsr_trx
        self.residual_ = fit.residual
        self.coef_ = np.array([1 / fit.ec])
        self.intercept_ = fit.nsr_trx / fit.ec
        self.n_features_in_ = 1
        return self

    def predict(self, X):
        check_is_fitted(self, "ec_")
        X = check_array(X)
        return (self.nsr_trx_ + X[:, 0]) / self.ec_
