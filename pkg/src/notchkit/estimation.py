"""Diagnostics built on notch measurements.

* APSD: average PSD over a band.
* IQ skew: sweep a trial Q-delay compensation across a single notch and
  minimize the residual power in the notch.
* Single- vs dual-notch SNDR discrepancy as an impairment detector.
* Eye-closure line fit of receiver NSR against loaded NSR.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .chain import InterfaceStage, reference_psd, simulate_capture
from .exceptions import DiagnosticError, FitError, GeometryError, ParameterError, RegionError
from .perturbation import BandOfInterest, apply_perturbation, build_filter, fine_lookup, notch_positions
from .signal import FrequencyGrid, PowerSpectrum, bin_periodogram, psd_grid
from .stitching import compute_sndr, recover_signal_psd, run_plan, stitch_nfl

_TINY = 1e-300


def apsd(spectrum, region):
    """Mean PSD over the bins whose centres fall in ``region`` = (f_lo, f_hi).

    On a uniform grid this equals the integral of the PSD over the band
    divided by the band width.
    """
    if isinstance(region, BandOfInterest):
        region = (region.f_lo, region.f_hi)
    lo, hi = region
    mask = spectrum.grid.band_mask(lo, hi)
    if not mask.any():
        raise RegionError(f"region [{lo:g}, {hi:g}) Hz selects no bins")
    return float(np.mean(spectrum.psd[mask]))


def to_db(x):
    return 10 * np.log10(np.maximum(x, _TINY))


# -- phase filter ---------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PhaseFilter:
    """Pure-phase filter on the Q spectrum, restricted to a notch and its mirror.

    ``theta`` holds ``2*pi*f*tau`` on the grid bins of the two bands and 0
    elsewhere.  :meth:`apply` multiplies Q by ``exp(-1j*theta)`` evaluated at
    each FFT frequency, i.e. delays Q by ``tau`` inside the bands only, so a
    filter built with ``-tau`` undoes a skew of ``tau`` there.
    """

    notch: object
    grid: FrequencyGrid
    tau_ps: float
    theta: np.ndarray = field(repr=False)
    band: np.ndarray = field(repr=False)

    def apply(self, wfm):
        if self.tau_ps == 0:
            return wfm
        member = fine_lookup(self.grid, self.band, wfm.n_samples, wfm.sample_rate, fill=False)
        f = wfm.fft_freqs()
        h = np.where(member, np.exp(-2j * np.pi * f * self.tau_ps * 1e-12), 1.0)
        pols = []
        for p in wfm.pols:
            q = np.fft.ifft(np.fft.fft(p.imag) * h).real
            pols.append(p.real + 1j * q)
        return wfm.with_pols(pols)


def build_phase_filter(notch, tau_trial, grid):
    """Phase filter over the notch band and its mirror for a trial skew (ps)."""
    null = notch_positions(notch, grid, "null")
    mirror = notch_positions(notch, grid, "mirror")
    pos = np.union1d(null, mirror)
    if pos.min() < 0 or pos.max() >= grid.n_bins:
        raise GeometryError(f"notch {notch} extends outside the grid")
    band = np.zeros(grid.n_bins, bool)
    band[pos] = True
    theta = np.where(band, 2 * np.pi * grid.freqs * tau_trial * 1e-12, 0.0)
    theta.setflags(write=False)
    band.setflags(write=False)
    return PhaseFilter(notch, grid, float(tau_trial), theta, band)


# -- skew ----------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class SkewScenario:
    """Single-notch skew measurement setup.

    ``monitor`` picks the band whose APSD is the cost: ``"null"`` (the zeroed
    band, where residual power grows with uncompensated skew) or ``"mirror"``.
    """

    wfm: object
    notch: object
    cfg: object
    stage: InterfaceStage = InterfaceStage.CARD2OSA
    rbw: float = 500e6
    boi: BandOfInterest | None = None
    monitor: str = "null"
    normalize: bool = True
    pol: str = "x"

    def __post_init__(self):
        if self.notch.kind != "single":
            raise ParameterError("skew estimation needs a single-notch perturbation")
        if self.monitor not in ("null", "mirror"):
            raise ParameterError(f"monitor must be 'null' or 'mirror', got {self.monitor!r}")
        object.__setattr__(self, "stage", InterfaceStage.parse(self.stage))


class _SkewBench:
    """Per-scenario state reused across sweep points."""

    def __init__(self, scenario):
        s = scenario
        self.scenario = s
        self.grid = psd_grid(s.wfm.sample_rate, s.rbw, s.wfm.n_samples)
        filt = build_filter(s.notch, self.grid)
        self.instruction, self.norm = apply_perturbation(s.wfm, filt, s.normalize, s.boi)
        self.refs = [reference_psd(s.wfm, s.boi, i) for i in range(len(s.wfm.pols))]
        pos = notch_positions(s.notch, self.grid, s.monitor)
        df = self.grid.f_step
        self.region = (self.grid.freqs[pos[0]] - df / 2, self.grid.freqs[pos[-1]] + df / 2)

    def trace(self, tau_trial, n_captures, seed):
        s = self.scenario
        comp = build_phase_filter(s.notch, -tau_trial, self.grid).apply(self.instruction)
        return simulate_capture(
            comp, s.cfg, s.stage, s.rbw, n_captures=n_captures, seed=seed, ref=self.refs,
            boi=s.boi, pol=s.pol, notch=s.notch, norm=self.norm if s.normalize else 1.0,
        )

    def cost_linear(self, tau_trial, n_captures, seed):
        """Monitored-band APSD relative to the reference PSD (linear)."""
        tr = self.trace(tau_trial, n_captures, seed)
        return apsd(tr.spectrum, self.region) / tr.reference_psd


def skew_cost(tau_trial, scenario, n_traces_avg=1, seed=None):
    """APSD (dB relative to mean signal PSD) of the monitored band after
    pre-compensating Q by ``tau_trial`` ps on the notch bands."""
    bench = _SkewBench(scenario)
    seed = scenario.cfg.seed if seed is None else seed
    return float(to_db(bench.cost_linear(tau_trial, n_traces_avg, seed)))


def sweep_grid(lo, hi, step):
    if not lo < hi:
        raise ParameterError("sweep_lo must be below sweep_hi")
    if not step > 0:
        raise ParameterError("step must be positive")
    n = int(np.floor((hi - lo) / step + 1e-9)) + 1
    return lo + step * np.arange(n)


def strict_local_minima(y):
    """Indices that are strictly below every neighbour (endpoints included)."""
    y = np.asarray(y, float)
    if y.size == 1:
        return np.array([0])
    left = np.concatenate([[np.inf], y[:-1]])
    right = np.concatenate([y[1:], [np.inf]])
    return np.flatnonzero((y < left) & (y < right))


def parabolic_vertex(x, y):
    """Abscissa of the parabola through the minimum sample and its neighbours.

    Falls back to the minimum sample itself at the ends of the sweep or when
    the three points are not convex.
    """
    i = int(np.argmin(y))
    if i == 0 or i == len(y) - 1:
        return float(x[i])
    y0, y1, y2 = y[i - 1], y[i], y[i + 1]
    denom = y0 - 2 * y1 + y2
    if denom <= 0:
        return float(x[i])
    h = x[i + 1] - x[i]
    return float(x[i] + 0.5 * h * (y0 - y2) / denom)


def curvature_db(x, y_lin):
    """Curvature (dB/ps^2) of the cost at its minimum from a quadratic LS fit.

    The fit is done on the linear cost, which is quadratic in the skew error
    for small errors; the result is the second derivative of the dB curve at
    the fitted vertex.
    """
    c2, c1, c0 = np.polyfit(x, y_lin, 2)
    if c2 <= 0:
        return 0.0
    ymin = c0 - c1**2 / (4 * c2)
    if ymin <= 0:
        return float("inf")
    return float(20 / np.log(10) * c2 / ymin)


@dataclass(frozen=True, eq=False)
class SkewEstimate:
    tau_hat: float
    cost_curve: list
    repeats: list
    std: float
    repeat_curves: list = field(default_factory=list, repr=False)
    curvature_db: float = 0.0

    @property
    def sweep(self):
        return np.array([t for t, _ in self.cost_curve])


def estimate_skew(
    scenario,
    sweep_lo=-1.4,
    sweep_hi=1.4,
    step=0.25,
    n_repeats=8,
    n_traces_avg=40,
    fresh_seeds=True,
    check_unimodal=True,
):
    """Sweep trial skews, refine the minimum with a 3-point parabola, repeat.

    Each repeat draws fresh noise (unless ``fresh_seeds`` is False) and yields
    one estimate; the result reports their mean and sample standard deviation.
    With ``monitor="mirror"`` the cost is maximized instead and no curvature
    is reported.
    A repeat whose averaged cost curve has more than one strict local minimum
    raises :class:`DiagnosticError` carrying that curve.
    """
    cfg = scenario.cfg
    if cfg.crosstalk is not None and not cfg.crosstalk.is_identity():
        raise ParameterError("IQ crosstalk must be compensated (off) before estimating skew")
    # the null band is darkest at the true skew, the mirror band brightest
    sign = 1.0 if scenario.monitor == "null" else -1.0
    if n_repeats < 1 or n_traces_avg < 1:
        raise ParameterError("n_repeats and n_traces_avg must be >= 1")
    taus = sweep_grid(sweep_lo, sweep_hi, step)
    bench = _SkewBench(scenario)
    curves, estimates = [], []
    for r in range(n_repeats):
        rr = r if fresh_seeds else 0
        y = np.array([
            bench.cost_linear(t, n_traces_avg, (cfg.seed, 1 + rr, k)) for k, t in enumerate(taus)
        ])
        if check_unimodal and strict_local_minima(sign * y).size > 1:
            raise DiagnosticError(
                f"cost curve of repeat {r} is not unimodal",
                curve=list(zip(taus.tolist(), to_db(y).tolist())),
            )
        curves.append(y)
        estimates.append(parabolic_vertex(taus, sign * y))
    mean_curve = np.mean(curves, axis=0)
    est = np.array(estimates)
    return SkewEstimate(
        tau_hat=float(est.mean()),
        cost_curve=list(zip(taus.tolist(), to_db(mean_curve).tolist())),
        repeats=est.tolist(),
        std=float(est.std(ddof=1)) if est.size > 1 and np.ptp(est) > 0 else 0.0,
        repeat_curves=[list(zip(taus.tolist(), to_db(c).tolist())) for c in curves],
        curvature_db=curvature_db(taus, mean_curve) if sign > 0 else 0.0,
    )


# -- single vs dual notch -------------------------------------------------------

@dataclass(frozen=True, eq=False)
class DiscrepancyProfile:
    grid: FrequencyGrid
    diff_db: np.ndarray
    sn: object
    dn: object

    def finite(self):
        return self.diff_db[np.isfinite(self.diff_db)]


def sn_dn_discrepancy(wfm_org, plan_sn, plan_dn, cfg, stage, rbw, averaging=1, normalize=True):
    """SNDR_DN - SNDR_SN per bin; positive values flag uncompensated impairments."""
    if plan_sn.boi != plan_dn.boi:
        raise ParameterError("single- and dual-notch plans must share the band of interest")
    if plan_sn.kind != "single" or plan_dn.kind != "dual":
        raise ParameterError("expected a single-notch plan and a dual-notch plan")
    profiles = []
    for plan in (plan_sn, plan_dn):
        traces = run_plan(plan, wfm_org, cfg, stage, rbw, averaging, normalize)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            profiles.append(compute_sndr(recover_signal_psd(traces), stitch_nfl(traces)))
    sn, dn = profiles
    with np.errstate(invalid="ignore"):
        diff = dn.sndr_db - sn.sndr_db
    return DiscrepancyProfile(sn.grid, diff, sn, dn)


def crosstalk_leakage(instruction, xt, rbw):
    """Notch-band PSD predicted from first-order crosstalk: |X_I|^2 |C_QI + C_IQ|^2.

    Evaluated per FFT bin from the instruction's I spectrum and averaged to
    the ``rbw`` grid (x polarization).
    """
    grid = psd_grid(instruction.sample_rate, rbw, instruction.n_samples)
    f = instruction.fft_freqs()
    _, c_qi, c_iq, _ = xt.evaluate(f)
    xi = np.fft.fft(instruction.pol_x.real)
    psd = bin_periodogram(xi * (c_qi + c_iq), instruction.sample_rate, grid.n_bins)
    return PowerSpectrum(grid, psd, grid.f_step)


# -- eye closure ---------------------------------------------------------------

@dataclass(frozen=True)
class EyeClosureFit:
    ec: float
    nsr_trx: float
    residual: float


def eye_closure_fit(points):
    """Least-squares fit of NSR_RX = (NSR_TRX + NSR_ASE) / EC.

    ``points`` are ``(nsr_ase, nsr_rx)`` pairs in linear units.  Returns EC as
    the inverse slope and NSR_TRX as intercept * EC.
    """
    pts = np.asarray(points, float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise FitError("points must be (nsr_ase, nsr_rx) pairs")
    x, y = pts[:, 0], pts[:, 1]
    if np.unique(x).size < 2:
        raise FitError("need at least two distinct nsr_ase values")
    a = np.column_stack([x, np.ones_like(x)])
    (slope, intercept), *_ = np.linalg.lstsq(a, y, rcond=None)
    if slope <= 0:
        raise FitError(f"fitted slope {slope:g} is not positive; eye closure undefined")
    ec = 1 / slope
    resid = y - (slope * x + intercept)
    return EyeClosureFit(float(ec), float(intercept * ec), float(np.sqrt(np.mean(resid**2))))
