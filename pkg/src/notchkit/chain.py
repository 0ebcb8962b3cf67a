"""Transmit/receive chain simulator.

The impairment order is fixed: IQ crosstalk, IQ skew, IQ gain imbalance,
DAC quantization, then additive Gaussian floors.  Floors are specified in dB
relative to the mean signal PSD over the band of interest, so a -21 dB floor
sits 21 dB under a flat signal spectrum whatever the absolute power.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .exceptions import ModelError, ParameterError
from .perturbation import BandOfInterest, NotchSpec
from .signal import PowerSpectrum, bin_periodogram, fine_bin_numbers, make_rng, one_sided, psd_grid

_BATCH = 8


class InterfaceStage(str, enum.Enum):
    """Where the spectrum is captured.

    * ``E2E``: oscilloscope on one DAC output (real signal, one-sided PSD);
      sees electrical transmitter noise only.
    * ``Card2OSA``: optical spectrum analyzer on the transmitter output; adds
      the optical transmitter floor.
    * ``Card2Card``: the card's own receiver ADC; adds the receiver floor.
    """

    E2E = "E2E"
    CARD2OSA = "Card2OSA"
    CARD2CARD = "Card2Card"

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        for stage in cls:
            if str(value).lower() == stage.value.lower():
                return stage
        raise ParameterError(f"unknown interface stage {value!r}")


@dataclass(frozen=True, eq=False)
class CrosstalkProfile:
    """IQ crosstalk matrix sampled at non-negative control frequencies.

    Values at negative frequencies follow from ``C(-f) = conj(C(f))``, which
    keeps the filtered I and Q real.  Between control points the entries are
    linearly interpolated (real and imaginary parts separately); beyond the
    last point they are held constant.
    """

    freqs: np.ndarray
    c_qi: np.ndarray
    c_iq: np.ndarray
    c_ii: np.ndarray | None = None
    c_qq: np.ndarray | None = None

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs, float))
        if f.ndim != 1 or f.size == 0 or np.any(np.diff(f) <= 0):
            raise ModelError("crosstalk control frequencies must be strictly increasing")
        object.__setattr__(self, "freqs", f)
        for name in ("c_qi", "c_iq", "c_ii", "c_qq"):
            v = getattr(self, name)
            default = 1.0 if name in ("c_ii", "c_qq") else 0.0
            v = np.full(f.size, default, complex) if v is None else np.asarray(v, complex)
            v = np.broadcast_to(v, f.shape).copy()
            object.__setattr__(self, name, v)
        if f[0] < 0:
            self._fold_two_sided()
        elif f[0] == 0:
            for name in ("c_qi", "c_iq", "c_ii", "c_qq"):
                if abs(getattr(self, name)[0].imag) > 1e-12:
                    raise ModelError(f"{name} must be real at 0 Hz (Hermitian constraint)")

    def _fold_two_sided(self):
        f = self.freqs
        neg = f < 0
        for name in ("c_qi", "c_iq", "c_ii", "c_qq"):
            v = getattr(self, name)
            for k in np.flatnonzero(neg):
                m = np.flatnonzero(np.isclose(f, -f[k], rtol=0, atol=1e-9 * max(1.0, abs(f[k]))))
                if m.size and abs(v[m[0]] - np.conj(v[k])) > 1e-9 * max(1.0, abs(v[k])):
                    raise ModelError(f"{name} violates C(f) = conj(C(-f)) at {f[k]:g} Hz")
            zero = np.isclose(f, 0.0, atol=1e-9)
            if np.any(np.abs(v[zero].imag) > 1e-12):
                raise ModelError(f"{name} must be real at 0 Hz (Hermitian constraint)")
        keep = ~neg
        if not keep.any():
            raise ModelError("two-sided crosstalk profile has no non-negative frequencies")
        object.__setattr__(self, "freqs", f[keep])
        for name in ("c_qi", "c_iq", "c_ii", "c_qq"):
            object.__setattr__(self, name, getattr(self, name)[keep])

    @classmethod
    def flat(cls, c_qi=0.0, c_iq=0.0, c_ii=1.0, c_qq=1.0):
        return cls(np.array([0.0]), c_qi, c_iq, c_ii, c_qq)

    def evaluate(self, freqs):
        """Return ``(c_ii, c_qi, c_iq, c_qq)`` at arbitrary signed frequencies."""
        freqs = np.asarray(freqs, float)
        a = np.abs(freqs)
        out = []
        for v in (self.c_ii, self.c_qi, self.c_iq, self.c_qq):
            val = np.interp(a, self.freqs, v.real) + 1j * np.interp(a, self.freqs, v.imag)
            out.append(np.where(freqs < 0, np.conj(val), val))
        return tuple(out)

    def is_identity(self):
        return (
            np.all(self.c_qi == 0) and np.all(self.c_iq == 0)
            and np.all(self.c_ii == 1) and np.all(self.c_qq == 1)
        )

    def to_dict(self):
        def cplx(v):
            return {"re": v.real.tolist(), "im": v.imag.tolist()}

        return {
            "freqs_hz": self.freqs.tolist(),
            "c_qi": cplx(self.c_qi), "c_iq": cplx(self.c_iq),
            "c_ii": cplx(self.c_ii), "c_qq": cplx(self.c_qq),
        }


@dataclass(frozen=True, eq=False)
class FloorShape:
    """Colored weighting of the transmitter floor.

    ``weights_db`` at signed ``freqs`` are interpolated linearly in dB (held
    constant past the ends).  ``lines`` adds discrete tones, each given as
    ``(freq_hz, level_dbc)`` with the level relative to mean signal power.
    """

    freqs: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    weights_db: np.ndarray = field(default_factory=lambda: np.array([0.0]))
    lines: tuple = ()

    def __post_init__(self):
        f = np.atleast_1d(np.asarray(self.freqs, float))
        w = np.atleast_1d(np.asarray(self.weights_db, float))
        if f.shape != w.shape or np.any(np.diff(f) <= 0):
            raise ParameterError("floor shape needs increasing freqs and one weight per freq")
        if not np.all(np.isfinite(w)):
            raise ParameterError("floor shape weights must be finite (dB)")
        object.__setattr__(self, "freqs", f)
        object.__setattr__(self, "weights_db", w)
        object.__setattr__(self, "lines", tuple((float(a), float(b)) for a, b in self.lines))

    def evaluate(self, freqs):
        return 10 ** (np.interp(freqs, self.freqs, self.weights_db) / 10)

    def to_dict(self):
        return {
            "freqs_hz": self.freqs.tolist(),
            "weights_db": self.weights_db.tolist(),
            "lines": [list(x) for x in self.lines],
        }


@dataclass(frozen=True)
class ImpairmentConfig:
    """Ground-truth impairments; every field is optional (``None``/0 = off)."""

    nfl_tx_db: float | None = None
    nfl_rx_db: float | None = None
    nfl_optical_db: float | None = None
    nfl_shape: FloorShape | None = None
    dac_bits: int | None = None
    crosstalk: CrosstalkProfile | None = None
    skew_ps: float = 0.0
    iq_gain_imbalance_db: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dac_bits is not None and not (3 <= self.dac_bits <= 16 and int(self.dac_bits) == self.dac_bits):
            raise ParameterError(f"dac_bits must be an integer in [3, 16], got {self.dac_bits}")
        for name in ("nfl_tx_db", "nfl_rx_db", "nfl_optical_db"):
            v = getattr(self, name)
            if v is not None and not np.isfinite(v):
                raise ParameterError(f"{name} must be finite")

    def replace(self, **changes):
        return replace(self, **changes)

    def floors_db(self, stage):
        """Additive floors (dB) seen at ``stage``, as a name -> level mapping."""
        stage = InterfaceStage.parse(stage)
        floors = {}
        if self.nfl_tx_db is not None:
            floors["tx"] = self.nfl_tx_db
        if stage is not InterfaceStage.E2E and self.nfl_optical_db is not None:
            floors["optical"] = self.nfl_optical_db
        if stage is InterfaceStage.CARD2CARD and self.nfl_rx_db is not None:
            floors["rx"] = self.nfl_rx_db
        return floors

    def snapshot(self):
        d = asdict(self)
        d["nfl_shape"] = None if self.nfl_shape is None else self.nfl_shape.to_dict()
        d["crosstalk"] = None if self.crosstalk is None else self.crosstalk.to_dict()
        return d


@dataclass(frozen=True, eq=False)
class MeasurementTrace:
    """One captured spectrum of a perturbed instruction.

    ``norm`` is the normalization factor applied by the transmit loop (1 when
    the loop is off).  ``reference_psd`` is the absolute PSD that 0 dB refers
    to in exported traces.
    """

    spectrum: PowerSpectrum
    notch: NotchSpec | None
    norm: float
    stage: InterfaceStage
    truth: ImpairmentConfig | None = None
    boi: BandOfInterest | None = None
    reference_psd: float = 1.0
    n_captures: int = 1

    def __post_init__(self):
        if not 0 < self.norm <= 1 + 1e-12:
            raise ParameterError(f"trace norm must lie in (0, 1], got {self.norm}")
        object.__setattr__(self, "stage", InterfaceStage.parse(self.stage))
        if self.notch is not None:
            lo, hi = self.spectrum.grid.edges
            b_lo, b_hi = self.notch.band
            if b_hi <= lo or b_lo >= hi:
                raise ParameterError("trace notch lies outside the spectrum grid")


# -- impairments ----------------------------------------------------------------

def _iq_spectra(p):
    return np.fft.fft(p.real), np.fft.fft(p.imag)


def apply_iq_crosstalk(wfm, xt):
    """Mix the I and Q spectra through the 2x2 crosstalk matrix, bin by bin."""
    if xt is None or xt.is_identity():
        return wfm
    c_ii, c_qi, c_iq, c_qq = xt.evaluate(wfm.fft_freqs())
    pols = []
    for p in wfm.pols:
        i_f, q_f = _iq_spectra(p)
        i_out = np.fft.ifft(c_ii * i_f + c_qi * q_f).real
        q_out = np.fft.ifft(c_iq * i_f + c_qq * q_f).real
        pols.append(i_out + 1j * q_out)
    return wfm.with_pols(pols)


def _skew_guard(wfm, tau_s):
    period = 1 / wfm.symbol_rate if wfm.symbol_rate else 2 / wfm.sample_rate
    if abs(tau_s) >= 0.1 * period:
        raise ParameterError(
            f"|skew| = {abs(tau_s) * 1e12:g} ps exceeds 10% of the symbol period ({period * 1e12:g} ps)"
        )


def apply_skew(wfm, tau_ps):
    """Delay Q relative to I by ``tau_ps`` picoseconds (linear phase on the Q spectrum)."""
    tau = tau_ps * 1e-12
    _skew_guard(wfm, tau)
    if tau == 0:
        return wfm
    ramp = np.exp(-2j * np.pi * wfm.fft_freqs() * tau)
    pols = []
    for p in wfm.pols:
        q = np.fft.ifft(np.fft.fft(p.imag) * ramp).real
        pols.append(p.real + 1j * q)
    return wfm.with_pols(pols)


def apply_iq_imbalance(wfm, gain_db):
    """Scale I up and Q down by half of ``gain_db`` each."""
    if gain_db == 0:
        return wfm
    gi, gq = 10 ** (gain_db / 40), 10 ** (-gain_db / 40)
    return wfm.with_pols([gi * p.real + 1j * gq * p.imag for p in wfm.pols])


def quantize_dac(wfm, bits):
    """Mid-rise quantizer on I and Q over +/- the largest component magnitude."""
    if bits < 3 or int(bits) != bits:
        raise ParameterError(f"bits must be an integer >= 3, got {bits}")
    full_scale = max(max(np.abs(p.real).max(), np.abs(p.imag).max()) for p in wfm.pols)
    if full_scale == 0:
        return wfm
    q = 2 * full_scale / 2 ** int(bits)
    top = full_scale - q / 2

    def quant(v):
        return np.clip(q * (np.floor(v / q) + 0.5), -top, top)

    return wfm.with_pols([quant(p.real) + 1j * quant(p.imag) for p in wfm.pols])


def apply_impairments(wfm, cfg):
    """Deterministic part of the chain (everything before the additive floors)."""
    out = apply_iq_crosstalk(wfm, cfg.crosstalk)
    if cfg.skew_ps:
        out = apply_skew(out, cfg.skew_ps)
    out = apply_iq_imbalance(out, cfg.iq_gain_imbalance_db)
    if cfg.dac_bits is not None:
        out = quantize_dac(out, cfg.dac_bits)
    return out


# -- floors and capture -------------------------------------------------------

def reference_psd(wfm, boi=None, pol_index=0):
    """Mean signal PSD (power per Hz) that floor levels in dB refer to.

    Inside ``boi`` when given; otherwise mean power over the symbol rate (the
    passband level of a Nyquist-shaped signal).
    """
    p = wfm.pols[pol_index]
    if boi is None:
        bw = wfm.symbol_rate or wfm.sample_rate
        return float(np.mean(np.abs(p) ** 2) / bw)
    n = wfm.n_samples
    mask = wfm.fft_band_mask(boi.f_lo, boi.f_hi)
    power = np.sum(np.abs(np.fft.fft(p)[mask]) ** 2) / n**2
    return float(power / boi.width)


def floor_profile(cfg, stage, freqs):
    """Linear floor weighting (relative to the reference PSD) at ``freqs``."""
    floors = cfg.floors_db(stage)
    total = np.zeros(np.shape(freqs))
    for name, level in floors.items():
        weight = 10 ** (level / 10)
        if name == "tx" and cfg.nfl_shape is not None:
            total = total + weight * cfg.nfl_shape.evaluate(freqs)
        else:
            total = total + weight
    return total


def expected_floor(cfg, stage, ref, grid, n_samples=None, sample_rate=None):
    """Injected additive floor (linear PSD) on ``grid`` for ``stage``.

    For E2E the one-sided real spectrum averages the floor at +f and -f.
    Spectral lines are not included.  Given the capture length and sample
    rate, each bin holds the mean over the FFT bins the estimator folds into
    it rather than the value at the bin centre.
    """
    stage = InterfaceStage.parse(stage)

    def profile(f):
        if stage is InterfaceStage.E2E:
            return (floor_profile(cfg, stage, f) + floor_profile(cfg, stage, -f)) / 2
        return floor_profile(cfg, stage, f)

    if n_samples is None or sample_rate is None:
        return ref * profile(grid.freqs)
    n_bins = int(round(sample_rate / grid.f_step))
    half = n_bins // 2
    coarse = (fine_bin_numbers(n_samples, n_bins) + half) % n_bins
    weights = profile(np.fft.fftfreq(n_samples, 1 / sample_rate))
    mean = np.bincount(coarse, weights, n_bins) / np.bincount(coarse, minlength=n_bins)
    idx = (np.rint(grid.freqs / grid.f_step).astype(np.int64) + half) % n_bins
    return ref * mean[idx]


def _noise_batch(rng, shape, level, n, fs):
    z = rng.standard_normal(shape + (2,)).view(complex)[..., 0]
    return z * np.sqrt(level * n * fs / 2)


def _line_batch(rng, batch, freqs, lines, power, n):
    out = np.zeros((batch, n), complex)
    fs_step = freqs[1] - freqs[0]
    for f0, dbc in lines:
        j = int(round(f0 / fs_step)) % n
        amp = np.sqrt(10 ** (dbc / 10) * power) * n
        out[:, j] += amp * np.exp(2j * np.pi * rng.random(batch))
    return out


def simulate_capture(
    wfm_instruction,
    cfg,
    stage,
    rbw,
    n_captures=1,
    seed=None,
    ref=None,
    boi=None,
    pol="x",
    notch=None,
    norm=1.0,
):
    """Pass a (perturbed, normalized) instruction through the chain and capture its PSD.

    Parameters
    ----------
    wfm_instruction : ComplexWaveform
    cfg : ImpairmentConfig
    stage : InterfaceStage or str
    rbw : float
        Resolution bandwidth (Hz) of the captured spectrum.
    n_captures : int
        Independent noise realizations averaged into the returned PSD.
    seed : int or sequence of int, optional
        Entropy for the noise; defaults to ``cfg.seed``.
    ref : float or sequence of float, optional
        Reference PSD per polarization for the dB floor levels.  Defaults to
        :func:`reference_psd` of the instruction.
    boi : BandOfInterest, optional
        Band used for the default reference.
    pol : {"x", "y", "sum"}
    notch, norm :
        Metadata copied onto the trace.

    Returns
    -------
    MeasurementTrace
    """
    stage = InterfaceStage.parse(stage)
    if n_captures < 1:
        raise ParameterError("n_captures must be >= 1")
    wfm = apply_impairments(wfm_instruction, cfg)
    if pol == "x":
        indices = [0]
    elif pol == "y":
        if wfm.pol_y is None:
            raise ParameterError("waveform has no y polarization")
        indices = [1]
    elif pol == "sum":
        indices = list(range(len(wfm.pols)))
    else:
        raise ParameterError(f"unknown polarization selector {pol!r}")
    if ref is None:
        refs = [reference_psd(wfm_instruction, boi, i) for i in range(len(wfm.pols))]
    else:
        refs = list(np.broadcast_to(np.asarray(ref, float), (len(wfm.pols),)))

    n, fs = wfm.n_samples, wfm.sample_rate
    grid = psd_grid(fs, rbw, n)
    freqs = wfm.fft_freqs()
    entropy = np.atleast_1d(cfg.seed if seed is None else seed).astype(np.int64).tolist()
    rng = make_rng(*entropy)
    shape_w = floor_profile(cfg, stage, freqs)
    lines = cfg.nfl_shape.lines if cfg.nfl_shape is not None else ()
    psd = np.zeros(grid.n_bins)
    for i in indices:
        sig = np.fft.fft(wfm.pols[i])
        level = shape_w * refs[i]
        power = float(np.mean(np.abs(wfm_instruction.pols[i]) ** 2))
        done = 0
        while done < n_captures:
            b = min(_BATCH, n_captures - done)
            spec = np.broadcast_to(sig, (b, n)).copy()
            if np.any(level > 0):
                spec += _noise_batch(rng, (b, n), level, n, fs)
            if lines:
                spec += _line_batch(rng, b, freqs, lines, power, n)
            if stage is InterfaceStage.E2E:
                neg = np.roll(spec[:, ::-1], 1, axis=1)
                spec = (spec + np.conj(neg)) / 2
            psd += bin_periodogram(spec, fs, grid.n_bins).sum(axis=0)
            done += b
    psd /= n_captures
    spectrum = PowerSpectrum(grid, psd, grid.f_step)
    if stage is InterfaceStage.E2E:
        spectrum = one_sided(spectrum)
    return MeasurementTrace(
        spectrum, notch, norm, stage, truth=cfg, boi=boi,
        reference_psd=float(np.mean([refs[i] for i in indices])) * len(indices),
        n_captures=n_captures,
    )
