"""Waveforms, frequency grids and power-spectral-density estimation.

Spectra everywhere are two-sided complex baseband.  The PSD estimator is a
frequency-averaged periodogram: the full-length FFT of the waveform is
squared and contiguous blocks of FFT bins are averaged down to the requested
resolution.  Because every filter in the toolkit acts on that same full-length
FFT, spectral zeros written into a waveform stay exactly zero in its PSD.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .exceptions import GeometryError, ParameterError, RegionError, ResolutionError

POLS = ("x", "y", "sum")

#: Minimum and maximum number of PSD bins accepted by :func:`estimate_psd`.
MIN_SEGMENT = 64


def make_rng(*entropy):
    """Counter-based generator seeded from a tuple of non-negative integers."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(list(entropy))))


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform grid; bin ``k`` sits at ``f_start + k * f_step``."""

    f_start: float
    f_step: float
    n_bins: int

    def __post_init__(self):
        if not np.isfinite(self.f_start) or not np.isfinite(self.f_step):
            raise ParameterError("grid parameters must be finite")
        if self.f_step <= 0:
            raise ParameterError(f"f_step must be positive, got {self.f_step}")
        if int(self.n_bins) != self.n_bins or self.n_bins < 2:
            raise ParameterError(f"n_bins must be an integer >= 2, got {self.n_bins}")
        object.__setattr__(self, "n_bins", int(self.n_bins))

    @classmethod
    def baseband(cls, sample_rate, n_bins):
        """Two-sided grid of ``n_bins`` bins covering [-fs/2, fs/2)."""
        step = sample_rate / n_bins
        return cls(-(n_bins // 2) * step, step, n_bins)

    @property
    def freqs(self):
        return self.f_start + np.arange(self.n_bins) * self.f_step

    @property
    def f_stop(self):
        return self.f_start + (self.n_bins - 1) * self.f_step

    @property
    def offset(self):
        """Signed bin number of the first bin, counted from a bin centred on 0 Hz."""
        k = self.f_start / self.f_step
        if abs(k - round(k)) > 1e-6:
            raise GeometryError("grid is not aligned with 0 Hz")
        return int(round(k))

    @property
    def edges(self):
        """Outer edges (lo, hi) of the grid's first and last bins."""
        return self.f_start - self.f_step / 2, self.f_stop + self.f_step / 2

    def band_mask(self, f_lo, f_hi):
        """Bins whose centres lie in [f_lo, f_hi)."""
        f = self.freqs
        tol = 1e-9 * self.f_step
        return (f >= f_lo - tol) & (f < f_hi - tol)

    def subgrid(self, mask):
        idx = np.flatnonzero(mask)
        if idx.size < 2 or np.any(np.diff(idx) != 1):
            raise RegionError("sub-grid must be a contiguous run of at least 2 bins")
        return FrequencyGrid(self.f_start + idx[0] * self.f_step, self.f_step, idx.size)

    def matches(self, other, rtol=1e-9):
        return (
            self.n_bins == other.n_bins
            and abs(self.f_step - other.f_step) <= rtol * self.f_step
            and abs(self.f_start - other.f_start) <= rtol * self.f_step * max(1, self.n_bins)
        )


def _frozen_array(a, dtype):
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class ComplexWaveform:
    """Dual-polarization complex baseband samples.

    ``pol_x.real`` is the in-phase (I) signal and ``pol_x.imag`` the quadrature
    (Q) signal.  ``symbol_rate`` is optional metadata used by the skew guard and
    as the fallback reference bandwidth.
    """

    sample_rate: float
    pol_x: np.ndarray
    pol_y: np.ndarray | None = None
    label: str = ""
    symbol_rate: float | None = None

    def __post_init__(self):
        if not self.sample_rate > 0:
            raise ParameterError("sample_rate must be positive")
        x = _frozen_array(self.pol_x, complex)
        if x.ndim != 1 or x.size == 0:
            raise ParameterError("pol_x must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(x)):
            raise ParameterError("waveform samples must be finite")
        object.__setattr__(self, "pol_x", x)
        if self.pol_y is not None:
            y = _frozen_array(self.pol_y, complex)
            if y.shape != x.shape:
                raise ParameterError("pol_y must have the same length as pol_x")
            if not np.all(np.isfinite(y)):
                raise ParameterError("waveform samples must be finite")
            object.__setattr__(self, "pol_y", y)

    @property
    def n_samples(self):
        return self.pol_x.size

    @property
    def pols(self):
        return [self.pol_x] if self.pol_y is None else [self.pol_x, self.pol_y]

    def with_pols(self, pols, **changes):
        pols = list(pols)
        return replace(self, pol_x=pols[0], pol_y=pols[1] if len(pols) > 1 else None, **changes)

    def mean_power(self):
        """Mean power per polarization."""
        return np.array([np.mean(np.abs(p) ** 2) for p in self.pols])

    def fft_freqs(self):
        return np.fft.fftfreq(self.n_samples, 1 / self.sample_rate)

    def fft_band_mask(self, f_lo, f_hi):
        """FFT bins whose frequencies lie in [f_lo, f_hi), tolerant to rounding."""
        f = self.fft_freqs()
        tol = 1e-6 * self.sample_rate / self.n_samples
        return (f >= f_lo - tol) & (f < f_hi - tol)


@dataclass(frozen=True, eq=False)
class PowerSpectrum:
    """Linear PSD (power per Hz) on a uniform grid.

    ``flags`` optionally marks bins that the producing operation wants to call
    out (e.g. clamped recovery bins).
    """

    grid: FrequencyGrid
    psd: np.ndarray
    resolution_bw: float
    flags: np.ndarray | None = field(default=None)

    def __post_init__(self):
        psd = _frozen_array(self.psd, float)
        if psd.shape != (self.grid.n_bins,):
            raise ParameterError(f"psd has {psd.size} bins, grid has {self.grid.n_bins}")
        if np.any(psd < 0) or np.any(np.isnan(psd)):
            raise ParameterError("psd must be non-negative")
        object.__setattr__(self, "psd", psd)
        if self.flags is not None:
            object.__setattr__(self, "flags", _frozen_array(self.flags, bool))

    @property
    def freqs(self):
        return self.grid.freqs

    def integral(self):
        return float(np.sum(self.psd) * self.grid.f_step)

    def restrict(self, f_lo, f_hi):
        mask = self.grid.band_mask(f_lo, f_hi)
        flags = None if self.flags is None else self.flags[mask]
        return PowerSpectrum(self.grid.subgrid(mask), self.psd[mask], self.resolution_bw, flags)

    def to_db(self, reference=1.0):
        with np.errstate(divide="ignore"):
            return 10 * np.log10(self.psd / reference)


# -- binning ----------------------------------------------------------------

def fine_bin_numbers(n_samples, n_bins):
    """Signed coarse-bin number of each FFT bin (natural FFT order).

    FFT bin ``j`` of an ``n_samples``-point transform lands in the coarse bin
    nearest ``j * n_bins / n_samples``; exact half-way points round away from
    0 Hz so the mapping is odd-symmetric (mirror bins map to mirror bins).
    Computed in integer arithmetic.
    """
    return _fine_bin_numbers(int(n_samples), int(n_bins))


@lru_cache(maxsize=32)
def _fine_bin_numbers(n, n_bins):
    j = np.fft.fftfreq(n, 1 / n).astype(np.int64)
    mag = (2 * np.abs(j) * n_bins + n) // (2 * n)
    out = np.sign(j) * mag
    out.setflags(write=False)
    return out


@lru_cache(maxsize=32)
def _bin_layout(n, n_bins):
    """Permutation sorting FFT bins by coarse position, plus reduceat starts."""
    pos = (_fine_bin_numbers(n, n_bins) + n_bins // 2) % n_bins
    perm = np.argsort(pos, kind="stable")
    counts = np.bincount(pos, minlength=n_bins)
    if np.any(counts == 0):
        raise ResolutionError("resolution finer than the waveform's FFT spacing")
    starts = np.concatenate([[0], np.cumsum(counts)[:-1]])
    return perm, starts, counts


def bin_periodogram(spectra, sample_rate, n_bins):
    """Average squared FFT bins into ``n_bins`` two-sided PSD bins.

    ``spectra`` holds unnormalized FFTs along its last axis (any leading batch
    shape).  Returns linear PSD in power per Hz ordered from -fs/2 upward.
    """
    spectra = np.asarray(spectra)
    n = spectra.shape[-1]
    perm, starts, counts = _bin_layout(n, n_bins)
    per = np.abs(spectra) ** 2 / (n * sample_rate)
    return np.add.reduceat(per[..., perm], starts, axis=-1) / counts


def segment_length(sample_rate, resolution_bw):
    """Smallest power of two whose bin spacing is no wider than ``resolution_bw``."""
    if not resolution_bw > 0:
        raise ResolutionError("resolution_bw must be positive")
    return int(2 ** np.ceil(np.log2(sample_rate / resolution_bw) - 1e-12))


def psd_grid(sample_rate, resolution_bw, n_samples):
    n_bins = segment_length(sample_rate, resolution_bw)
    if n_bins < MIN_SEGMENT:
        raise ResolutionError(
            f"resolution {resolution_bw:g} Hz gives {n_bins} bins (< {MIN_SEGMENT})"
        )
    if n_bins > n_samples:
        raise ResolutionError(
            f"resolution {resolution_bw:g} Hz needs {n_bins} samples, waveform has {n_samples}"
        )
    return FrequencyGrid.baseband(sample_rate, n_bins)


def estimate_psd(wfm, resolution_bw, pol="x"):
    """Frequency-averaged periodogram of one polarization (or their sum).

    Parameters
    ----------
    wfm : ComplexWaveform
    resolution_bw : float
        Requested bin spacing in Hz; mapped to the smallest power-of-two
        number of bins whose spacing does not exceed it.
    pol : {"x", "y", "sum"}

    Returns
    -------
    PowerSpectrum
        Two-sided PSD on [-fs/2, fs/2).  ``integral()`` equals the mean power
        of the selected polarization(s).
    """
    grid = psd_grid(wfm.sample_rate, resolution_bw, wfm.n_samples)
    spectra = _select_spectra(wfm, pol)
    psd = bin_periodogram(spectra, wfm.sample_rate, grid.n_bins).sum(axis=0)
    return PowerSpectrum(grid, psd, grid.f_step)


def _select_spectra(wfm, pol):
    if pol not in POLS:
        raise ParameterError(f"pol must be one of {POLS}, got {pol!r}")
    if pol == "y" and wfm.pol_y is None:
        raise ParameterError("waveform has no y polarization")
    if pol == "x":
        pols = [wfm.pol_x]
    elif pol == "y":
        pols = [wfm.pol_y]
    else:
        pols = wfm.pols
    return np.array([np.fft.fft(p) for p in pols])


def one_sided(spectrum):
    """Fold a two-sided PSD of a real signal onto f >= 0 (power-preserving)."""
    grid = spectrum.grid
    k0 = -grid.offset
    if not 0 <= k0 < grid.n_bins:
        raise GeometryError("grid does not contain 0 Hz")
    psd = spectrum.psd[k0:].copy()
    psd[1:] *= 2
    if k0 == grid.n_bins // 2 and grid.n_bins % 2 == 0:
        # the -fs/2 bin is its own mirror; report it at +fs/2
        psd = np.append(psd, spectrum.psd[0])
    n = psd.size
    if n < 2:
        raise GeometryError("one-sided grid needs at least 2 bins")
    return PowerSpectrum(FrequencyGrid(0.0, grid.f_step, n), psd, spectrum.resolution_bw)


# -- waveform generators ------------------------------------------------------

def rrc_taps(rolloff, sps, span=32):
    """Root-raised-cosine impulse response truncated at +/- ``span`` symbols."""
    t = np.arange(-span * sps, span * sps + 1) / sps
    beta = rolloff
    h = np.empty_like(t)
    zero = np.isclose(t, 0.0)
    h[zero] = 1 - beta + 4 * beta / np.pi
    if beta > 0:
        special = np.isclose(np.abs(t), 1 / (4 * beta))
        h[special] = (beta / np.sqrt(2)) * (
            (1 + 2 / np.pi) * np.sin(np.pi / (4 * beta))
            + (1 - 2 / np.pi) * np.cos(np.pi / (4 * beta))
        )
    else:
        special = np.zeros_like(zero)
    rest = ~(zero | special)
    tr = t[rest]
    h[rest] = (
        np.sin(np.pi * tr * (1 - beta)) + 4 * beta * tr * np.cos(np.pi * tr * (1 + beta))
    ) / (np.pi * tr * (1 - (4 * beta * tr) ** 2))
    return h / np.sqrt(np.sum(h**2))


def generate_rrc_qpsk(baud, rolloff, n_symbols, oversampling=4, dual_pol=False, seed=0):
    """Root-raised-cosine shaped QPSK at ``oversampling`` samples per symbol.

    The pulse is applied by circular convolution so the waveform is periodic
    in its own length.  Mean power is exactly 1 per polarization.
    """
    if not 0 <= rolloff <= 1:
        raise ParameterError(f"rolloff must lie in [0, 1], got {rolloff}")
    if int(oversampling) != oversampling or oversampling < 2 * (1 + rolloff):
        raise ParameterError(
            f"oversampling must be an integer >= 2(1+rolloff) = {2 * (1 + rolloff):g}"
        )
    if int(n_symbols) != n_symbols or n_symbols < 1024:
        raise ParameterError("n_symbols must be an integer >= 1024")
    if not baud > 0:
        raise ParameterError("baud must be positive")
    sps, n_symbols = int(oversampling), int(n_symbols)
    n = n_symbols * sps
    taps = rrc_taps(rolloff, sps)
    kernel = np.zeros(n)
    half = taps.size // 2
    kernel[: half + 1] = taps[half:]
    kernel[-half:] = taps[:half]
    kernel_f = np.fft.fft(kernel)

    rng = make_rng(seed)
    pols = []
    for _ in range(2 if dual_pol else 1):
        bits = rng.integers(0, 2, size=(2, n_symbols))
        symbols = ((2 * bits[0] - 1) + 1j * (2 * bits[1] - 1)) / np.sqrt(2)
        up = np.zeros(n, complex)
        up[::sps] = symbols
        x = np.fft.ifft(np.fft.fft(up) * kernel_f)
        pols.append(x / np.sqrt(np.mean(np.abs(x) ** 2)))
    return ComplexWaveform(
        baud * sps, pols[0], pols[1] if dual_pol else None,
        label=f"rrc-qpsk {baud:g} Bd beta={rolloff:g}", symbol_rate=baud,
    )


def generate_loaded_noise(sample_rate, bandwidth, n_samples, dual_pol=False, seed=0):
    """Band-limited noise-like waveform with an exactly flat spectrum.

    Every FFT bin inside ``|f| < bandwidth / 2`` gets unit magnitude and a
    uniformly random phase; bins outside are zero.  Unlike Gaussian noise the
    periodogram carries no per-bin fluctuation, which makes it the reference
    "flat signal" for normalization and SNDR checks.
    """
    if not 0 < bandwidth <= sample_rate:
        raise ParameterError("bandwidth must lie in (0, sample_rate]")
    if int(n_samples) != n_samples or n_samples < 64:
        raise ParameterError("n_samples must be an integer >= 64")
    n = int(n_samples)
    f = np.fft.fftfreq(n, 1 / sample_rate)
    inband = np.abs(f) < bandwidth / 2
    rng = make_rng(seed)
    pols = []
    for _ in range(2 if dual_pol else 1):
        spec = np.zeros(n, complex)
        spec[inband] = np.exp(2j * np.pi * rng.random(int(inband.sum())))
        x = np.fft.ifft(spec)
        pols.append(x / np.sqrt(np.mean(np.abs(x) ** 2)))
    return ComplexWaveform(
        sample_rate, pols[0], pols[1] if dual_pol else None,
        label=f"loaded-noise {bandwidth:g} Hz", symbol_rate=bandwidth,
    )


def peak_to_rms(wfm):
    """max |sample| / rms |sample| over both polarizations."""
    samples = np.concatenate([np.abs(p) for p in wfm.pols])
    if samples.size == 0:
        raise ParameterError("empty waveform")
    rms = np.sqrt(np.mean(samples**2))
    if rms == 0:
        raise ParameterError("peak-to-rms of an all-zero waveform is undefined")
    return float(samples.max() / rms)
