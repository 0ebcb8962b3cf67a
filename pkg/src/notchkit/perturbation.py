"""Single- and dual-notch perturbation filters and the transmit normalization loop.

A notch centred at ``center_nc`` with width ``width_nw`` claims the grid bins
whose centres fall in ``[NC - NW/2, NC + NW/2)``.  Its mirror is the exact
negation of that bin set, i.e. ``(-NC - NW/2, -NC + NW/2]``.  A dual notch
zeroes both sets (so the filter is symmetric about the carrier); a single
notch zeroes only the first, which leaves I and Q in destructive interference
inside it and constructive interference in the mirror.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .exceptions import GeometryError, NormalizationError, ParameterError
from .signal import FrequencyGrid, fine_bin_numbers

KINDS = ("single", "dual")
_TOL = 1e-9


@dataclass(frozen=True)
class NotchSpec:
    kind: str
    center_nc: float
    width_nw: float

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ParameterError(f"notch kind must be one of {KINDS}, got {self.kind!r}")
        if not self.width_nw > 0:
            raise ParameterError(f"notch width must be positive, got {self.width_nw}")
        object.__setattr__(self, "center_nc", float(self.center_nc))
        object.__setattr__(self, "width_nw", float(self.width_nw))

    @property
    def band(self):
        """Declared [lo, hi) of the notch band in Hz."""
        return self.center_nc - self.width_nw / 2, self.center_nc + self.width_nw / 2

    @property
    def mirror_band(self):
        """Declared (lo, hi] of the mirror band in Hz."""
        lo, hi = self.band
        return -hi, -lo

    def bin_numbers(self, f_step):
        """Signed bin numbers (relative to 0 Hz) claimed by the notch band."""
        lo, hi = self.band
        k_a = int(np.ceil(lo / f_step - _TOL))
        k_b = int(np.ceil(hi / f_step - _TOL)) - 1
        return np.arange(k_a, k_b + 1)


@dataclass(frozen=True)
class BandOfInterest:
    f_lo: float
    f_hi: float

    def __post_init__(self):
        if not self.f_lo < self.f_hi:
            raise ParameterError(f"band of interest needs f_lo < f_hi, got [{self.f_lo}, {self.f_hi})")
        object.__setattr__(self, "f_lo", float(self.f_lo))
        object.__setattr__(self, "f_hi", float(self.f_hi))

    @property
    def width(self):
        return self.f_hi - self.f_lo

    @property
    def half_width(self):
        """Largest |f| in the band (the span a dual plan must reach)."""
        return max(abs(self.f_lo), abs(self.f_hi))

    def grid_mask(self, grid):
        """Bins of ``grid`` inside the band.

        Centres at ``f >= 0`` count on [f_lo, f_hi); negative centres on the
        open interval.  This matches notch claims, whose mirrors are
        half-open on the other side, so a centre sitting exactly on the
        lower edge of a symmetric band is left out rather than orphaned.
        """
        f = grid.freqs
        tol = 1e-9 * grid.f_step
        lo = np.where(f >= 0, f >= self.f_lo - tol, f > self.f_lo + tol)
        return lo & (f < self.f_hi - tol)


@dataclass(frozen=True)
class FilterRegion:
    f_lo: float
    f_hi: float
    gain_power: float


@dataclass(frozen=True, eq=False)
class PerturbationFilter:
    """Real, non-negative amplitude mask on ``grid`` (1 outside every region)."""

    grid: FrequencyGrid
    gain: np.ndarray
    regions: tuple
    notch: NotchSpec | None = None

    def __post_init__(self):
        gain = np.array(self.gain, float)
        if gain.shape != (self.grid.n_bins,):
            raise ParameterError("gain must have one value per grid bin")
        if np.any(gain < 0) or not np.all(np.isfinite(gain)):
            raise ParameterError("filter gain must be real, finite and non-negative")
        gain.setflags(write=False)
        object.__setattr__(self, "gain", gain)
        object.__setattr__(self, "regions", tuple(self.regions))

    def fine_gain(self, n_samples, sample_rate):
        """Gain on each bin of an ``n_samples``-point FFT at ``sample_rate``."""
        return fine_lookup(self.grid, self.gain, n_samples, sample_rate, fill=1.0)

    def is_identity(self):
        return bool(np.all(self.gain == 1.0))


def fine_lookup(grid, values, n_samples, sample_rate, fill):
    """Spread per-bin ``values`` on ``grid`` onto a full-length FFT grid."""
    n_bins = sample_rate / grid.f_step
    if abs(n_bins - round(n_bins)) > 1e-6 * n_bins:
        raise GeometryError(
            f"grid step {grid.f_step:g} Hz does not divide the sample rate {sample_rate:g} Hz"
        )
    n_bins = int(round(n_bins))
    b = fine_bin_numbers(n_samples, n_bins).copy()
    if n_bins % 2 == 0:
        b[b == n_bins // 2] = -(n_bins // 2)
    pos = b - grid.offset
    inside = (pos >= 0) & (pos < grid.n_bins)
    values = np.asarray(values)
    out = np.full(n_samples, fill, dtype=values.dtype)
    out[inside] = values[pos[inside]]
    return out


def notch_positions(spec, grid, which="zeroed"):
    """Grid positions of a notch's bins.

    ``which`` selects ``"null"`` (the declared band), ``"mirror"`` (its
    negation) or ``"zeroed"`` (every band the filter zeroes: the null band,
    plus the mirror for dual notches).
    """
    k = spec.bin_numbers(grid.f_step)
    if which == "null":
        nums = k
    elif which == "mirror":
        nums = -k[::-1]
    elif which == "zeroed":
        nums = np.union1d(k, -k) if spec.kind == "dual" else k
    else:
        raise ParameterError(f"unknown band selector {which!r}")
    return nums - grid.offset


def build_filter(spec, grid, gain_db=-np.inf):
    """Amplitude mask with gain ``10**(gain_db/20)`` inside the notch band(s).

    Band edges snap to the bin boundaries of ``grid``; the snapped edges are
    recorded in ``regions``.
    """
    if np.isnan(gain_db):
        raise ParameterError("gain_db must not be NaN")
    amp = 0.0 if gain_db == -np.inf else 10 ** (gain_db / 20)
    k = spec.bin_numbers(grid.f_step)
    if k.size == 0:
        raise GeometryError(f"notch {spec} is narrower than one bin of the grid")
    pos = notch_positions(spec, grid, "zeroed")
    if pos.min() < 0 or pos.max() >= grid.n_bins:
        raise GeometryError(f"notch {spec} extends outside the grid")
    gain = np.ones(grid.n_bins)
    gain[pos] = amp
    if np.all(gain == 0):
        raise GeometryError("degenerate notch: filter zeroes the whole grid")
    df = grid.f_step
    lo, hi = (k[0] - 0.5) * df, (k[-1] + 0.5) * df
    regions = [FilterRegion(lo, hi, amp**2)]
    if spec.kind == "dual":
        regions.append(FilterRegion(-hi, -lo, amp**2))
    return PerturbationFilter(grid, gain, regions, spec)


def _boi_mask(wfm, boi):
    if boi is None:
        return np.ones(wfm.n_samples, bool)
    return wfm.fft_band_mask(boi.f_lo, boi.f_hi)


def normalization_factor(wfm_org, filt, boi=None):
    """Ratio of perturbed to original power inside the band of interest."""
    h = filt.fine_gain(wfm_org.n_samples, wfm_org.sample_rate)
    mask = _boi_mask(wfm_org, boi)
    num = den = 0.0
    for p in wfm_org.pols:
        pw = np.abs(np.fft.fft(p)[mask]) ** 2
        den += pw.sum()
        num += (pw * h[mask] ** 2).sum()
    if den == 0:
        raise NormalizationError("original waveform carries no power in the band of interest")
    return float(num / den)


def apply_perturbation(wfm_org, filt, normalize=True, boi=None):
    """Multiply the waveform spectrum by the filter; optionally renormalize.

    Returns ``(perturbed, norm)`` where ``norm`` is the in-band power ratio
    before renormalization.  With ``normalize`` the samples are scaled by
    ``1/sqrt(norm)`` so the in-band power is unchanged.
    """
    norm = normalization_factor(wfm_org, filt, boi)
    if normalize and norm == 0:
        raise NormalizationError("the filter removes all power in the band of interest")
    h = filt.fine_gain(wfm_org.n_samples, wfm_org.sample_rate)
    scale = 1 / np.sqrt(norm) if normalize else 1.0
    pols = [np.fft.ifft(np.fft.fft(p) * h) * scale for p in wfm_org.pols]
    label = f"{wfm_org.label} | {filt.notch.kind if filt.notch else 'filter'} notch".strip(" |")
    return wfm_org.with_pols(pols, label=label), norm


def perturb(wfm_org, spec, grid, normalize=True, boi=None, gain_db=-np.inf):
    """Convenience wrapper: build the filter for ``spec`` and apply it."""
    filt = build_filter(spec, grid, gain_db)
    out, norm = apply_perturbation(wfm_org, filt, normalize, boi)
    return out, norm, filt


def iq_components(spectrum_x, spectrum_x_neg):
    """Spectra of the real I and Q signals from X(f) and X(-f).

    Returns ``(X_I, X_Q)`` with ``X_I = (X(f) + X*(-f))/2`` and
    ``j X_Q = (X(f) - X*(-f))/2``.
    """
    xi = (spectrum_x + np.conj(spectrum_x_neg)) / 2
    xq = (spectrum_x - np.conj(spectrum_x_neg)) / 2j
    return xi, xq


def mirrored(spectrum):
    """X(-f) in natural FFT order."""
    return np.roll(spectrum[::-1], 1)
