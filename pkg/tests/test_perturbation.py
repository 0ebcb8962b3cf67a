import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from notchkit.exceptions import GeometryError, NormalizationError, ParameterError
from notchkit.perturbation import (
    BandOfInterest,
    NotchSpec,
    apply_perturbation,
    build_filter,
    iq_components,
    mirrored,
    normalization_factor,
    notch_positions,
)
from notchkit.signal import ComplexWaveform, estimate_psd, generate_loaded_noise, generate_rrc_qpsk, psd_grid

FS = 64e9
N = 2**14
GRID = psd_grid(FS, 250e6, N)  # 0.25 GHz bins, 14/16 GHz land on bin centres


def test_notch_spec_validation():
    with pytest.raises(ParameterError):
        NotchSpec("triple", 1e9, 1e9)
    with pytest.raises(ParameterError):
        NotchSpec("dual", 1e9, 0)
    with pytest.raises(ParameterError):
        BandOfInterest(5, 5)


def test_dual_notch_geometry():
    f = build_filter(NotchSpec("dual", 15e9, 2e9), GRID)
    freqs = GRID.freqs
    null = (freqs >= 14e9) & (freqs < 16e9)
    mirror = (freqs > -16e9) & (freqs <= -14e9)
    assert np.all(f.gain[null | mirror] == 0)
    assert np.all(f.gain[~(null | mirror)] == 1)
    assert null.sum() == mirror.sum() == 8
    # symmetric about the carrier: gain(f) == gain(-f) wherever -f is on the grid
    inner = np.abs(freqs) < FS / 2
    k = np.arange(GRID.n_bins)[inner]
    assert np.array_equal(f.gain[k], f.gain[GRID.n_bins - k])
    widths = [r.f_hi - r.f_lo for r in f.regions]
    assert widths == pytest.approx([2e9, 2e9])
    assert all(r.gain_power == 0 for r in f.regions)


def test_identity_gain():
    f = build_filter(NotchSpec("dual", 15e9, 2e9), GRID, gain_db=0)
    assert f.is_identity()


def test_partial_gain():
    f = build_filter(NotchSpec("single", 15e9, 2e9), GRID, gain_db=-20)
    assert f.gain.min() == pytest.approx(0.1)
    assert f.regions[0].gain_power == pytest.approx(0.01)


def test_degenerate_and_outside():
    with pytest.raises(GeometryError):
        build_filter(NotchSpec("single", 0.0, FS), GRID)
    with pytest.raises(GeometryError):
        build_filter(NotchSpec("single", 40e9, 2e9), GRID)
    with pytest.raises(GeometryError):
        build_filter(NotchSpec("single", 5.125e9, 0.1e9), GRID)


@given(st.integers(1, 100), st.integers(1, 20))
@settings(max_examples=50, deadline=None)
def test_dual_filter_symmetric_and_binary(center_bins, width_bins):
    df = GRID.f_step
    spec = NotchSpec("dual", center_bins * df * 0.9 + 0.1 * df, width_bins * df * 0.77 + df)
    try:
        f = build_filter(spec, GRID)
    except GeometryError:
        return
    assert set(np.unique(f.gain)) <= {0.0, 1.0}
    z = set(notch_positions(spec, GRID, "zeroed") + GRID.offset)
    assert z == {-k for k in z}
    assert np.flatnonzero(f.gain == 0).size == len(z)


@pytest.fixture(scope="module")
def flat():
    return generate_loaded_noise(256e9, 120e9, 2**14, seed=4)


class TestNormalization:
    def test_flat_spectrum_analytic(self, flat):
        grid = psd_grid(flat.sample_rate, 500e6, flat.n_samples)
        boi = BandOfInterest(-50e9, 50e9)
        f = build_filter(NotchSpec("dual", 15e9, 2e9), grid)
        norm = normalization_factor(flat, f, boi)
        assert norm == pytest.approx(0.96, rel=1e-12)

    def test_identity_exact(self, flat):
        grid = psd_grid(flat.sample_rate, 500e6, flat.n_samples)
        f = build_filter(NotchSpec("dual", 15e9, 2e9), grid, gain_db=0)
        assert normalization_factor(flat, f, BandOfInterest(-50e9, 50e9)) == 1.0

    def test_rrc_riemann_sum(self):
        w = generate_rrc_qpsk(95e9, 0.05, 4096, 4, seed=3)
        grid = psd_grid(w.sample_rate, 500e6, w.n_samples)
        boi = BandOfInterest(-44e9, 44e9)
        filt = build_filter(NotchSpec("dual", 20e9, 2e9), grid)
        spec = np.abs(np.fft.fft(w.pol_x)) ** 2
        f = np.fft.fftfreq(w.n_samples, 1 / w.sample_rate)
        lo, hi = filt.regions[0].f_lo, filt.regions[0].f_hi
        in_boi = (f >= boi.f_lo) & (f < boi.f_hi)
        notched = ((f >= lo) & (f < hi)) | ((f > -hi) & (f <= -lo))
        expected = sum(spec[k] for k in range(f.size) if in_boi[k] and not notched[k]) / sum(
            spec[k] for k in range(f.size) if in_boi[k]
        )
        assert normalization_factor(w, filt, boi) == pytest.approx(expected, rel=1e-12)

    def test_zero_power(self):
        w = ComplexWaveform(FS, np.zeros(N))
        with pytest.raises(NormalizationError):
            normalization_factor(w, build_filter(NotchSpec("dual", 5e9, 1e9), GRID))

    def test_matches_output_power_ratio(self, rrc_small, boi44):
        grid = psd_grid(rrc_small.sample_rate, 500e6, rrc_small.n_samples)
        filt = build_filter(NotchSpec("dual", 11e9, 2e9), grid)
        out, norm = apply_perturbation(rrc_small, filt, normalize=False, boi=boi44)
        f = rrc_small.fft_freqs()
        m = (f >= boi44.f_lo) & (f < boi44.f_hi)
        ratio = (np.abs(np.fft.fft(out.pol_x)[m]) ** 2).sum() / (np.abs(np.fft.fft(rrc_small.pol_x)[m]) ** 2).sum()
        assert ratio == pytest.approx(norm, rel=1e-9)


class TestApply:
    def test_dual_notch_empty(self, rrc_small):
        grid = psd_grid(rrc_small.sample_rate, 500e6, rrc_small.n_samples)
        filt = build_filter(NotchSpec("dual", 21e9, 2e9), grid)
        out, _ = apply_perturbation(rrc_small, filt)
        psd = estimate_psd(out, 500e6)
        zeroed = filt.gain == 0
        passband = psd.psd[np.abs(psd.freqs) < 40e9].mean()
        assert np.all(psd.psd[zeroed] <= 1e-6 * passband)

    def test_normalized_passband_rise(self):
        flat = generate_loaded_noise(256e9, 120e9, 2**14, seed=4)
        grid = psd_grid(flat.sample_rate, 500e6, flat.n_samples)
        boi = BandOfInterest(-50e9, 50e9)
        filt = build_filter(NotchSpec("dual", 15e9, 2e9), grid)
        out, norm = apply_perturbation(flat, filt, normalize=True, boi=boi)
        before, after = estimate_psd(flat, 500e6), estimate_psd(out, 500e6)
        k = np.argmin(np.abs(before.freqs - 30e9))
        rise = 10 * np.log10(after.psd[k] / before.psd[k])
        assert norm == pytest.approx(0.96)
        assert rise == pytest.approx(10 * np.log10(1 / 0.96), abs=1e-9)
        assert rise == pytest.approx(0.177, abs=1e-3)

    def test_identity_is_identity(self, rrc_small):
        grid = psd_grid(rrc_small.sample_rate, 500e6, rrc_small.n_samples)
        filt = build_filter(NotchSpec("dual", 21e9, 2e9), grid, gain_db=0)
        out, norm = apply_perturbation(rrc_small, filt, normalize=True)
        assert norm == 1.0
        assert np.max(np.abs(out.pol_x - rrc_small.pol_x)) < 1e-12

    def _bands(self, wfm, notch):
        grid = psd_grid(wfm.sample_rate, 500e6, wfm.n_samples)
        filt = build_filter(notch, grid)
        out, _ = apply_perturbation(wfm, filt)
        X = np.fft.fft(out.pol_x)
        xi, xq = iq_components(X, mirrored(X))
        f = wfm.fft_freqs()
        lo, hi = filt.regions[0].f_lo, filt.regions[0].f_hi
        null = (f >= lo) & (f < hi)
        mirror = (f > -hi) & (f <= -lo)
        return out, xi, xq, null, mirror

    def test_single_notch_interference(self, rrc_small):
        out, xi, xq, null, mirror = self._bands(rrc_small, NotchSpec("single", 15e9, 2e9))
        scale = np.abs(xi[mirror]).max()
        assert np.max(np.abs(xi[null] + 1j * xq[null])) <= 1e-10 * scale
        assert np.max(np.abs(xi[mirror] - 1j * xq[mirror])) <= 1e-10 * scale
        assert np.abs(xi[null]).min() > 0
        # I and Q spectra agree with the real-signal transforms
        assert np.allclose(xi, np.fft.fft(out.pol_x.real), atol=1e-9 * scale)
        assert np.allclose(xq, np.fft.fft(out.pol_x.imag), atol=1e-9 * scale)

    def test_dual_notch_zeroes_both_components(self, rrc_small):
        _, xi, xq, null, mirror = self._bands(rrc_small, NotchSpec("dual", 15e9, 2e9))
        band = null | mirror
        assert np.max(np.abs(xi[band])) < 1e-9
        assert np.max(np.abs(xq[band])) < 1e-9
