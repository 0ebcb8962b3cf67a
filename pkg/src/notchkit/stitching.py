"""Notch sweeps, noise-floor stitching and frequency-resolved SNDR.

Each trace exposes the floor inside its own notch.  Every bin of the band of
interest is owned by exactly one notch; the stitched floor takes that bin from
the owner's trace.  The signal PSD in the same bin comes from a partner trace
that is not notched there: ``(partner - owner) * partner.norm``.
"""
from __future__ import annotations

import hashlib
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .chain import InterfaceStage, MeasurementTrace, reference_psd, simulate_capture
from .exceptions import GridError, PairingError, PlanError, StitchError
from .perturbation import BandOfInterest, NotchSpec, apply_perturbation, build_filter, notch_positions
from .signal import FrequencyGrid, PowerSpectrum, psd_grid

__all__ = [
    "StitchPlan", "SNDRProfile", "SmallNotchReport", "MeasurementTrace",
    "run_plan", "stitch_nfl", "recover_signal_psd", "compute_sndr", "small_notch_check",
    "notch_seed", "ownership",
]


def _merge(intervals):
    out = []
    for lo, hi in sorted(intervals):
        if out and lo <= out[-1][1]:
            out[-1][1] = max(out[-1][1], hi)
        else:
            out.append([lo, hi])
    return out


@dataclass(frozen=True)
class StitchPlan:
    """Ordered notch list whose bands (plus mirrors for dual plans) tile the band of interest."""

    boi: BandOfInterest
    notches: tuple
    kind: str = "dual"

    def __post_init__(self):
        object.__setattr__(self, "notches", tuple(self.notches))
        if not self.notches:
            raise PlanError("plan has no notches")
        problems = []
        for i, n in enumerate(self.notches):
            if n.kind != self.kind:
                problems.append(f"notch {i} is {n.kind}, plan is {self.kind}")
            if self.kind == "dual":
                inside = 0 <= n.center_nc <= self.boi.half_width
            else:
                inside = self.boi.f_lo <= n.center_nc <= self.boi.f_hi
            if not inside:
                problems.append(f"notch {i} (center {n.center_nc:g} Hz) lies outside the band of interest")
        if problems:
            raise PlanError("; ".join(problems))
        gaps = self.uncovered()
        if gaps:
            desc = ", ".join(f"[{a:g}, {b:g}) Hz" for a, b in gaps)
            raise PlanError(f"notches leave the band of interest uncovered: {desc}", gaps)

    @classmethod
    def uniform(cls, boi, width, kind="dual"):
        """Abutting notches of ``width`` stepped across the band of interest."""
        if kind == "single":
            count = math.ceil(boi.width / width - 1e-9)
            start = boi.f_lo
        else:
            if boi.f_lo < 0 < boi.f_hi:
                start = 0.0
            else:
                start = min(abs(boi.f_lo), abs(boi.f_hi))
            count = math.ceil((boi.half_width - start) / width - 1e-9)
        notches = [NotchSpec(kind, start + (k + 0.5) * width, width) for k in range(count)]
        return cls(boi, notches, kind)

    def bands(self):
        out = []
        for n in self.notches:
            out.append(n.band)
            if n.kind == "dual":
                out.append(n.mirror_band)
        return out

    def uncovered(self):
        tol = 1e-9 * self.boi.width
        gaps, cursor = [], self.boi.f_lo
        for lo, hi in _merge(self.bands()):
            if hi <= cursor:
                continue
            if lo > cursor + tol and cursor < self.boi.f_hi:
                gaps.append((cursor, min(lo, self.boi.f_hi)))
            cursor = max(cursor, hi)
        if cursor < self.boi.f_hi - tol:
            gaps.append((cursor, self.boi.f_hi))
        return gaps


@dataclass(frozen=True, eq=False)
class SNDRProfile:
    grid: FrequencyGrid
    sndr_db: np.ndarray
    nfl: PowerSpectrum
    signal: PowerSpectrum

    @property
    def freqs(self):
        return self.grid.freqs


@dataclass(frozen=True)
class SmallNotchReport:
    max_norm_deviation: float
    worst_error_db: float
    threshold_db: float

    @property
    def safe(self):
        """True when skipping the normalization correction would cost less than ``threshold_db``."""
        return self.worst_error_db <= self.threshold_db


def notch_seed(seed, notch):
    """Noise entropy keyed by notch geometry, so plan order does not matter."""
    key = f"{notch.kind}|{notch.center_nc!r}|{notch.width_nw!r}".encode()
    digest = hashlib.sha256(key).digest()
    return (int(seed), int.from_bytes(digest[:4], "little"), int.from_bytes(digest[4:8], "little"))


def run_plan(plan, wfm_org, cfg, stage, rbw, averaging=1, normalize=True, pol="x"):
    """Perturb, normalize and capture one trace per notch of ``plan``."""
    stage = InterfaceStage.parse(stage)
    grid = psd_grid(wfm_org.sample_rate, rbw, wfm_org.n_samples)
    _check_plan_on_grid(plan, grid)
    refs = [reference_psd(wfm_org, plan.boi, i) for i in range(len(wfm_org.pols))]
    traces = []
    for notch in plan.notches:
        filt = build_filter(notch, grid)
        pert, norm = apply_perturbation(wfm_org, filt, normalize, plan.boi)
        traces.append(simulate_capture(
            pert, cfg, stage, rbw, n_captures=averaging, seed=notch_seed(cfg.seed, notch),
            ref=refs, boi=plan.boi, pol=pol, notch=notch, norm=norm if normalize else 1.0,
        ))
    return traces


def _check_plan_on_grid(plan, grid):
    mask = plan.boi.grid_mask(grid)
    ownership([(i, n) for i, n in enumerate(plan.notches)], grid, mask)


def ownership(indexed_notches, grid, mask):
    """Owner index for each selected bin of ``grid``.

    Bins claimed by several notches go to the one with the lowest centre
    frequency.  Raises :class:`PlanError` if two notches share more than one
    bin and :class:`StitchError` if a selected bin is unclaimed.
    """
    owner = np.full(grid.n_bins, -1)
    claimed = {}
    for idx, notch in sorted(indexed_notches, key=lambda t: (t[1].center_nc, t[1].width_nw)):
        pos = notch_positions(notch, grid, "zeroed")
        pos = pos[(pos >= 0) & (pos < grid.n_bins)]
        claimed[idx] = set(pos.tolist())
        free = pos[owner[pos] < 0]
        owner[free] = idx
    keys = list(claimed)
    for a in range(len(keys)):
        for b in range(a + 1, len(keys)):
            shared = claimed[keys[a]] & claimed[keys[b]]
            if len(shared) > 1:
                raise PlanError(f"notches {keys[a]} and {keys[b]} overlap by {len(shared)} bins")
    missing = np.flatnonzero(mask & (owner < 0))
    if missing.size:
        freqs = grid.freqs[missing]
        raise StitchError(
            f"{missing.size} bins of the band of interest are not covered by any notch "
            f"(first at {freqs[0]:g} Hz)", freqs.tolist(),
        )
    return owner, claimed


def _common_grid(traces):
    if not traces:
        raise StitchError("no traces to stitch")
    grid = traces[0].spectrum.grid
    for t in traces[1:]:
        if not t.spectrum.grid.matches(grid):
            raise GridError("traces do not share a frequency grid")
    return grid


def _resolve_boi(traces, boi):
    boi = boi or traces[0].boi
    if boi is None:
        raise StitchError("band of interest unknown: pass boi or attach it to the traces")
    return boi


def _boi_owner(traces, boi):
    grid = _common_grid(traces)
    boi = _resolve_boi(traces, boi)
    mask = boi.grid_mask(grid)
    if mask.sum() < 2:
        raise StitchError("band of interest selects fewer than 2 bins of the trace grid")
    if any(t.notch is None for t in traces):
        raise StitchError("every stitched trace must carry its notch geometry")
    owner, claimed = ownership(list(enumerate(t.notch for t in traces)), grid, mask)
    return grid, mask, owner, claimed


def stitch_nfl(traces, boi=None):
    """Noise floor over the band of interest, each bin taken from its owning trace."""
    grid, mask, owner, _ = _boi_owner(traces, boi)
    nfl = np.array([traces[o].spectrum.psd[k] for k, o in enumerate(owner) if mask[k]])
    return PowerSpectrum(grid.subgrid(mask), nfl, traces[0].spectrum.resolution_bw)


def partners(traces, claimed):
    """Partner index for every trace: the next notch up in frequency (cyclically)
    that leaves the trace's claimed bins un-notched."""
    order = sorted(range(len(traces)), key=lambda i: (traces[i].notch.center_nc, traces[i].notch.width_nw))
    out = {}
    for r, i in enumerate(order):
        for step in range(1, len(order)):
            j = order[(r + step) % len(order)]
            if not claimed[i] & claimed[j]:
                out[i] = j
                break
        else:
            raise PairingError(f"no un-notched partner trace for notch {traces[i].notch}")
    return out


def recover_signal_psd(traces, boi=None):
    """Signal PSD per bin: (partner - owner) scaled back by the partner's Norm.

    Negative differences clamp to 0 and are marked in ``flags``.
    """
    if len(traces) < 2:
        raise PairingError("signal recovery needs at least two traces")
    grid, mask, owner, claimed = _boi_owner(traces, boi)
    partner = partners(traces, claimed)
    sig = np.zeros(grid.n_bins)
    for k in np.flatnonzero(mask):
        o = owner[k]
        p = partner[o]
        sig[k] = (traces[p].spectrum.psd[k] - traces[o].spectrum.psd[k]) * traces[p].norm
    sig = sig[mask]
    flags = sig < 0
    if flags.any():
        warnings.warn(f"{int(flags.sum())} recovered signal bins were negative and clamped to 0",
                      RuntimeWarning, stacklevel=2)
    return PowerSpectrum(grid.subgrid(mask), np.where(flags, 0.0, sig),
                         traces[0].spectrum.resolution_bw, flags)


def compute_sndr(signal, nfl):
    """Bin-wise 10*log10(signal / nfl).

    +inf where the floor is 0 and the signal is not; NaN where both are 0.
    """
    if not signal.grid.matches(nfl.grid):
        raise GridError("signal and noise-floor spectra must share a grid")
    s, n = signal.psd, nfl.psd
    with np.errstate(divide="ignore", invalid="ignore"):
        sndr = 10 * np.log10(s / n)
    sndr = np.where((n == 0) & (s > 0), np.inf, sndr)
    sndr = np.where((n == 0) & (s == 0), np.nan, sndr)
    return SNDRProfile(signal.grid, sndr, nfl, signal)


def small_notch_check(traces, threshold_db=0.5):
    """Error that dropping the Norm correction in signal recovery would cause."""
    norms = np.array([t.norm for t in traces], float)
    if norms.size == 0:
        return SmallNotchReport(0.0, 0.0, threshold_db)
    return SmallNotchReport(
        float(np.max(np.abs(1 - norms))),
        float(np.max(10 * np.log10(1 / norms))),
        threshold_db,
    )


def stitch(traces, boi=None):
    """Floor, signal and SNDR in one call."""
    nfl = stitch_nfl(traces, boi)
    sig = recover_signal_psd(traces, boi)
    return compute_sndr(sig, nfl)
