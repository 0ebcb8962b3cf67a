"""Notch-loading simulation, noise-floor stitching and IQ diagnostics for coherent transmitters."""
from .chain import (
    CrosstalkProfile,
    FloorShape,
    ImpairmentConfig,
    InterfaceStage,
    MeasurementTrace,
    apply_impairments,
    simulate_capture,
)
from .estimation import (
    SkewScenario,
    apsd,
    build_phase_filter,
    estimate_skew,
    eye_closure_fit,
    skew_cost,
    sn_dn_discrepancy,
)
from .exceptions import NotchkitError
from .perturbation import BandOfInterest, NotchSpec, apply_perturbation, build_filter
from .signal import (
    ComplexWaveform,
    FrequencyGrid,
    PowerSpectrum,
    estimate_psd,
    generate_loaded_noise,
    generate_rrc_qpsk,
)
from .stitching import StitchPlan, compute_sndr, recover_signal_psd, run_plan, stitch, stitch_nfl

__version__ = "0.1.0"

__all__ = [
    "BandOfInterest", "ComplexWaveform", "CrosstalkProfile", "FloorShape", "FrequencyGrid",
    "ImpairmentConfig", "InterfaceStage", "MeasurementTrace", "NotchSpec", "NotchkitError",
    "PowerSpectrum", "SkewScenario", "StitchPlan", "apply_impairments", "apply_perturbation",
    "apsd", "build_filter", "build_phase_filter", "compute_sndr", "estimate_psd", "estimate_skew",
    "eye_closure_fit", "generate_loaded_noise", "generate_rrc_qpsk", "recover_signal_psd",
    "run_plan", "simulate_capture", "skew_cost", "sn_dn_discrepancy", "stitch", "stitch_nfl",
]
