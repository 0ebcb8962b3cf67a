"""Declarative experiment scenarios (YAML).

A scenario file is a YAML mapping.  Only ``waveform.baud`` and a ``plan``
(or ``skew`` block) are required; everything else has a default that is
echoed back in reports.  Unknown keys are rejected.  See ``README.md`` for
the full key list and the shipped examples in ``notchkit/scenarios``.
"""
from __future__ import annotations

import math
from importlib import resources
from pathlib import Path
from typing import Literal

from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError, model_validator

from .chain import CrosstalkProfile, FloorShape, ImpairmentConfig, InterfaceStage
from .exceptions import NotchkitError, ValidationError
from .io import _validation_problems, load_yaml
from .perturbation import BandOfInterest, NotchSpec
from .signal import generate_loaded_noise, generate_rrc_qpsk
from .stitching import StitchPlan

KINDS = ("stitch", "skew", "xtalk", "psd")


class _Model(BaseModel):
    model_config = ConfigDict(extra="forbid")


class WaveformConfig(_Model):
    type: Literal["rrc_qpsk", "loaded_noise"] = "rrc_qpsk"
    baud: float = Field(gt=0)
    rolloff: float = Field(0.05, ge=0, le=1)
    n_symbols: int = Field(32768, ge=1024)
    oversampling: int = Field(4, ge=2)
    dual_pol: bool = False
    seed: int = Field(1, ge=0)


class NotchEntry(_Model):
    center_hz: float
    width_hz: float = Field(gt=0)


class PlanConfig(_Model):
    kind: Literal["single", "dual"] = "dual"
    width_hz: float | None = Field(None, gt=0)
    notches: list[NotchEntry] | None = None

    @model_validator(mode="after")
    def _one_layout(self):
        if (self.width_hz is None) == (self.notches is None):
            raise ValueError("give exactly one of width_hz (uniform plan) or notches (explicit list)")
        return self


class BoiConfig(_Model):
    f_lo_hz: float
    f_hi_hz: float


class FloorShapeConfig(_Model):
    freqs_hz: list[float]
    weights_db: list[float]
    lines: list[tuple[float, float]] = []


class CrosstalkConfig(_Model):
    """Complex values are written as ``[re, im]`` pairs or plain reals."""

    freqs_hz: list[float]
    c_qi: list[float | tuple[float, float]]
    c_iq: list[float | tuple[float, float]]
    c_ii: list[float | tuple[float, float]] | None = None
    c_qq: list[float | tuple[float, float]] | None = None


class ImpairmentsConfig(_Model):
    nfl_tx_db: float | None = None
    nfl_rx_db: float | None = None
    nfl_optical_db: float | None = None
    nfl_shape: FloorShapeConfig | None = None
    dac_bits: int | None = Field(None, ge=3, le=16)
    crosstalk: CrosstalkConfig | None = None
    skew_ps: float = 0.0
    iq_gain_imbalance_db: float = 0.0


class SkewConfig(_Model):
    center_hz: float = 20e9
    width_hz: float = Field(2e9, gt=0)
    sweep_lo_ps: float = -1.4
    sweep_hi_ps: float = 1.4
    step_ps: float = Field(0.25, gt=0)
    repeats: int = Field(8, ge=1)
    traces_avg: int = Field(40, ge=1)


class OutputConfig(_Model):
    dir: str | None = None
    export_traces: bool = False


class Scenario(_Model):
    kind: Literal["stitch", "skew", "xtalk", "psd"] | None = None
    name: str = ""
    seed: int = Field(0, ge=0)
    waveform: WaveformConfig
    stage: str = "Card2OSA"
    rbw_hz: float = Field(500e6, gt=0)
    averaging: int = Field(16, ge=1)
    normalize: bool = True
    pol: Literal["x", "y", "sum"] = "x"
    boi: BoiConfig | None = None
    plan: PlanConfig | None = None
    impairments: ImpairmentsConfig = ImpairmentsConfig()
    skew: SkewConfig | None = None
    output: OutputConfig = OutputConfig()

    # -- derived objects ---------------------------------------------------

    @property
    def sample_rate(self):
        return self.waveform.baud * self.waveform.oversampling

    def band_of_interest(self):
        """Explicit ``boi``, else the flat part of the RRC spectrum.

        For uniform plans the default half-width is rounded down to a whole
        number of notch widths so the plan tiles it exactly.
        """
        if self.boi is not None:
            return BandOfInterest(self.boi.f_lo_hz, self.boi.f_hi_hz)
        half = self.waveform.baud * (1 - self.waveform.rolloff) / 2
        if self.plan is not None and self.plan.width_hz is not None:
            half = math.floor(half / self.plan.width_hz + 1e-9) * self.plan.width_hz
        return BandOfInterest(-half, half)

    def stitch_plan(self, kind=None):
        """Plan from the ``plan`` block; ``kind`` overrides single/dual for uniform plans."""
        kind = kind or self.plan.kind
        boi = self.band_of_interest()
        if self.plan.width_hz is not None:
            return StitchPlan.uniform(boi, self.plan.width_hz, kind)
        return StitchPlan(boi, [NotchSpec(kind, n.center_hz, n.width_hz) for n in self.plan.notches], kind)

    def skew_notch(self):
        s = self.skew or SkewConfig()
        return NotchSpec("single", s.center_hz, s.width_hz)

    def impairment_config(self):
        imp = self.impairments
        shape = None
        if imp.nfl_shape is not None:
            shape = FloorShape(imp.nfl_shape.freqs_hz, imp.nfl_shape.weights_db, imp.nfl_shape.lines)
        xt = None
        if imp.crosstalk is not None:
            c = imp.crosstalk
            xt = CrosstalkProfile(
                c.freqs_hz, _complex(c.c_qi), _complex(c.c_iq),
                None if c.c_ii is None else _complex(c.c_ii),
                None if c.c_qq is None else _complex(c.c_qq),
            )
        return ImpairmentConfig(
            nfl_tx_db=imp.nfl_tx_db, nfl_rx_db=imp.nfl_rx_db, nfl_optical_db=imp.nfl_optical_db,
            nfl_shape=shape, dac_bits=imp.dac_bits, crosstalk=xt, skew_ps=imp.skew_ps,
            iq_gain_imbalance_db=imp.iq_gain_imbalance_db, seed=self.seed,
        )

    def waveform_obj(self):
        w = self.waveform
        if w.type == "rrc_qpsk":
            return generate_rrc_qpsk(w.baud, w.rolloff, w.n_symbols, w.oversampling, w.dual_pol, w.seed)
        n = w.n_symbols * w.oversampling
        wfm = generate_loaded_noise(self.sample_rate, w.baud * (1 - w.rolloff), n, w.dual_pol, w.seed)
        return wfm.with_pols(wfm.pols, symbol_rate=w.baud)

    def echo(self):
        return self.model_dump(mode="json")


def _complex(values):
    return [complex(v[0], v[1]) if isinstance(v, (tuple, list)) else complex(v) for v in values]


def _infer_kind(data):
    if "kind" in data and data["kind"] is not None:
        return data["kind"]
    if "skew" in data:
        return "skew"
    if "plan" in data:
        return "stitch"
    return "psd"


def _check(sc):
    """Cross-field checks that need the domain objects; returns problem strings."""
    problems = []
    if sc.stage:
        try:
            InterfaceStage.parse(sc.stage)
        except NotchkitError as exc:
            problems.append(f"stage: {exc}")
    if sc.waveform.type == "rrc_qpsk" and sc.waveform.oversampling < 2 * (1 + sc.waveform.rolloff):
        problems.append("waveform.oversampling: must be at least 2*(1+rolloff)")
    try:
        boi = sc.band_of_interest()
        if boi.half_width > sc.sample_rate / 2:
            problems.append("boi: exceeds the Nyquist band of the waveform")
    except NotchkitError as exc:
        problems.append(f"boi: {exc}")
        boi = None
    try:
        sc.impairment_config()
    except NotchkitError as exc:
        problems.append(f"impairments: {exc}")
    if sc.kind in ("stitch", "xtalk"):
        if sc.plan is None:
            problems.append(f"plan: required for kind {sc.kind!r}")
        elif boi is not None:
            try:
                sc.stitch_plan()
                if sc.kind == "xtalk":
                    if sc.plan.width_hz is None:
                        problems.append("plan.width_hz: xtalk scenarios need a uniform plan")
                    else:
                        sc.stitch_plan("single")
            except NotchkitError as exc:
                problems.append(f"plan: {exc}")
    if sc.kind == "skew":
        s = sc.skew or SkewConfig()
        if not s.sweep_lo_ps < s.sweep_hi_ps:
            problems.append("skew: sweep_lo_ps must be below sweep_hi_ps")
        if s.center_hz - s.width_hz / 2 < 0:
            problems.append("skew: notch must lie on one side of the carrier")
        period = 1e12 / sc.waveform.baud
        if abs(sc.impairments.skew_ps) >= 0.1 * period:
            problems.append(f"impairments.skew_ps: must be below 10% of the symbol period ({period:g} ps)")
    return problems


def validate_scenario(data):
    """Validate a parsed mapping; raises :class:`ValidationError` listing every problem."""
    if not isinstance(data, dict):
        raise ValidationError(["<root>: scenario must be a mapping"])
    data = dict(data)
    data["kind"] = _infer_kind(data)
    try:
        sc = Scenario.model_validate(data)
    except PydanticValidationError as exc:
        raise ValidationError(_validation_problems(exc)) from None
    problems = _check(sc)
    if problems:
        raise ValidationError(problems)
    return sc


def shipped_scenarios():
    """Names of the example scenarios bundled with the package."""
    root = resources.files("notchkit") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def load_scenario(path):
    """Load a scenario from a YAML path or the name of a shipped example."""
    p = Path(path)
    if not p.exists() and str(path) in shipped_scenarios():
        p = Path(str(resources.files("notchkit") / "scenarios" / f"{path}.yaml"))
    if not p.exists():
        raise FileNotFoundError(f"scenario file not found: {path}")
    return validate_scenario(load_yaml(p))
