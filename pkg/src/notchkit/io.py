"""Trace files, sidecars and report writing.

Trace file: UTF-8 text, first line ``freq_hz,psd_db``, then one
``<freq>,<level>`` row per bin.  Levels are dB relative to the sidecar's
``reference_psd`` (the mean signal PSD, W/Hz); ``-inf`` is allowed for empty
bins.  Frequencies must be strictly monotone; a descending column is reversed
on import.

Sidecar: YAML mapping next to the trace (same stem, ``.yaml``)::

    stage: Card2OSA          # E2E | Card2OSA | Card2Card
    reference_psd: 1.0e-11   # W/Hz that 0 dB refers to (default 1)
    norm: 0.977              # normalization factor applied (default 1)
    rbw_hz: 5.0e8            # resolution bandwidth (default: grid step)
    notch:                   # optional
      kind: dual
      center_hz: 2.1e10
      width_hz: 2.0e9
    boi:                     # optional
      f_lo_hz: -4.4e10
      f_hi_hz: 4.4e10
    grid_step_hz: 5.0e7      # optional; resample onto this step
    n_captures: 16           # optional
"""
from __future__ import annotations

import csv
import json
import math
import os
import tempfile
from pathlib import Path

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError as PydanticValidationError

from .chain import InterfaceStage, MeasurementTrace
from .exceptions import FormatError, ParseError, ValidationError
from .perturbation import BandOfInterest, NotchSpec
from .signal import FrequencyGrid, PowerSpectrum

HEADER = ["freq_hz", "psd_db"]


# -- atomic writes ---------------------------------------------------------------

def write_atomic(path, text):
    """Write ``text`` to ``path`` through a temp file in the same directory."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x):
    """Shortest round-tripping text for a float."""
    x = float(x)
    if math.isnan(x):
        return "nan"
    if math.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def csv_text(columns):
    """CSV document from an ordered mapping of equal-length columns."""
    names = list(columns)
    cols = [np.asarray(columns[n], float) for n in names]
    lines = [",".join(names)]
    for row in zip(*cols):
        lines.append(",".join(fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def jsonable(obj):
    """Convert numpy containers and non-finite floats for JSON output."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else fmt(x)
    if isinstance(obj, InterfaceStage):
        return obj.value
    return obj


def dump_json(obj):
    return json.dumps(jsonable(obj), indent=2, sort_keys=False, allow_nan=False) + "\n"


# -- sidecar -----------------------------------------------------------------

class _NotchMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")
    kind: str
    center_hz: float
    width_hz: float = Field(gt=0)


class _BoiMeta(BaseModel):
    model_config = ConfigDict(extra="forbid")
    f_lo_hz: float
    f_hi_hz: float


class TraceMetadata(BaseModel):
    model_config = ConfigDict(extra="forbid")
    stage: str = "Card2OSA"
    reference_psd: float = Field(1.0, gt=0)
    norm: float = Field(1.0, gt=0, le=1)
    rbw_hz: float | None = Field(None, gt=0)
    notch: _NotchMeta | None = None
    boi: _BoiMeta | None = None
    grid_step_hz: float | None = Field(None, gt=0)
    n_captures: int = Field(1, ge=1)


def _validation_problems(err):
    return [f"{'.'.join(str(p) for p in e['loc']) or '<root>'}: {e['msg']}" for e in err.errors()]


def load_yaml(path):
    """Parse a YAML mapping, reporting the line of any syntax error."""
    text = Path(path).read_text(encoding="utf-8")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        line = mark.line + 1 if mark is not None else None
        raise ParseError(f"{path}: {getattr(exc, 'problem', None) or exc}", line) from None
    if data is None:
        data = {}
    if not isinstance(data, dict):
        raise ParseError(f"{path}: top level must be a mapping", 1)
    return data


def parse_metadata(meta):
    if isinstance(meta, (str, Path)):
        meta = load_yaml(meta)
    try:
        m = TraceMetadata.model_validate(meta or {})
    except PydanticValidationError as exc:
        raise ValidationError(_validation_problems(exc)) from None
    problems = []
    try:
        InterfaceStage.parse(m.stage)
    except Exception as exc:
        problems.append(f"stage: {exc}")
    if m.boi is not None and not m.boi.f_lo_hz < m.boi.f_hi_hz:
        problems.append("boi: f_lo_hz must be below f_hi_hz")
    if m.notch is not None and m.notch.kind not in ("single", "dual"):
        problems.append(f"notch.kind: must be 'single' or 'dual', got {m.notch.kind!r}")
    if problems:
        raise ValidationError(problems)
    return m


def trace_metadata(trace):
    out = {
        "stage": trace.stage.value,
        "reference_psd": float(trace.reference_psd),
        "norm": float(trace.norm),
        "rbw_hz": float(trace.spectrum.resolution_bw),
        "n_captures": int(trace.n_captures),
    }
    if trace.notch is not None:
        out["notch"] = {
            "kind": trace.notch.kind,
            "center_hz": trace.notch.center_nc,
            "width_hz": trace.notch.width_nw,
        }
    if trace.boi is not None:
        out["boi"] = {"f_lo_hz": trace.boi.f_lo, "f_hi_hz": trace.boi.f_hi}
    return out


def sidecar_path(path):
    return Path(path).with_suffix(".yaml")


# -- traces -----------------------------------------------------------------

def export_trace(trace, path):
    """Write ``trace`` as a trace file plus YAML sidecar; returns both paths."""
    path = Path(path)
    spec = trace.spectrum
    with np.errstate(divide="ignore"):
        level = 10 * np.log10(spec.psd / trace.reference_psd)
    write_atomic(path, csv_text({"freq_hz": spec.freqs, "psd_db": level}))
    side = sidecar_path(path)
    write_atomic(side, yaml.safe_dump(trace_metadata(trace), sort_keys=False))
    return path, side


def read_trace_table(path):
    """Rows of a trace file as ``(freqs, levels_db)`` in file order."""
    freqs, levels = [], []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ParseError(f"{path}: empty trace file", 1) from None
        if [h.strip() for h in header] != HEADER:
            raise ParseError(f"{path}: header must be '{','.join(HEADER)}', got {','.join(header)!r}", 1)
        for row in reader:
            line = reader.line_num
            if not row or all(not c.strip() for c in row):
                continue
            if len(row) != 2:
                raise ParseError(f"{path}: expected 2 fields, got {len(row)}", line)
            try:
                f, p = float(row[0]), float(row[1])
            except ValueError:
                raise ParseError(f"{path}: non-numeric field in {','.join(row)!r}", line) from None
            if not math.isfinite(f) or math.isnan(p) or p == math.inf:
                raise ParseError(f"{path}: frequency must be finite and level must not be NaN/+inf", line)
            freqs.append(f)
            levels.append(p)
    if len(freqs) < 2:
        raise FormatError(f"{path}: a trace needs at least 2 rows")
    return np.array(freqs), np.array(levels)


def _uniform_step(freqs):
    steps = np.diff(freqs)
    step = float(np.median(steps))
    if np.all(np.abs(steps - step) <= 1e-6 * step):
        return step
    return None


def resample(freqs, psd, step):
    """Linear interpolation in linear power onto the grid ``k * step`` inside the data span."""
    k0 = math.ceil(freqs[0] / step - 1e-9)
    k1 = math.floor(freqs[-1] / step + 1e-9)
    if k1 - k0 + 1 < 2:
        raise FormatError(f"grid step {step:g} Hz leaves fewer than 2 points inside the trace span")
    grid = FrequencyGrid(k0 * step, step, k1 - k0 + 1)
    return grid, np.interp(grid.freqs, freqs, psd)


def import_trace(path, metadata=None):
    """Read a trace file into a :class:`MeasurementTrace`.

    ``metadata`` is a mapping or a sidecar path; by default the sidecar next
    to the file is used if present.  Frequencies are resampled onto a uniform
    grid when ``grid_step_hz`` is given or the file's spacing is not uniform.
    """
    path = Path(path)
    if metadata is None:
        side = sidecar_path(path)
        metadata = side if side.exists() else {}
    meta = parse_metadata(metadata)
    freqs, level = read_trace_table(path)
    d = np.diff(freqs)
    if np.all(d < 0):
        freqs, level = freqs[::-1], level[::-1]
    elif not np.all(d > 0):
        wrong = d <= 0 if d[0] > 0 else d >= 0
        line = int(np.flatnonzero(wrong)[0]) + 3
        raise FormatError(f"{path}: frequency column is not strictly monotone", line)
    psd = meta.reference_psd * 10 ** (level / 10)
    step = meta.grid_step_hz or _uniform_step(freqs)
    if meta.grid_step_hz is None and step is not None:
        grid = FrequencyGrid(float(freqs[0]), step, freqs.size)
    else:
        step = step or float(np.median(d if np.all(d > 0) else -d))
        grid, psd = resample(freqs, psd, step)
    rbw = meta.rbw_hz or grid.f_step
    notch = None
    if meta.notch is not None:
        notch = NotchSpec(meta.notch.kind, meta.notch.center_hz, meta.notch.width_hz)
    boi = None if meta.boi is None else BandOfInterest(meta.boi.f_lo_hz, meta.boi.f_hi_hz)
    return MeasurementTrace(
        PowerSpectrum(grid, psd, rbw), notch, meta.norm, InterfaceStage.parse(meta.stage),
        truth=None, boi=boi, reference_psd=meta.reference_psd, n_captures=meta.n_captures,
    )
