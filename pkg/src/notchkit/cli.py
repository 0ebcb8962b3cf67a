"""Command-line front end: ``notchkit {stitch,skew,xtalk,psd,import}``.

Each command writes ``report.json`` plus one CSV per array into the output
directory (``--out``, else ``$NOTCHKIT_OUT``, else ``./notchkit-out``).
Exit status: 0 ok, 1 usage, 2 parse, 3 validation, 4 numeric/diagnostic,
5 I/O.
"""
from __future__ import annotations

import argparse
import os
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .chain import expected_floor, reference_psd
from .estimation import SkewScenario, crosstalk_leakage, estimate_skew, sn_dn_discrepancy
from .exceptions import DiagnosticError, NotchkitError
from .io import csv_text, dump_json, export_trace, import_trace, write_atomic
from .perturbation import build_filter, apply_perturbation
from .scenario import load_scenario
from .signal import estimate_psd, peak_to_rms, psd_grid
from .stitching import run_plan, small_notch_check, stitch

ENV_OUT = "NOTCHKIT_OUT"
EXIT_USAGE, EXIT_IO = 1, 5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _db(x, ref=1.0):
    with np.errstate(divide="ignore", invalid="ignore"):
        return 10 * np.log10(np.asarray(x, float) / ref)


def _err_stats(est_db, true_db):
    e = np.asarray(est_db) - np.asarray(true_db)
    e = e[np.isfinite(e)]
    if e.size == 0:
        return {"rms_error_db": float("nan"), "max_abs_error_db": float("nan"), "mean_error_db": float("nan")}
    return {
        "rms_error_db": float(np.sqrt(np.mean(e**2))),
        "max_abs_error_db": float(np.max(np.abs(e))),
        "mean_error_db": float(np.mean(e)),
    }


class Report:
    """Report under construction: scalar/array outputs, optional truth block."""

    def __init__(self, command, scenario=None):
        self.command = command
        self.scenario = scenario
        self.outputs = {}
        self.truth = None
        self.arrays = {}
        self.timing = {}

    def array(self, name, axis_name, axis, **columns):
        cols = {axis_name: np.asarray(axis, float)}
        cols.update({k: np.asarray(v, float) for k, v in columns.items()})
        self.arrays[name] = cols
        self.outputs[name] = cols

    def payload(self):
        out = {"command": self.command}
        if self.scenario is not None:
            out["scenario"] = self.scenario.echo()
        out["outputs"] = self.outputs
        if self.truth is not None:
            out["truth"] = self.truth
        return out

    def document(self):
        doc = self.payload()
        doc["toolkit"] = {"name": "notchkit", "version": __version__}
        doc["timing_s"] = self.timing
        return doc

    def write(self, out_dir):
        out_dir = Path(out_dir)
        for name, cols in self.arrays.items():
            write_atomic(out_dir / f"{name}.csv", csv_text(cols))
        path = out_dir / "report.json"
        write_atomic(path, dump_json(self.document()))
        return path


# -- commands -----------------------------------------------------------------

def cmd_stitch(sc, export_dir=None):
    rep = Report("stitch", sc)
    t0 = time.perf_counter()
    wfm = sc.waveform_obj()
    cfg = sc.impairment_config()
    plan = sc.stitch_plan()
    traces = run_plan(plan, wfm, cfg, sc.stage, sc.rbw_hz, sc.averaging, sc.normalize, sc.pol)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        prof = stitch(traces, plan.boi)
    rep.timing["run"] = time.perf_counter() - t0
    ref = traces[0].reference_psd
    f = prof.grid.freqs
    nfl_db, sig_db = _db(prof.nfl.psd, ref), _db(prof.signal.psd, ref)
    rep.outputs["n_traces"] = len(traces)
    rep.outputs["reference_psd"] = ref
    rep.outputs["norms"] = [t.norm for t in traces]
    snc = small_notch_check(traces)
    rep.outputs["small_notch"] = {
        "max_norm_deviation": snc.max_norm_deviation,
        "worst_error_db": snc.worst_error_db,
        "safe": snc.safe,
    }
    rep.outputs["clamped_bins"] = int(np.sum(prof.signal.flags)) if prof.signal.flags is not None else 0
    rep.array("nfl", "freq_hz", f, nfl_db=nfl_db)
    rep.array("signal_psd", "freq_hz", f, psd_db=sig_db)
    rep.array("sndr", "freq_hz", f, sndr_db=prof.sndr_db)

    true_nfl = expected_floor(cfg, sc.stage, ref, prof.grid, wfm.n_samples, wfm.sample_rate)
    full = estimate_psd(wfm, sc.rbw_hz, sc.pol)
    true_sig = full.psd[plan.boi.grid_mask(full.grid)]
    if sc.stage.lower() == "e2e":
        true_sig = None
    truth = {"impairments": cfg.snapshot()}
    if np.all(true_nfl > 0):
        truth["nfl"] = _err_stats(nfl_db, _db(true_nfl, ref))
        if true_sig is not None:
            truth["sndr"] = _err_stats(prof.sndr_db, _db(true_sig / true_nfl))
    if true_sig is not None:
        truth["signal_psd"] = _err_stats(sig_db, _db(true_sig, ref))
    rep.truth = truth
    if export_dir is not None:
        for i, tr in enumerate(traces):
            export_trace(tr, Path(export_dir) / f"trace_{i:03d}.csv")
    return rep


def cmd_skew(sc, repeats=None):
    rep = Report("skew", sc)
    s = sc.skew
    if s is None:
        from .scenario import SkewConfig

        s = SkewConfig()
    t0 = time.perf_counter()
    wfm = sc.waveform_obj()
    cfg = sc.impairment_config()
    scen = SkewScenario(wfm, sc.skew_notch(), cfg, sc.stage, sc.rbw_hz, sc.band_of_interest(),
                        normalize=sc.normalize, pol=sc.pol)
    est = estimate_skew(scen, s.sweep_lo_ps, s.sweep_hi_ps, s.step_ps, repeats or s.repeats, s.traces_avg)
    rep.timing["run"] = time.perf_counter() - t0
    rep.outputs["tau_hat_ps"] = est.tau_hat
    rep.outputs["std_ps"] = est.std
    rep.outputs["repeats_ps"] = est.repeats
    rep.outputs["curvature_db_per_ps2"] = est.curvature_db
    taus = [t for t, _ in est.cost_curve]
    rep.array("cost_curve", "tau_ps", taus, cost_db=[c for _, c in est.cost_curve])
    rep.truth = {
        "skew_ps": cfg.skew_ps,
        "error_ps": est.tau_hat - cfg.skew_ps,
        "abs_error_ps": abs(est.tau_hat - cfg.skew_ps),
    }
    return rep


def cmd_xtalk(sc):
    rep = Report("xtalk", sc)
    t0 = time.perf_counter()
    wfm = sc.waveform_obj()
    cfg = sc.impairment_config()
    plan_sn, plan_dn = sc.stitch_plan("single"), sc.stitch_plan("dual")
    disc = sn_dn_discrepancy(wfm, plan_sn, plan_dn, cfg, sc.stage, sc.rbw_hz, sc.averaging, sc.normalize)
    rep.timing["run"] = time.perf_counter() - t0
    d = disc.finite()
    rep.outputs["max_abs_discrepancy_db"] = float(np.max(np.abs(d))) if d.size else float("nan")
    rep.outputs["mean_discrepancy_db"] = float(np.mean(d)) if d.size else float("nan")
    f = disc.grid.freqs
    rep.array("discrepancy", "freq_hz", f, sndr_dn_minus_sn_db=disc.diff_db)
    rep.array("sndr_sn", "freq_hz", f, sndr_db=disc.sn.sndr_db)
    rep.array("sndr_dn", "freq_hz", f, sndr_db=disc.dn.sndr_db)
    ref = reference_psd(wfm, plan_dn.boi, 0)
    true_floor = expected_floor(cfg, sc.stage, ref, disc.grid, wfm.n_samples, wfm.sample_rate)
    truth = {"impairments": cfg.snapshot()}
    if np.all(true_floor > 0):
        truth["dn_nfl"] = _err_stats(_db(disc.dn.nfl.psd), _db(true_floor))
        if cfg.crosstalk is not None and sc.stage.lower() != "e2e":
            # first-order prediction of the single-notch floor, evaluated on the
            # normalized single-notch instructions owning each bin
            pred = np.zeros(disc.grid.n_bins)
            grid = psd_grid(wfm.sample_rate, sc.rbw_hz, wfm.n_samples)
            for notch in plan_sn.notches:
                filt = build_filter(notch, grid)
                pert, _ = apply_perturbation(wfm, filt, sc.normalize, plan_sn.boi)
                leak = crosstalk_leakage(pert, cfg.crosstalk, sc.rbw_hz)
                sel = disc.grid.band_mask(filt.regions[0].f_lo, filt.regions[0].f_hi)
                idx = np.rint((disc.grid.freqs[sel] - leak.grid.f_start) / leak.grid.f_step).astype(int)
                pred[sel] = leak.psd[idx]
            truth["sn_nfl"] = _err_stats(_db(disc.sn.nfl.psd), _db(pred + true_floor))
    rep.truth = truth
    return rep


def cmd_psd(sc):
    rep = Report("psd", sc)
    t0 = time.perf_counter()
    wfm = sc.waveform_obj()
    spec = estimate_psd(wfm, sc.rbw_hz, sc.pol)
    rep.timing["run"] = time.perf_counter() - t0
    sel = wfm.pols if sc.pol == "sum" else [wfm.pols[0 if sc.pol == "x" else 1]]
    power = float(sum(np.mean(np.abs(p) ** 2) for p in sel))
    rep.outputs["mean_power"] = power
    rep.outputs["parseval_rel_error"] = abs(spec.integral() - power) / power
    rep.outputs["peak_to_rms"] = peak_to_rms(wfm)
    boi = sc.band_of_interest()
    ref = reference_psd(wfm, boi, 0)
    rep.outputs["reference_psd"] = ref
    if sc.plan is not None:
        plan = sc.stitch_plan()
        grid = spec.grid
        ratios = []
        for notch in plan.notches:
            pert, _ = apply_perturbation(wfm, build_filter(notch, grid), sc.normalize, boi)
            ratios.append(peak_to_rms(pert) / rep.outputs["peak_to_rms"] - 1)
        rep.outputs["max_peak_to_rms_change"] = float(np.max(np.abs(ratios)))
    rep.array("psd", "freq_hz", spec.freqs, psd_db=_db(spec.psd, ref))
    return rep


def cmd_import(paths, metadata=None):
    rep = Report("import")
    t0 = time.perf_counter()
    traces = [import_trace(p, metadata) for p in paths]
    rep.timing["run"] = time.perf_counter() - t0
    for i, tr in enumerate(traces):
        rep.array(f"trace_{i:03d}", "freq_hz", tr.spectrum.freqs, psd_db=_db(tr.spectrum.psd, tr.reference_psd))
    rep.outputs["n_traces"] = len(traces)
    if len(traces) >= 2 and all(t.notch is not None for t in traces) and traces[0].boi is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            prof = stitch(traces)
        ref = traces[0].reference_psd
        f = prof.grid.freqs
        rep.array("nfl", "freq_hz", f, nfl_db=_db(prof.nfl.psd, ref))
        rep.array("signal_psd", "freq_hz", f, psd_db=_db(prof.signal.psd, ref))
        rep.array("sndr", "freq_hz", f, sndr_db=prof.sndr_db)
    return rep


# -- entry point -----------------------------------------------------------------

def build_parser():
    p = _Parser(prog="notchkit", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"notchkit {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for name in ("stitch", "skew", "xtalk", "psd"):
        s = sub.add_parser(name, help=f"run a {name} scenario")
        s.add_argument("--scenario", required=True, help="YAML file or shipped scenario name")
        s.add_argument("--out", help=f"output directory (default ${ENV_OUT} or ./notchkit-out)")
        s.add_argument("--seed", type=int, help="override the scenario noise seed")
        s.add_argument("--repeats", type=int, help="override skew repeats")
        if name == "stitch":
            s.add_argument("--export-traces", action="store_true", help="also write every trace file")
    s = sub.add_parser("import", help="import trace files (stitches them when the sidecars allow)")
    s.add_argument("traces", nargs="+")
    s.add_argument("--metadata", help="sidecar applied to every trace (default: per-file sidecar)")
    s.add_argument("--out")
    return p


def _out_dir(args, sc=None):
    if args.out:
        return Path(args.out)
    if sc is not None and sc.output.dir:
        return Path(sc.output.dir)
    return Path(os.environ.get(ENV_OUT, "notchkit-out"))


def run(argv=None):
    args = build_parser().parse_args(argv)
    if args.command == "import":
        rep = cmd_import(args.traces, args.metadata)
        return rep.write(_out_dir(args))
    sc = load_scenario(args.scenario)
    if args.seed is not None:
        if args.seed < 0:
            raise UsageError("--seed must be non-negative")
        sc = sc.model_copy(update={"seed": args.seed})
    if args.repeats is not None and args.repeats < 1:
        raise UsageError("--repeats must be >= 1")
    if sc.kind != args.command:
        raise UsageError(f"scenario kind is {sc.kind!r}, command is {args.command!r}")
    out = _out_dir(args, sc)
    if args.command == "stitch":
        export = sc.output.export_traces or args.export_traces
        rep = cmd_stitch(sc, out / "traces" if export else None)
    elif args.command == "skew":
        rep = cmd_skew(sc, args.repeats)
    elif args.command == "xtalk":
        rep = cmd_xtalk(sc)
    else:
        rep = cmd_psd(sc)
    return rep.write(out)


def main(argv=None):
    try:
        path = run(argv)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except DiagnosticError as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.curve:
            for t, c in exc.curve:
                print(f"  {t:+.3f} ps  {c:.3f} dB", file=sys.stderr)
        return exc.exit_code
    except NotchkitError as exc:
        kind = {2: "parse", 3: "validation"}.get(exc.exit_code, "numeric")
        print(f"{kind} error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    print(path)
    return 0


if __name__ == "__main__":
    sys.exit(main())
