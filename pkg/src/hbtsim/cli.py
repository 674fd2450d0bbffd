"""Command-line front end.

Subcommands map one-to-one onto library stages:

* ``simulate``   synthesize + detect, writing a G2EV event file
* ``correlate``  estimate pair correlograms from a G2EV file
* ``histogram``  start-stop delay histogram from a G2EV file
* ``fit``        fit coherence time (from a correlogram CSV) or angular
                 width (from a spatial CSV)
* ``map``        full-array zero-lag map experiment
* ``compare``    windowed estimator vs start-stop baseline experiment
* ``run``        the experiment kind named in the config

Exit status: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace

import numpy as np

from .config import ConfigError, load_config, pair_separation
from .correlator import (VARIANTS, read_correlogram_csv,
                         write_correlogram_csv)
from .fieldsynth import IntensityTrace, sample_modes, save_intensity, synth_intensity
from .harness import (SEED_DETECT, SEED_MODES, HarnessError, _segment_duration_s,
                      load_experiment, parse_pairs, run_experiment,
                      segment_windows)
from .model import (ChaoticModelParams, FitConvergenceError,
                    FitDegenerateError, fit_angular_width, fit_coherence_time)
from .spad import (binarize, detect_events, events_from_times, load_events,
                   save_events)
from .startstop import (NORMALIZATION_MODES, normalize_histogram,
                        start_stop_histogram, write_startstop_csv)


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse variant whose usage failures exit 1, not 2."""

    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> _Parser:
    p = _Parser(prog="hbtsim",
                description="photon-correlation experiments on a simulated "
                            "single-photon detector array")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, help_text):
        sp = sub.add_parser(name, help=help_text, description=help_text)
        sp.add_argument("--config", required=True,
                        help="run description file (key = value lines)")
        sp.add_argument("--seed", type=int, default=None,
                        help="override run.seed from the config")
        return sp

    sp = add("simulate", "synthesize a photon stream and write a G2EV event file")
    sp.add_argument("--out", required=True, help="output event file (G2EV)")
    sp.add_argument("--trace", default=None,
                    help="also write the intensity envelope (G2IT), chaotic only")
    sp.add_argument("--pixels", default=None,
                    help="comma-separated pixel subset (default: all)")

    sp = add("correlate", "estimate pair correlograms from a G2EV event file")
    sp.add_argument("--events", required=True, help="input event file (G2EV)")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--variant", choices=list(VARIANTS), default=None,
                    help="estimator normalization (default: from config)")
    sp.add_argument("--pairs", default=None,
                    help='pairs like "0-1;0-15" (default: config, else all)')

    sp = add("histogram", "start-stop delay histogram from a G2EV event file")
    sp.add_argument("--events", required=True, help="input event file (G2EV)")
    sp.add_argument("--out", required=True, help="output CSV path")
    sp.add_argument("--start-pixel", type=int, default=0)
    sp.add_argument("--stop-pixel", type=int, default=1)
    sp.add_argument("--bin-ns", type=float, default=None,
                    help="bin width (default: grid.bin_t_ns)")
    sp.add_argument("--max-ns", type=float, default=None,
                    help="histogram span (default: window_n * bin_t_ns)")
    sp.add_argument("--mode", choices=list(NORMALIZATION_MODES),
                    default="anchor_zero_lag")

    sp = add("fit", "fit coherence time or angular width from result CSVs")
    sp.add_argument("--input", required=True,
                    help="correlogram CSV (tau_c) or spatial CSV (theta)")
    sp.add_argument("--what", choices=["tau_c", "theta"], required=True)
    sp.add_argument("--out", required=True, help="output JSON path")

    sp = add("map", "full-array zero-lag correlation map experiment")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--variant", choices=list(VARIANTS), default=None)
    sp.add_argument("--quick", action="store_true",
                    help="scale windows down 100x for a smoke run")

    sp = add("compare", "windowed estimator vs start-stop baseline")
    sp.add_argument("--out", required=True, help="output directory")
    sp.add_argument("--variant", choices=list(VARIANTS), default=None)
    sp.add_argument("--quick", action="store_true",
                    help="scale windows down 100x for a smoke run")

    sp = add("run", "run the experiment kind named in the config")
    sp.add_argument("--out", default=None,
                    help="output directory (default: experiment.output_dir)")
    sp.add_argument("--variant", choices=list(VARIANTS), default=None)
    sp.add_argument("--quick", action="store_true",
                    help="scale windows down 100x for a smoke run")

    return p


def _load_spec(args, kind=None, variant=None):
    spec = load_experiment(args.config)
    if args.seed is not None:
        spec = replace(spec, run=replace(spec.run, seed=args.seed))
    if kind is not None:
        spec = replace(spec, kind=kind)
    if variant is not None:
        spec = replace(spec, variant=variant)
    return spec


def _cmd_simulate(args) -> int:
    spec = _load_spec(args)
    cfg = spec.run
    pixels = list(range(cfg.geometry.n_pixels))
    if args.pixels:
        pixels = [int(s) for s in args.pixels.split(",") if s.strip()]
        for p in pixels:
            if not 0 <= p < cfg.geometry.n_pixels:
                raise ConfigError(f"pixel {p} out of range")
    grid = cfg.grid
    constant = cfg.source.kind != "chaotic"
    segs = segment_windows(grid, len(pixels), grid.window_m, constant=constant)
    times = [[] for _ in pixels]
    offset = 0
    trace_path_written = False
    for s, m_seg in enumerate(segs):
        dur_s = _segment_duration_s(grid, m_seg)
        if constant:
            n = int(round(dur_s * 1e12 / grid.sim_dt_ps))
            trace = IntensityTrace(
                sim_dt_ps=grid.sim_dt_ps, n_samples=n,
                pixel_rates_hz=np.full(len(pixels), cfg.source.mean_rate_hz),
                samples=None,
                independent_pixels=cfg.source.kind == "incoherent")
        else:
            modes = sample_modes(cfg.source, spec.k_modes,
                                 seed=(cfg.seed, SEED_MODES, s))
            trace = synth_intensity(modes, cfg.geometry, grid, dur_s,
                                    cfg.source.mean_rate_hz, pixels=pixels)
            if args.trace and not trace_path_written:
                save_intensity(args.trace, trace)  # first segment's envelope
                trace_path_written = True
        ev = detect_events(trace, cfg.detector, seed=(cfg.seed, SEED_DETECT, s))
        for k in range(len(pixels)):
            times[k].append(ev.times_ps[k] + offset)
        offset += ev.duration_ps
    stream = events_from_times(
        [np.concatenate(t) if t else np.empty(0, np.int64) for t in times],
        duration_ps=offset)
    save_events(args.out, stream)
    print(f"wrote {args.out}: {stream.n_pixels} pixels, "
          f"{int(stream.counts.sum())} events over {offset * 1e-12:.6g} s")
    if args.trace and not trace_path_written:
        print("note: --trace applies only to chaotic sources; skipped",
              file=sys.stderr)
    return 0


def _cmd_correlate(args) -> int:
    import os
    spec = _load_spec(args, variant=args.variant)
    cfg = spec.run
    stream = load_events(args.events)
    grid = cfg.grid
    span_ps = grid.window_span_bins * grid.bin_ps
    m = min(grid.window_m, stream.duration_ps // span_ps)
    if m < 1:
        raise ValueError("event stream shorter than one window span")
    binset = binarize(stream, grid, n_windows=int(m))
    pairs_text = args.pairs
    if pairs_text is None and spec.pairs:
        pairs = spec.pairs
    elif pairs_text:
        pairs = parse_pairs(pairs_text)
    else:
        pairs = tuple((i, j) for i in range(stream.n_pixels)
                      for j in range(i + 1, stream.n_pixels))
    os.makedirs(args.out, exist_ok=True)
    from .correlator import g2_all_pairs
    seps = {}
    for i, j in pairs:
        if i < cfg.geometry.n_pixels and j < cfg.geometry.n_pixels:
            seps[(i, j)] = pair_separation(cfg.geometry, i, j)
        else:
            seps[(i, j)] = float("nan")
    corrs = g2_all_pairs(binset, spec.variant, pairs=list(pairs),
                         separations=seps)
    for (i, j), corr in sorted(corrs.items()):
        path = os.path.join(args.out, f"correlogram_{i}_{j}.csv")
        write_correlogram_csv(path, corr)
    print(f"wrote {len(corrs)} correlograms to {args.out} "
          f"({int(m)} windows, variant {spec.variant})")
    return 0


def _cmd_histogram(args) -> int:
    spec = _load_spec(args)
    grid = spec.run.grid
    stream = load_events(args.events)
    for p in (args.start_pixel, args.stop_pixel):
        if not 0 <= p < stream.n_pixels:
            raise ValueError(f"pixel {p} not in event file")
    bin_ns = args.bin_ns if args.bin_ns is not None else grid.bin_t_ns
    max_ns = args.max_ns if args.max_ns is not None else grid.window_n * grid.bin_t_ns
    hist = start_stop_histogram(stream.times_ps[args.start_pixel],
                                stream.times_ps[args.stop_pixel],
                                bin_width_ns=bin_ns, max_lag_ns=max_ns)
    hist = normalize_histogram(hist, args.mode)
    write_startstop_csv(args.out, hist)
    print(f"wrote {args.out}: {hist.n_paired} paired starts in "
          f"{hist.counts.size} bins, mode {args.mode}")
    return 0


def _cmd_fit(args) -> int:
    spec = _load_spec(args)
    params = ChaoticModelParams.from_source(spec.run.source)
    if args.what == "tau_c":
        corr = read_correlogram_csv(args.input)
        ok = np.isfinite(corr.g2) & np.isfinite(corr.stderr) & (corr.stderr > 0)
        fit = fit_coherence_time(params, corr.lag_ns[ok], corr.g2[ok],
                                 corr.stderr[ok], x_um=corr.separation_um)
        doc = {"fit": "coherence_time_ns", "value": fit.value,
               "stderr": fit.stderr, "iterations": fit.iterations,
               "n_samples": fit.n_samples, "model_tau_c_ns": params.tau_c_ns}
    else:
        rows = _read_spatial_csv(args.input)
        x = np.array([r[0] for r in rows])
        y = np.array([r[1] for r in rows])
        s = np.array([r[2] for r in rows])
        fit = fit_angular_width(params, x, y, s)
        doc = {"fit": "angular_width_rad", "value": fit.value,
               "stderr": fit.stderr, "iterations": fit.iterations,
               "n_samples": fit.n_samples,
               "configured_angular_width_rad": spec.run.source.angular_width_rad}
    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")
    print(f"{doc['fit']} = {doc['value']:.6g} +/- {doc['stderr']:.2g} "
          f"({doc['n_samples']} samples)")
    return 0


def _read_spatial_csv(path):
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines or not lines[0].startswith("pair_i,pair_j,separation_um,g2_zero,stderr"):
        raise ValueError(f"{path}: not a spatial g2 CSV")
    rows = []
    for ln in lines[1:]:
        f = ln.split(",")
        sep, g2, s = float(f[2]), float(f[3]), float(f[4])
        if np.isfinite(g2) and np.isfinite(s) and s > 0:
            rows.append((sep, g2, s))
    if not rows:
        raise ValueError(f"{path}: no usable rows")
    return rows


def _cmd_experiment(args, kind=None) -> int:
    spec = _load_spec(args, kind=kind,
                      variant=getattr(args, "variant", None))
    bundle = run_experiment(spec, out_dir=args.out,
                            quick=getattr(args, "quick", False))
    print(f"{bundle.kind}: wrote {len(bundle.artifacts)} artifacts + manifest "
          f"to {bundle.output_dir}")
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        parser.print_usage(sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    handlers = {
        "simulate": _cmd_simulate,
        "correlate": _cmd_correlate,
        "histogram": _cmd_histogram,
        "fit": _cmd_fit,
        "map": lambda a: _cmd_experiment(a, kind="full_map"),
        "compare": lambda a: _cmd_experiment(a, kind="method_compare"),
        "run": lambda a: _cmd_experiment(a, kind=None),
    }
    try:
        return handlers[args.command](args)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, ConfigError, HarnessError,
            FitDegenerateError, FitConvergenceError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
