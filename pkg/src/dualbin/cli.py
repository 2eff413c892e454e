"""Command-line front end: ``dualbin {simulate,binarize,video,evaluate}``.

Every command writes ``manifest.txt`` into its output directory, listing the
flags it ran with, the parameter snapshot and its outputs. Frame lists in
manifests (``frames.N`` / ``sample_times.N``) are what ``evaluate`` pairs up.
"""
from __future__ import annotations

import argparse
import logging
import math
import re
import sys
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from dualbin import __version__
from dualbin import io as dio
from dualbin import metrics, propagation, simulator
from dualbin.binarizer import binarize_keyframe, resolve_tprime
from dualbin.core import BinaryFrame, CalibrationParams, ExposureWindow

log = logging.getLogger("dualbin")

MANIFEST = "manifest.txt"

# Scene presets; individual fields can be overridden by flags.
SCENES = {
    "bar": dict(pattern="bar", size=20, velocity=(1000.0, 0.0), offset=(100, 0)),
    "checkerboard": dict(pattern="checkerboard", size=20, velocity=(1000.0, 0.0), offset=(0, 0)),
    "glyph": dict(pattern="glyph", size=8, velocity=(1000.0, 0.0), offset=(40, 100)),
}


class UsageError(Exception):
    """Invalid flag combination detected before any work starts."""


def _positive(kind):
    def conv(text):
        v = kind(text)
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
        return v

    return conv


def _non_negative(kind):
    def conv(text):
        v = kind(text)
        if v < 0:
            raise argparse.ArgumentTypeError(f"must be >= 0, got {text}")
        return v

    return conv


def _dropout(text):
    v = float(text)
    if not 0.0 <= v < 1.0:
        raise argparse.ArgumentTypeError(f"dropout must satisfy 0 <= d < 1, got {text}")
    return v


def _unit_lambda(text):
    v = float(text)
    if not 0.0 < v <= 1.0:
        raise argparse.ArgumentTypeError(f"lambda must lie in (0, 1], got {text}")
    return v


def _tprime(text):
    if text in ("mid", "end"):
        return text
    try:
        return int(text)
    except ValueError:
        raise argparse.ArgumentTypeError("expected 'mid', 'end' or an integer time in microseconds") from None


def _int_list(text):
    try:
        return [int(v) for v in re.split(r"[,\s]+", text.strip()) if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# ---------------------------------------------------------------- helpers


def _write_manifest(out_dir: Path, manifest: dio.RunManifest, args: argparse.Namespace) -> None:
    flags = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "out_dir") and v is not None}
    for k, v in flags.items():
        if isinstance(v, Path):
            flags[k] = str(v)
    manifest.extra.setdefault("args", flags)
    manifest.write(out_dir / MANIFEST)


def _check_outputs(out_dir: Path, manifest: dio.RunManifest) -> None:
    missing = [p for p in list(manifest.outputs.values()) + manifest.frames if not (out_dir / p).exists()]
    if missing:
        raise RuntimeError(f"outputs missing after run: {missing[:3]}")


def _read_sim_manifest(path: Path) -> dio.RunManifest:
    if path.is_dir():
        path = path / MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"no manifest at {path}")
    return dio.RunManifest.read(path)


def _keyframe_inputs(args) -> Tuple[Path, Path, ExposureWindow]:
    """Resolve frame, events and exposure from explicit flags or a simulate directory."""
    frame = events = None
    start = args.exposure_start
    duration = args.exposure_us
    if args.input_dir is not None:
        m = _read_sim_manifest(args.input_dir)
        base = args.input_dir
        frame = base / m.outputs["frame"]
        events = base / m.outputs["events"]
        start = start if start is not None else int(m.extra["exposure.start"])
        duration = duration if duration is not None else int(m.extra["exposure.duration"])
    frame = args.frame or frame
    events = args.events or events
    if frame is None or events is None:
        raise UsageError("need --frame and --events (or --input-dir from 'simulate')")
    if duration is None:
        raise UsageError("need --exposure-us (or --input-dir from 'simulate')")
    return Path(frame), Path(events), ExposureWindow(int(start or 0), int(duration))


def _run_keyframe(args):
    frame_path, events_path, window = _keyframe_inputs(args)
    stream = dio.read_events(events_path)
    frame = dio.read_frame(frame_path, exposure=window, geometry=stream.geometry)
    params = dio.read_params(args.params) if args.params else CalibrationParams()
    tprime = resolve_tprime(window, args.tprime)
    result = binarize_keyframe(
        frame,
        stream,
        params,
        tprime,
        dilation=args.dilation,
        fixed_c=args.fixed_c,
        fixed_lambda=args.fixed_lambda,
        gradient_blind=args.gradient_blind,
    )
    inputs = {"frame": str(frame_path), "events": str(events_path)}
    if args.params:
        inputs["params"] = str(args.params)
    return result, stream, inputs


# ---------------------------------------------------------------- commands


def cmd_simulate(args) -> int:
    if args.scene not in SCENES:
        raise UsageError(f"unknown scene {args.scene!r}")
    span_us = args.span_us or args.exposure_us
    if span_us < args.exposure_us:
        raise UsageError("--span-us must cover the exposure")
    preset = dict(SCENES[args.scene])
    if args.velocity is not None:
        preset["velocity"] = tuple(args.velocity)
    if args.size is not None:
        preset["size"] = args.size
    if args.text is not None:
        preset["text"] = args.text
    scene = simulator.LatentScene(width=args.width, height=args.height, **preset)
    spec = simulator.DegradationSpec.preset(
        args.degrade, noise_rate=args.noise_rate, dropout=args.dropout, seed=args.seed
    )
    window = ExposureWindow(0, args.exposure_us)
    if args.mask_times:
        times = sorted(args.mask_times)
    elif args.mask_fps:
        times = propagation.fps_times(window.midpoint, span_us, args.mask_fps)
    else:
        times = [window.midpoint]
    if times[0] < 0 or times[-1] > span_us:
        raise UsageError("mask times must lie inside the simulated span")

    sample = simulator.simulate(scene, window, args.c_true, spec, span=(0, span_us))
    out = args.out_dir
    (out / "masks").mkdir(parents=True, exist_ok=True)
    dio.write_frame(sample.frame, out / "frame.pgm")
    dio.write_events(sample.events, out / "events.txt")
    frames = []
    for t in times:
        name = f"masks/mask_{t:010d}.pbm"
        dio.write_mask(sample.mask(t), out / name)
        frames.append(name)

    manifest = dio.RunManifest(
        command="simulate",
        version=__version__,
        outputs={"frame": "frame.pgm", "events": "events.txt"},
        seed=args.seed,
        sample_times=times,
        frames=frames,
        extra={
            "exposure.start": window.start,
            "exposure.duration": window.duration,
            "events.count": len(sample.events),
            "scene": {k: getattr(scene, k) for k in ("width", "height", "pattern", "size", "l_fg", "l_bg")},
        },
    )
    _write_manifest(out, manifest, args)
    _check_outputs(out, manifest)
    print(f"simulate: {len(sample.events)} events, {len(frames)} masks -> {out}")
    return 0


def cmd_binarize(args) -> int:
    result, _, inputs = _run_keyframe(args)
    out = args.out_dir
    out.mkdir(parents=True, exist_ok=True)
    dio.write_mask(result.binary, out / "binary.pbm")
    dio.write_mask(result.domain, out / "domain.pbm")
    dio.write_params(result.params, out / "params.txt")
    manifest = dio.RunManifest(
        command="binarize",
        version=__version__,
        inputs=inputs,
        outputs={"binary": "binary.pbm", "domain": "domain.pbm", "params": "params.txt"},
        params=result.params,
        sample_times=[result.binary.timestamp],
        frames=["binary.pbm"],
        extra={"theta_star": result.theta_star, "dynamic_pixels": result.domain.n_dynamic},
    )
    _write_manifest(out, manifest, args)
    _check_outputs(out, manifest)
    p = result.params
    print(f"binarize: t'={result.binary.timestamp} c={p.c:.4g} theta_i={p.theta_i:.4g} "
          f"theta_e={p.theta_e:.4g} lambda={p.lam:.4g} -> {out}")
    return 0


def cmd_video(args) -> int:
    if (args.fps is None) == (args.sample_times is None):
        raise UsageError("give exactly one of --fps or --sample-times")
    inputs: Dict[str, str] = {}
    if args.seed_frame is not None:
        if args.params is None or args.seed_time is None or args.events is None:
            raise UsageError("--seed-frame needs --seed-time, --params and --events")
        stream = dio.read_events(args.events)
        seed = dio.read_mask(args.seed_frame, timestamp=args.seed_time, geometry=stream.geometry)
        params = dio.read_params(args.params)
        inputs = {"seed_frame": str(args.seed_frame), "events": str(args.events), "params": str(args.params)}
    else:
        result, stream, inputs = _run_keyframe(args)
        seed, params = result.binary, result.params

    end = args.end_us if args.end_us is not None else (int(stream.t[-1]) if len(stream) else seed.timestamp)
    if args.fps is not None:
        times = propagation.fps_times(seed.timestamp, end, args.fps)
    else:
        times = _int_list(Path(args.sample_times).read_text(encoding="utf-8"))
    if not times:
        raise UsageError("no sample times")

    state = propagation.PropagationState.from_params(seed, params)
    frames = propagation.generate_video(seed, stream, params, times, state=state)

    out = args.out_dir
    (out / "frames").mkdir(parents=True, exist_ok=True)
    names = []
    for k, f in enumerate(frames):
        name = f"frames/frame_{k:06d}.pbm"
        dio.write_mask(f, out / name)
        names.append(name)
    dio.write_params(params, out / "params.txt")
    counters = state.counters.as_dict()
    manifest = dio.RunManifest(
        command="video",
        version=__version__,
        inputs=inputs,
        outputs={"params": "params.txt"},
        params=params,
        sample_times=times,
        frames=names,
        extra={"seed_time": seed.timestamp, "counters": counters},
    )
    _write_manifest(out, manifest, args)
    _check_outputs(out, manifest)
    print(f"video: {len(frames)} frames, {counters['events']} events, {counters['flips']} flips -> {out}")
    return 0


def _frame_list(path: Path) -> List[Tuple[int, Path]]:
    """(timestamp, file) pairs from a manifest directory, or from file names in a plain one."""
    if (path / MANIFEST).exists():
        m = dio.RunManifest.read(path / MANIFEST)
        if len(m.frames) != len(m.sample_times):
            raise ValueError(f"{path / MANIFEST}: frames and sample_times differ in length")
        return [(t, path / f) for t, f in zip(m.sample_times, m.frames)]
    pairs = []
    for f in sorted(path.glob("*.pbm")):
        digits = re.findall(r"\d+", f.stem)
        if not digits:
            raise ValueError(f"cannot infer a timestamp from {f.name}")
        pairs.append((int(digits[-1]), f))
    return pairs


def _mean(values: Sequence[float]) -> float:
    return float(np.mean(values)) if len(values) else math.nan


def cmd_evaluate(args) -> int:
    pred = _frame_list(args.pred)
    gt = dict(_frame_list(args.gt))
    rows = []
    for t, p in pred:
        if t not in gt:
            if args.strict:
                raise ValueError(f"no ground truth for t={t}")
            log.warning("no ground truth for t=%d, skipped", t)
            continue
        g = dio.read_mask(gt[t], timestamp=t)
        cc = metrics.confusion(dio.read_mask(p, timestamp=t), g)
        rows.append((t, metrics.mcc(cc), metrics.psnr(cc), metrics.nrm(cc)))
    if not rows:
        raise ValueError("no frame pairs to evaluate")

    lines = [
        "# MCC is 0 for an empty marginal; NRM terms with empty denominators are 0;",
        "# PSNR is inf for a perfect frame and mean_psnr averages finite frames only",
        "timestamp,mcc,psnr,nrm",
    ]
    lines += [f"{t},{m!r},{p!r},{n!r}" for t, m, p, n in rows]
    finite = [r[2] for r in rows if math.isfinite(r[2])]
    mean_psnr = _mean(finite) if finite else math.inf
    lines.append(
        f"mean,{_mean([r[1] for r in rows])!r},{mean_psnr!r},{_mean([r[3] for r in rows])!r}"
    )
    text = "\n".join(lines) + "\n"
    if args.report:
        Path(args.report).write_text(text, encoding="utf-8")
    sys.stdout.write(text)
    return 0


# ---------------------------------------------------------------- parser


def _add_keyframe_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("keyframe inputs")
    g.add_argument("--input-dir", type=Path, help="directory written by 'simulate' (frame, events, exposure)")
    g.add_argument("--frame", type=Path, help="blurred intensity frame (PGM)")
    g.add_argument("--events", type=Path, help="event text file")
    g.add_argument("--params", type=Path, help="calibration parameter file (key = value)")
    g.add_argument("--exposure-start", type=_non_negative(int), help="exposure start in us")
    g.add_argument("--exposure-us", type=_positive(int), help="exposure duration in us")
    g = p.add_argument_group("keyframe options")
    g.add_argument("--tprime", type=_tprime, default="mid", help="reference time: mid, end or microseconds")
    g.add_argument("--dilation", type=_non_negative(int), default=1, help="dynamic-domain dilation radius")
    g.add_argument("--fixed-c", type=_positive(float), help="use this contrast instead of estimating it")
    g.add_argument("--fixed-lambda", type=_unit_lambda, help="use this exposure weight instead of estimating it")
    g.add_argument("--gradient-blind", action="store_true", help="plain Otsu weighting, no gradient ridge")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dualbin", description="Frame + event binarization toolkit.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a synthetic scene: frame, events, ground-truth masks")
    p.add_argument("--scene", choices=sorted(SCENES), default="bar")
    p.add_argument("--c-true", type=_positive(float), default=0.2)
    p.add_argument("--exposure-us", type=_positive(int), default=20000)
    p.add_argument("--span-us", type=_positive(int), help="event span from t=0 (default: the exposure)")
    p.add_argument("--degrade", choices=simulator.MODES, default="none")
    p.add_argument("--noise-rate", type=_non_negative(float), default=0.0, help="noise events per pixel per second")
    p.add_argument("--dropout", type=_dropout, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--width", type=_positive(int), default=346)
    p.add_argument("--height", type=_positive(int), default=260)
    p.add_argument("--velocity", type=float, nargs=2, metavar=("VX", "VY"), help="pixels per second")
    p.add_argument("--size", type=_positive(int))
    p.add_argument("--text", help="glyph text")
    p.add_argument("--mask-times", type=_int_list, help="comma-separated mask times in us")
    p.add_argument("--mask-fps", type=_positive(float), help="masks from the exposure midpoint to the span end")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("binarize", help="binarize one keyframe")
    _add_keyframe_flags(p)
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_binarize)

    p = sub.add_parser("video", help="propagate a keyframe through events into binary video")
    _add_keyframe_flags(p)
    p.add_argument("--seed-frame", type=Path, help="start from this binary frame instead of binarizing")
    p.add_argument("--seed-time", type=_non_negative(int))
    p.add_argument("--fps", type=_positive(float))
    p.add_argument("--sample-times", type=Path, help="file of ascending sample times in us")
    p.add_argument("--end-us", type=_non_negative(int), help="last sample time for --fps (default: last event)")
    p.add_argument("--out-dir", type=Path, required=True)
    p.set_defaults(func=cmd_video)

    p = sub.add_parser("evaluate", help="MCC / PSNR / NRM of predicted frames against ground truth")
    p.add_argument("--pred", type=Path, required=True, help="directory with predicted frames")
    p.add_argument("--gt", type=Path, required=True, help="directory with ground-truth masks")
    p.add_argument("--report", type=Path, help="also write the CSV report here")
    p.add_argument("--strict", action="store_true", help="fail if a prediction has no ground truth")
    p.set_defaults(func=cmd_evaluate)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.error(str(exc))  # exits with status 2
    except (ValueError, OSError, KeyError, RuntimeError) as exc:
        print(f"dualbin {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
