"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 I/O error, 3 configuration error, 4 a verify
check failed.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import container, verify
from .config import ConfigError, EngineConfig
from .model import build_model
from .quant.calibrate import CalibrationError, calibrate
from .quant.plan import MissingSpecError, PrecisionPlan
from .signalgen import white_noise
from .stream import StreamEngine, StreamIOError, run_stream
from .wavio import WavClip, WavFormatError, wav_read, wav_write
from .weights import random_init

log = logging.getLogger("streamse")

EXIT_USAGE, EXIT_IO, EXIT_CONFIG, EXIT_CHECK = 1, 2, 3, 4
MODES = ("f32", "bf16", "int8", "mixed")
READ_BLOCK = 1600


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    raise TypeError(type(o))


def _print_json(obj):
    print(json.dumps(obj, default=_json_default))


def _load_config(path) -> EngineConfig:
    try:
        text = Path(path).read_text()
    except OSError as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    return EngineConfig.from_json(text)


def _engine_for(c: container.Container, mode: str | None, calib_audio=None) -> StreamEngine:
    """Build a streaming engine from a loaded container, calibrating if int8 specs are missing."""
    cfg = c.cfg if mode is None else dataclasses.replace(c.cfg, mode=mode)
    plan = PrecisionPlan.for_mode(cfg.model, cfg.mode, cfg.plan_overrides)
    weights = c.weights
    act = dict(c.act_specs)
    missing = [s for s in plan.activation_sites(cfg.model) if s not in act]
    if missing:
        if calib_audio is None:
            raise MissingSpecError(f"{len(missing)} int8 activation sites lack specs")
        warnings.warn(f"{len(missing)} int8 activation sites lack calibration; calibrating on the input")
        act.update(calibrate(weights, plan, [calib_audio], cfg).act_specs)
    model = build_model(weights, cfg, act, c.weight_specs)
    return StreamEngine(cfg=cfg, model=model)


def _blocks(x, size=READ_BLOCK):
    for i in range(0, x.size, size):
        yield x[i:i + size]


def cmd_init(args) -> int:
    cfg = _load_config(args.config) if args.config else EngineConfig(seed=args.seed)
    w = random_init(cfg.model, args.seed)
    n = container.save(args.out, w, cfg)
    _print_json({"out": str(args.out), "bytes": n})
    return 0


def cmd_enhance(args) -> int:
    c = container.load(args.weights)
    clip = wav_read(args.inp)
    x = clip.samples.astype(np.float64)
    engine = _engine_for(c, args.mode, calib_audio=x)
    out = []
    summary = run_stream(_blocks(x), out.append, engine)
    y = np.concatenate(out) if out else np.zeros(0)
    wav_write(args.out, WavClip(y.astype(np.float32)))
    _print_json(summary)
    return 0


def cmd_calibrate(args) -> int:
    c = container.load(args.weights)
    cfg = c.cfg if args.mode is None else dataclasses.replace(c.cfg, mode=args.mode)
    d = Path(args.audio_dir)
    if not d.is_dir():
        raise OSError(f"{d} is not a directory")
    files = sorted(d.glob("*.wav"))
    if not files:
        raise CalibrationError(f"no .wav files in {d}")
    clips = [wav_read(f).samples for f in files]
    plan = PrecisionPlan.for_mode(cfg.model, cfg.mode, cfg.plan_overrides)
    cal = calibrate(c.weights, plan, clips, cfg)
    n = container.save(args.out, c.weights, cfg, plan, cal.act_specs, cal.weight_specs)
    report = Path(args.report) if args.report else Path(str(args.out) + ".calibration.json")
    report.write_text(json.dumps(cal.report(), indent=1, default=_json_default))
    _print_json({"out": str(args.out), "bytes": n, "report": str(report), "clips": len(files)})
    return 0


def cmd_bench(args) -> int:
    if args.weights:
        c = container.load(args.weights)
    else:
        cfg = EngineConfig(seed=args.seed)
        w = random_init(cfg.model, args.seed)
        c = container.Container(w, dict.fromkeys(w, "f32"), {}, {}, cfg)
    n = int(args.seconds * c.cfg.framing.sample_rate)
    x = white_noise(n, 0.1, args.seed)
    calib = white_noise(c.cfg.framing.sample_rate, 0.1, args.seed + 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        engine = _engine_for(c, args.mode, calib_audio=calib)
    summary = run_stream(_blocks(x), lambda b: None, engine)
    summary["mode"] = engine.cfg.mode
    _print_json(summary)
    if args.max_rtf is not None and summary["rtf"] >= args.max_rtf:
        log.error("realtime factor %.3f not below %.3f", summary["rtf"], args.max_rtf)
        return EXIT_CHECK
    return 0


def cmd_verify(args) -> int:
    results = verify.run_all(range(args.seeds), args.seconds)
    for r in results:
        print(r.line())
    return 0 if all(r.passed for r in results) else EXIT_CHECK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="streamse", description="Streaming mixed-precision speech enhancement engine")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("init", help="write a randomly initialised weight container")
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--config", help="engine config JSON")
    s.set_defaults(func=cmd_init)

    s = sub.add_parser("enhance", help="stream a WAV file through the engine")
    s.add_argument("--in", dest="inp", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--weights", required=True)
    s.add_argument("--mode", choices=MODES)
    s.set_defaults(func=cmd_enhance)

    s = sub.add_parser("calibrate", help="calibrate activation ranges on a directory of WAVs")
    s.add_argument("--weights", required=True)
    s.add_argument("--audio-dir", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--report")
    s.add_argument("--mode", choices=MODES, default="mixed")
    s.set_defaults(func=cmd_calibrate)

    s = sub.add_parser("bench", help="time streaming inference on synthetic noise")
    s.add_argument("--weights")
    s.add_argument("--seconds", type=float, default=10.0)
    s.add_argument("--mode", choices=MODES)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--max-rtf", type=float, help="fail (exit 4) unless rtf is below this")
    s.set_defaults(func=cmd_bench)

    s = sub.add_parser("verify", help="run the invariant suite")
    s.add_argument("--seeds", type=int, default=10)
    s.add_argument("--seconds", type=float, default=2.0)
    s.set_defaults(func=cmd_verify)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(message)s")
    logging.captureWarnings(True)
    try:
        return args.func(args)
    except (ConfigError, MissingSpecError) as e:
        log.error("config: %s", e)
        return EXIT_CONFIG
    except (OSError, WavFormatError, container.ContainerError, StreamIOError, CalibrationError) as e:
        log.error("io: %s", e)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
