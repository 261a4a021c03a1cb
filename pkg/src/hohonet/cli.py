"""``hohonet`` command line.

Exit codes: 0 success, 1 usage error, 2 runtime failure.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys

import numpy as np

from . import io
from .analysis import analyze_dataset, bench
from .basis import make_basis
from .dataset import decode_layout, write_dataset
from .erp import RGB_DESCRIPTION, classify_surfaces, synth_rgb
from .model import ModelConfig
from .train import RunConfig, evaluate_checkpoint, load_run, predict, run_training

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _positive(name):
    def conv(s):
        v = int(s)
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1")
        return v

    return conv


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, sort_keys=True))


def cmd_render_dataset(a) -> int:
    names = write_dataset(a.out, a.seed, a.num, a.height, a.width, force=a.force)
    print(f"wrote {len(names)} scenes to {a.out}", file=sys.stderr)
    return EXIT_OK


def _load_config(path) -> RunConfig:
    try:
        return RunConfig.from_json(io.read_json(path))
    except (ValueError, TypeError, KeyError) as e:
        raise UsageError(f"{path}: {e}") from e


def cmd_train(a) -> int:
    cfg = _load_config(a.config)
    data = a.data or cfg.data.dir
    if data is None:
        raise UsageError("no dataset: pass --data or set data.dir")
    log = run_training(cfg, data, a.out, resume=a.resume, max_epochs=a.max_epochs)
    for row in log:
        print(f"epoch {row['epoch']:3d}  loss {row['loss']:.6f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(a) -> int:
    report = evaluate_checkpoint(a.ckpt, a.data, a.task, None if a.clip <= 0 else a.clip)
    _emit(report.to_json())
    return EXIT_OK


def cmd_bench(a) -> int:
    cfg = RunConfig.from_json(io.read_json(a.config)).model if a.config else ModelConfig()
    if a.height or a.width:
        cfg = ModelConfig.from_json({**cfg.to_json(), "H_inp": a.height or cfg.H_inp, "W_inp": a.width or cfg.W_inp})
    _emit(bench(cfg, a.iters, a.threads))
    return EXIT_OK


def cmd_analyze_compression(a) -> int:
    _emit(analyze_dataset(a.data, a.coeffs, a.rot, resample=a.resample))
    return EXIT_OK


def cmd_infer(a) -> int:
    cfg, params, _ = load_run(a.ckpt)
    m = cfg.model
    x = io.read_f32r(a.input)
    if x.shape[1:] != (m.H_inp, m.W_inp):
        raise ValueError(f"input is {x.shape[1]}x{x.shape[2]}, checkpoint expects {m.H_inp}x{m.W_inp}")
    if x.shape[0] == 1:
        depth = x[0].astype(np.float64)
        x = synth_rgb(depth, classify_surfaces(depth))
    elif x.shape[0] != 3:
        raise ValueError(f"input must have 1 (depth) or 3 ({RGB_DESCRIPTION}) channels, got {x.shape[0]}")
    out = predict(params, m, x[None])[0]
    if m.task == "layout":
        out = decode_layout(out, m.H_inp)[None]
    io.write_f32r(a.out, out)
    return EXIT_OK


def cmd_dump_basis(a) -> int:
    io.write_f32r(a.out, make_basis(a.kind, a.H, a.r).M)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hohonet", description="Panorama dense prediction through 1-D horizontal features.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("render-dataset", help="render synthetic cuboid rooms")
    s.add_argument("--out", required=True)
    s.add_argument("--num", type=_positive("--num"), required=True)
    s.add_argument("--height", type=_positive("--height"), default=128)
    s.add_argument("--width", type=_positive("--width"), default=256)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--force", action="store_true", help="write into a non-empty directory")
    s.set_defaults(fn=cmd_render_dataset)

    s = sub.add_parser("train", help="train from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--data")
    s.add_argument("--out", required=True)
    s.add_argument("--resume", action="store_true")
    s.add_argument("--max-epochs", type=_positive("--max-epochs"), help="stop after this many epochs in this call")
    s.set_defaults(fn=cmd_train)

    s = sub.add_parser("eval", help="evaluate a checkpoint; JSON report on stdout")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--data", required=True)
    s.add_argument("--task", required=True, choices=("depth", "semantic", "layout"))
    s.add_argument("--clip", type=float, default=10.0, help="depth clip in metres (<= 0 disables)")
    s.set_defaults(fn=cmd_eval)

    s = sub.add_parser("bench", help="time single-image forward passes")
    s.add_argument("--config")
    s.add_argument("--iters", type=_positive("--iters"), default=50)
    s.add_argument("--threads", type=_positive("--threads"))
    s.add_argument("--height", type=_positive("--height"))
    s.add_argument("--width", type=_positive("--width"))
    s.set_defaults(fn=cmd_bench)

    s = sub.add_parser("analyze-compression", help="column DCT truncation error under rotation")
    s.add_argument("--data", required=True)
    s.add_argument("--coeffs", type=_positive("--coeffs"), default=16)
    s.add_argument("--rot", default="pitch:10,20,30,roll:10,20,30")
    s.add_argument("--resample", action="store_true", help="rotate stored rasters instead of re-rendering")
    s.set_defaults(fn=cmd_analyze_compression)

    s = sub.add_parser("infer", help="run a checkpoint on one raster")
    s.add_argument("--ckpt", required=True)
    s.add_argument("--input", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_infer)

    s = sub.add_parser("dump-basis", help="write a basis matrix as a raster")
    s.add_argument("--kind", required=True, choices=("idct", "interp"))
    s.add_argument("--H", type=_positive("--H"), required=True)
    s.add_argument("--r", type=_positive("--r"), required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(fn=cmd_dump_basis)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        a = parser.parse_args(argv)
    except SystemExit as e:  # --help, or a usage error already reported by the parser
        return int(e.code or 0)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return a.fn(a)
    except (UsageError, FileExistsError) as e:
        print(f"hohonet: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except (OSError, ValueError, FloatingPointError, RuntimeError, KeyError) as e:
        print(f"hohonet {a.command}: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
