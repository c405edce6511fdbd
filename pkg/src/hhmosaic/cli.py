"""Command-line entry point: generate, train, estimate, mosaic, evaluate, gradcheck.

Exit codes: 0 success, 1 usage error, 2 data/I-O error, 3 numeric failure.
"""
from __future__ import annotations

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import formats, regressor
from .errors import DegenerateGeometryError, DimensionError, EmptyOverlapError, FormatError, NumericError
from .gradcheck import STEP, TOLERANCE, run_suite
from .homography import AffineTransform, PatchCorners, affine_from_deltas, compose, invert
from .imageio import read_pgm, write_pgm
from .metrics import drift_curve
from .mosaic import accumulate, render
from .pig import MAX_ALPHA, MAX_SHIFT, SequenceSpec, generate_sequence_full, make_pig_dataset, perturb, sample_params
from .rng import stream

log = logging.getLogger("hhmosaic")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(s: str) -> int:
    v = int(s)
    if v < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return v


def _writable_dir(path: Path) -> Path:
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {path}: {exc.strerror}") from exc
    return path


def _parent_ok(path: Path) -> Path:
    if not path.parent.is_dir():
        raise OSError(f"output directory {path.parent} does not exist")
    return path


# --- generate ---------------------------------------------------------------

def cmd_generate(args) -> int:
    if args.frames < 2:
        raise UsageError("--frames must be at least 2")
    if args.size < 64:
        raise UsageError("--size must be at least 64")
    spec = SequenceSpec(args.motion, args.frames, args.size, args.seed, args.texture,
                        str(args.texture_path) if args.texture_path else None)
    out = _writable_dir(Path(args.out))
    seq = generate_sequence_full(spec)
    for i, frame in enumerate(seq.frames):
        write_pgm(out / f"frame_{i:04d}.pgm", frame)
    formats.write_truth_csv(out / "truth.csv", seq.relative, seq.params)
    print(f"wrote {len(seq.frames)} frames to {out} (seed {args.seed})")
    return EXIT_OK


# --- train ------------------------------------------------------------------

def _pig_from_images(images, n: int, size: int, seed: int):
    """PIG pairs cut from random ``size`` crops of the given greyscale images."""
    recs = []
    for i in range(n):
        rng = stream(seed, 6, i)
        img = images[int(rng.integers(len(images)))]
        h, w = img.shape
        if h < size or w < size:
            raise FormatError(f"training image {w}x{h} is smaller than the {size}px patch")
        y0, x0 = int(rng.integers(h - size + 1)), int(rng.integers(w - size + 1))
        recs.append(perturb(img[y0:y0 + size, x0:x0 + size], sample_params(rng)))
    return recs


def cmd_train(args) -> int:
    cfg = regressor.TrainConfig(lr=args.lr, momentum=args.momentum, batch=args.batch, epochs=args.epochs,
                                seed=args.seed, patch=args.patch, max_iters=args.max_iters)
    out = _parent_ok(Path(args.out))
    log_path = _parent_ok(Path(args.log)) if args.log else out.with_suffix(".log.csv")
    if args.data:
        images = formats.read_frames(args.data)
        data = _pig_from_images(images, args.pairs, args.patch, args.seed)
        held = _pig_from_images(images, args.heldout, args.patch, args.seed + 1)
    else:
        data = make_pig_dataset(args.pairs, args.patch, args.seed)
        held = make_pig_dataset(args.heldout, args.patch, args.seed + 1)
    mcfg = regressor.ModelConfig(patch=args.patch, neighborhood=args.neighborhood)
    model = regressor.RegressorModel.build(mcfg, args.seed)

    def progress(e):
        print(f"epoch {e['epoch']:4d}  iters {e['iterations']:6d}  loss {e['train_loss']:.4f}  "
              f"held-out corner error {e['heldout_corner_px']:.4f} px")

    model, history = regressor.train(model, data, cfg, held, progress=progress)
    regressor.save(model, out)
    formats.write_train_log_csv(log_path, history)
    print(f"saved model to {out}; log in {log_path}")
    return EXIT_OK


# --- estimate ---------------------------------------------------------------

def center_crop(img: np.ndarray, size: int) -> tuple[np.ndarray, tuple[int, int]]:
    h, w = img.shape
    if h < size or w < size:
        raise FormatError(f"frame {w}x{h} is smaller than the model patch {size}")
    y0, x0 = (h - size) // 2, (w - size) // 2
    return img[y0:y0 + size, x0:x0 + size], (x0, y0)


def estimate_relative(model: regressor.RegressorModel, frames, key_offset: int = 4) -> list[AffineTransform]:
    """Relative transform of every frame w.r.t. its predecessor (frame 0: identity).

    Query = frame t, value = frame t-1, key = frame max(t - key_offset, 0).
    The prediction maps value-frame content onto the query frame, so the
    relative transform (query -> predecessor coordinates) is its inverse.
    """
    p = model.config.patch
    crops = [center_crop(f, p) for f in frames]
    ref = PatchCorners.rectangle(p, p)
    out = [AffineTransform.identity()]
    for t in range(1, len(frames)):
        q, (x0, y0) = crops[t]
        k = crops[max(t - key_offset, 0)][0]
        v = crops[t - 1][0]
        local = affine_from_deltas(ref, regressor.forward(model, q, k, v))
        shift = AffineTransform.translation(x0, y0)
        out.append(invert(compose(shift, compose(local, invert(shift)))))
    return out


def cmd_estimate(args) -> int:
    model = regressor.load(args.model)
    frames = formats.read_frames(args.frames)
    out = _parent_ok(Path(args.out))
    rel = estimate_relative(model, frames, args.key_offset)
    formats.write_homographies_csv(out, rel)
    print(f"estimated {len(rel)} relative transforms -> {out}")
    return EXIT_OK


# --- mosaic / evaluate --------------------------------------------------------

def cmd_mosaic(args) -> int:
    frames = formats.read_frames(args.frames)
    rel = formats.read_homographies_csv(args.homographies)
    if len(rel) != len(frames):
        raise FormatError(f"{len(frames)} frames but {len(rel)} transforms")
    out = _parent_ok(Path(args.out))
    canvas = render(frames, accumulate(rel), args.blend)
    write_pgm(out, canvas.image)
    h, w = canvas.image.shape
    print(f"mosaic {w}x{h} -> {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    frames = formats.read_frames(args.frames)
    pred = formats.read_homographies_csv(args.pred)
    truth = formats.read_homographies_csv(args.truth)
    if not (len(pred) == len(truth) == len(frames)):
        raise FormatError(f"length mismatch: {len(frames)} frames, {len(pred)} predicted, {len(truth)} true")
    out = _parent_ok(Path(args.out))
    report = drift_curve(accumulate(pred), accumulate(truth), frames)
    formats.write_metrics_csv(out, report)
    s = report.summary
    print(f"MRE {s['corner_error']:.4f} px  RMSE {255 * s['rmse']:.4f}  APE {255 * s['ape']:.4f} (x255) -> {out}")
    return EXIT_OK


def cmd_gradcheck(args) -> int:
    results = run_suite(args.seed, args.step)
    for r in results:
        print(f"{'PASS' if r.worst < args.tol else 'FAIL'}  {r.name:28s} worst rel err {r.worst:.3e}")
    worst = max(r.worst for r in results)
    print(f"worst relative error {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst < args.tol else EXIT_NUMERIC


# --- parser -------------------------------------------------------------------

class _Help(argparse.ArgumentDefaultsHelpFormatter):
    def _get_help_string(self, action):
        if action.default is None:
            return action.help
        return super()._get_help_string(action)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="hhmosaic", description=__doc__.splitlines()[0], formatter_class=_Help)
    p.add_argument("--config", type=Path, help="file of key=value lines used as flag defaults")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    fmt = _Help

    g = sub.add_parser("generate", help="synthetic sequence with ground truth", formatter_class=fmt)
    g.add_argument("--motion", choices=["spiral", "circular", "freehand"], default="circular", help="camera path")
    g.add_argument("--frames", type=int, default=50, help="number of frames (>= 2)")
    g.add_argument("--size", type=int, default=128, help="square frame size in px (>= 64)")
    g.add_argument("--seed", type=int, default=0, help="random seed")
    g.add_argument("--texture", choices=["procedural_vessels", "from_file"], default="procedural_vessels",
                   help="scene texture source")
    g.add_argument("--texture-path", type=Path, help="PGM texture for --texture from_file")
    g.add_argument("--out", type=Path, required=True, help="output directory")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="train the regressor on PIG pairs", formatter_class=fmt,
                       description=f"PIG perturbations: rotation within +-{math.degrees(MAX_ALPHA):g} deg, "
                                   f"translation within +-{MAX_SHIFT:g} px.")
    t.add_argument("--lr", type=float, default=1e-4, help="SGD learning rate")
    t.add_argument("--momentum", type=float, default=0.9, help="SGD momentum")
    t.add_argument("--batch", type=_positive_int, default=16, help="mini-batch size")
    t.add_argument("--epochs", type=int, default=50, help="epochs (the original protocol used 2000)")
    t.add_argument("--max-iters", type=int, default=None, help="stop after this many SGD steps")
    t.add_argument("--patch", type=int, default=64, help="patch size in px")
    t.add_argument("--pairs", type=_positive_int, default=512, help="training pairs")
    t.add_argument("--heldout", type=int, default=64, help="held-out pairs for the corner-error log")
    t.add_argument("--data", type=Path, help="directory of frame_*.pgm used as PIG sources (default: procedural)")
    t.add_argument("--neighborhood", choices=["eight_neighbor", "all_positions"], default="eight_neighbor",
                   help="fusion window")
    t.add_argument("--seed", type=int, default=0, help="seed for data, init and shuffling")
    t.add_argument("--out", type=Path, required=True, help="checkpoint path")
    t.add_argument("--log", type=Path, help="training log CSV; <out>.log.csv when omitted")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("estimate", help="relative homographies for a frame sequence", formatter_class=fmt)
    e.add_argument("--model", type=Path, required=True, help="checkpoint from train")
    e.add_argument("--frames", type=Path, required=True, help="directory of frame_*.pgm")
    e.add_argument("--key-offset", type=_positive_int, default=4, help="key frame is this many frames back")
    e.add_argument("--seed", type=int, default=0, help="accepted for uniformity; estimation is deterministic")
    e.add_argument("--out", type=Path, required=True, help="homographies.csv path")
    e.set_defaults(func=cmd_estimate)

    m = sub.add_parser("mosaic", help="render frames with relative homographies", formatter_class=fmt)
    m.add_argument("--frames", type=Path, required=True, help="directory of frame_*.pgm")
    m.add_argument("--homographies", type=Path, required=True, help="homographies.csv or truth.csv")
    m.add_argument("--blend", choices=["average", "last_writer"], default="average", help="overlap blending")
    m.add_argument("--out", type=Path, required=True, help="mosaic PGM path")
    m.set_defaults(func=cmd_mosaic)

    v = sub.add_parser("evaluate", help="MRE/RMSE/APE of predicted vs true transforms", formatter_class=fmt)
    v.add_argument("--pred", type=Path, required=True, help="predicted homographies.csv")
    v.add_argument("--truth", type=Path, required=True, help="truth.csv or homographies.csv")
    v.add_argument("--frames", type=Path, required=True, help="directory of frame_*.pgm")
    v.add_argument("--out", type=Path, required=True, help="metrics.csv path")
    v.set_defaults(func=cmd_evaluate)

    c = sub.add_parser("gradcheck", help="finite-difference gradient suite", formatter_class=fmt)
    c.add_argument("--seed", type=int, default=1, help="seed of the random check instances")
    c.add_argument("--step", type=float, default=STEP, help="central difference step")
    c.add_argument("--tol", type=float, default=TOLERANCE, help="max relative error")
    c.set_defaults(func=cmd_gradcheck)
    return p


def _apply_config(parser: argparse.ArgumentParser, argv) -> argparse.Namespace:
    """Parse ``argv``; values from ``--config`` become defaults that flags override."""
    pre = argparse.ArgumentParser(add_help=False)
    pre.add_argument("--config", type=Path)
    known, rest = pre.parse_known_args(argv)
    if known.config is None:
        return parser.parse_args(argv)
    command = next((a for a in rest if not a.startswith("-")), None)
    subs = parser._subparsers._group_actions[0].choices  # noqa: SLF001
    if command not in subs:
        return parser.parse_args(argv)
    values = formats.read_config_file(known.config)
    sub = subs[command]
    actions = {a.dest: a for a in sub._actions}  # noqa: SLF001
    unknown = sorted(set(values) - set(actions))
    if unknown:
        raise UsageError(f"unknown config keys for {command}: {', '.join(unknown)}")
    defaults = {}
    for key, raw in values.items():
        action = actions[key]
        try:
            defaults[key] = action.type(raw) if action.type else raw
        except (ValueError, argparse.ArgumentTypeError) as exc:
            raise UsageError(f"config value {key}={raw}: {exc}") from exc
        action.required = False
    sub.set_defaults(**defaults)
    return parser.parse_args(argv)


def _exit_code(exc: BaseException) -> tuple[int, str]:
    if isinstance(exc, UsageError):
        return EXIT_USAGE, "usage error"
    if isinstance(exc, (FormatError, EmptyOverlapError, DimensionError, OSError)):
        return EXIT_DATA, "data error"
    if isinstance(exc, (NumericError, DegenerateGeometryError, ArithmeticError)):
        return EXIT_NUMERIC, "numeric error"
    return EXIT_USAGE, "usage error"  # remaining ValueErrors are bad flag values


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = _apply_config(parser, argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING)
        return args.func(args)
    except (UsageError, ValueError, OSError, ArithmeticError) as exc:
        code, kind = _exit_code(exc)
        print(f"hhmosaic: {kind}: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
