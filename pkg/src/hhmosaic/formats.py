"""CSV formats for transforms (truth and estimates) and for metrics and training logs."""
from __future__ import annotations

import csv
import io
from pathlib import Path
from typing import Sequence

from .errors import FormatError
from .homography import AffineTransform, format_affine, parse_affine
from .imageio import atomic_write, read_pgm
from .metrics import DriftReport
from .pig import PigParams

AFFINE_COLS = ["a", "b", "tx", "c", "d", "ty"]
TRUTH_HEADER = ["frame", *AFFINE_COLS, "alpha_rad", "dx", "dy"]
HOMOGRAPHY_HEADER = ["frame", *AFFINE_COLS]
METRICS_HEADER = ["frame", "mre_px", "rmse_255", "ape_255"]
TRAIN_LOG_HEADER = ["epoch", "iterations", "train_loss", "heldout_corner_px"]


def _num(v: float) -> str:
    return repr(float(v))


def _csv_text(header: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _read_rows(path) -> tuple[list[str], list[dict[str, str]]]:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise OSError(f"cannot read {path}: {exc.strerror}") from exc
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise FormatError(f"{path}: empty CSV file")
    return list(reader.fieldnames), list(reader)


def write_truth_csv(path, relative: Sequence[AffineTransform], params: Sequence[PigParams]):
    rows = [[str(i), *format_affine(t), _num(p.alpha), _num(p.dx), _num(p.dy)]
            for i, (t, p) in enumerate(zip(relative, params))]
    atomic_write(path, _csv_text(TRUTH_HEADER, rows))


def write_homographies_csv(path, relative: Sequence[AffineTransform]):
    rows = [[str(i), *format_affine(t)] for i, t in enumerate(relative)]
    atomic_write(path, _csv_text(HOMOGRAPHY_HEADER, rows))


def read_homographies_csv(path) -> list[AffineTransform]:
    """Relative transforms from either ``homographies.csv`` or ``truth.csv``."""
    fields, rows = _read_rows(path)
    missing = [c for c in HOMOGRAPHY_HEADER if c not in fields]
    if missing:
        raise FormatError(f"{path}: missing columns {missing}")
    out = []
    for expect, row in enumerate(rows):
        if row["frame"] != str(expect):
            raise FormatError(f"{path}: expected frame {expect}, found {row['frame']!r}")
        out.append(parse_affine([row[c] for c in AFFINE_COLS]))
    if not out:
        raise FormatError(f"{path}: no transforms")
    return out


def read_truth_csv(path) -> tuple[list[AffineTransform], list[PigParams]]:
    fields, rows = _read_rows(path)
    if fields != TRUTH_HEADER:
        raise FormatError(f"{path}: expected header {','.join(TRUTH_HEADER)}")
    rel = read_homographies_csv(path)
    try:
        params = [PigParams(float(r["alpha_rad"]), float(r["dx"]), float(r["dy"])) for r in rows]
    except ValueError as exc:
        raise FormatError(f"{path}: bad perturbation value") from exc
    return rel, params


def write_metrics_csv(path, report: DriftReport):
    rows = [[str(r.frame), _num(r.corner_error), _num(255.0 * r.rmse), _num(255.0 * r.ape)] for r in report.per_frame]
    s = report.summary
    rows.append(["mean", _num(s["corner_error"]), _num(255.0 * s["rmse"]), _num(255.0 * s["ape"])])
    atomic_write(path, _csv_text(METRICS_HEADER, rows))


def read_metrics_csv(path) -> tuple[list[dict[str, float]], dict[str, float]]:
    fields, rows = _read_rows(path)
    if fields != METRICS_HEADER or not rows or rows[-1]["frame"] != "mean":
        raise FormatError(f"{path}: not a metrics file")
    conv = [{k: float(v) for k, v in r.items()} for r in rows[:-1]]
    return conv, {k: float(v) for k, v in rows[-1].items() if k != "frame"}


def write_train_log_csv(path, log: Sequence[dict]):
    rows = [[str(e["epoch"]), str(e["iterations"]), _num(e["train_loss"]), _num(e["heldout_corner_px"])] for e in log]
    atomic_write(path, _csv_text(TRAIN_LOG_HEADER, rows))


def frame_paths(directory) -> list[Path]:
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory {directory} does not exist")
    paths = sorted(directory.glob("frame_*.pgm"))
    if not paths:
        raise FormatError(f"{directory}: no frame_*.pgm files")
    return paths


def read_frames(directory):
    return [read_pgm(p) for p in frame_paths(directory)]


def read_config_file(path) -> dict[str, str]:
    """``key=value`` lines; blank lines and ``#`` comments ignored."""
    out = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise FormatError(f"{path}:{n}: expected key=value")
        k, v = (s.strip() for s in line.split("=", 1))
        out[k.replace("-", "_")] = v
    return out

