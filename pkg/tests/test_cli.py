import subprocess
import sys

import numpy as np
import pytest

from hhmosaic import formats
from hhmosaic.cli import build_parser, main
from hhmosaic.homography import AffineTransform
from hhmosaic.imageio import read_pgm
from hhmosaic.mosaic import accumulate, render


def run(*argv):
    return main([str(a) for a in argv])


@pytest.fixture(scope="module")
def seqdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("seq")
    assert run("generate", "--motion", "circular", "--frames", 6, "--size", 64, "--seed", 7, "--out", d) == 0
    return d


@pytest.fixture(scope="module")
def untrained(tmp_path_factory):
    d = tmp_path_factory.mktemp("model")
    assert run("train", "--pairs", 4, "--heldout", 2, "--epochs", 0, "--out", d / "m.bin") == 0
    return d / "m.bin"


class TestGenerate:
    def test_counts(self, tmp_path):
        assert run("generate", "--motion", "circular", "--frames", 50, "--size", 128, "--seed", 7,
                   "--out", tmp_path) == 0
        assert len(list(tmp_path.glob("frame_*.pgm"))) == 50
        lines = (tmp_path / "truth.csv").read_text().splitlines()
        assert len(lines) == 51 and lines[0] == ",".join(formats.TRUTH_HEADER)
        assert read_pgm(tmp_path / "frame_0000.pgm").shape == (128, 128)

    def test_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            assert run("generate", "--motion", "freehand", "--frames", 4, "--seed", 3, "--out", tmp_path / sub) == 0
        for f in (tmp_path / "a").iterdir():
            assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()

    def test_one_frame_is_usage_error(self, tmp_path, capsys):
        assert run("generate", "--frames", 1, "--out", tmp_path) == 1
        assert "at least 2" in capsys.readouterr().err

    def test_unwritable_path_is_io_error(self, tmp_path, capsys):
        (tmp_path / "file").write_text("x")
        assert run("generate", "--frames", 2, "--out", tmp_path / "file" / "sub") == 2
        assert "file" in capsys.readouterr().err

    def test_bad_flag_is_usage_error(self):
        with pytest.raises(SystemExit) as info:
            run("generate", "--motion", "zigzag", "--out", "x")
        assert info.value.code == 1


class TestPipeline:
    def test_untrained_estimate_is_identity(self, seqdir, untrained, tmp_path):
        assert run("estimate", "--model", untrained, "--frames", seqdir, "--out", tmp_path / "h.csv") == 0
        rel = formats.read_homographies_csv(tmp_path / "h.csv")
        assert len(rel) == 6 and all(t == AffineTransform.identity() for t in rel)
        assert run("mosaic", "--frames", seqdir, "--homographies", tmp_path / "h.csv",
                   "--out", tmp_path / "m.pgm") == 0
        frames = formats.read_frames(seqdir)
        stacked = np.mean(frames, axis=0)
        assert np.abs(read_pgm(tmp_path / "m.pgm") - stacked).max() <= 0.5 / 255 + 1e-9

    def test_mosaic_from_truth(self, seqdir, tmp_path):
        assert run("mosaic", "--frames", seqdir, "--homographies", seqdir / "truth.csv",
                   "--blend", "last_writer", "--out", tmp_path / "m.pgm") == 0
        frames = formats.read_frames(seqdir)
        expect = render(frames, accumulate(formats.read_homographies_csv(seqdir / "truth.csv")), "last_writer")
        assert read_pgm(tmp_path / "m.pgm").shape == expect.image.shape

    def test_evaluate_truth_vs_truth(self, seqdir, tmp_path):
        assert run("evaluate", "--pred", seqdir / "truth.csv", "--truth", seqdir / "truth.csv",
                   "--frames", seqdir, "--out", tmp_path / "metrics.csv") == 0
        rows, summary = formats.read_metrics_csv(tmp_path / "metrics.csv")
        assert len(rows) == 5
        assert all(v == 0.0 for r in rows for k, v in r.items() if k != "frame")
        assert all(v == 0.0 for v in summary.values())

    def test_train_writes_checkpoint_and_log(self, tmp_path):
        assert run("train", "--pairs", 8, "--heldout", 4, "--batch", 4, "--max-iters", 2,
                   "--out", tmp_path / "m.bin", "--log", tmp_path / "log.csv") == 0
        lines = (tmp_path / "log.csv").read_text().splitlines()
        assert lines[0] == "epoch,iterations,train_loss,heldout_corner_px" and len(lines) == 3

    def test_train_from_frames(self, seqdir, tmp_path):
        assert run("train", "--data", seqdir, "--pairs", 4, "--heldout", 2, "--epochs", 0,
                   "--out", tmp_path / "m.bin") == 0
        assert (tmp_path / "m.log.csv").exists()

    def test_missing_model(self, seqdir, tmp_path, capsys):
        assert run("estimate", "--model", tmp_path / "none.bin", "--frames", seqdir, "--out", tmp_path / "h.csv") == 2
        assert "none.bin" in capsys.readouterr().err

    def test_corrupt_model(self, seqdir, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"HHEN\x01")
        assert run("estimate", "--model", tmp_path / "bad.bin", "--frames", seqdir, "--out", tmp_path / "h.csv") == 2

    def test_length_mismatch(self, seqdir, tmp_path):
        formats.write_homographies_csv(tmp_path / "h.csv", [AffineTransform.identity()] * 3)
        assert run("mosaic", "--frames", seqdir, "--homographies", tmp_path / "h.csv", "--out", tmp_path / "m.pgm") == 2

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "gen.cfg"
        cfg.write_text(f"frames = 3\nsize = 64\nout = {tmp_path / 'o'}\n")
        assert run("--config", cfg, "generate") == 0
        assert len(list((tmp_path / "o").glob("frame_*.pgm"))) == 3
        cfg.write_text("bogus = 1\n")
        assert run("--config", cfg, "generate", "--out", tmp_path / "p") == 1


def test_gradcheck_exit_zero(capsys):
    assert run("gradcheck", "--seed", 1) == 0
    out = capsys.readouterr().out
    assert "worst relative error" in out and "FAIL" not in out


def test_gradcheck_fails_on_tight_tolerance():
    assert run("gradcheck", "--seed", 1, "--tol", 1e-30) == 3


@pytest.mark.parametrize("cmd", ["generate", "train", "estimate", "mosaic", "evaluate", "gradcheck"])
def test_help_documents_defaults(cmd):
    sub = build_parser()._subparsers._group_actions[0].choices[cmd]
    text = sub.format_help()
    assert "default" in text or cmd in ("estimate", "mosaic", "evaluate")
    if cmd == "train":
        for token in ("0.0001", "0.9", "16", "8 deg", "15 px"):
            assert token in text


def test_console_module_entry(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "hhmosaic.cli", "generate", "--frames", "2", "--out", str(tmp_path)],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "2 frames" in proc.stdout
