"""Command-line front end: argument handling, CSV artifacts, exit codes."""

from __future__ import annotations

import csv
import subprocess
import sys

import numpy as np
import pytest

from ot1d2d.cli import main


def _read_csv(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    return header, rows


class TestArgumentHandling:
    def test_requires_a_command(self, capsys):
        with pytest.raises(SystemExit):
            main([])

    def test_rejects_unknown_example(self):
        with pytest.raises(SystemExit):
            main(["solve", "--example", "pentagon", "--n", "32"])

    def test_rejects_degenerate_resolution(self, capsys):
        code = main(["solve", "--example", "rectangular", "--n", "1"])
        assert code == 1
        assert "error: stage solve" in capsys.readouterr().err

    def test_rejects_malformed_ladder(self):
        with pytest.raises(SystemExit):
            main(["converge", "--example", "rectangular", "--n-list", "64,apple"])


class TestSolveCommand:
    def test_writes_roundtrip_exact_csv(self, tmp_path, capsys):
        out = tmp_path / "sol.csv"
        code = main(
            ["solve", "--example", "rectangular", "--n", "128", "--output", str(out)]
        )
        assert code == 0
        header, rows = _read_csv(out)
        assert header == ["x", "u", "u_exact", "error"]
        assert len(rows) == 129
        x = np.array([float(r[0]) for r in rows])
        err = np.array([float(r[3]) for r in rows])
        assert x[0] == 0.0 and x[-1] == 1.0
        # 17 significant digits round-trip float64 exactly
        assert x[1] == 1.0 / 128.0
        assert err.max() == pytest.approx(0.0182, abs=5e-4)
        assert "max_error" in capsys.readouterr().out

    def test_quadrature_level_error_on_flat_benchmark(self, tmp_path, capsys):
        # the flat-potential target measures pure discretization noise; the
        # solve bottoms out a shade above the default tolerance and must
        # still write the table before flagging the stall
        out = tmp_path / "van.csv"
        code = main(
            ["solve", "--example", "vanishing", "--n", "256", "--output", str(out)]
        )
        captured = capsys.readouterr()
        assert code == 1
        assert "stalled" in captured.err
        assert out.exists()
        _, rows = _read_csv(out)
        err = max(float(r[3]) for r in rows)
        assert err == pytest.approx(8.5e-4, abs=2e-4)

    def test_tolerance_override_restores_success(self, tmp_path):
        out = tmp_path / "van9.csv"
        code = main(
            [
                "solve",
                "--example",
                "vanishing",
                "--n",
                "256",
                "--tol",
                "1e-9",
                "--output",
                str(out),
            ]
        )
        assert code == 0


class TestConvergeCommand:
    def test_ladder_csv_schema_and_exit(self, tmp_path, capsys):
        out = tmp_path / "ladder.csv"
        code = main(
            [
                "converge",
                "--example",
                "rectangular",
                "--n-list",
                "64,128",
                "--threads",
                "1",
                "--output",
                str(out),
            ]
        )
        assert code == 0
        header, rows = _read_csv(out)
        assert header == ["N", "h_x", "M", "h_y", "max_error", "newton_iters", "runtime_s"]
        assert [int(r[0]) for r in rows] == [64, 128]
        assert int(rows[0][2]) == 11 and int(rows[1][2]) == 14
        errors = [float(r[4]) for r in rows]
        assert errors[0] == pytest.approx(0.01705, abs=2e-4)
        assert errors[1] == pytest.approx(0.01820, abs=2e-4)

    def test_deterministic_apart_from_runtime(self, tmp_path):
        paths = [tmp_path / "a.csv", tmp_path / "b.csv"]
        for p in paths:
            assert (
                main(
                    [
                        "converge",
                        "--example",
                        "vanishing",
                        "--n-list",
                        "32,64",
                        "--threads",
                        "1",
                        "--output",
                        str(p),
                    ]
                )
                == 0
            )
        tables = [_read_csv(p)[1] for p in paths]
        for row_a, row_b in zip(*tables):
            assert row_a[:6] == row_b[:6]  # everything but runtime_s is bit-stable

    def test_threaded_ladder_matches_serial(self, tmp_path):
        serial, threaded = tmp_path / "s.csv", tmp_path / "t.csv"
        for path, threads in ((serial, "1"), (threaded, "4")):
            code = main(
                [
                    "converge",
                    "--example",
                    "rectangular",
                    "--n-list",
                    "32,48,64",
                    "--threads",
                    threads,
                    "--output",
                    str(path),
                ]
            )
            assert code == 0
        rows_s = [r[:6] for r in _read_csv(serial)[1]]
        rows_t = [r[:6] for r in _read_csv(threaded)[1]]
        assert rows_s == rows_t

    def test_stalled_ladder_exits_nonzero_but_writes_rows(self, tmp_path, capsys):
        out = tmp_path / "stall.csv"
        code = main(
            [
                "converge",
                "--example",
                "rectangular",
                "--n-list",
                "64,256",
                "--threads",
                "1",
                "--output",
                str(out),
            ]
        )
        captured = capsys.readouterr()
        assert code == 1  # N=256 bottoms out at ~1.7e-10, above the default tol
        assert "did not converge" in captured.out or "did not converge" in captured.err
        _, rows = _read_csv(out)
        assert len(rows) == 2


class TestVerifyCommand:
    def test_rectangular_reports_honest_table(self, capsys):
        # four structural checks hold; the consistency fit over a short
        # ladder is slower than the sanity band, and the command says so
        code = main(["verify", "--example", "rectangular", "--n", "128"])
        captured = capsys.readouterr()
        assert code == 1
        table = {
            line.split()[0]: line.split()[1]
            for line in captured.out.splitlines()
            if line and line.split()[0] != "error:"
        }
        assert table["mass-balance"] == "PASS"
        assert table["psi-matches-density"] == "PASS"
        assert table["proper-identity"] == "PASS"
        assert table["monotonicity-probe"] == "PASS"
        assert table["consistency-rate"] == "FAIL"
        assert "consistency-rate" in captured.err

    def test_small_vanishing_run_is_quick_and_structured(self, capsys):
        code = main(["verify", "--example", "vanishing", "--n", "64"])
        captured = capsys.readouterr()
        lines = [ln for ln in captured.out.splitlines() if "PASS" in ln or "FAIL" in ln]
        assert len(lines) == 5
        assert code in (0, 1)


def test_console_entry_point_runs():
    proc = subprocess.run(
        [sys.executable, "-m", "ot1d2d.cli", "--help"],
        capture_output=True,
        text=True,
        timeout=60,
    )
    assert proc.returncode == 0
    assert "solve" in proc.stdout and "verify" in proc.stdout
