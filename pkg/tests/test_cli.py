"""Command-line interface: files, schemas, exit codes, determinism."""

import csv
import subprocess
import sys
from pathlib import Path

import pytest

from cirband import validate_params
from cirband.cli import (
    DENSE_COLUMNS,
    SKELETON_COLUMNS,
    build_parser,
    lint_skeleton_csv,
    main,
)


def read_rows(path: Path):
    with path.open(newline="") as fh:
        return list(csv.reader(fh))


def tree_bytes(root: Path):
    return {p.name: p.read_bytes() for p in sorted(root.iterdir())}


def test_parser_defaults():
    ns = build_parser().parse_args(["simulate", "--output", "x"])
    assert ns.k == 2.0 and ns.lam == 1.0 and ns.sigma == 1.0
    assert ns.r == 0.02 and ns.seed == 0 and ns.n_paths == 1
    assert ns.dense_points == 0 and ns.workers == 1


def test_simulate_writes_expected_files(tmp_path):
    out = tmp_path / "run"
    code = main(
        [
            "simulate", "--r", "0.05", "--n-paths", "2", "--seed", "3",
            "--dense-points", "40", "--output", str(out),
        ]
    )
    assert code == 0
    names = {p.name for p in out.iterdir()}
    assert names == {
        "path_0000.csv", "path_0001.csv", "dense_0000.csv", "dense_0001.csv",
        "summary.csv", "run_metadata.txt",
    }
    rows = read_rows(out / "path_0000.csv")
    assert rows[0] == SKELETON_COLUMNS
    assert rows[1][3] == "regular" and rows[-1][3] == "final"
    dense = read_rows(out / "dense_0000.csv")
    assert dense[0] == DENSE_COLUMNS
    assert len(dense) == 41
    assert float(dense[1][0]) == 0.0 and float(dense[-1][0]) == 1.0
    summary = read_rows(out / "summary.csv")
    assert len(summary) == 3 and summary[0][0] == "path_id"
    meta = (out / "run_metadata.txt").read_text()
    assert "seed=3" in meta and "generator=pcg64-seedseq" in meta
    assert "time" not in meta.lower()  # nothing stamp-like may sneak in


def test_simulate_outputs_are_byte_identical(tmp_path):
    args = ["simulate", "--r", "0.05", "--n-paths", "2", "--seed", "42",
            "--dense-points", "25"]
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(args + ["--output", str(a)]) == 0
    assert main(args + ["--output", str(b)]) == 0
    assert tree_bytes(a) == tree_bytes(b)


def test_simulate_band_heavy_passes_lint(tmp_path):
    out = tmp_path / "band"
    code = main(
        [
            "simulate", "--k", "0.75", "--lambda", "1", "--sigma", "1.5",
            "--v0", "0.02", "--r", "0.01", "--seed", "7", "--output", str(out),
        ]
    )
    assert code == 0
    params = validate_params(0.75, 1.0, 1.5, 1.0)
    lint_skeleton_csv(out / "path_0000.csv", params, 0.01)
    regimes = {row[3] for row in read_rows(out / "path_0000.csv")[1:]}
    assert "band_entry" in regimes and "band_exit" in regimes


def test_lint_catches_tampering(tmp_path):
    out = tmp_path / "lint"
    assert main(["simulate", "--r", "0.1", "--seed", "1", "--output", str(out)]) == 0
    target = out / "path_0000.csv"
    rows = read_rows(target)
    rows[-1][6] = repr(float(rows[-1][6]) * 1.5)  # corrupt the reported bound
    target.write_text("\n".join(",".join(r) for r in rows) + "\n")
    params = validate_params(2.0, 1.0, 1.0, 1.0)
    with pytest.raises(AssertionError):
        lint_skeleton_csv(target, params, 0.1)


def test_config_errors_exit_with_2(tmp_path):
    assert main(["simulate", "--k", "-1", "--output", str(tmp_path / "x")]) == 2
    assert main(["simulate", "--r", "0", "--output", str(tmp_path / "y")]) == 2
    assert main(["validate-marginal", "--n-paths", "10"]) == 2


def test_validation_failure_exits_with_1():
    # 300 samples cannot reach the 0.01 Kolmogorov-Smirnov threshold
    assert main(["validate-fpt", "--n-samples", "300", "--seed", "0"]) == 1


def test_validate_fpt_passes_at_default_size():
    assert main(["validate-fpt", "--seed", "0"]) == 0


def test_validate_bessel_passes():
    assert main(["validate-bessel"]) == 0


def test_export_u_grid_schema_and_gap(tmp_path):
    out = tmp_path / "grid"
    code = main(
        [
            "export-u-grid", "--k", "0.75", "--lambda", "1", "--sigma", "1",
            "--level-override", "0.1", "--slice-t", "0.1",
            "--grid-points", "50", "--output", str(out),
        ]
    )
    assert code == 0
    slice_rows = read_rows(out / "u_level_slice.csv")
    assert slice_rows[0] == ["x", "u_plus", "u_minus", "gap"]
    assert len(slice_rows) == 51
    for row in slice_rows[1:]:
        assert float(row[3]) >= -1e-15
        assert float(row[2]) <= float(row[1]) + 1e-15
    assert float(slice_rows[-1][1]) == 1.0  # boundary value at the level
    grid_rows = read_rows(out / "u_normalized_grid.csv")
    assert grid_rows[0] == ["t_tilde", "x_tilde", "u_tilde"]
    assert all(0.0 <= float(r[2]) <= 1.0 for r in grid_rows[1:])


def test_console_module_invocation():
    proc = subprocess.run(
        [sys.executable, "-m", "cirband.cli", "--help"],
        capture_output=True, text=True,
    )
    assert proc.returncode == 0
    assert "simulate" in proc.stdout and "validate-fpt" in proc.stdout
    bad = subprocess.run(
        [sys.executable, "-m", "cirband.cli", "no-such-mode"],
        capture_output=True, text=True,
    )
    assert bad.returncode == 2  # argparse rejects unknown modes
