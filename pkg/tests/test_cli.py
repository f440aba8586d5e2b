import json

import numpy as np
import pandas as pd
import pytest

import data_io
from cli import EXIT_DEGENERATE_CELLS, EXIT_DEGENERATE_STRUCTURE, EXIT_INPUT, EXIT_OK, main
from signal_transform import CoefficientGrid, CommonFrequencyGrid

SEM_FLAGS = ["--max-iterations", "30", "--burn-in", "5", "--subspace-dim", "2"]


@pytest.fixture
def generated(tmp_path, small_spec):
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(small_spec.to_dict()))
    data_dir = tmp_path / "data"
    assert main(["generate", "--spec", str(spec_path), "--output-dir", str(data_dir), "-q"]) == EXIT_OK
    assert main(["transform", "--input", str(data_dir / "dataset.csv"), "--length", "16",
                 "--output-dir", str(data_dir), "-q"]) == EXIT_OK
    return data_dir


def fit(grid_path, out_dir, *extra):
    return main(["fit", "--grid", str(grid_path), "--L", "2", "--K", "2,2", "--n-runs", "2",
                 "--output-dir", str(out_dir), "-q", *SEM_FLAGS, *extra])


def test_generate_and_transform_outputs(generated, small_spec):
    truth, _, _ = data_io.read_partition(str(generated / "truth"))
    assert truth.n == small_spec.n
    summary = data_io.read_json(str(generated / "transform_summary.json"))
    assert (summary["n"], summary["p"], summary["m"]) == (20, 12, 16)
    assert summary["n_degenerate"] == 0
    assert data_io.read_json(str(generated / "generative_spec.json"))["seed"] == small_spec.seed


def test_fit_evaluate_and_plotdata(generated, tmp_path, capsys):
    fit_dir = tmp_path / "fit"
    assert fit(generated / "grid.json", fit_dir) == EXIT_OK
    structure = data_io.read_json(str(fit_dir / "structure.json"))
    assert structure["K"] == [2, 2]

    capsys.readouterr()
    assert main(["evaluate", str(fit_dir / "partition"), str(generated / "truth")]) == EXIT_OK
    scores = json.loads(capsys.readouterr().out)
    assert set(scores) == {"row_ari", "col_ari", "block_ari"}
    assert all(-1.0 <= value <= 1.0 for value in scores.values())

    plot_dir = tmp_path / "plots"
    assert main(["plotdata", "--grid", str(generated / "grid.json"), "--fit-dir", str(fit_dir),
                 "--truth", str(generated / "truth"), "--output-dir", str(plot_dir), "-q"]) == EXIT_OK
    blocks = sorted(path.name for path in plot_dir.glob("block_*.csv"))
    assert blocks == ["block_l0_k0.csv", "block_l0_k1.csv", "block_l1_k0.csv", "block_l1_k1.csv"]
    cells = sum(len(pd.read_csv(plot_dir / name)) for name in blocks)
    assert cells == 20 * 12
    scatter = pd.read_csv(plot_dir / "scatter.csv")
    assert list(scatter.columns) == ["run", "loglik", "row_ari", "col_ari", "block_ari"]
    assert len(scatter) <= 2


def test_fit_is_reproducible(generated, tmp_path):
    assert fit(generated / "grid.json", tmp_path / "a", "--seed", "9") == EXIT_OK
    assert fit(generated / "grid.json", tmp_path / "b", "--seed", "9") == EXIT_OK
    for name in ("model.json", "partition_rows.csv", "partition_cols.csv", "trace.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_fit_does_not_depend_on_worker_count(generated, tmp_path):
    assert fit(generated / "grid.json", tmp_path / "serial", "--seed", "4", "--n-jobs", "1") == EXIT_OK
    assert fit(generated / "grid.json", tmp_path / "parallel", "--seed", "4", "--n-jobs", "2") == EXIT_OK
    for name in ("model.json", "partition_rows.csv", "partition_cols.csv", "trace.csv", "runs.json", "structure.json"):
        assert (tmp_path / "serial" / name).read_bytes() == (tmp_path / "parallel" / name).read_bytes()


def test_transform_rerun_writes_identical_files(generated, tmp_path):
    rerun = tmp_path / "rerun"
    assert main(["transform", "--input", str(generated / "dataset.csv"), "--length", "16",
                 "--output-dir", str(rerun), "-q"]) == EXIT_OK
    for name in ("grid.json", "transform_summary.json"):
        assert (rerun / name).read_bytes() == (generated / name).read_bytes()


def test_select_writes_tables(generated, tmp_path):
    out = tmp_path / "select"
    code = main(["select", "--grid", str(generated / "grid.json"), "--L-max", "2", "--K-max", "2",
                 "--runs-per-candidate", "1", "--output-dir", str(out), "-q", *SEM_FLAGS])
    assert code == EXIT_OK
    selection = data_io.read_json(str(out / "selection.json"))
    assert selection["search_fits"] == 4
    assert selection["L"] <= 2 and max(selection["K"]) <= 2
    table = pd.read_csv(out / "icl_table.csv")
    assert table["icl"].iloc[0] == pytest.approx(selection["icl"])
    assert (out / "model.json").exists()


def test_missing_input_file(tmp_path):
    assert fit(tmp_path / "absent.json", tmp_path / "fit") == EXIT_INPUT


def test_malformed_csv(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("row_id,col_id,t,value\na,x,0,1\na,x,1,nope\n")
    assert main(["transform", "--input", str(path), "--output-dir", str(tmp_path), "-q"]) == EXIT_INPUT


def test_fit_needs_structure(generated, tmp_path):
    code = main(["fit", "--grid", str(generated / "grid.json"), "--L", "2", "--output-dir", str(tmp_path), "-q"])
    assert code == EXIT_INPUT


def test_constant_series_are_rejected(tmp_path):
    lines = ["row_id,col_id,t,value"]
    for row in ("a", "b"):
        for col in ("x", "y"):
            lines += [f"{row},{col},{t},5" for t in range(8)]
    path = tmp_path / "flat.csv"
    path.write_text("\n".join(lines) + "\n")
    assert main(["transform", "--input", str(path), "--output-dir", str(tmp_path), "-q"]) == EXIT_DEGENERATE_CELLS


def test_structure_too_fine_for_the_data(tmp_path):
    # one column cannot hold three row clusters of two cells each with three rows
    grid = CoefficientGrid(np.random.default_rng(0).normal(size=(3, 1, 4)), CommonFrequencyGrid(0.1, 4))
    path = tmp_path / "grid.json"
    data_io.write_grid(grid, str(path))
    code = main(["fit", "--grid", str(path), "--L", "1", "--K", "3", "--n-runs", "2",
                 "--output-dir", str(tmp_path / "fit"), "-q", *SEM_FLAGS])
    assert code == EXIT_DEGENERATE_STRUCTURE
