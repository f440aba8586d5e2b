"""
Data IO Module
Reads time-series datasets (long CSV or JSON) and writes / reads every
artifact of the pipeline: coefficient grids, model files, partitions,
likelihood traces and per-run records.
"""

import json
import logging
import os
import re
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from exceptions import InvalidInputError
from inference import SemGibbsResult
from model_core import ModelState, PartitionPair, describe_structure
from signal_transform import CoefficientGrid, TimeSeries, TimeSeriesDataset

logger = logging.getLogger(__name__)

CSV_COLUMNS = ["row_id", "col_id", "t", "value"]
UNIFORM_RTOL = 1e-6


def write_json(data, path: str):
    with open(path, "w") as f:
        json.dump(data, f, indent=2)
        f.write("\n")


def read_json(path: str):
    if not os.path.exists(path):
        raise InvalidInputError(f"file not found: {path}")
    try:
        with open(path) as f:
            return json.load(f)
    except json.JSONDecodeError as e:
        raise InvalidInputError(f"{path}: invalid JSON ({e.msg})", line=e.lineno) from e


def _read_csv(path: str, required: Sequence[str]) -> pd.DataFrame:
    if not os.path.exists(path):
        raise InvalidInputError(f"file not found: {path}")
    try:
        df = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.ParserError as e:
        match = re.search(r"line (\d+)", str(e))
        raise InvalidInputError(f"{path}: {e}", line=int(match.group(1)) if match else None) from e
    except pd.errors.EmptyDataError as e:
        raise InvalidInputError(f"{path} is empty") from e
    missing = [c for c in required if c not in df.columns]
    if missing:
        raise InvalidInputError(f"{path}: missing columns {missing}, expected header {','.join(required)}", line=1)
    return df


def _numeric(df: pd.DataFrame, column: str, path: str) -> pd.Series:
    values = pd.to_numeric(df[column], errors="coerce")
    bad = values.isna() | ~np.isfinite(values.fillna(0.0))
    if bad.any():
        index = int(np.flatnonzero(bad.to_numpy())[0])
        # header is line 1
        raise InvalidInputError(f"{path}: invalid {column} '{df[column].iloc[index]}'", line=index + 2)
    return values


def read_dataset_csv(path: str) -> TimeSeriesDataset:
    """
    Long format, one sample per line: row_id,col_id,t,value. Lines may come
    in any order; each cell's sampling interval is the mean spacing of its
    sorted time stamps.
    """
    df = _read_csv(path, CSV_COLUMNS)
    for column in ("row_id", "col_id"):
        empty = df[column].str.strip() == ""
        if empty.any():
            raise InvalidInputError(f"{path}: empty {column}", line=int(np.flatnonzero(empty.to_numpy())[0]) + 2)
    df = df.assign(t=_numeric(df, "t", path), value=_numeric(df, "value", path))

    row_ids = list(pd.unique(df["row_id"]))
    col_ids = list(pd.unique(df["col_id"]))
    cells = {key: group.sort_values("t") for key, group in df.groupby(["row_id", "col_id"], sort=False)}

    series = []
    non_uniform = 0
    for r in row_ids:
        row = []
        for c in col_ids:
            group = cells.get((r, c))
            if group is None:
                raise InvalidInputError(f"{path}: no samples for cell ({r}, {c})")
            t = group["t"].to_numpy()
            steps = np.diff(t)
            if steps.size == 0:
                raise InvalidInputError(f"{path}: cell ({r}, {c}) has a single sample", line=int(group.index[0]) + 2)
            if np.any(steps <= 0):
                raise InvalidInputError(f"{path}: cell ({r}, {c}) has repeated time stamps",
                                        line=int(group.index[np.argmin(steps) + 1]) + 2)
            interval = float(steps.mean())
            if not np.allclose(steps, interval, rtol=UNIFORM_RTOL, atol=0):
                non_uniform += 1
            row.append(TimeSeries(group["value"].to_numpy(), interval))
        series.append(row)

    if non_uniform:
        logger.warning(f"{non_uniform} cells are not uniformly sampled; using their mean sampling interval.")
    logger.info(f"Loaded {len(row_ids)}x{len(col_ids)} series from {path}")
    return TimeSeriesDataset(series, row_ids, col_ids)


def write_dataset_csv(dataset: TimeSeriesDataset, path: str):
    frames = []
    for i, j, cell in dataset.cells():
        frames.append(pd.DataFrame({
            "row_id": dataset.row_ids[i],
            "col_id": dataset.col_ids[j],
            "t": np.arange(cell.length) * cell.sample_interval,
            "value": cell.values,
        }))
    pd.concat(frames, ignore_index=True).to_csv(path, index=False)


def read_dataset_json(path: str) -> TimeSeriesDataset:
    """{rows: [...], cols: [...], series: {"<row>|<col>": {interval, values}}}"""
    data = read_json(path)
    try:
        rows = [str(r) for r in data["rows"]]
        cols = [str(c) for c in data["cols"]]
        series = data["series"]
    except (KeyError, TypeError) as e:
        raise InvalidInputError(f"{path}: expected keys rows, cols and series") from e

    grid = []
    for r in rows:
        row = []
        for c in cols:
            entry = series.get(f"{r}|{c}")
            if entry is None:
                raise InvalidInputError(f"{path}: no series for cell ({r}, {c})")
            try:
                row.append(TimeSeries(np.asarray(entry["values"], dtype=float), float(entry.get("interval", 1.0))))
            except (KeyError, TypeError, ValueError) as e:
                if isinstance(e, InvalidInputError):
                    raise InvalidInputError(f"{path}: cell ({r}, {c}): {e}") from e
                raise InvalidInputError(f"{path}: malformed cell ({r}, {c})") from e
        grid.append(row)
    logger.info(f"Loaded {len(rows)}x{len(cols)} series from {path}")
    return TimeSeriesDataset(grid, rows, cols)


def write_dataset_json(dataset: TimeSeriesDataset, path: str):
    write_json({
        "rows": dataset.row_ids,
        "cols": dataset.col_ids,
        "series": {
            f"{dataset.row_ids[i]}|{dataset.col_ids[j]}": {"interval": cell.sample_interval, "values": cell.values.tolist()}
            for i, j, cell in dataset.cells()
        },
    }, path)


def read_dataset(path: str) -> TimeSeriesDataset:
    if path.lower().endswith(".json"):
        return read_dataset_json(path)
    return read_dataset_csv(path)


def write_grid(grid: CoefficientGrid, path: str):
    write_json(grid.to_dict(), path)


def read_grid(path: str) -> CoefficientGrid:
    grid = CoefficientGrid.from_dict(read_json(path))
    logger.info(f"Loaded {grid.n}x{grid.p}x{grid.m} coefficient grid from {path}")
    return grid


def write_model(state: ModelState, path: str):
    write_json(state.to_dict(), path)


def read_model(path: str) -> ModelState:
    return ModelState.from_dict(read_json(path))


def write_partition(partition: PartitionPair, row_ids: Sequence[str], col_ids: Sequence[str], prefix: str):
    """<prefix>_rows.csv holds one line per (observation, column cluster)."""
    L, n = partition.row_labels.shape
    rows = pd.DataFrame({
        "row_id": np.repeat(np.asarray(row_ids, dtype=object), L),
        "col_cluster": np.tile(np.arange(L), n),
        "row_cluster": partition.row_labels.T.ravel(),
    })
    cols = pd.DataFrame({"col_id": list(col_ids), "col_cluster": partition.col_labels})
    rows.to_csv(f"{prefix}_rows.csv", index=False)
    cols.to_csv(f"{prefix}_cols.csv", index=False)


def read_partition(prefix: str) -> Tuple[PartitionPair, List[str], List[str]]:
    rows_path, cols_path = f"{prefix}_rows.csv", f"{prefix}_cols.csv"
    cols = _read_csv(cols_path, ["col_id", "col_cluster"])
    rows = _read_csv(rows_path, ["row_id", "col_cluster", "row_cluster"])
    col_labels = _numeric(cols, "col_cluster", cols_path).astype(int).to_numpy()
    rows = rows.assign(
        col_cluster=_numeric(rows, "col_cluster", rows_path).astype(int),
        row_cluster=_numeric(rows, "row_cluster", rows_path).astype(int),
    )
    if (col_labels < 0).any() or (rows["row_cluster"] < 0).any():
        raise InvalidInputError(f"{prefix}: cluster labels must be nonnegative")

    L = int(col_labels.max()) + 1
    row_ids = list(pd.unique(rows["row_id"]))
    table = rows.pivot_table(index="row_id", columns="col_cluster", values="row_cluster", aggfunc="first")
    table = table.reindex(index=row_ids, columns=range(L))
    if table.isna().any().any():
        raise InvalidInputError(f"{rows_path}: every observation needs a row cluster in each of the {L} column clusters")
    partition = PartitionPair(col_labels, table.to_numpy(dtype=int).T)
    return partition, row_ids, list(cols["col_id"])


def align_partition(partition: PartitionPair, row_ids: Sequence[str], col_ids: Sequence[str],
                    ref_row_ids: Sequence[str], ref_col_ids: Sequence[str]) -> PartitionPair:
    """Reorders a partition so its identifiers follow the reference order."""
    if set(row_ids) != set(ref_row_ids) or set(col_ids) != set(ref_col_ids):
        raise InvalidInputError("partitions cover different observations or features")
    row_pos = {r: i for i, r in enumerate(row_ids)}
    col_pos = {c: j for j, c in enumerate(col_ids)}
    rows = [row_pos[r] for r in ref_row_ids]
    cols = [col_pos[c] for c in ref_col_ids]
    return PartitionPair(partition.col_labels[cols], partition.row_labels[:, rows])


def write_trace(trace: Sequence[float], path: str):
    pd.DataFrame({"iteration": np.arange(len(trace)), "loglik": list(trace)}).to_csv(path, index=False)


def read_trace(path: str) -> List[float]:
    df = _read_csv(path, ["iteration", "loglik"])
    return _numeric(df, "loglik", path).tolist()


def run_records(results: Sequence[Optional[SemGibbsResult]]) -> List[Dict]:
    records = []
    for index, result in enumerate(results):
        if result is None:
            records.append({"run": index, "failed": True})
        else:
            records.append({"run": index, "failed": False, **result.summary()})
    return records


def write_runs(results: Sequence[Optional[SemGibbsResult]], path: str):
    write_json(run_records(results), path)


def read_runs(path: str) -> List[Dict]:
    records = read_json(path)
    if not isinstance(records, list):
        raise InvalidInputError(f"{path}: expected a list of run records")
    return records


def write_fit(result: SemGibbsResult, grid: CoefficientGrid, output_dir: str,
              runs: Sequence[Optional[SemGibbsResult]] = None):
    """model.json, partition_{rows,cols}.csv, trace.csv, runs.json and structure.json."""
    os.makedirs(output_dir, exist_ok=True)
    write_model(result.best_state, os.path.join(output_dir, "model.json"))
    write_partition(result.best_partition, grid.row_ids, grid.col_ids, os.path.join(output_dir, "partition"))
    write_trace(result.likelihood_trace, os.path.join(output_dir, "trace.csv"))
    write_runs(runs if runs is not None else [result], os.path.join(output_dir, "runs.json"))
    write_json({
        **result.structure.to_dict(),
        "log_likelihood": result.best_log_likelihood,
        "converged": result.converged,
        "iterations_run": result.iterations_run,
        "degeneracy_events": result.degeneracy_events,
        "col_clusters": describe_structure(result.best_partition, result.structure, grid.col_ids),
    }, os.path.join(output_dir, "structure.json"))
    logger.info(f"Fit artifacts written to {output_dir}")


def read_fit(output_dir: str) -> Tuple[ModelState, PartitionPair, List[str], List[str]]:
    model_path = os.path.join(output_dir, "model.json")
    if not os.path.exists(model_path):
        raise InvalidInputError(f"no fitted model in {output_dir}")
    state = read_model(model_path)
    partition, row_ids, col_ids = read_partition(os.path.join(output_dir, "partition"))
    partition.validate(state.structure)
    return state, partition, row_ids, col_ids
