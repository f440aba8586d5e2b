"""
Command-line entry point.

    python cli.py generate --output-dir data
    python cli.py transform --input data/dataset.csv --output-dir data
    python cli.py fit --grid data/grid.json --L 3 --K 3,2,2 --output-dir fit
    python cli.py select --grid data/grid.json --output-dir select
    python cli.py evaluate fit/partition data/truth

Exit codes: 0 success, 2 input error, 3 degenerate structure,
4 too many degenerate cells.
"""

import argparse
import logging
import os
import sys
from typing import List, Optional

import numpy as np
import pandas as pd

import data_io
from config import RunConfig, resolve
from datagen import GenerativeSpec, benchmark_spec, generate
from evaluation import partition_views
from exceptions import (
    DegenerateSignalError,
    DegenerateStructureError,
    FunCLBMError,
    InvalidInputError,
    NumericError,
)
from experiments import adequacy_study, compare_initializations, stability_study, truth_structure
from inference import best_of, run_many
from initialization import KINDS, make_initializer
from model_core import CoClusterStructure, PartitionPair
from model_selection import icl_frame, select
from signal_transform import METHODS, transform_dataset

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEGENERATE_STRUCTURE = 3
EXIT_DEGENERATE_CELLS = 4


def _settings(args: argparse.Namespace) -> RunConfig:
    flags = {key: value for key, value in vars(args).items() if key not in ("command", "config", "handler")}
    return resolve(flags, args.config)


def _structure(args: argparse.Namespace) -> Optional[CoClusterStructure]:
    if args.L is None and args.K is None:
        return None
    if args.L is None or args.K is None:
        raise InvalidInputError("--L and --K must be given together")
    return CoClusterStructure.parse(args.L, args.K)


def _load_truth(prefix: str, grid) -> PartitionPair:
    partition, row_ids, col_ids = data_io.read_partition(prefix)
    return data_io.align_partition(partition, row_ids, col_ids, grid.row_ids, grid.col_ids)


def cmd_generate(args) -> int:
    cfg = _settings(args)
    if args.spec:
        data = data_io.read_json(args.spec)
        data.setdefault("seed", cfg.seed)
        spec = GenerativeSpec.from_dict(data)
    else:
        spec = benchmark_spec(seed=cfg.seed)
    if args.noise_sd is not None or args.series_length is not None:
        data = spec.to_dict()
        if args.noise_sd is not None:
            data["noise_sd"] = args.noise_sd
            data["shift_sd"] = None
        if args.series_length is not None:
            data["series_length"] = args.series_length
        spec = GenerativeSpec.from_dict(data)

    dataset, truth = generate(spec)
    os.makedirs(cfg.output_dir, exist_ok=True)
    data_io.write_dataset_csv(dataset, os.path.join(cfg.output_dir, "dataset.csv"))
    data_io.write_partition(truth, dataset.row_ids, dataset.col_ids, os.path.join(cfg.output_dir, "truth"))
    data_io.write_json(spec.to_dict(), os.path.join(cfg.output_dir, "generative_spec.json"))
    logger.info(f"Dataset and ground truth written to {cfg.output_dir}")
    return EXIT_OK


def cmd_transform(args) -> int:
    cfg = _settings(args)
    if not cfg.input_path:
        raise InvalidInputError("--input is required")
    dataset = data_io.read_dataset(cfg.input_path)
    grid = transform_dataset(dataset, cfg.transform_length, cfg.transform_method)

    os.makedirs(cfg.output_dir, exist_ok=True)
    data_io.write_grid(grid, os.path.join(cfg.output_dir, "grid.json"))
    data_io.write_json({
        "n": grid.n,
        "p": grid.p,
        "m": grid.m,
        "gap": grid.grid.gap,
        "method": grid.method,
        "n_degenerate": grid.n_degenerate,
    }, os.path.join(cfg.output_dir, "transform_summary.json"))
    logger.info(f"Coefficient grid {grid.n}x{grid.p}x{grid.m} written to {cfg.output_dir}")
    return EXIT_OK


def cmd_fit(args) -> int:
    cfg = _settings(args)
    structure = _structure(args)
    if structure is None:
        raise InvalidInputError("fit needs --L and --K")
    grid = data_io.read_grid(cfg.input_path)

    initializer = make_initializer(cfg.init, cfg.sem)
    runs = run_many(grid, structure, cfg.sem, cfg.n_runs, initializer, n_jobs=cfg.n_jobs, progress=cfg.progress)
    result = best_of(runs)
    if not result.converged:
        logger.warning(f"Best run stopped at max_iterations={cfg.sem.max_iterations} without converging.")
    logger.info(f"Best of {cfg.n_runs} runs: loglik {result.best_log_likelihood:.4f} (seed {result.seed})")
    data_io.write_fit(result, grid, cfg.output_dir, runs)
    return EXIT_OK


def cmd_select(args) -> int:
    cfg = _settings(args)
    grid = data_io.read_grid(cfg.input_path)
    outcome = select(grid, cfg.selection)

    os.makedirs(cfg.output_dir, exist_ok=True)
    icl_frame(outcome.icl_table).to_csv(os.path.join(cfg.output_dir, "icl_table.csv"), index=False)
    icl_frame(outcome.funlbm_table).to_csv(os.path.join(cfg.output_dir, "funlbm_table.csv"), index=False)
    data_io.write_json({
        **outcome.best_structure.to_dict(),
        "icl": outcome.icl_table[outcome.best_structure].icl,
        "strategy": cfg.selection.strategy,
        "search_fits": outcome.search_fits,
        "refinement_fits": outcome.refinement_fits,
        "candidates_evaluated": outcome.candidates_evaluated,
    }, os.path.join(cfg.output_dir, "selection.json"))
    data_io.write_fit(outcome.best_result, grid, cfg.output_dir)
    logger.info(f"Selected L={outcome.best_structure.L}, K=({outcome.best_structure.key()}) "
                f"after {outcome.candidates_evaluated} fits")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est, est_rows, est_cols = data_io.read_partition(args.estimate)
    truth, truth_rows, truth_cols = data_io.read_partition(args.truth)
    truth = data_io.align_partition(truth, truth_rows, truth_cols, est_rows, est_cols)
    scores = partition_views(est, truth)
    if args.output:
        data_io.write_json(scores, args.output)
    print(pd.Series(scores).to_json())
    return EXIT_OK


def cmd_plotdata(args) -> int:
    cfg = _settings(args)
    grid = data_io.read_grid(cfg.input_path)
    state, partition, row_ids, col_ids = data_io.read_fit(args.fit_dir)
    partition = data_io.align_partition(partition, row_ids, col_ids, grid.row_ids, grid.col_ids)
    os.makedirs(cfg.output_dir, exist_ok=True)

    coefficient_columns = [f"c{u}" for u in range(grid.m)]
    for ell in range(state.structure.L):
        columns = partition.columns_of(ell)
        for k in range(state.structure.K[ell]):
            rows = np.flatnonzero(partition.row_labels[ell] == k)
            cells = grid.coeffs[np.ix_(rows, columns)].reshape(-1, grid.m)
            loadings = state.block(k, ell).loadings
            reconstructed = (cells @ loadings) @ loadings.T
            df = pd.DataFrame(reconstructed, columns=coefficient_columns)
            df.insert(0, "col_id", [grid.col_ids[j] for _ in rows for j in columns])
            df.insert(0, "row_id", [grid.row_ids[i] for i in rows for _ in columns])
            df.to_csv(os.path.join(cfg.output_dir, f"block_l{ell}_k{k}.csv"), index=False)

    if args.truth:
        truth = _load_truth(args.truth, grid)
        records = []
        for record in data_io.read_runs(os.path.join(args.fit_dir, "runs.json")):
            if record.get("failed"):
                continue
            run_partition = PartitionPair.from_dict(record["partition"])
            records.append({"run": record["run"], "loglik": record["log_likelihood"],
                            **partition_views(run_partition, truth)})
        pd.DataFrame(records, columns=["run", "loglik", "row_ari", "col_ari", "block_ari"]).to_csv(
            os.path.join(cfg.output_dir, "scatter.csv"), index=False)
    logger.info(f"Plot data written to {cfg.output_dir}")
    return EXIT_OK


def _experiment_inputs(args):
    cfg = _settings(args)
    grid = data_io.read_grid(cfg.input_path)
    truth = _load_truth(args.truth, grid)
    structure = _structure(args) or truth_structure(truth)
    os.makedirs(cfg.output_dir, exist_ok=True)
    return cfg, grid, truth, structure


def cmd_compare_init(args) -> int:
    cfg, grid, truth, structure = _experiment_inputs(args)
    records, summary = compare_initializations(grid, truth, cfg.sem, structure, n_runs=cfg.n_runs,
                                               strategies=args.strategies, n_jobs=cfg.n_jobs,
                                               progress=cfg.progress)
    records.to_csv(os.path.join(cfg.output_dir, "init_runs.csv"), index=False)
    summary.to_csv(os.path.join(cfg.output_dir, "init_summary.csv"), index=False)
    print(summary.to_string())
    return EXIT_OK


def cmd_adequacy(args) -> int:
    cfg, grid, truth, structure = _experiment_inputs(args)
    records, correlations = adequacy_study(grid, truth, cfg.sem, structure, n_runs=cfg.n_runs,
                                           init=cfg.init, n_jobs=cfg.n_jobs)
    records.to_csv(os.path.join(cfg.output_dir, "adequacy_runs.csv"), index=False)
    data_io.write_json(correlations, os.path.join(cfg.output_dir, "adequacy.json"))
    return EXIT_OK


def cmd_stability(args) -> int:
    cfg, grid, truth, structure = _experiment_inputs(args)
    try:
        launches = [int(k) for k in args.launches.split(",") if k.strip()]
    except ValueError as e:
        raise InvalidInputError(f"invalid --launches '{args.launches}'") from e
    if not launches or min(launches) < 1:
        raise InvalidInputError("--launches needs positive integers")
    table = stability_study(grid, truth, cfg.sem, structure, launches=launches, repetitions=args.repetitions,
                            init=cfg.init, n_jobs=cfg.n_jobs, progress=cfg.progress)
    table.to_csv(os.path.join(cfg.output_dir, "stability.csv"), index=False)
    print(table.to_string())
    return EXIT_OK


def _common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", help="JSON file of settings (flags take precedence)")
    parser.add_argument("--seed", type=int, help="base seed (env: FUNCLBM_SEED)")
    parser.add_argument("--output-dir", dest="output_dir", help="output directory (env: FUNCLBM_OUTPUT_DIR)")
    parser.add_argument("--n-jobs", dest="n_jobs", type=int, help="worker processes (env: FUNCLBM_N_JOBS)")
    parser.add_argument("--progress", action="store_true", default=None, help="show progress bars")
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true")
    verbosity.add_argument("-q", "--quiet", action="store_true")


def _structure_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--L", type=int, help="number of column clusters")
    parser.add_argument("--K", help="row-cluster counts per column cluster, e.g. 3,2,2")


def _sem_flags(parser: argparse.ArgumentParser):
    parser.add_argument("--n-runs", dest="n_runs", type=int, help="concurrent SEM-Gibbs runs (env: FUNCLBM_N_RUNS)")
    parser.add_argument("--init", choices=KINDS, help="initialization strategy")
    parser.add_argument("--max-iterations", dest="max_iterations", type=int)
    parser.add_argument("--burn-in", dest="burn_in", type=int)
    parser.add_argument("--subspace-dim", dest="subspace_dim",
                        help="fixed dimension (int) or variance threshold in (0, 1)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="funclbm", description="Co-clustering of time series with FunCLBM")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="write a synthetic dataset and its true partition")
    _common(p)
    p.add_argument("--spec", help="generative spec JSON (default: the 90x90 benchmark)")
    p.add_argument("--noise-sd", dest="noise_sd", type=float)
    p.add_argument("--series-length", dest="series_length", type=int)
    p.set_defaults(handler=cmd_generate)

    p = sub.add_parser("transform", help="periodogram coefficients of every series")
    _common(p)
    p.add_argument("--input", help="long-format CSV or JSON dataset")
    p.add_argument("--length", type=int, help="number of grid frequencies (env: FUNCLBM_TRANSFORM_LENGTH)")
    p.add_argument("--method", choices=METHODS)
    p.set_defaults(handler=cmd_transform)

    p = sub.add_parser("fit", help="fit one structure with concurrent SEM-Gibbs runs")
    _common(p)
    p.add_argument("--grid", dest="input", required=True)
    _structure_flags(p)
    _sem_flags(p)
    p.set_defaults(handler=cmd_fit)

    p = sub.add_parser("select", help="choose the structure by ICL")
    _common(p)
    p.add_argument("--grid", dest="input", required=True)
    p.add_argument("--strategy", choices=("grid", "greedy"))
    p.add_argument("--L-max", dest="L_max", type=int)
    p.add_argument("--K-max", dest="K_max", type=int)
    p.add_argument("--runs-per-candidate", dest="runs_per_candidate", type=int)
    _sem_flags(p)
    p.set_defaults(handler=cmd_select)

    p = sub.add_parser("evaluate", help="row, column and block ARI of two partitions")
    p.add_argument("estimate", help="partition prefix (<prefix>_rows.csv, <prefix>_cols.csv)")
    p.add_argument("truth", help="reference partition prefix")
    p.add_argument("--output", help="JSON file for the scores")
    p.add_argument("-v", "--verbose", action="store_true")
    p.add_argument("-q", "--quiet", action="store_true")
    p.set_defaults(handler=cmd_evaluate, config=None)

    p = sub.add_parser("plotdata", help="per-block reconstructions and the loglik / ARI scatter")
    _common(p)
    p.add_argument("--grid", dest="input", required=True)
    p.add_argument("--fit-dir", dest="fit_dir", required=True)
    p.add_argument("--truth", help="true partition prefix")
    p.set_defaults(handler=cmd_plotdata)

    for name, handler, text in (
        ("compare-init", cmd_compare_init, "compare initialization strategies against the truth"),
        ("adequacy", cmd_adequacy, "correlate final log-likelihood with ARI"),
        ("stability", cmd_stability, "best-of-k block ARI for several launch counts"),
    ):
        p = sub.add_parser(name, help=text)
        _common(p)
        p.add_argument("--grid", dest="input", required=True)
        p.add_argument("--truth", required=True, help="true partition prefix")
        _structure_flags(p)
        _sem_flags(p)
        if name == "compare-init":
            p.add_argument("--strategies", nargs="+", choices=KINDS, default=list(KINDS))
        if name == "stability":
            p.add_argument("--launches", default="1,4,8")
            p.add_argument("--repetitions", type=int, default=10)
        p.set_defaults(handler=handler)

    return parser


def main(argv: List[str] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else logging.WARNING if args.quiet else logging.INFO
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        return args.handler(args)
    except DegenerateSignalError as e:
        logger.error(f"Degenerate input: {e}")
        return EXIT_DEGENERATE_CELLS
    except (DegenerateStructureError, NumericError) as e:
        logger.error(f"Degenerate structure: {e}")
        return EXIT_DEGENERATE_STRUCTURE
    except (InvalidInputError, FunCLBMError) as e:
        logger.error(f"Invalid input: {e}")
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
