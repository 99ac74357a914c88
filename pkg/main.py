import argparse
import os
import sys

from src.config import config_hash, load_config, load_config_from_env, validate, validate_pattern
from src.utils.errors import EstimationError, SensorError
from src.utils.logger import logger, set_verbose

DATASET_FILE = "dataset.txt"
SCAN_DATASET_FILE = "scan_dataset.txt"


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="JSON config file (defaults when absent)")
    common.add_argument("--seed", type=int, help="Master seed override")
    common.add_argument("--out", type=str, help="Output directory")
    common.add_argument("--jobs", type=int, help="Worker count (does not change results)")
    common.add_argument("--diagnostic-truth", action="store_true", help="Add hidden-truth columns")
    common.add_argument("--verbose", action="store_true", help="Debug logging")

    parser = argparse.ArgumentParser(description="Single-atom tweezer-array magnetometer twin")
    commands = parser.add_subparsers(dest="command", required=True)
    commands.add_parser("simulate", parents=[common], help="Simulate the interleaved experiment")
    estimate = commands.add_parser("estimate", parents=[common], help="Field map, gradients and sensitivity")
    estimate.add_argument("dataset", type=str, help="Dataset file written by simulate")
    commands.add_parser("rearrange", parents=[common], help="Repeated assembly of the target pattern")
    commands.add_parser("scan", parents=[common], help="Scanning-probe run and ΔB line fit")
    return parser


def resolve_config(args):
    cfg = load_config_from_env(load_config(args.config))
    if args.seed is not None:
        cfg.master_seed = args.seed
    if args.jobs is not None:
        cfg.jobs = args.jobs
    if args.out:
        cfg.out_dir = args.out
    if args.diagnostic_truth:
        cfg.diagnostic_truth = True
    validate(cfg)
    return cfg


def cmd_simulate(cfg) -> str:
    from src.sensor.engine import ExperimentEngine
    from src.services.dataset_store import dataset_store

    dataset = ExperimentEngine.from_config(cfg).run_experiment(jobs=cfg.jobs or None)
    path = os.path.join(cfg.out_dir, DATASET_FILE)
    dataset_store.write_dataset(dataset, path)
    return path


def write_estimates(dataset, source_sha256: str, out_dir: str, prefix: str, jobs):
    """Field map, gradients and summary for one dataset; returns the summary text"""
    from src.analysis.field_map import build_field_map, fit_plane, fit_scan_gradient, mean_row_gradient
    from src.analysis.report import field_map_table, gradient_table, sensitivity, summary_report
    from src.services.dataset_store import dataset_store

    cfg = dataset.config or {}
    field_map = build_field_map(dataset, jobs=jobs)
    if not field_map.converged_sites():
        raise EstimationError("no key produced converged fits in both field states")

    rows = plane = scan = None
    fits = []
    if dataset.mode == "array":
        rows = mean_row_gradient(field_map)
        fits.extend(rows.fits)
        try:
            plane = fit_plane(field_map)
            fits.append(plane)
        except EstimationError as e:
            logger.warning(f"Plane fit skipped: {e}")
    else:
        try:
            scan = fit_scan_gradient(field_map)
            fits.append(scan)
        except EstimationError as e:
            logger.warning(f"Scan gradient skipped: {e}")

    report = sensitivity(
        field_map,
        stretch_factor=float(cfg.get("stretch_factor", 2.5)),
        cycle_rate=float(cfg.get("cycle_rate", 10.0)),
        integration_time=float(cfg.get("integration_time", 3600.0)),
        prepare_up_probability=float(cfg.get("prepare_up_probability", 0.30)),
    )
    summary = summary_report(field_map, source_sha256, rows=rows, plane=plane, report=report, scan=scan)

    dataset_store.write_text(os.path.join(out_dir, f"{prefix}field_map.txt"), field_map_table(field_map, source_sha256))
    dataset_store.write_text(os.path.join(out_dir, f"{prefix}gradients.txt"), gradient_table(fits, source_sha256))
    dataset_store.write_text(os.path.join(out_dir, f"{prefix}summary.txt"), summary)
    return summary


def cmd_estimate(cfg, dataset_path: str) -> str:
    from src.services.dataset_store import dataset_store

    source_sha256 = dataset_store.file_sha256(dataset_path)
    dataset = dataset_store.read_dataset(dataset_path)
    return write_estimates(dataset, source_sha256, cfg.out_dir, "", cfg.jobs or None)


def cmd_rearrange(cfg) -> str:
    from src.sensor.assembler import repeated_assembly
    from src.sensor.engine import ExperimentEngine
    from src.services.dataset_store import dataset_store

    validate_pattern(cfg)
    engine = ExperimentEngine.from_config(cfg)
    history = repeated_assembly(engine)
    header = f"# config_sha256={config_hash(cfg)}\n# master_seed={cfg.master_seed}\n"

    plan = history.representative_plan()
    trace = plan.trace(engine.geom) if plan is not None else "total_length_um=0.000 moves=0"
    dataset_store.write_text(os.path.join(cfg.out_dir, "assembly_plan.txt"), header + trace + "\n")
    summary = header + history.summary() + "\n"
    dataset_store.write_text(os.path.join(cfg.out_dir, "assembly_summary.txt"), summary)
    return summary


def cmd_scan(cfg) -> str:
    from src.sensor.engine import ExperimentEngine
    from src.services.dataset_store import dataset_store

    dataset = ExperimentEngine.from_config(cfg).scanning_probe_run(cfg.scan_positions, jobs=cfg.jobs or None)
    path = os.path.join(cfg.out_dir, SCAN_DATASET_FILE)
    source_sha256 = dataset_store.write_dataset(dataset, path)
    return write_estimates(dataset, source_sha256, cfg.out_dir, "scan_", cfg.jobs or None)


def main(argv=None) -> int:
    """Main entry point"""

    args = build_parser().parse_args(argv)
    set_verbose(args.verbose)

    try:
        cfg = resolve_config(args)
        logger.info(f"Command {args.command}: seed {cfg.master_seed}, output {cfg.out_dir}")

        if args.command == "simulate":
            print(cmd_simulate(cfg))
        elif args.command == "estimate":
            print(cmd_estimate(cfg, args.dataset), end="")
        elif args.command == "rearrange":
            print(cmd_rearrange(cfg), end="")
        elif args.command == "scan":
            print(cmd_scan(cfg), end="")
        return 0
    except KeyboardInterrupt:
        print("\nShutdown requested by user")
        return 1
    except SensorError as e:
        logger.error(f"{type(e).__name__}: {e}")
        return e.exit_code
    except Exception as e:
        logger.error(f"Fatal error: {e}")
        return 1


if __name__ == "__main__":
    sys.exit(main())
