"""Command line interface.

Subcommands:
  run           one experiment cell (train/prune/handle loop)
  sweep         a grid of cells from a JSON grid file
  report        CSV tables + figures from completed runs
  inspect-mask  dump one layer's mask/weight grid as CSV

Flags mirror ExperimentConfig fields. When --config is given, values
from the file override conflicting flags. The dataset root comes from
the SPARSELAB_DATA environment variable (default ./data).
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .harness import ExperimentConfig, expand_grid, run_experiment, run_id, run_sweep

log = logging.getLogger("sparselab")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON config file; overrides flags")
    p.add_argument("--method", help="pruning method")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--arch", dest="architecture", default="lenet",
                   help="builder name (lenet/alexnet/vgg11) or architecture JSON path")
    p.add_argument("--dataset", default="mnist", choices=["mnist", "cifar10"])
    p.add_argument("--epochs", dest="epochs_per_iteration", type=int, default=30)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--iterations", type=int, default=20)
    p.add_argument("--fraction", type=float, default=0.2)
    p.add_argument("--scope", default="local", choices=["local", "global"])
    p.add_argument("--direction", default="prune_low", choices=["prune_low", "prune_high"])
    p.add_argument("--handling", default="rewind",
                   choices=["rewind", "finetune", "sign_sigma", "sign_only"])
    p.add_argument("--capture-epoch", dest="checkpoint_capture_epoch", type=int, default=0)
    p.add_argument("--output-dir", default="runs")


def _config_from_args(args) -> ExperimentConfig:
    fields = (
        "method seed architecture dataset epochs_per_iteration lr batch_size "
        "iterations fraction scope direction handling checkpoint_capture_epoch output_dir"
    ).split()
    doc = {k: getattr(args, k) for k in fields if getattr(args, k) is not None}
    if args.config:
        doc.update(json.loads(Path(args.config).read_text()))
    if "method" not in doc:
        raise SystemExit("a pruning --method (or config file) is required")
    return ExperimentConfig(**doc)


def _cmd_run(args) -> int:
    config = _config_from_args(args)
    record = run_experiment(config)
    print(f"{run_id(config)}: {record.status}")
    for k, acc in enumerate(record.accuracies):
        print(
            f"  iteration {k}: accuracy {acc:.2f}%"
            f"  explicit {record.explicit_fraction[k]:.3f}"
            f"  effective {record.effective_fraction[k]:.3f}"
        )
    return 0 if record.status == "complete" else 1


def _cmd_sweep(args) -> int:
    doc = json.loads(Path(args.grid).read_text())
    if args.output_dir:
        doc.setdefault("base", {})["output_dir"] = args.output_dir
    configs = expand_grid(doc)
    log.info("sweep: %d cells", len(configs))
    results = run_sweep(configs)
    failed = [r for r in results if r["status"] == "failed"]
    for r in results:
        print(f"{r['run_id']}: {r['status']}")
    return 1 if failed else 0


def _cmd_report(args) -> int:
    from . import reports

    out = Path(args.out)
    written = reports.generate(
        kind=args.kind,
        run_globs=args.runs,
        out_dir=out,
        reference=args.reference,
        members=args.members.split(",") if args.members else None,
        iteration=args.iteration,
        layer=args.layer,
        figures=not args.no_figures,
    )
    for path in written:
        print(path)
    return 0


def _cmd_inspect_mask(args) -> int:
    from . import reports

    written = reports.inspect_mask(
        run_dir=Path(args.run),
        iteration=args.iteration,
        layer=args.layer,
        out_dir=Path(args.out),
    )
    for path in written:
        print(path)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sparselab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="run one experiment cell")
    _add_config_flags(p_run)
    p_run.set_defaults(func=_cmd_run)

    p_sweep = sub.add_parser("sweep", help="run a grid of cells")
    p_sweep.add_argument("--grid", required=True, help="grid JSON: {base, axes|cells}")
    p_sweep.add_argument("--output-dir", default=None)
    p_sweep.set_defaults(func=_cmd_sweep)

    p_rep = sub.add_parser("report", help="emit CSV tables and figures from runs")
    p_rep.add_argument("--kind", required=True,
                       choices=["accuracy", "jaccard", "hamming", "stability",
                                "structuredness", "ensemble", "agreement", "trajectories"])
    p_rep.add_argument("--runs", required=True, nargs="+",
                       help="run directory globs, e.g. 'runs/acceptance/*'")
    p_rep.add_argument("--out", default="reports")
    p_rep.add_argument("--reference", default="l2_structured",
                       help="reference method for jaccard/hamming kinds")
    p_rep.add_argument("--members", default=None,
                       help="comma-separated methods for the ensemble kind (default: all)")
    p_rep.add_argument("--iteration", type=int, default=None,
                       help="iteration for agreement/ensemble (default: latest common)")
    p_rep.add_argument("--layer", default=None, help="layer name filter (e.g. conv2)")
    p_rep.add_argument("--no-figures", action="store_true", help="CSV only, skip PNGs")
    p_rep.set_defaults(func=_cmd_report)

    p_ins = sub.add_parser("inspect-mask", help="dump a layer's mask/weight grid as CSV")
    p_ins.add_argument("--run", required=True, help="run directory")
    p_ins.add_argument("--iteration", type=int, required=True)
    p_ins.add_argument("--layer", required=True, help="layer name, e.g. conv2")
    p_ins.add_argument("--out", default="reports")
    p_ins.set_defaults(func=_cmd_inspect_mask)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s",
                        datefmt="%H:%M:%S")
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
