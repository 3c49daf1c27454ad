import argparse
import json
import logging
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

from dotenv import load_dotenv

from data.checkpoints import (
    load_checkpoint,
    load_individual,
    load_network,
    save_checkpoint,
)
from data.datasets import DatasetBundle, LabeledDataset, synthetic_blobs
from data.idx import load_mnist
from data.splits import plan_splits
from model.compression.baselines import (
    compare_controls,
    filter_norm_mask,
    weight_sparsity_stats,
)
from model.compression.evolution import EvolutionLog, final_train_config, run_ecs
from model.compression.genome import Individual, MaskLayout, compact_network
from model.config.model_config import derive_seed
from model.config.run_config import (
    COMMANDS,
    DATA_DIR_ENV,
    ConfigError,
    RunConfig,
    parse_config,
)
from model.core.network import TrainedNetwork, evaluate_error, init_network
from model.core.spec import NetworkSpec, lenet_spec, tiny_spec
from model.core.training import train
from model.evaluation.filters import export_filters, mean_pairwise_distance
from model.evaluation.plots import plot_evolution
from model.evaluation.report import emit_table, overall_report, report_records

logger = logging.getLogger(__name__)

SYNTHETIC_DIMS = (8, 8, 1)


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=str, help="INI file with run settings")
    common.add_argument("--preset", choices=["full", "desk"])
    common.add_argument("--seed", type=int, help="Master seed")
    common.add_argument("--out", type=str, help="Output directory")
    common.add_argument("--data-dir", type=str, help=f"MNIST IDX dir ({DATA_DIR_ENV})")
    common.add_argument("--dataset", choices=["mnist", "synthetic"])
    common.add_argument("--checkpoint", type=str, help="Network checkpoint")
    common.add_argument("--individual", type=str, help="Individual text or checkpoint")
    common.add_argument("--compressed", type=str, help="Compressed network checkpoint")
    common.add_argument("--log", type=str, help="Evolution log (jsonl)")
    common.add_argument("--lambda", dest="lam", type=float)
    common.add_argument("--variant", type=str, help="Fitness variant")
    common.add_argument("--estimator", choices=["fine-tune", "surrogate"])
    common.add_argument("--finetune-steps", type=int)
    common.add_argument("--population", type=int)
    common.add_argument("--iterations", type=int)
    common.add_argument("--s1", type=float)
    common.add_argument("--s2", type=float)
    common.add_argument("--s3", type=float)
    common.add_argument("--workers", type=int)
    common.add_argument("--epochs", type=int)
    common.add_argument("--tau", type=float, help="Pruning threshold for baselines")
    common.add_argument("--log-level", choices=["DEBUG", "INFO", "WARNING", "ERROR"])

    parser = argparse.ArgumentParser(
        description="Compress CNN filters with an evolutionary search."
    )
    subparsers = parser.add_subparsers(dest="command", required=True)
    helps = {
        "train": "Train the baseline network and save a checkpoint",
        "compress": "Search for the best filter mask and fine-tune the result",
        "evaluate": "Measure the top-1 error of a checkpoint",
        "report": "Write compression tables, filter images and plots",
        "baseline": "Run the pruning baselines and control experiments",
    }
    for command in COMMANDS:
        subparsers.add_parser(command, parents=[common], help=helps[command])
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    return {
        "data": {"data_dir": args.data_dir, "dataset": args.dataset},
        "train": {"epochs": args.epochs},
        "ga": {
            "population_size": args.population,
            "max_iterations": args.iterations,
            "s1": args.s1,
            "s2": args.s2,
            "s3": args.s3,
            "workers": args.workers,
        },
        "fitness": {
            "lambda": args.lam,
            "variant": args.variant,
            "estimator": args.estimator,
            "finetune_steps": args.finetune_steps,
        },
        "run": {
            "seed": args.seed,
            "out": args.out,
            "preset": args.preset,
            "checkpoint": args.checkpoint,
            "individual": args.individual,
            "compressed": args.compressed,
            "log": args.log,
            "tau": args.tau,
            "log_level": args.log_level,
        },
    }


def network_spec(config: RunConfig) -> NetworkSpec:
    if config.data.dataset == "synthetic":
        return tiny_spec(config.data.synthetic_classes)
    return lenet_spec()


def load_data(config: RunConfig) -> DatasetBundle:
    """Training source split into train / held-out eval / fine-tune subset."""
    test: Optional[LabeledDataset] = None
    if config.data.dataset == "synthetic":
        source = synthetic_blobs(
            config.data.synthetic_classes,
            config.data.synthetic_per_class,
            SYNTHETIC_DIMS,
            seed=derive_seed(config.seed, "synthetic"),
        )
    else:
        if not config.data.data_dir:
            raise ConfigError(
                "data.data_dir", f"set --data-dir or the {DATA_DIR_ENV} variable"
            )
        source = load_mnist(config.data.data_dir, "train")
        test = load_mnist(config.data.data_dir, "test")

    eval_size = config.data.eval_size
    if eval_size >= len(source):
        eval_size = max(1, len(source) // 5)
        logger.warning(
            f"eval_size too large for {len(source)} examples, using {eval_size}"
        )
    finetune_size = min(config.data.finetune_size, len(source) - eval_size)
    if finetune_size < config.data.finetune_size:
        logger.warning(f"Fine-tune subset capped at {finetune_size} examples")
    plan = plan_splits(
        len(source), eval_size, finetune_size, derive_seed(config.seed, "splits")
    )
    return plan.bundle(source, test)


def require_path(value: Optional[str], key: str) -> Path:
    if not value:
        raise ConfigError(key, "required for this command")
    path = Path(value)
    if not path.exists():
        raise ConfigError(key, f"{path} does not exist")
    return path


def read_individual(path: Path, layout: MaskLayout) -> Individual:
    """Individual from a checkpoint file or a plain '0'/'1' text line."""
    if path.read_bytes().startswith(b"ECS-CHECKPOINT"):
        ind = load_individual(path)
        if ind.layout != layout:
            raise ConfigError("run.individual", "layout does not match the network")
        return ind
    return Individual.from_text(path.read_text(encoding="utf-8"), layout)


def write_json(path: Path, data: Any) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return path


def verify_artifacts(paths: Sequence[Path]) -> None:
    for path in paths:
        if not path.is_file() or path.stat().st_size == 0:
            raise RuntimeError(f"artifact {path} was not written")
        if path.suffix == ".ckpt":
            load_checkpoint(path)


def command_train(config: RunConfig, data: DatasetBundle) -> List[Path]:
    spec = network_spec(config)
    settings = config.train_config()
    net = init_network(spec, derive_seed(config.seed, "init"))
    logger.info(f"Training {spec.describe()} on {len(data.train)} examples")
    trained = train(net, data.train, settings)
    error = evaluate_error(trained, data.final)
    logger.info(f"Baseline error on {data.final.name}: {error:.4f}")
    out = config.out_dir
    return [
        save_checkpoint(trained, out / "network.ckpt"),
        write_json(
            out / "train_summary.json", {"error": error, "dataset": data.final.name}
        ),
    ]


def command_compress(config: RunConfig, data: DatasetBundle) -> List[Path]:
    net = load_network(require_path(config.run.checkpoint, "run.checkpoint"))
    result = run_ecs(net, data, config.ga_config(), config.fitness_config())
    out = config.out_dir
    text_path = out / "best_individual.txt"
    text_path.write_text(result.best.to_text() + "\n", encoding="utf-8")
    log_path = out / "evolution_log.jsonl"
    result.log.write(log_path)
    summary = {
        "best_individual": result.best.to_text(),
        "fitness": result.report.to_dict(),
        "final_error": result.final_error,
        "generations": len(result.log),
        "best_fitness_monotone": result.log.is_monotone(),
    }
    return [
        text_path,
        save_checkpoint(result.best, out / "best_individual.ckpt"),
        save_checkpoint(result.network, out / "compressed.ckpt"),
        log_path,
        plot_evolution(result.log, out / "evolution.png"),
        write_json(out / "compress_summary.json", summary),
    ]


def command_evaluate(config: RunConfig, data: DatasetBundle) -> List[Path]:
    net = load_network(require_path(config.run.checkpoint, "run.checkpoint"))
    error = evaluate_error(net, data.final)
    logger.info(f"Top-1 error on {data.final.name}: {error:.4f}")
    summary = {
        "checkpoint": config.run.checkpoint,
        "dataset": data.final.name,
        "error": error,
        "accuracy": 1.0 - error,
    }
    return [write_json(config.out_dir / "evaluation.json", summary)]


def _compressed_network(
    config: RunConfig, net: TrainedNetwork, ind: Individual
) -> TrainedNetwork:
    """The fine-tuned compressed checkpoint when given, else the bare compaction."""
    compact = compact_network(net, ind)
    if not config.run.compressed:
        return compact
    candidate = load_network(require_path(config.run.compressed, "run.compressed"))
    if candidate.spec != compact.spec:
        raise ConfigError(
            "run.compressed", "architecture does not match the individual"
        )
    return candidate


def load_pair(config: RunConfig) -> Tuple[TrainedNetwork, Individual]:
    net = load_network(require_path(config.run.checkpoint, "run.checkpoint"))
    layout = MaskLayout.from_spec(net.spec)
    ind = read_individual(require_path(config.run.individual, "run.individual"), layout)
    return net, ind


def command_report(config: RunConfig, data: DatasetBundle) -> List[Path]:
    net, ind = load_pair(config)
    compressed = _compressed_network(config, net, ind)
    before = 1.0 - evaluate_error(net, data.final)
    after = 1.0 - evaluate_error(compressed, data.final)
    report = overall_report(net, ind, (before, after))

    out = config.out_dir
    table_path = out / "report.txt"
    table_path.write_text(emit_table(report), encoding="utf-8")
    records_path = out / "report.jsonl"
    records_path.write_text(
        "".join(json.dumps(r, sort_keys=True) + "\n" for r in report_records(report)),
        encoding="utf-8",
    )
    export_filters(net, 1, out / "filters" / "original")
    export_filters(compressed, 1, out / "filters" / "compressed")
    distances = {
        "original_layer1": mean_pairwise_distance(net.conv_weight(0)),
        "compressed_layer1": mean_pairwise_distance(compressed.conv_weight(0)),
    }
    paths = [table_path, records_path, write_json(out / "filter_stats.json", distances)]
    if config.run.log:
        log_text = require_path(config.run.log, "run.log").read_text(encoding="utf-8")
        log = EvolutionLog.from_jsonl(log_text)
        paths.append(plot_evolution(log, out / "evolution.png"))
    print(emit_table(report), end="")
    return paths


def command_baseline(config: RunConfig, data: DatasetBundle) -> List[Path]:
    net, ind = load_pair(config)
    compressed = _compressed_network(config, net, ind)
    tau = config.run.tau if config.run.tau is not None else 0.0
    sparsity = [
        {"layer": s.layer, "total": s.total, "zeros": s.zeros, "fraction": s.fraction}
        for s in weight_sparsity_stats(net, tau)
    ]
    norm_mask = filter_norm_mask(net, tau, config.seed)
    rows = compare_controls(
        net,
        data,
        compressed,
        final_train_config(config.fitness_config(), config.seed),
        config.train_config(),
        seed=derive_seed(config.seed, "controls"),
        tau=config.run.tau,
    )
    out = config.out_dir
    summary = {
        "tau": tau,
        "weight_sparsity": sparsity,
        "filter_norm_individual": norm_mask.to_text(),
        "controls": rows,
    }
    return [write_json(out / "baseline.json", summary)]


HANDLERS = {
    "train": command_train,
    "compress": command_compress,
    "evaluate": command_evaluate,
    "report": command_report,
    "baseline": command_baseline,
}


def run_command(config: RunConfig) -> List[Path]:
    """Execute one command and return the artifacts it wrote."""
    out = config.out_dir
    out.mkdir(parents=True, exist_ok=True)
    snapshot = config.write_snapshot(out)
    data = load_data(config)
    artifacts = [snapshot] + HANDLERS[config.command](config, data)
    verify_artifacts(artifacts)
    for path in artifacts:
        logger.info(f"Wrote {path}")
    return artifacts


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=getattr(logging, args.log_level or "INFO"),
        format="%(asctime)s - %(levelname)s - %(message)s",
    )
    load_dotenv()
    try:
        config = parse_config(args.command, args.config, overrides_from_args(args))
        logging.getLogger().setLevel(config.run.log_level)
        run_command(config)
    except Exception as e:
        logger.error(f"{args.command} failed: {e}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
