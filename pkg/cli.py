"""
FFDI command-line entry.
Every subcommand reads an optional `key = value` config file plus --set
overrides and writes its outputs under --out.
Exit codes: 0 success, 1 usage/configuration error, 2 data error.
"""

import argparse
import os
import sys

import numpy as np

from ffdi.modules import analysis
from ffdi.modules.checkpoint import load_checkpoint
from ffdi.modules.config import load_train_config
from ffdi.modules.data import build_dataset, load_dataset_dir, write_dataset_dir
from ffdi.modules.errors import ConfigurationError, DataError, FfdiError, UsageError
from ffdi.modules.fdag import perturb_many
from ffdi.modules.image_io import read_image, write_image
from ffdi.modules.jobs import create_training_job, run_training_job
from ffdi.modules.logger import configure_logging, get_logger
from ffdi.modules.reporting import (
    read_feature_csv,
    read_report,
    write_features,
    write_report_pdf,
    write_table,
)
from ffdi.modules.spectral import decompose
from ffdi.modules.training import dataset_for, evaluate
from ffdi.modules.utils import atomic_write_text, csv_text, format_float, parse_list

logger = get_logger("ffdi.cli")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2


class ArgumentParser(argparse.ArgumentParser):
    """argparse that reports usage problems as UsageError instead of exiting with 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: {message}")


def _common():
    parent = ArgumentParser(add_help=False)
    parent.add_argument("--config", help="key = value config file")
    parent.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="config override (repeatable)")
    parent.add_argument("--out", help="output directory")
    parent.add_argument("--verbose", action="store_true", help="debug logging")
    return parent


def build_parser():
    common = _common()
    parser = ArgumentParser(prog="ffdi", description="Frequency-decomposed domain generalization at desk scale.")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="render the synthetic benchmark to a directory")
    p.add_argument("--format", choices=("ppm", "png"), default="ppm")

    p = sub.add_parser("decompose", parents=[common], help="split an image into LFI and HFI")
    p.add_argument("--in", dest="inputs", required=True, help="input image")
    p.add_argument("--r", type=int, help="frequency threshold (defaults to config r)")

    p = sub.add_parser("augment", parents=[common], help="apply FDAG to images")
    p.add_argument("--in", dest="inputs", nargs="+", required=True, help="input images")
    p.add_argument("--seed", type=int, help="base seed (defaults to noise_seed)")

    p = sub.add_parser("train", parents=[common], help="leave-one-domain-out training run")
    p.add_argument("--data", help="dataset directory (else rendered from config)")

    p = sub.add_parser("eval", parents=[common], help="accuracy of a checkpoint per domain")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data", help="dataset directory (else rendered from config)")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")

    p = sub.add_parser("adist", parents=[common], help="proxy A-distance")
    p.add_argument("--features", nargs=2, metavar=("A_CSV", "B_CSV"))
    p.add_argument("--data", help="dataset directory for the HFI/LFI table")
    p.add_argument("--r", type=int, help="frequency threshold for the HFI/LFI table")
    p.add_argument("--seed", type=int, default=0)

    p = sub.add_parser("sweep-r", parents=[common], help="held-out accuracy across frequency thresholds")
    p.add_argument("--data")
    p.add_argument("--r-values", default="2,4,8,12,16")

    for name, helptext in (
        ("ablate", "component ablation table"),
        ("compare-interaction", "addition / concatenation / bilinear / IIM"),
        ("ablate-fdag", "amplitude / phase perturbation ablation"),
        ("compare-augment", "standard / pixel noise / FDAG"),
    ):
        p = sub.add_parser(name, parents=[common], help=helptext)
        p.add_argument("--data")

    p = sub.add_parser("export-features", parents=[common], help="pooled features per sample")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.add_argument("--tap", choices=("f_E", "f_H", "f_L", "f_Z"), default="f_Z")
    p.add_argument("--split", choices=("all", "train", "test"), default="all")

    p = sub.add_parser("report", parents=[common], help="render a run directory's PDF report")
    p.add_argument("--run-dir", required=True)
    return parser


def _config(args):
    overrides = list(args.set)
    if args.out:
        overrides.append(("out_dir", args.out))
    if getattr(args, "data", None):
        overrides.append(("data_dir", args.data))
    return load_train_config(args.config, overrides=overrides)


def _stem(path):
    return os.path.splitext(os.path.basename(path))[0]


def cmd_gen_data(args, cfg):
    dataset = build_dataset(
        domains=list(cfg.domains),
        classes=cfg.model.num_classes,
        per_class_per_domain=cfg.per_class_per_domain,
        seed=cfg.dataset_seed,
        size=cfg.model.image_size,
    )
    write_dataset_dir(dataset, cfg.out_dir, fmt=args.format)
    print(f"{len(dataset)} images written to {cfg.out_dir}")


def cmd_decompose(args, cfg):
    image = read_image(args.inputs)
    r = cfg.model.r if args.r is None else args.r
    lfi, hfi = decompose(image, r)
    residual = float(np.abs(lfi + hfi - image).max())
    stem = os.path.join(cfg.out_dir, _stem(args.inputs))
    ext = os.path.splitext(args.inputs)[1].lower()
    write_image(f"{stem}.lfi{ext}", np.clip(lfi, 0.0, 1.0))
    write_image(f"{stem}.hfi{ext}", np.clip(hfi + 0.5, 0.0, 1.0))
    atomic_write_text(f"{stem}.residual.txt", format_float(residual) + "\n")
    print(format_float(residual))


def cmd_augment(args, cfg):
    seed = cfg.noise.seed if args.seed is None else args.seed
    images = [read_image(path) for path in args.inputs]
    outputs, seeds = perturb_many(images, cfg.noise, seed)
    rows = []
    for path, image, child_seed in zip(args.inputs, outputs, seeds):
        target = os.path.join(cfg.out_dir, f"{_stem(path)}.fdag{os.path.splitext(path)[1].lower()}")
        write_image(target, image)
        rows.append([path, target, child_seed])
    atomic_write_text(os.path.join(cfg.out_dir, "manifest.csv"), csv_text(["input", "output", "seed"], rows))
    print(f"{len(rows)} augmented images written to {cfg.out_dir}")


def cmd_train(args, cfg):
    job_id = create_training_job(cfg)
    _model, report = run_training_job(job_id, cfg)
    print(f"run {job_id}: held-out {report.held_out} accuracy {format_float(report.held_out_accuracy)}")


def _dataset(args, cfg):
    if getattr(args, "data", None):
        return load_dataset_dir(args.data)
    return dataset_for(cfg)


def cmd_eval(args, cfg):
    model = load_checkpoint(args.checkpoint)
    dataset = _dataset(args, cfg)
    rows = []
    for data in dataset.domains:
        images, labels, _ids = data.split(args.split)
        accuracy = evaluate(model, images, labels, batch_size=cfg.eval_batch)
        rows.append([data.name, args.split, accuracy])
        print(f"{data.name}\t{format_float(accuracy)}")
    atomic_write_text(os.path.join(cfg.out_dir, "accuracy.csv"), csv_text(["domain", "split", "accuracy"], rows))


def cmd_adist(args, cfg):
    if args.features:
        value = analysis.a_distance(read_feature_csv(args.features[0]), read_feature_csv(args.features[1]), args.seed)
        print(format_float(value))
        return
    if not args.data and not cfg.data_dir:
        raise UsageError("adist needs --features A B or --data DIR")
    dataset = _dataset(args, cfg)
    r = cfg.model.r if args.r is None else args.r
    result = analysis.frequency_a_distance(dataset, r, seeds=cfg.seeds)
    rows = [[p["domain_a"], p["domain_b"], p["high"], p["low"]] for p in result.pairs]
    rows.append(["average", "", result.high, result.low])
    atomic_write_text(os.path.join(cfg.out_dir, "adist.csv"), csv_text(["domain_a", "domain_b", "high", "low"], rows))
    print(f"high\t{format_float(result.high)}")
    print(f"low\t{format_float(result.low)}")


def cmd_sweep_r(args, cfg):
    table = analysis.sweep_r(_dataset(args, cfg), cfg, parse_list(args.r_values, int))
    _emit_table(table, cfg, "sweep_r.csv")


def _emit_table(table, cfg, filename):
    path = write_table(os.path.join(cfg.out_dir, filename), table)
    print("\t".join(table.columns))
    for row in table.rows:
        print("\t".join(format_float(row[c]) if isinstance(row[c], float) else str(row[c]) for c in table.columns))
    logger.info("Wrote %s", path)


def cmd_ablate(args, cfg):
    _emit_table(analysis.ablation_suite(_dataset(args, cfg), cfg), cfg, "ablation.csv")


def cmd_compare_interaction(args, cfg):
    _emit_table(analysis.compare_interaction(_dataset(args, cfg), cfg), cfg, "interaction.csv")


def cmd_ablate_fdag(args, cfg):
    _emit_table(analysis.ablate_fdag(_dataset(args, cfg), cfg), cfg, "fdag_ablation.csv")


def cmd_compare_augment(args, cfg):
    _emit_table(analysis.compare_augmentation(_dataset(args, cfg), cfg), cfg, "augmentation.csv")


def cmd_export_features(args, cfg):
    model = load_checkpoint(args.checkpoint)
    dataset = _dataset(args, cfg)
    images, labels, domains = [], [], []
    for data in dataset.domains:
        split_images, split_labels, _ids = data.split(args.split)
        images.append(split_images)
        labels.extend(split_labels.tolist())
        domains.extend([data.name] * len(split_labels))
    header, rows = analysis.export_features(model, np.concatenate(images), labels, domains, args.tap)
    path = write_features(os.path.join(cfg.out_dir, "features.csv"), header, rows)
    print(f"{len(rows)} feature rows written to {path}")


def cmd_report(args, cfg):
    report = read_report(args.run_dir)
    target = os.path.join(args.out or args.run_dir, "report.pdf")
    write_report_pdf(target, report)
    print(target)


COMMANDS = {
    "gen-data": cmd_gen_data,
    "decompose": cmd_decompose,
    "augment": cmd_augment,
    "train": cmd_train,
    "eval": cmd_eval,
    "adist": cmd_adist,
    "sweep-r": cmd_sweep_r,
    "ablate": cmd_ablate,
    "export-features": cmd_export_features,
    "compare-interaction": cmd_compare_interaction,
    "ablate-fdag": cmd_ablate_fdag,
    "compare-augment": cmd_compare_augment,
    "report": cmd_report,
}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        configure_logging("DEBUG" if args.verbose else None)
        cfg = _config(args)
        COMMANDS[args.command](args, cfg)
        return EXIT_OK
    except (UsageError, ConfigurationError) as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_DATA
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except FfdiError as exc:
        logger.error("%s: %s", exc.code, exc.message)
        print(f"error: {exc.message}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
