"""Command-line entry points.

Subcommands: generate, erm, gradients, infer, gdro, evaluate, pipeline,
sweep. Exit codes: 0 success, 1 validation error, 2 stage failure.

``pipeline`` creates a fresh run directory named by config hash plus
timestamp; the other subcommands read and write artifacts directly in
--out so they can be chained.
"""

from __future__ import annotations

import argparse
import logging
import sys
from datetime import datetime, timezone
from pathlib import Path

from . import dataset, groupinfer, model, pipeline
from .gradspace import extract_gradients, save_gradients_csv
from .pipeline import ConfigError, PipelineConfig, StageError

log = logging.getLogger("gradpart")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="gradpart",
        description="Group inference from gradient-space clustering and group-robust training.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_text in (
        ("generate", "write the configured dataset as CSV plus a stats JSON"),
        ("erm", "train the gradient-phase classifier and save its checkpoint"),
        ("gradients", "export per-sample gradients of the saved classifier"),
        ("infer", "cluster gradients per class and save group assignments"),
        ("gdro", "train the group-robust model on the inferred groups"),
        ("evaluate", "evaluate the robust model and the plain baseline on test"),
        ("pipeline", "run every stage into a fresh run directory"),
        ("sweep", "cluster at every grid point and export the report CSV"),
    ):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", required=True, help="path to the JSON config")
        p.add_argument("--out", default=None, help="output directory (default: config output_dir)")
        p.add_argument("--seed", type=int, default=None, help="override every config seed")
        p.add_argument("--quiet", action="store_true", help="only log warnings")
    return parser


def _out_dir(args, cfg: PipelineConfig) -> Path:
    out = Path(args.out) if args.out else Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _run_stage(out: Path, name: str, fn) -> None:
    try:
        fn()
    except Exception as e:
        (out / "FAILED").write_text(f"{name}: {e}\n", encoding="utf-8")
        raise StageError(name, e) from e


def _load_checkpoint(out: Path) -> model.ModelParams:
    path = out / "erm_checkpoint.json"
    if not path.exists():
        raise FileNotFoundError(f"{path} not found; run the erm stage first")
    return model.load_checkpoint(path)


def cmd_generate(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.build_dataset(cfg)
        dataset.save_csv(ds, out / "dataset.csv")
        pipeline.write_json(out / "stats.json", pipeline.dataset_stats(ds))
        log.info("wrote %s (%d samples)", out / "dataset.csv", ds.n)

    _run_stage(out, "dataset", work)
    return 0


def cmd_erm(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.load_run_dataset(out)
        sel = pipeline.select_gradient_erm(ds, cfg)
        model.save_checkpoint(sel.params, out / "erm_checkpoint.json")
        pipeline.write_json(
            out / "erm_selection.json",
            {
                "learning_rate": sel.learning_rate,
                "weight_decay": sel.weight_decay,
                "selection_score": sel.score,
            },
        )
        log.info("selected lr=%g wd=%g (score %.4f)", sel.learning_rate, sel.weight_decay, sel.score)

    _run_stage(out, "erm", work)
    return 0


def cmd_gradients(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.load_run_dataset(out)
        params = _load_checkpoint(out)
        save_gradients_csv(extract_gradients(params, ds, subset=cfg.subset), out / "gradients.csv")
        log.info("wrote %s", out / "gradients.csv")

    _run_stage(out, "gradients", work)
    return 0


def cmd_infer(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.load_run_dataset(out)
        params = _load_checkpoint(out)
        result = groupinfer.grasp(ds, params, subset=cfg.subset, grid=cfg.grid(), metric=cfg.metric)
        groupinfer.save_inference(result, ds, out / "inference.csv", out / "inference.json")
        ari = groupinfer.inference_ari(result, ds)
        log.info(
            "inferred %d groups, %d outliers%s",
            result.n_groups,
            int(result.outlier_mask.sum()),
            f", ARI {ari:.4f}" if ari is not None else "",
        )

    _run_stage(out, "infer", work)
    return 0


def cmd_gdro(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.load_run_dataset(out)
        groups = groupinfer.load_inference_groups(out / "inference.csv", ds.n)
        sel = pipeline.select_gdro_model(ds, cfg, groups)
        model.save_checkpoint(sel.params, out / "gdro_checkpoint.json")
        pipeline.write_json(
            out / "gdro_selection.json",
            {
                "learning_rate": sel.learning_rate,
                "weight_decay": sel.weight_decay,
                "eta_q": sel.eta_q,
                "val_worst_group_accuracy": sel.val_worst,
                "n_groups_used": sel.n_groups,
                "n_train_outliers_removed": sel.n_train_removed,
            },
        )
        log.info("selected lr=%g wd=%g eta_q=%g", sel.learning_rate, sel.weight_decay, sel.eta_q)

    _run_stage(out, "gdro", work)
    return 0


def cmd_evaluate(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        ds = pipeline.load_run_dataset(out)
        gdro_path = out / "gdro_checkpoint.json"
        if not gdro_path.exists():
            raise FileNotFoundError(f"{gdro_path} not found; run the gdro stage first")
        gdro_params = model.load_checkpoint(gdro_path)
        erm_sel = pipeline.select_downstream_erm(ds, cfg)
        eval_erm = pipeline.test_evaluation(erm_sel.params, ds)
        eval_gdro = pipeline.test_evaluation(gdro_params, ds)
        pipeline.write_json(out / "eval_erm.json", eval_erm)
        pipeline.write_json(out / "eval_gdro.json", eval_gdro)
        for name, report in (("erm", eval_erm), ("gdro", eval_gdro)):
            log.info("%s test evaluation:\n%s", name, pipeline.format_test_evaluation(report))

    _run_stage(out, "evaluate", work)
    return 0


def cmd_pipeline(args, cfg: PipelineConfig) -> int:
    base = Path(args.out) if args.out else Path(cfg.output_dir)
    stamp = datetime.now(timezone.utc).strftime("%Y%m%d-%H%M%S")
    run_dir = base / f"{pipeline.config_hash(cfg)[:12]}-{stamp}"
    suffix = 1
    while run_dir.exists():
        suffix += 1
        run_dir = base / f"{pipeline.config_hash(cfg)[:12]}-{stamp}-{suffix}"
    summary = pipeline.run_pipeline(cfg, run_dir)
    log.info("run directory: %s", run_dir)
    _print_summary_table(summary)
    print(run_dir)
    return 0


def cmd_sweep(args, cfg: PipelineConfig) -> int:
    out = _out_dir(args, cfg)

    def work():
        if (out / "dataset.csv").exists():
            ds = pipeline.load_run_dataset(out)
        else:
            ds = pipeline.build_dataset(cfg)
        if (out / "erm_checkpoint.json").exists():
            params = model.load_checkpoint(out / "erm_checkpoint.json")
        else:
            params = pipeline.select_gradient_erm(ds, cfg).params
        rows = groupinfer.sweep_report(
            ds, params, cfg.dbscan_eps, cfg.dbscan_min_samples, subset=cfg.subset, metric=cfg.metric
        )
        if rows and "ari" not in rows[0]:
            log.warning("dataset has no true groups; sweep CSV omits the ARI column")
        pipeline.sweep_to_csv(rows, out / "sweep.csv")
        log.info("wrote %s (%d rows)", out / "sweep.csv", len(rows))

    _run_stage(out, "sweep", work)
    return 0


def _print_summary_table(summary: dict) -> None:
    gi = summary["group_inference"]
    ev = summary["evaluation"]

    def fmt(v):
        return f"{v:.4f}" if isinstance(v, float) else "n/a"

    lines = [
        "method          ari      worst    average",
        f"grasp           {fmt(gi['grasp']['ari'])}   {fmt(ev['gdro']['test']['worst_group_accuracy'])}   {fmt(ev['gdro']['test']['average_accuracy'])}",
        f"feasp           {fmt(gi['feasp']['ari'])}   n/a      n/a",
        f"kmeans/grad     {fmt(gi['kmeans']['gradient_ari'])}   n/a      n/a",
        f"erm             n/a      {fmt(ev['erm']['test']['worst_group_accuracy'])}   {fmt(ev['erm']['test']['average_accuracy'])}",
    ]
    for line in lines:
        log.info("%s", line)


_COMMANDS = {
    "generate": cmd_generate,
    "erm": cmd_erm,
    "gradients": cmd_gradients,
    "infer": cmd_infer,
    "gdro": cmd_gdro,
    "evaluate": cmd_evaluate,
    "pipeline": cmd_pipeline,
    "sweep": cmd_sweep,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING if args.quiet else logging.INFO,
        format="%(levelname)s %(message)s",
    )
    try:
        cfg = pipeline.load_config(args.config, seed_override=args.seed)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return 1
    try:
        return _COMMANDS[args.command](args, cfg)
    except StageError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
