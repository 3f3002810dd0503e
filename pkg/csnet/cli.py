"""
Command-line interface: one subcommand per workflow step.

Примеры:
    python csnet_tool.py synth-gen --seed 0
    python csnet_tool.py train --config configs/synth_5way_1shot.json
    python csnet_tool.py eval --run runs/synth_5way_1shot --episodes 2000 --way 5 --shot 1
    python csnet_tool.py aeml --run runs/synth_5way_1shot --t 5
    python csnet_tool.py compare-ensemble --run runs/synth_5way_1shot --t 5
    python csnet_tool.py ablate --config configs/synth_ablation.json
    python csnet_tool.py gradcheck
"""

import argparse
import sys
from dataclasses import replace
from pathlib import Path

from .aeml import (
    MODES,
    average_params,
    compare_aeml_ensemble,
    select_top_t,
    write_averaged_checkpoint,
)
from .attention import HEADS
from .config import (
    CACHE_DIR,
    EvalSettings,
    load_data,
    load_run_config,
    save_run_config,
)
from .episodes import SPLITS, SynthFamilyConfig, synth_family
from .errors import CsnError
from .evaluation import evaluate, nearest_neighbor_baseline, run_ablation
from .logger import logger
from .model import GRADCHECK_KINDS, check_gradients
from .omniglot import fetch_omniglot, load_omniglot
from .reports import (
    format_report_table,
    summarize_log,
    write_ablation_workbook,
    write_comparison,
    write_eval_report,
)
from .storage import save_dataset
from .trainer import CheckpointStore, TrainingLog, recalibrate_bn, train, with_overrides

GRADCHECK_TOLERANCE = 1e-4


def _run_paths(run):
    run = Path(run)
    return run / "config.json", run / "checkpoints", run / "training_log.csv"


def _open_run(run):
    config_path, store_path, log_path = _run_paths(run)
    config = load_run_config(config_path)
    store = CheckpointStore.open(store_path)
    log = TrainingLog.from_csv(log_path) if log_path.exists() else None
    return config, store, log


def _eval_settings(config, args):
    overrides = {
        k: getattr(args, k, None)
        for k in ("split", "way", "shot", "queries", "episodes", "seed", "workers")
    }
    settings = with_overrides(config.eval, **overrides)
    settings.validate()
    return settings


# --------------------------------------------------------------------------
# subcommands


def cmd_synth_gen(args):
    if args.config:
        source = load_run_config(args.config).data
        family = source.synth or SynthFamilyConfig()
    else:
        family = SynthFamilyConfig()
    overrides = {
        "dim": args.dim,
        "center_scale": args.center_scale,
        "within_scale": args.within_scale,
        "center_rank": args.center_rank,
        "train_classes": args.train_classes,
        "val_classes": args.val_classes,
        "test_classes": args.test_classes,
        "samples_per_class": args.samples,
        "seed": args.seed,
    }
    family = with_overrides(family, **overrides)
    ds = synth_family(family)
    out = Path(args.out or Path(CACHE_DIR) / f"synth_{family.seed}.csds")
    save_dataset(ds, out)
    print(f"\nСинтетический набор: {len(ds)} классов, {ds.sample_count()} примеров")
    print(f"- Файл: {out}")
    return 0


def cmd_ingest_omniglot(args):
    root = Path(args.root or Path(CACHE_DIR) / "omniglot")
    if args.download:
        fetch_omniglot(root)
    ds = load_omniglot(root, augment_rotations=not args.no_rotations, seed=args.seed)
    out = Path(args.out or Path(CACHE_DIR) / "omniglot.csds")
    save_dataset(ds, out)
    summary = ds.summary()
    print(f"\nOmniglot: {len(ds)} классов")
    for split in SPLITS:
        print(f"- {split}: {summary[split]['classes']} классов, {summary[split]['samples']} примеров")
    print(f"- Файл: {out}")
    return 0


def cmd_train(args):
    config = load_run_config(args.config)
    overrides = {"total_episodes": args.episodes, "seed": args.seed}
    train_cfg = with_overrides(config.train, **overrides)
    config = replace(config, train=train_cfg)
    dataset = load_data(config.data)
    config.validate(dataset)

    out = Path(args.out or Path(config.output_dir) / config.name)
    config_path, store_path, log_path = _run_paths(out)
    save_run_config(config, config_path)
    print(f"\n=== Обучение: {config.name} ===")
    print(f"Архитектура: {train_cfg.arch.kind}, {train_cfg.way}-way {train_cfg.shot}-shot")
    print(f"Эпизодов: {train_cfg.total_episodes}\n")

    log, store = train(train_cfg, dataset, CheckpointStore(store_path))
    log.to_csv(log_path)
    summary = summarize_log(log)
    print("\nИтоги:")
    print(summary.to_string())
    print(f"- Контрольные точки: {store_path}/ ({len(store)})")
    print(f"- Журнал обучения: {log_path}")
    return 0


def cmd_eval(args):
    config, store, log = _open_run(args.run)
    settings = _eval_settings(config, args)
    dataset = load_data(config.data)
    train_cfg = config.train
    head = args.head or train_cfg.head

    if args.aeml:
        selection = select_top_t(log, store, args.aeml)
        model = average_params(selection, store)
        provenance = f"aeml(t={args.aeml})"
    else:
        ckpt_id = args.checkpoint or store.best()
        model = store.get(ckpt_id).model
        provenance = ckpt_id

    report = evaluate(
        model, dataset, settings.split, settings.way, settings.shot, settings.queries,
        settings.episodes, settings.seed, train_cfg.attention_sign, head,
        train_cfg.precision, settings.workers, provenance, config.to_dict(),
    )
    reports = [report]
    if args.baseline:
        reports.append(nearest_neighbor_baseline(
            dataset, settings.split, settings.way, settings.shot, settings.queries,
            settings.episodes, settings.seed, settings.workers,
        ))
    out = Path(args.run) / "reports"
    for r in reports:
        write_eval_report(r, out)
    print()
    print(format_report_table(reports))
    return 0


def cmd_aeml(args):
    config, store, log = _open_run(args.run)
    selection = select_top_t(log, store, args.t)
    ckpt = write_averaged_checkpoint(selection, store)
    if args.recalibrate or config.aeml.recalibrate_bn:
        train_cfg = config.train
        model = recalibrate_bn(
            ckpt.model, load_data(config.data), "train", train_cfg.way, train_cfg.shot,
            train_cfg.queries, config.aeml.recalibrate_episodes, train_cfg.seed,
            train_cfg.precision,
        )
        ckpt = store.add(replace(ckpt, model=model))
    print(f"\nУсреднено {selection.t} контрольных точек:")
    for ckpt_id, acc in zip(selection.ids, selection.accuracies):
        print(f"- {ckpt_id}: val_acc {acc:.4f}")
    print(f"- Результат: {ckpt.id}")
    return 0


def cmd_compare_ensemble(args):
    config, store, log = _open_run(args.run)
    settings = _eval_settings(config, args)
    selection = select_top_t(log, store, args.t)
    report = compare_aeml_ensemble(
        selection, store, load_data(config.data), settings.split, settings,
        args.mode or config.aeml.mode, config.train.attention_sign, config.train.head,
        config.train.precision,
    )
    write_comparison(report, Path(args.run) / "reports")
    print()
    print(report.to_json())
    return 0


def cmd_ablate(args):
    config = load_run_config(args.config)
    dataset = load_data(config.data)
    config.validate(dataset)
    grid = run_ablation(config, dataset)
    out = Path(args.out or Path(config.output_dir) / f"{config.name}_ablation")
    write_ablation_workbook(grid, out)
    print()
    print(format_report_table([c.report for c in grid.cells]))
    print()
    print(grid.deltas().to_string(index=False))
    return 0


def cmd_gradcheck(args):
    kinds = GRADCHECK_KINDS if args.arch == "all" else (args.arch,)
    worst = 0.0
    for kind in kinds:
        result = check_gradients(kind, samples=args.samples, seed=args.seed)
        worst = max(worst, result.max_rel_err)
        print(
            f"{kind:8s} max rel err {result.max_rel_err:.2e} "
            f"({result.checked} checked, {result.skipped_kinks} at kinks, "
            f"{result.skipped_flat} flat)"
        )
    if worst > args.tol:
        logger.error(f"gradient check failed: {worst:.2e} > {args.tol:.0e}")
        return 1
    return 0


# --------------------------------------------------------------------------
# parser


def build_parser():
    parser = argparse.ArgumentParser(
        prog="csnet_tool.py", description="Class Support Networks: few-shot meta-learning"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-gen", help="Сгенерировать синтетический набор и записать кэш")
    p.add_argument("--config", help="Взять параметры семейства из файла конфигурации")
    p.add_argument("--dim", type=int)
    p.add_argument("--center-scale", type=float)
    p.add_argument("--within-scale", type=float)
    p.add_argument("--center-rank", type=int)
    p.add_argument("--train-classes", type=int)
    p.add_argument("--val-classes", type=int)
    p.add_argument("--test-classes", type=int)
    p.add_argument("--samples", type=int, help="Примеров на класс")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="Путь к файлу кэша (по умолчанию $CSNET_CACHE_DIR)")
    p.set_defaults(func=cmd_synth_gen)

    p = sub.add_parser("ingest-omniglot", help="Каталог Omniglot -> кэш набора")
    p.add_argument("--root", help="Каталог с алфавитами (по умолчанию $CSNET_CACHE_DIR/omniglot)")
    p.add_argument("--download", action="store_true", help="Сначала скачать архивы")
    p.add_argument("--no-rotations", action="store_true", help="Без поворотов на 90/180/270")
    p.add_argument("--seed", type=int, default=0, help="Зерно выбора валидационных символов")
    p.add_argument("--out")
    p.set_defaults(func=cmd_ingest_omniglot)

    p = sub.add_parser("train", help="Обучить модель по файлу конфигурации")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="Каталог запуска (по умолчанию output_dir/name)")
    p.add_argument("--episodes", type=int, help="Переопределить число эпизодов")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_train)

    def eval_flags(p):
        p.add_argument("--run", required=True, help="Каталог запуска")
        p.add_argument("--split", choices=SPLITS)
        p.add_argument("--way", type=int)
        p.add_argument("--shot", type=int)
        p.add_argument("--queries", type=int)
        p.add_argument("--episodes", type=int)
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)

    p = sub.add_parser("eval", help="Оценить контрольную точку или AEML")
    eval_flags(p)
    which = p.add_mutually_exclusive_group()
    which.add_argument("--checkpoint", help="Идентификатор контрольной точки")
    which.add_argument("--aeml", type=int, metavar="T", help="Усреднить T лучших точек")
    p.add_argument("--head", choices=sorted(HEADS))
    p.add_argument("--baseline", action="store_true", help="Добавить 1-NN по сырым признакам")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("aeml", help="Записать усреднённую контрольную точку")
    p.add_argument("--run", required=True)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--recalibrate", action="store_true", help="Пересчитать статистики BN")
    p.set_defaults(func=cmd_aeml)

    p = sub.add_parser("compare-ensemble", help="Одна точка vs AEML vs ансамбль")
    eval_flags(p)
    p.add_argument("--t", type=int, required=True)
    p.add_argument("--mode", choices=MODES)
    p.set_defaults(func=cmd_compare_ensemble)

    p = sub.add_parser("ablate", help="Сетка {опорная сеть вкл/выкл} × {AEML вкл/выкл}")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("gradcheck", help="Проверка градиентов конечными разностями")
    p.add_argument("--arch", choices=GRADCHECK_KINDS + ("all",), default="all")
    p.add_argument("--samples", type=int, default=200)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--tol", type=float, default=GRADCHECK_TOLERANCE)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code
    try:
        return args.func(args)
    except (CsnError, FileNotFoundError) as exc:
        message = " ".join(str(exc).split())
        logger.error(f"{args.command}: {message}")
        print(f"error: {type(exc).__name__}: {message}", file=sys.stderr)
        return 1


cli_dispatch = main


if __name__ == "__main__":
    sys.exit(main())
