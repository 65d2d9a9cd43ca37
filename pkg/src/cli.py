#!/usr/bin/env python3
"""
DriveTraits 命令行入口

子命令:
    gen         生成合成队列
    featurize   分段 + 特征矩阵
    eval        留一驾驶者交叉验证
    importance  标准化系数重要度
    repro       变体 (i)/(ii)/(iii) 全部目标的对比表

使用方法:
    python src/cli.py gen --out data/cohort --seed 7
    python src/cli.py eval --data data/cohort --variant i --road arterial --out out/eval
    python src/cli.py importance --eval-dir out/eval --out out/importance
    python src/cli.py repro --out out/repro

每个输出目录都有一个 manifest.json；失败时写 error.json 并返回 1。
"""

import argparse
import errno
import logging
import math
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import colorlog
import yaml

# 添加 src 到路径
sys.path.insert(0, str(Path(__file__).parent))

from cohortgen import Cohort, CohortConfig, generate_cohort, load_cohort, permute_labels, write_cohort
from errors import ConfigError, PipelineError
from evaluation import (
    VARIANT_SCOPES,
    EvalReport,
    ExperimentConfig,
    PipelineSettings,
    Variant,
    build_design,
    cohort_summary,
    run_experiment,
    run_grid,
)
from features import FeatureScope, write_feature_csv
from importance import analyze_importance
from models import ModelKind
from reporting import ArtifactStore, RunManifest, scatter_svg, write_error, write_manifest
from signals import ALL_TARGETS, COGNITIVE_TARGETS, DEFAULT_SAMPLE_RATE, is_regression_target

logger = logging.getLogger(__name__)

DEFAULT_CONFIG = Path(__file__).parent.parent / "config" / "config.yaml"
EVAL_REPORT = "eval_report.json"
CONSOLE_FORMAT = "%(log_color)s%(asctime)s [%(levelname)s]%(reset)s %(message)s"


def setup_logging(config: Dict[str, Any], verbose: bool = False) -> logging.Logger:
    """
    配置日志系统：彩色控制台 + 可选的日志文件

    Args:
        config: 配置字典，包含 logging 配置
        verbose: 为 True 时级别设为 DEBUG
    """
    logging_config = config.get("logging", {}) or {}
    level_name = "DEBUG" if verbose else str(logging_config.get("level", "INFO")).upper()
    log_level = getattr(logging, level_name, logging.INFO)
    log_format = logging_config.get("format", "%(asctime)s [%(levelname)s] %(name)s: %(message)s")
    log_file = logging_config.get("file")

    console = colorlog.StreamHandler(sys.stdout)
    console.setFormatter(colorlog.ColoredFormatter(
        CONSOLE_FORMAT if "format" not in logging_config else "%(log_color)s" + log_format
    ))
    handlers: List[logging.Handler] = [console]
    if log_file:
        Path(log_file).parent.mkdir(parents=True, exist_ok=True)
        file_handler = logging.FileHandler(log_file, encoding="utf-8")
        file_handler.setFormatter(logging.Formatter(log_format))
        handlers.append(file_handler)

    logging.basicConfig(level=log_level, handlers=handlers, force=True)
    log = logging.getLogger(__name__)
    log.debug("Logging configured")
    return log


def load_config(config_path: Optional[str]) -> Dict[str, Any]:
    """
    加载配置文件

    未指定路径时读取 config/config.yaml，不存在则使用内置默认值

    Raises:
        FileNotFoundError: 指定的配置文件不存在
        ConfigError: 配置文件不是 YAML 字典
    """
    if config_path is None:
        if not DEFAULT_CONFIG.exists():
            return {}
        config_path = str(DEFAULT_CONFIG)
    config_file = Path(config_path)
    if not config_file.exists():
        raise FileNotFoundError(errno.ENOENT, "Configuration file not found", str(config_file))
    with open(config_file, "r", encoding="utf-8") as f:
        try:
            config = yaml.safe_load(f)
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid configuration file {config_path}: {e}") from e
    if config is None:
        return {}
    if not isinstance(config, dict):
        raise ConfigError(f"Configuration file must contain a mapping: {config_path}")
    return config


def parse_args(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """解析命令行参数"""
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("-c", "--config", default=None,
                        help="配置文件路径 (默认: config/config.yaml)")
    common.add_argument("--seed", type=int, default=None, help="随机种子（覆盖配置）")
    common.add_argument("--jobs", type=int, default=None, help="并行线程数 (默认: CPU 核数)")
    common.add_argument("--out", required=True, help="输出目录")
    common.add_argument("-v", "--verbose", action="store_true", help="启用详细日志输出")

    data = argparse.ArgumentParser(add_help=False)
    data.add_argument("--data", help="队列目录（sessions.csv + traits.csv + route_map.json）")
    data.add_argument("--route-map", dest="route_map", help="路线文件（默认: <data>/route_map.json）")

    selection = argparse.ArgumentParser(add_help=False)
    selection.add_argument("--variant", choices=[v.value for v in Variant], help="特征变体")
    selection.add_argument("--road", choices=[s.value for s in FeatureScope], help="道路范围")

    parser = argparse.ArgumentParser(
        description="DriveTraits - 由驾驶遥测估计驾驶者心理特质",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
示例:
  python src/cli.py gen --out data/cohort
  python src/cli.py featurize --data data/cohort --variant i --out out/features
  python src/cli.py eval --data data/cohort --targets tmt_b,ufov --out out/eval
  python src/cli.py repro --out out/repro --jobs 8
        """,
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("gen", parents=[common], help="生成合成队列")
    featurize = sub.add_parser("featurize", parents=[common, data, selection], help="特征矩阵")
    featurize.set_defaults(variant=Variant.I.value)
    evaluate = sub.add_parser("eval", parents=[common, data, selection], help="交叉验证")
    evaluate.add_argument("--targets", help="逗号分隔的目标（默认全部）")
    importance = sub.add_parser("importance", parents=[common, data, selection], help="系数重要度")
    importance.add_argument("--eval-dir", dest="eval_dir", required=True, help="eval 输出目录")
    repro = sub.add_parser("repro", parents=[common, data], help="变体对比表")
    repro.add_argument("--targets", help="逗号分隔的目标（默认全部）")
    return parser.parse_args(argv)


# ---------------------------------------------------------------- 辅助

def _seed(args: argparse.Namespace, config: Dict[str, Any], section: str) -> int:
    if args.seed is not None:
        return args.seed
    return int((config.get(section, {}) or {}).get("seed", 0))


def _jobs(args: argparse.Namespace) -> int:
    return max(1, args.jobs if args.jobs is not None else (os.cpu_count() or 1))


def _targets(text: Optional[str]) -> List[str]:
    if not text:
        return list(ALL_TARGETS)
    targets = [t.strip() for t in text.split(",") if t.strip()]
    unknown = [t for t in targets if t not in ALL_TARGETS]
    if unknown:
        raise ConfigError(f"Unknown targets: {unknown}")
    return targets


def _load(args: argparse.Namespace, config: Dict[str, Any]) -> Cohort:
    if not args.data:
        raise ConfigError("--data is required")
    rate = float((config.get("signals", {}) or {}).get("default_sample_rate", DEFAULT_SAMPLE_RATE))
    return load_cohort(args.data, args.route_map, default_sample_rate=rate)


def _settings(config: Dict[str, Any], seed: int) -> PipelineSettings:
    return replace(PipelineSettings.from_config(config), seed=seed)


def _scopes(variant: Variant, road: Optional[str]) -> List[FeatureScope]:
    if road is None:
        return list(VARIANT_SCOPES[variant])
    scope = FeatureScope(road)
    if scope not in VARIANT_SCOPES[variant]:
        raise ConfigError(f"Road scope {road} is not valid for variant {variant.value}")
    return [scope]


def _write_eval(store: ArtifactStore, report: EvalReport, inputs: Dict[str, Any]) -> None:
    payload = report.to_dict()
    payload["inputs"] = inputs
    store.write_json(EVAL_REPORT, payload)
    store.write_csv("eval_results.csv", ["target", "model", "variant", "road_scope", "metric", "value"],
                    report.long_rows())
    header, rows = report.table()
    store.write_csv("eval_table.csv", header, rows)
    for entry in report.entries:
        if not is_regression_target(entry.target):
            continue
        drivers = sorted(entry.truth)
        name = f"plots/{entry.variant.value}_{entry.road_scope.value}_{entry.model.value}_{entry.target}.svg"
        r = entry.metrics.get("pearson_r")
        title = f"{entry.target} {entry.model.value} ({entry.variant.value}, {entry.road_scope.value})"
        if r is not None and math.isfinite(r):
            title += f" r={r:.3f}{entry.metrics.get('stars', '')}"
        scatter_svg(store, name, [entry.truth[d] for d in drivers],
                    [entry.predictions[d] for d in drivers], title)


def _write_importance(store: ArtifactStore, report) -> None:
    store.write_json("importance_report.json", report.to_dict())
    header, rows = report.sensor_rows()
    store.write_csv("importance_sensors.csv", header, rows)
    header, rows = report.duration_rows()
    store.write_csv("importance_durations.csv", header, rows)


# ---------------------------------------------------------------- 子命令

def cmd_gen(args: argparse.Namespace, config: Dict[str, Any]) -> RunManifest:
    seed = _seed(args, config, "cohort")
    cohort_config = CohortConfig.from_config(config)
    cohort = generate_cohort(cohort_config, seed, jobs=_jobs(args), progress=args.verbose)
    write_cohort(cohort, args.out, args.store)
    return RunManifest("gen", args.config, seed, {"n_drivers": cohort_config.n_drivers})


def cmd_featurize(args: argparse.Namespace, config: Dict[str, Any]) -> RunManifest:
    cohort = _load(args, config)
    seed = _seed(args, config, "evaluation")
    settings = _settings(config, seed)
    variant = Variant(args.variant)
    summary: Dict[str, Any] = {}
    for scope in _scopes(variant, args.road):
        design = build_design(cohort, variant, scope, settings, _jobs(args))
        name = f"features_{variant.value}_{scope.value}.csv"
        write_feature_csv(design.matrix, args.store.path(name))
        args.store.written.append(name)
        summary[scope.value] = {
            "n_sessions": design.matrix.shape[0],
            "n_columns": design.matrix.shape[1],
            "n_raw_columns": design.n_raw_columns,
            "window_counts": {str(k): v for k, v in design.window_counts.items()},
            "cohort_mean_arterial": design.cohort_mean_arterial,
        }
    args.store.write_json("design.json", summary)
    return RunManifest("featurize", args.config, seed, {
        "data": args.data, "route_map": args.route_map, "variant": variant.value, "road": args.road,
    })


def cmd_eval(args: argparse.Namespace, config: Dict[str, Any]) -> RunManifest:
    cohort = _load(args, config)
    seed = _seed(args, config, "evaluation")
    settings = _settings(config, seed)
    targets = _targets(args.targets)
    variants = [Variant(args.variant)] if args.variant else list(Variant)
    scopes = [FeatureScope(args.road)] if args.road else None
    report = run_grid(cohort, variants, targets, settings, scopes=scopes, jobs=_jobs(args))
    inputs = {
        "data": args.data, "route_map": args.route_map, "targets": targets,
        "variants": [v.value for v in variants], "road": args.road,
    }
    _write_eval(args.store, report, inputs)
    return RunManifest("eval", args.config, seed, inputs)


def cmd_importance(args: argparse.Namespace, config: Dict[str, Any]) -> RunManifest:
    eval_store = ArtifactStore(args.eval_dir)
    if not eval_store.path(EVAL_REPORT).exists():
        raise FileNotFoundError(errno.ENOENT, "Evaluation report not found", str(eval_store.path(EVAL_REPORT)))
    payload = eval_store.read_json(EVAL_REPORT)
    report = EvalReport.from_dict(payload)
    inputs = payload.get("inputs", {})
    args.data = args.data or inputs.get("data")
    args.route_map = args.route_map or inputs.get("route_map")
    cohort = _load(args, config)
    settings = PipelineSettings.from_dict(report.settings)

    section = config.get("importance", {}) or {}
    result = analyze_importance(
        report,
        cohort,
        settings,
        models=[ModelKind(m) for m in section.get("models", [ModelKind.RIDGE.value])],
        variant=args.variant or section.get("variant", Variant.I.value),
        road_scope=args.road or section.get("road_scope", FeatureScope.ARTERIAL.value),
        k=int(section.get("top_k", 3)),
        jobs=_jobs(args),
    )
    _write_importance(args.store, result)
    return RunManifest("importance", args.config, settings.seed, {
        "eval_dir": args.eval_dir, "data": args.data, "route_map": args.route_map,
    })


def permutation_null(cohort: Cohort, target: str, settings: PipelineSettings, n_permutations: int,
                     jobs: int = 1) -> List[List[Any]]:
    """打乱标签后 variant-i ridge arterial 的 r 分布"""
    design = build_design(cohort, Variant.I, FeatureScope.ARTERIAL, settings, jobs)
    rows = []
    for k in range(1, n_permutations + 1):
        permuted = cohort.with_traits(permute_labels(cohort.traits, k))
        config = ExperimentConfig(target, Variant.I, FeatureScope.ARTERIAL, (ModelKind.RIDGE,), settings)
        entry = run_experiment(config, permuted, design, jobs).entries[0]
        rows.append([k, entry.metrics.get("pearson_r")])
    return rows


def cmd_repro(args: argparse.Namespace, config: Dict[str, Any]) -> RunManifest:
    store: ArtifactStore = args.store
    jobs = _jobs(args)
    seed = _seed(args, config, "evaluation")
    if args.data:
        cohort = _load(args, config)
        cohort_seed = None
    else:
        cohort_seed = args.seed if args.seed is not None else int((config.get("cohort", {}) or {}).get("seed", 0))
        cohort = generate_cohort(CohortConfig.from_config(config), cohort_seed, jobs=jobs, progress=args.verbose)
        cohort_store = write_cohort(cohort, store.path("cohort"))
        write_manifest(cohort_store, RunManifest("gen", args.config, cohort_seed, {"n_drivers": len(cohort.drivers)}))
        store.written.append("cohort/")
    settings = _settings(config, seed)
    targets = _targets(args.targets)

    summary = cohort_summary(cohort.traits, cohort.drivers)
    store.write_json("cohort_summary.json", summary)
    store.write_csv("cohort_summary.csv", ["target", "mean", "sd"], [
        [t, summary["cognitive"][t]["mean"], summary["cognitive"][t]["sd"]] for t in COGNITIVE_TARGETS
    ])

    designs: Dict = {}
    report = run_grid(cohort, list(Variant), targets, settings, jobs=jobs, designs=designs)
    inputs = {
        "data": args.data or str(store.path("cohort")),
        "route_map": args.route_map,
        "targets": targets,
        "variants": [v.value for v in Variant],
        "cohort_seed": cohort_seed,
    }
    _write_eval(store, report, inputs)

    section = config.get("importance", {}) or {}
    importance = analyze_importance(
        report, cohort, settings,
        models=[ModelKind(m) for m in section.get("models", [ModelKind.RIDGE.value])],
        variant=section.get("variant", Variant.I.value),
        road_scope=section.get("road_scope", FeatureScope.ARTERIAL.value),
        designs=designs,
        k=int(section.get("top_k", 3)),
        jobs=jobs,
    )
    _write_importance(store, importance)

    repro = config.get("repro", {}) or {}
    n_permutations = int(repro.get("permutations", 0))
    if n_permutations > 0:
        target = repro.get("permutation_target", "tmt_b")
        rows = permutation_null(cohort, target, settings, n_permutations, jobs)
        store.write_csv("permutation_null.csv", ["permutation", "pearson_r"], rows)
    return RunManifest("repro", args.config, seed, inputs)


COMMANDS = {
    "gen": cmd_gen,
    "featurize": cmd_featurize,
    "eval": cmd_eval,
    "importance": cmd_importance,
    "repro": cmd_repro,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    """
    主入口函数

    Returns:
        退出码 (0=成功, 1=失败)
    """
    args = parse_args(argv)
    try:
        config = load_config(args.config)
        setup_logging(config, args.verbose)
        logger.info(f"Running {args.command} -> {args.out}")
        args.store = ArtifactStore(args.out)
        manifest = COMMANDS[args.command](args, config)
        write_manifest(args.store, manifest)
        logger.info(f"{args.command} finished, {len(args.store.written)} files written")
        return 0
    except (PipelineError, OSError) as e:
        logger.error(f"{args.command} failed: {e}")
        write_error(args.out, e, args.command)
        return 1
    except Exception as e:
        logger.exception("Fatal error")
        write_error(args.out, e, args.command)
        return 1


if __name__ == "__main__":
    sys.exit(main())
