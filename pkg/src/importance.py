"""
importance - 标准化系数的重要度分析

贡献 = |标准化系数|；按传感器、按干道时长汇总成百分比。
时长的归一化版本先除以该时长的窗口数 K(d) 再重新归一到 100%。
"""

import logging
from collections import Counter
from dataclasses import dataclass, field
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from cohortgen import Cohort
from errors import (
    ConvergenceError,
    UndefinedShareError,
    UnsupportedModelError,
    ValidationError,
)
from evaluation import (
    Design,
    EvalEntry,
    EvalReport,
    PipelineSettings,
    Variant,
    build_design,
    filter_features,
)
from features import FeatureName, FeatureScope
from models import FittedModel, ModelKind, ModelSpec, fit_model
from segmentation import DurationTarget, duration_key
from signals import ALL_CHANNELS

logger = logging.getLogger(__name__)

LINEAR_REGRESSORS = (ModelKind.RIDGE, ModelKind.LASSO)
DEFAULT_TOP_K = 3


def feature_contributions(model: FittedModel, all_names: Optional[Sequence[str]] = None) -> Dict[str, float]:
    """
    每列的贡献 |标准化系数|

    Args:
        model: ridge / lasso 模型
        all_names: 筛选前的全部列名；被筛掉的列贡献记 0

    Raises:
        UnsupportedModelError: 非线性回归模型
    """
    if model.kind not in LINEAR_REGRESSORS:
        raise UnsupportedModelError(f"Coefficient importance needs ridge or lasso, got {model.kind.value}")
    contributions = {str(name): 0.0 for name in (all_names or ())}
    for name, coef in zip(model.feature_names, model.coef):
        contributions[str(name)] = abs(float(coef))
    return contributions


def _total(contributions: Mapping[str, float]) -> float:
    if not contributions:
        raise UndefinedShareError("No contributions to aggregate")
    values = np.fromiter(contributions.values(), dtype=float)
    if np.any(values < 0):
        raise ValidationError("Contributions must be non-negative")
    total = float(values.sum())
    if not total > 0:
        raise UndefinedShareError("Total contribution is zero; shares are undefined")
    return total


def aggregate_by_sensor(contributions: Mapping[str, float]) -> Dict[str, float]:
    """传感器 -> 百分比（出现过的传感器都列出，包括 0）"""
    total = _total(contributions)
    sums: Dict[str, float] = {}
    for name, value in contributions.items():
        channel = FeatureName.parse(name).channel.value
        sums[channel] = sums.get(channel, 0.0) + float(value)
    order = [c.value for c in ALL_CHANNELS if c.value in sums]
    return {c: sums[c] / total * 100.0 for c in order}


def aggregate_by_duration(
    contributions: Mapping[str, float],
    window_counts: Mapping[DurationTarget, int],
) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    时长 -> 百分比

    Args:
        contributions: 干道特征的贡献
        window_counts: 各时长的窗口数 K(d)

    Returns:
        (未归一化, 按 K(d) 归一化)，键为 'all' / 'd60' ...
    """
    counts = {duration_key(t): int(k) for t, k in window_counts.items()}
    sums = {key: 0.0 for key in counts}
    for name, value in contributions.items():
        feature = FeatureName.parse(name)
        if feature.scope is not FeatureScope.ARTERIAL:
            raise ValidationError(f"Duration shares need arterial features, got {name}")
        if feature.duration not in counts:
            raise ValidationError(f"No window count for duration {feature.duration}")
        sums[feature.duration] += float(value)

    total = _total(contributions)
    unnormalized = {key: s / total * 100.0 for key, s in sums.items()}
    per_window = {key: s / counts[key] for key, s in sums.items()}
    normalizer = sum(per_window.values())
    normalized = {key: v / normalizer * 100.0 for key, v in per_window.items()}
    return unnormalized, normalized


def top_sensors(shares: Mapping[str, float], k: int = DEFAULT_TOP_K) -> List[Tuple[str, float]]:
    """份额最大的 k 个传感器；份额相同按名字排序"""
    ranked = sorted(shares.items(), key=lambda item: (-item[1], item[0]))
    return ranked[:k]


def most_frequent_param(values: Sequence[float]) -> float:
    """出现次数最多的超参数，并列取较小值"""
    counts = Counter(float(v) for v in values)
    return min(counts, key=lambda v: (-counts[v], v))


def refit_for_importance(
    entry: EvalEntry,
    design: Design,
    settings: Optional[PipelineSettings] = None,
) -> FittedModel:
    """
    在全部会话上重新训练

    超参数取各折最常选中的值；先在全部会话上做 |r| 筛选

    Raises:
        UnsupportedModelError: 非 ridge / lasso
        UndefinedShareError: 没有列通过筛选
    """
    settings = settings or PipelineSettings()
    if entry.model not in LINEAR_REGRESSORS:
        raise UnsupportedModelError(f"Coefficient importance needs ridge or lasso, got {entry.model.value}")
    chosen = entry.chosen_params
    if chosen:
        param = most_frequent_param(chosen)
    else:
        grid = sorted(settings.grid_for(entry.model))
        param = grid[len(grid) // 2]
        logger.warning(f"{entry.target}: no fold chose a parameter, using grid midpoint {param}")

    matrix = design.matrix
    y = np.array([entry.truth[d] for d in matrix.driver_ids], dtype=float)
    keep = filter_features(matrix.values, y, settings.corr_threshold)
    if keep.size == 0:
        raise UndefinedShareError(f"{entry.target}: no feature passes |r| > {settings.corr_threshold}")
    names = [matrix.column_names[i] for i in keep]
    spec = ModelSpec(entry.model, param, n_trees=settings.n_trees, seed=settings.seed)
    try:
        return fit_model(spec, matrix.values[:, keep], y, names, settings.lasso_max_sweeps)
    except ConvergenceError as e:
        logger.warning(f"{entry.target}: {e}; using last iterate")
        return e.last_iterate


@dataclass(frozen=True)
class ImportanceEntry:
    """
    一个目标的重要度

    Attributes:
        param: 重新训练使用的超参数
        sensor_shares: 传感器 -> 百分比
        duration_unnormalized / duration_normalized: 仅干道特征
    """

    target: str
    model: ModelKind
    variant: Variant
    road_scope: FeatureScope
    param: float
    n_features: int
    sensor_shares: Mapping[str, float]
    top_sensors: Tuple[Tuple[str, float], ...]
    duration_unnormalized: Optional[Mapping[str, float]] = None
    duration_normalized: Optional[Mapping[str, float]] = None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "model": self.model.value,
            "variant": self.variant.value,
            "road_scope": self.road_scope.value,
            "param": self.param,
            "n_features": self.n_features,
            "sensor_shares": dict(self.sensor_shares),
            "top_sensors": [[c, s] for c, s in self.top_sensors],
            "duration_unnormalized": None if self.duration_unnormalized is None else dict(self.duration_unnormalized),
            "duration_normalized": None if self.duration_normalized is None else dict(self.duration_normalized),
        }


@dataclass
class ImportanceReport:
    entries: List[ImportanceEntry] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return {"entries": [e.to_dict() for e in self.entries], "notes": list(self.notes)}

    def sensor_rows(self) -> Tuple[List[str], List[List[Any]]]:
        header = ["target", "model", "rank", "sensor", "share"]
        rows = []
        for e in self.entries:
            for rank, (channel, share) in enumerate(e.top_sensors, start=1):
                rows.append([e.target, e.model.value, rank, channel, share])
        return header, rows

    def duration_rows(self) -> Tuple[List[str], List[List[Any]]]:
        header = ["target", "model", "duration", "unnormalized", "normalized"]
        rows = []
        for e in self.entries:
            if e.duration_unnormalized is None:
                continue
            for key, share in e.duration_unnormalized.items():
                rows.append([e.target, e.model.value, key, share, e.duration_normalized[key]])
        return header, rows


def importance_entry(
    entry: EvalEntry,
    design: Design,
    settings: Optional[PipelineSettings] = None,
    k: int = DEFAULT_TOP_K,
) -> ImportanceEntry:
    settings = settings or PipelineSettings()
    model = refit_for_importance(entry, design, settings)
    contributions = feature_contributions(model, design.matrix.column_names)
    sensor_shares = aggregate_by_sensor(contributions)
    unnormalized = normalized = None
    if design.road_scope is FeatureScope.ARTERIAL:
        unnormalized, normalized = aggregate_by_duration(contributions, design.window_counts)
    return ImportanceEntry(
        target=entry.target,
        model=entry.model,
        variant=entry.variant,
        road_scope=entry.road_scope,
        param=float(model.params.get(entry.model.param_name, np.nan)),
        n_features=len(model.feature_names),
        sensor_shares=sensor_shares,
        top_sensors=tuple(top_sensors(sensor_shares, k)),
        duration_unnormalized=unnormalized,
        duration_normalized=normalized,
    )


def analyze_importance(
    report: EvalReport,
    cohort: Cohort,
    settings: Optional[PipelineSettings] = None,
    models: Sequence[Union[ModelKind, str]] = (ModelKind.RIDGE,),
    variant: Union[Variant, str] = Variant.I,
    road_scope: Union[FeatureScope, str] = FeatureScope.ARTERIAL,
    designs: Optional[Dict[Tuple[Variant, FeatureScope], Design]] = None,
    k: int = DEFAULT_TOP_K,
    jobs: int = 1,
) -> ImportanceReport:
    """
    对评估报告中匹配的 (模型, 变体, 道路范围) 条目逐个目标做重要度分析

    份额无法定义的目标记入 notes 并跳过
    """
    settings = settings or PipelineSettings()
    variant = Variant(variant)
    road_scope = FeatureScope(road_scope)
    kinds = {ModelKind(m) for m in models}
    designs = designs if designs is not None else {}

    result = ImportanceReport()
    for entry in report.entries:
        if entry.model not in kinds or (entry.variant, entry.road_scope) != (variant, road_scope):
            continue
        key = (variant, road_scope)
        if key not in designs:
            designs[key] = build_design(cohort, variant, road_scope, settings, jobs)
        try:
            result.entries.append(importance_entry(entry, designs[key], settings, k))
        except (UndefinedShareError, UnsupportedModelError) as e:
            message = f"{entry.target} / {entry.model.value}: {e}"
            logger.warning(message)
            result.notes.append(message)
    logger.info(f"Importance computed for {len(result.entries)} targets")
    return result
