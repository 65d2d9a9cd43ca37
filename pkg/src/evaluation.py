"""
evaluation - 留一驾驶者交叉验证

1. 构建设计矩阵（变体 i / ii / iii x 道路范围）
2. 外层按驾驶者留一；每折内只用训练驾驶者做相关性筛选和超参数选择
3. 会话级预测按驾驶者平均后计算指标（回归：Pearson r / RMSE；分类：macro-F1）
"""

import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from cohortgen import Cohort
from errors import (
    ConfigError,
    ConsistencyError,
    ConvergenceError,
    DegenerateTargetError,
    EmptyMatrixError,
    FoldError,
    PipelineError,
    UndefinedCorrelationError,
    ValidationError,
)
from features import FeatureMatrix, FeatureScope, build_feature_matrix, drop_missing
from models import (
    CLASSIFICATION_MODELS,
    DEPTH_GRID,
    REGRESSION_MODELS,
    REGULARIZATION_GRID,
    FittedModel,
    ModelKind,
    ModelSpec,
    fit_model,
    predict,
)
from segmentation import (
    DEFAULT_BRAKE_EPSILON,
    DEFAULT_COHORT_MEAN_ARTERIAL,
    DEFAULT_DURATION_TARGETS,
    DURATION_ALL,
    DurationGrid,
    DurationTarget,
    classify_frames,
    cohort_mean_arterial,
    plan_arterial_windows,
    segment_session,
)
from signals import (
    ALL_TARGETS,
    COGNITIVE_TARGETS,
    QUESTIONNAIRE_TARGETS,
    DriveSession,
    TraitTable,
    derive_channels,
    is_regression_target,
)

logger = logging.getLogger(__name__)

TASK_REGRESSION = "regression"
TASK_CLASSIFICATION = "classification"
TIE_TOLERANCE = 1e-12
AUTO = "auto"


class Variant(str, Enum):
    """i: 全部时长窗口；ii: 只用 All 窗口；iii: 不分道路的整段驾驶"""

    I = "i"
    II = "ii"
    III = "iii"


VARIANT_SCOPES: Mapping[Variant, Tuple[FeatureScope, ...]] = {
    Variant.I: (FeatureScope.ARTERIAL, FeatureScope.INTERSECTION),
    Variant.II: (FeatureScope.ARTERIAL, FeatureScope.INTERSECTION),
    Variant.III: (FeatureScope.WHOLE,),
}


def check_scope(variant: Variant, road_scope: FeatureScope) -> None:
    """变体 iii 只能用 whole，whole 只能用于变体 iii"""
    if road_scope not in VARIANT_SCOPES[variant]:
        raise ValidationError(
            f"Road scope {road_scope.value} is not valid for variant {variant.value}"
        )


# ---------------------------------------------------------------- 配置

def _model_kinds(values: Iterable[Any], task: str) -> Tuple[ModelKind, ...]:
    try:
        kinds = tuple(ModelKind(v) for v in values)
    except ValueError as e:
        raise ConfigError(f"Unknown model: {e}") from e
    wrong = [k.value for k in kinds if k.is_classifier != (task == TASK_CLASSIFICATION)]
    if wrong:
        raise ConfigError(f"Models {wrong} cannot be used for {task}")
    if not kinds:
        raise ConfigError(f"No {task} models configured")
    return kinds


@dataclass(frozen=True)
class PipelineSettings:
    """
    分段、特征、模型与评估的全部可调参数

    Attributes:
        duration_targets: 干道时长网格
        cohort_mean_arterial: 队列平均干道时长（秒），'auto' 表示由数据计算
        brake_epsilon: 判定刹车的压力阈值 (MPa)
        include_whole_pass: 路口是否额外输出整段统计
        regularization_grid: lambda / C 候选值
        depth_grid: 森林深度候选值
        n_trees: 森林树数
        lasso_max_sweeps: lasso 最大扫描轮数
        corr_threshold: 相关性筛选阈值 |r| > threshold
        regression_models / classification_models: 参与评估的模型
        seed: 森林随机种子的基数
    """

    duration_targets: Tuple[DurationTarget, ...] = DEFAULT_DURATION_TARGETS
    cohort_mean_arterial: Union[float, str] = DEFAULT_COHORT_MEAN_ARTERIAL
    brake_epsilon: float = DEFAULT_BRAKE_EPSILON
    include_whole_pass: bool = True
    regularization_grid: Tuple[float, ...] = REGULARIZATION_GRID
    depth_grid: Tuple[int, ...] = DEPTH_GRID
    n_trees: int = 200
    lasso_max_sweeps: int = 10_000
    corr_threshold: float = 0.1
    regression_models: Tuple[ModelKind, ...] = REGRESSION_MODELS
    classification_models: Tuple[ModelKind, ...] = CLASSIFICATION_MODELS
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "duration_targets", tuple(self.duration_targets))
        try:
            DurationGrid(self.duration_targets)
        except (ValueError, TypeError) as e:
            raise ConfigError(str(e)) from e
        mean = self.cohort_mean_arterial
        if mean != AUTO and not (isinstance(mean, (int, float)) and math.isfinite(mean) and mean > 0):
            raise ConfigError(f"cohort_mean_arterial must be positive or 'auto', got {mean!r}")
        if self.brake_epsilon < 0:
            raise ConfigError("brake_epsilon must be >= 0")
        if not self.regularization_grid or any(v <= 0 for v in self.regularization_grid):
            raise ConfigError(f"Invalid regularization grid {self.regularization_grid}")
        if not self.depth_grid or any(int(v) != v or v < 1 for v in self.depth_grid):
            raise ConfigError(f"Invalid depth grid {self.depth_grid}")
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if not 0.0 <= self.corr_threshold < 1.0:
            raise ConfigError(f"corr_threshold must be in [0, 1), got {self.corr_threshold}")
        object.__setattr__(self, "regularization_grid", tuple(float(v) for v in self.regularization_grid))
        object.__setattr__(self, "depth_grid", tuple(int(v) for v in self.depth_grid))
        object.__setattr__(self, "regression_models", _model_kinds(self.regression_models, TASK_REGRESSION))
        object.__setattr__(
            self, "classification_models", _model_kinds(self.classification_models, TASK_CLASSIFICATION)
        )

    def grid_for(self, kind: ModelKind) -> Tuple[float, ...]:
        return tuple(self.depth_grid) if kind.is_forest else tuple(self.regularization_grid)

    def models_for(self, task: str) -> Tuple[ModelKind, ...]:
        return self.classification_models if task == TASK_CLASSIFICATION else self.regression_models

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "PipelineSettings":
        """按段读取 segmentation / features / models / evaluation 配置"""
        segmentation = config.get("segmentation", {}) or {}
        features = config.get("features", {}) or {}
        models = config.get("models", {}) or {}
        evaluation = config.get("evaluation", {}) or {}
        defaults = cls()
        return cls(
            duration_targets=tuple(segmentation.get("duration_targets", defaults.duration_targets)),
            cohort_mean_arterial=segmentation.get("cohort_mean_arterial", defaults.cohort_mean_arterial),
            brake_epsilon=float(segmentation.get("brake_epsilon", defaults.brake_epsilon)),
            include_whole_pass=bool(features.get("include_whole_pass", defaults.include_whole_pass)),
            regularization_grid=tuple(models.get("regularization_grid", defaults.regularization_grid)),
            depth_grid=tuple(models.get("depth_grid", defaults.depth_grid)),
            n_trees=int(models.get("n_trees", defaults.n_trees)),
            lasso_max_sweeps=int(models.get("lasso_max_sweeps", defaults.lasso_max_sweeps)),
            corr_threshold=float(evaluation.get("corr_threshold", defaults.corr_threshold)),
            regression_models=tuple(evaluation.get("regression_models", defaults.regression_models)),
            classification_models=tuple(
                evaluation.get("classification_models", defaults.classification_models)
            ),
            seed=int(evaluation.get("seed", defaults.seed)),
        )

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "PipelineSettings":
        """to_dict 的逆操作；缺省字段取默认值"""
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(data) - known)
        if unknown:
            raise ConfigError(f"Unknown pipeline settings: {unknown}")
        return cls(**dict(data))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "duration_targets": list(self.duration_targets),
            "cohort_mean_arterial": self.cohort_mean_arterial,
            "brake_epsilon": self.brake_epsilon,
            "include_whole_pass": self.include_whole_pass,
            "regularization_grid": list(self.regularization_grid),
            "depth_grid": list(self.depth_grid),
            "n_trees": self.n_trees,
            "lasso_max_sweeps": self.lasso_max_sweeps,
            "corr_threshold": self.corr_threshold,
            "regression_models": [k.value for k in self.regression_models],
            "classification_models": [k.value for k in self.classification_models],
            "seed": self.seed,
        }


def target_task(target: str) -> str:
    return TASK_REGRESSION if is_regression_target(target) else TASK_CLASSIFICATION


@dataclass(frozen=True)
class ExperimentConfig:
    """
    一次评估：一个目标 x 一个变体 x 一个道路范围

    Attributes:
        target: 目标名
        variant: 特征变体
        road_scope: 道路范围
        models: 参与的模型，缺省按任务取 settings 中的模型
        settings: 流水线参数
    """

    target: str
    variant: Variant
    road_scope: FeatureScope
    models: Tuple[ModelKind, ...] = ()
    settings: PipelineSettings = field(default_factory=PipelineSettings)

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        object.__setattr__(self, "road_scope", FeatureScope(self.road_scope))
        task = target_task(self.target)
        check_scope(self.variant, self.road_scope)
        models = tuple(self.models) or self.settings.models_for(task)
        try:
            object.__setattr__(self, "models", _model_kinds(models, task))
        except ConfigError as e:
            raise ValidationError(str(e)) from e

    @property
    def task(self) -> str:
        return target_task(self.target)


# ---------------------------------------------------------------- 设计矩阵

@dataclass(frozen=True)
class Design:
    """
    删除缺失列之后的特征矩阵

    Attributes:
        matrix: 特征矩阵
        window_counts: 各时长目标的窗口数（arterial）
        n_raw_columns: 删除缺失列之前的列数
        cohort_mean_arterial: 实际使用的平均干道时长
    """

    variant: Variant
    road_scope: FeatureScope
    matrix: FeatureMatrix
    window_counts: Mapping[DurationTarget, int] = field(default_factory=dict)
    n_raw_columns: int = 0
    cohort_mean_arterial: Optional[float] = None


def ensure_derived(sessions: Sequence[DriveSession]) -> List[DriveSession]:
    return [s if s.has_derived else derive_channels(s) for s in sessions]


def _parallel_map(func, items: Sequence, jobs: int) -> List:
    if jobs > 1 and len(items) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(func, items))
    return [func(item) for item in items]


def build_design(
    cohort: Cohort,
    variant: Union[Variant, str],
    road_scope: Union[FeatureScope, str],
    settings: Optional[PipelineSettings] = None,
    jobs: int = 1,
) -> Design:
    """
    分段 + 特征 + 删除缺失列

    Raises:
        EmptyMatrixError: 没有完整的特征列
    """
    variant = Variant(variant)
    road_scope = FeatureScope(road_scope)
    check_scope(variant, road_scope)
    settings = settings or PipelineSettings()
    sessions = ensure_derived(cohort.sessions)

    if road_scope is FeatureScope.WHOLE:
        raw = build_feature_matrix(sessions, None, road_scope, jobs=jobs)
        return Design(variant, road_scope, drop_missing(raw), {}, raw.shape[1], None)

    mean = settings.cohort_mean_arterial
    if mean == AUTO:
        labels = _parallel_map(lambda s: classify_frames(s, cohort.route_map), sessions, jobs)
        mean = cohort_mean_arterial(labels, [s.sample_rate for s in sessions])
        logger.info(f"Cohort mean arterial duration: {mean:.1f} s")
    targets = settings.duration_targets if variant is Variant.I else (DURATION_ALL,)
    grid = DurationGrid(targets, float(mean))
    counts = plan_arterial_windows(grid)

    segment_sets = {
        s.session_id: seg for s, seg in zip(sessions, _parallel_map(
            lambda s: segment_session(s, cohort.route_map, grid, counts, settings.brake_epsilon),
            sessions,
            jobs,
        ))
    }
    raw = build_feature_matrix(
        sessions,
        segment_sets,
        road_scope,
        grid=grid,
        window_counts=counts,
        intersection_ids=cohort.route_map.intersection_ids,
        include_whole_pass=settings.include_whole_pass,
        jobs=jobs,
    )
    return Design(variant, road_scope, drop_missing(raw), counts, raw.shape[1], float(mean))


# ---------------------------------------------------------------- 折与标签

@dataclass(frozen=True)
class Fold:
    index: int
    train_drivers: Tuple[str, ...]
    test_driver: str


@dataclass(frozen=True)
class FoldPlan:
    folds: Tuple[Fold, ...]

    @property
    def drivers(self) -> Tuple[str, ...]:
        return tuple(f.test_driver for f in self.folds)

    def __len__(self) -> int:
        return len(self.folds)

    def __iter__(self):
        return iter(self.folds)


def make_folds(driver_ids: Iterable[str]) -> FoldPlan:
    """每名驾驶者一折，按 driver_id 排序"""
    drivers = tuple(sorted(set(driver_ids)))
    if len(drivers) < 2:
        raise ValidationError(f"Leave-one-driver-out needs >= 2 drivers, got {len(drivers)}")
    return FoldPlan(tuple(
        Fold(i, tuple(d for d in drivers if d != test), test) for i, test in enumerate(drivers)
    ))


def median_split(scores: Mapping[str, float]) -> Dict[str, int]:
    """
    分数严格大于中位数记 1，否则记 0

    Raises:
        DegenerateTargetError: 切分后只有一个类别
    """
    drivers = list(scores)
    values = np.array([scores[d] for d in drivers], dtype=float)
    median = float(np.median(values))
    labels = (values > median).astype(int)
    if labels.min() == labels.max():
        raise DegenerateTargetError(f"Median split at {median} leaves a single class")
    return {d: int(v) for d, v in zip(drivers, labels)}


def column_correlations(X: np.ndarray, y: np.ndarray) -> np.ndarray:
    """每列与 y 的 Pearson r；常数列为 NaN"""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    varying = X.max(axis=0) > X.min(axis=0) if X.shape[0] else np.zeros(X.shape[1], dtype=bool)
    r = np.full(X.shape[1], np.nan)
    yc = y - y.mean()
    sy = math.sqrt(float(yc @ yc))
    if sy == 0 or not varying.any():
        return r
    Xc = X[:, varying] - X[:, varying].mean(axis=0)
    sx = np.sqrt((Xc * Xc).sum(axis=0))
    r[varying] = np.clip((Xc.T @ yc) / (sx * sy), -1.0, 1.0)
    return r


def filter_features(X: np.ndarray, y: np.ndarray, threshold: float = 0.1) -> np.ndarray:
    """
    保留 |r| > threshold 的列

    Returns:
        保留列的下标（升序），可能为空
    """
    r = column_correlations(X, y)
    with np.errstate(invalid="ignore"):
        keep = np.abs(r) > threshold
    return np.flatnonzero(keep)


# ---------------------------------------------------------------- 指标

def pearson_r(x: Sequence[float], y: Sequence[float]) -> float:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 2 or x.size != y.size:
        raise UndefinedCorrelationError("Need two equal-length series with >= 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise UndefinedCorrelationError("Correlation is undefined for a constant series")
    return float(np.clip(np.corrcoef(x, y)[0, 1], -1.0, 1.0))


def correlation_p_value(r: float, n: int) -> float:
    """双侧 t 检验 p 值，自由度 n - 2"""
    if n <= 2 or math.isnan(r):
        return math.nan
    if abs(r) >= 1.0:
        return 0.0
    t = r * math.sqrt((n - 2) / (1.0 - r * r))
    return float(2.0 * stats.t.sf(abs(t), n - 2))


def significance_stars(p: float) -> str:
    if p is None or math.isnan(p):
        return ""
    if p < 0.01:
        return "**"
    if p < 0.05:
        return "*"
    return ""


def rmse(truth: Sequence[float], predicted: Sequence[float]) -> float:
    diff = np.asarray(truth, dtype=float) - np.asarray(predicted, dtype=float)
    return float(math.sqrt(np.mean(diff * diff)))


def macro_f1(truth: Sequence[int], predicted: Sequence[int], labels: Sequence[int] = (0, 1)) -> float:
    """各类别 F1 = 2tp / (2tp + fp + fn) 的平均；某类在真值和预测中都不出现时记 0"""
    truth = np.asarray(truth)
    predicted = np.asarray(predicted)
    scores = []
    for label in labels:
        tp = int(np.sum((truth == label) & (predicted == label)))
        fp = int(np.sum((truth != label) & (predicted == label)))
        fn = int(np.sum((truth == label) & (predicted != label)))
        denom = 2 * tp + fp + fn
        scores.append(2.0 * tp / denom if denom else 0.0)
    return float(np.mean(scores))


def aggregate_sessions(driver_ids: Sequence[str], values: Sequence[float]) -> Dict[str, float]:
    """会话级数值按驾驶者取平均"""
    sums: Dict[str, float] = {}
    counts: Dict[str, int] = {}
    for d, v in zip(driver_ids, values):
        sums[d] = sums.get(d, 0.0) + float(v)
        counts[d] = counts.get(d, 0) + 1
    return {d: sums[d] / counts[d] for d in sums}


def _select_best(scores: Mapping[float, float], maximize: bool) -> float:
    """最优超参数；分数在容差内相同时取较小的值"""
    best_param, best_score = None, None
    for param in sorted(scores):
        score = scores[param]
        if best_score is None:
            best_param, best_score = param, score
            continue
        gain = score - best_score if maximize else best_score - score
        if gain > TIE_TOLERANCE * max(1.0, abs(best_score)):
            best_param, best_score = param, score
    return best_param


# ---------------------------------------------------------------- 训练 / 预测

def derive_seed(base: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(base)] + [int(k) for k in keys]).generate_state(1)[0])


def _threshold(kind: ModelKind) -> float:
    return 0.5 if kind is ModelKind.RANDOM_FOREST_CLF else 0.0


def _fit(kind: ModelKind, param: float, X: np.ndarray, y: np.ndarray, settings: PipelineSettings,
         seed: int, notes: Optional[List[str]] = None) -> FittedModel:
    spec = ModelSpec(kind, param, n_trees=settings.n_trees, seed=seed)
    try:
        return fit_model(spec, X, y, lasso_max_sweeps=settings.lasso_max_sweeps)
    except ConvergenceError as e:
        message = f"{kind.value} {kind.param_name}={param}: {e}; using last iterate"
        logger.warning(message)
        if notes is not None:
            notes.append(message)
        return e.last_iterate


def _grid_scores(
    kind: ModelKind,
    grid: Sequence[float],
    X_train: np.ndarray,
    y_train: np.ndarray,
    X_test: np.ndarray,
    settings: PipelineSettings,
    seed: int,
) -> Dict[float, np.ndarray]:
    """每个候选超参数在测试行上的分数；森林只按最大深度训练一次再逐层截断"""
    if kind.is_forest:
        model = _fit(kind, max(grid), X_train, y_train, settings, seed)
        return {d: predict(model, X_test, depth=int(d)).scores for d in grid}
    return {g: predict(_fit(kind, g, X_train, y_train, settings, seed), X_test).scores for g in grid}


def _driver_truth(row_drivers: np.ndarray, y: np.ndarray) -> Dict[str, float]:
    truth: Dict[str, float] = {}
    for d, v in zip(row_drivers, y):
        truth.setdefault(str(d), float(v))
    return truth


def _fallback(task: str, train_truth: Mapping[str, float]) -> float:
    """没有特征可用时：回归取训练均值，分类取多数类（并列取较小类）"""
    values = list(train_truth.values())
    if task == TASK_REGRESSION:
        return float(np.mean(values))
    counts = Counter(int(v) for v in values)
    return float(min(counts, key=lambda label: (-counts[label], label)))


def _to_driver_prediction(task: str, kind: ModelKind, row_drivers: Sequence[str],
                          scores: np.ndarray) -> Dict[str, Tuple[float, float]]:
    """会话分数 -> 驾驶者 (预测, 平均分数)"""
    mean_scores = aggregate_sessions(row_drivers, scores)
    if task == TASK_REGRESSION:
        return {d: (s, s) for d, s in mean_scores.items()}
    threshold = _threshold(kind)
    return {d: (1.0 if s > threshold else 0.0, s) for d, s in mean_scores.items()}


@dataclass(frozen=True)
class TuningResult:
    value: float
    scores: Mapping[float, float] = field(default_factory=dict)
    skipped_folds: int = 0
    note: Optional[str] = None


def tune_hyperparams(
    X: np.ndarray,
    y: np.ndarray,
    row_drivers: Sequence[str],
    kind: ModelKind,
    grid: Sequence[float],
    settings: Optional[PipelineSettings] = None,
    seed: int = 0,
) -> TuningResult:
    """
    内层留一驾驶者选超参数

    每个内层折重新做相关性筛选；回归按 RMSE 最小、分类按 macro-F1 最大选择，
    并列取较小的值。分类时训练标签只有一类的内层折跳过；全部跳过时取网格中点。
    """
    settings = settings or PipelineSettings()
    grid = sorted(float(g) for g in grid)
    if not grid:
        raise ValidationError("Hyperparameter grid is empty")
    if len(grid) == 1:
        return TuningResult(grid[0])

    task = TASK_CLASSIFICATION if kind.is_classifier else TASK_REGRESSION
    row_drivers = np.asarray(row_drivers, dtype=str)
    truth = _driver_truth(row_drivers, y)
    drivers = sorted(truth)
    predictions: Dict[float, Dict[str, float]] = {g: {} for g in grid}
    skipped = 0

    for inner_index, held_out in enumerate(drivers):
        train = row_drivers != held_out
        y_train = y[train]
        if task == TASK_CLASSIFICATION and np.unique(y_train).size < 2:
            skipped += 1
            continue
        keep = filter_features(X[train], y_train, settings.corr_threshold)
        if keep.size == 0:
            value = _fallback(task, {d: v for d, v in truth.items() if d != held_out})
            for g in grid:
                predictions[g][held_out] = value
            continue
        scores = _grid_scores(
            kind, grid, X[train][:, keep], y_train, X[~train][:, keep], settings,
            derive_seed(seed, inner_index),
        )
        test_drivers = row_drivers[~train]
        for g in grid:
            predictions[g][held_out] = _to_driver_prediction(task, kind, test_drivers, scores[g])[held_out][0]

    if skipped == len(drivers):
        value = grid[len(grid) // 2]
        return TuningResult(value, {}, skipped, f"all inner folds skipped; using grid midpoint {value}")

    evaluated = sorted(predictions[grid[0]])
    y_true = [truth[d] for d in evaluated]
    if task == TASK_REGRESSION:
        scores = {g: rmse(y_true, [predictions[g][d] for d in evaluated]) for g in grid}
    else:
        scores = {g: macro_f1(y_true, [predictions[g][d] for d in evaluated]) for g in grid}
    best = _select_best(scores, maximize=task == TASK_CLASSIFICATION)
    note = f"{skipped} inner folds skipped" if skipped else None
    return TuningResult(best, scores, skipped, note)


# ---------------------------------------------------------------- 报告

@dataclass(frozen=True)
class FoldRecord:
    """
    外层一折的结果

    Attributes:
        chosen_param: 选出的超参数；退化为常数预测时为 None
        n_features: 筛选后保留的列数
        prediction: 测试驾驶者的预测（回归值或 0/1）
        score: 测试驾驶者的平均分数
    """

    index: int
    test_driver: str
    chosen_param: Optional[float]
    n_features: int
    prediction: float
    score: Optional[float]
    fallback: bool = False
    notes: Tuple[str, ...] = ()

    def to_dict(self) -> Dict[str, Any]:
        return {
            "index": self.index,
            "test_driver": self.test_driver,
            "chosen_param": self.chosen_param,
            "n_features": self.n_features,
            "prediction": self.prediction,
            "score": self.score,
            "fallback": self.fallback,
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "FoldRecord":
        return cls(
            index=int(data["index"]),
            test_driver=str(data["test_driver"]),
            chosen_param=data.get("chosen_param"),
            n_features=int(data.get("n_features", 0)),
            prediction=float(data["prediction"]),
            score=data.get("score"),
            fallback=bool(data.get("fallback", False)),
            notes=tuple(data.get("notes", ())),
        )


@dataclass(frozen=True)
class EvalEntry:
    """一个 (目标, 模型, 变体, 道路范围) 的交叉验证结果"""

    target: str
    model: ModelKind
    variant: Variant
    road_scope: FeatureScope
    n_features: int
    metrics: Mapping[str, Any]
    truth: Mapping[str, float]
    predictions: Mapping[str, float]
    folds: Tuple[FoldRecord, ...]
    notes: Tuple[str, ...] = ()

    @property
    def task(self) -> str:
        return target_task(self.target)

    @property
    def chosen_params(self) -> List[float]:
        return [f.chosen_param for f in self.folds if f.chosen_param is not None]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "model": self.model.value,
            "variant": self.variant.value,
            "road_scope": self.road_scope.value,
            "task": self.task,
            "n_features": self.n_features,
            "metrics": dict(self.metrics),
            "truth": dict(self.truth),
            "predictions": dict(self.predictions),
            "folds": [f.to_dict() for f in self.folds],
            "notes": list(self.notes),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalEntry":
        return cls(
            target=str(data["target"]),
            model=ModelKind(data["model"]),
            variant=Variant(data["variant"]),
            road_scope=FeatureScope(data["road_scope"]),
            n_features=int(data.get("n_features", 0)),
            metrics=dict(data.get("metrics", {})),
            truth={k: float(v) for k, v in data["truth"].items()},
            predictions={k: float(v) for k, v in data["predictions"].items()},
            folds=tuple(FoldRecord.from_dict(f) for f in data.get("folds", [])),
            notes=tuple(data.get("notes", ())),
        )


REGRESSION_METRICS = ("pearson_r", "p_value", "stars", "rmse", "truth_sd", "rmse_below_sd")
CLASSIFICATION_METRICS = ("macro_f1", "accuracy")


@dataclass
class EvalReport:
    entries: List[EvalEntry] = field(default_factory=list)
    notes: List[str] = field(default_factory=list)
    settings: Dict[str, Any] = field(default_factory=dict)

    def extend(self, other: "EvalReport") -> None:
        self.entries.extend(other.entries)
        self.notes.extend(other.notes)

    def find(self, target: str, model: Union[ModelKind, str], variant: Union[Variant, str],
             road_scope: Union[FeatureScope, str]) -> Optional[EvalEntry]:
        key = (target, ModelKind(model), Variant(variant), FeatureScope(road_scope))
        for entry in self.entries:
            if (entry.target, entry.model, entry.variant, entry.road_scope) == key:
                return entry
        return None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "entries": [e.to_dict() for e in self.entries],
            "notes": list(self.notes),
            "settings": dict(self.settings),
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "EvalReport":
        return cls(
            entries=[EvalEntry.from_dict(e) for e in data.get("entries", [])],
            notes=list(data.get("notes", [])),
            settings=dict(data.get("settings", {})),
        )

    def long_rows(self) -> List[List[Any]]:
        """target, model, variant, road_scope, metric, value"""
        rows = []
        for e in self.entries:
            names = REGRESSION_METRICS if e.task == TASK_REGRESSION else CLASSIFICATION_METRICS
            for name in names:
                rows.append([e.target, e.model.value, e.variant.value, e.road_scope.value, name,
                             e.metrics.get(name)])
        return rows

    def table(self) -> Tuple[List[str], List[List[Any]]]:
        """
        宽表：每行一个 (变体, 道路范围, 模型)，每个目标一组指标列
        回归列 <target>:r / <target>:stars / <target>:rmse，分类列 <target>:f1
        """
        targets = [t for t in ALL_TARGETS if any(e.target == t for e in self.entries)]
        header = ["variant", "road_scope", "model"]
        for t in targets:
            header += [f"{t}:r", f"{t}:stars", f"{t}:rmse"] if is_regression_target(t) else [f"{t}:f1"]
        keys: List[Tuple[str, str, str]] = []
        for e in self.entries:
            key = (e.variant.value, e.road_scope.value, e.model.value)
            if key not in keys:
                keys.append(key)
        rows = []
        for key in keys:
            row: List[Any] = list(key)
            for t in targets:
                entry = self.find(t, key[2], key[0], key[1])
                if is_regression_target(t):
                    m = entry.metrics if entry else {}
                    row += [m.get("pearson_r"), m.get("stars", ""), m.get("rmse")]
                else:
                    row.append(entry.metrics.get("macro_f1") if entry else None)
            rows.append(row)
        return header, rows


def _metrics(task: str, truth: Sequence[float], predicted: Sequence[float], notes: List[str]) -> Dict[str, Any]:
    if task == TASK_CLASSIFICATION:
        truth_i = [int(v) for v in truth]
        pred_i = [int(v) for v in predicted]
        return {
            "macro_f1": macro_f1(truth_i, pred_i),
            "accuracy": float(np.mean(np.asarray(truth_i) == np.asarray(pred_i))),
        }
    try:
        r = pearson_r(truth, predicted)
    except UndefinedCorrelationError as e:
        notes.append(f"pearson_r undefined: {e}")
        r = math.nan
    p = correlation_p_value(r, len(truth))
    error = rmse(truth, predicted)
    sd = float(np.std(truth, ddof=1)) if len(truth) > 1 else math.nan
    return {
        "pearson_r": r,
        "p_value": p,
        "stars": significance_stars(p),
        "rmse": error,
        "truth_sd": sd,
        "rmse_below_sd": bool(error < sd) if not math.isnan(sd) else False,
    }


def _run_fold(
    fold: Fold,
    kind: ModelKind,
    model_index: int,
    task: str,
    X: np.ndarray,
    y: np.ndarray,
    row_drivers: np.ndarray,
    truth: Mapping[str, float],
    settings: PipelineSettings,
) -> FoldRecord:
    try:
        train = row_drivers != fold.test_driver
        test = ~train
        notes: List[str] = []
        y_train = y[train]
        train_truth = {d: truth[d] for d in fold.train_drivers}

        if task == TASK_CLASSIFICATION and np.unique(y_train).size < 2:
            value = _fallback(task, train_truth)
            notes.append("training labels contain a single class; predicting it")
            return FoldRecord(fold.index, fold.test_driver, None, 0, value, None, True, tuple(notes))

        keep = filter_features(X[train], y_train, settings.corr_threshold)
        if keep.size == 0:
            value = _fallback(task, train_truth)
            notes.append(f"no feature passed |r| > {settings.corr_threshold}; using fallback")
            return FoldRecord(fold.index, fold.test_driver, None, 0, value, None, True, tuple(notes))

        grid = settings.grid_for(kind)
        seed = derive_seed(settings.seed, model_index, fold.index)
        tuning = tune_hyperparams(X[train], y_train, row_drivers[train], kind, grid, settings, seed)
        if tuning.note:
            notes.append(tuning.note)

        model = _fit(kind, tuning.value, X[train][:, keep], y_train, settings, seed, notes)
        scores = predict(model, X[test][:, keep]).scores
        prediction, score = _to_driver_prediction(task, kind, row_drivers[test], scores)[fold.test_driver]
        return FoldRecord(
            fold.index, fold.test_driver, tuning.value, int(keep.size), prediction,
            score if task == TASK_CLASSIFICATION else None, False, tuple(notes),
        )
    except FoldError:
        raise
    except PipelineError as e:
        raise FoldError(str(e), fold.index, fold.test_driver) from e


def run_experiment(
    config: ExperimentConfig,
    cohort: Cohort,
    design: Optional[Design] = None,
    jobs: int = 1,
) -> EvalReport:
    """
    对一个 (目标, 变体, 道路范围) 跑所有模型的留一驾驶者交叉验证

    Raises:
        DegenerateTargetError: 分类目标的中位数切分只有一类
        ConsistencyError: 会话的驾驶者不在特质表中
        FoldError: 某一折失败
    """
    settings = config.settings
    design = design or build_design(cohort, config.variant, config.road_scope, settings, jobs)
    if (design.variant, design.road_scope) != (config.variant, config.road_scope):
        raise ConsistencyError("Design does not match the experiment variant and road scope")
    matrix = design.matrix

    unknown = sorted(set(matrix.driver_ids) - set(cohort.traits.drivers))
    if unknown:
        raise ConsistencyError(f"Drivers missing from the trait table: {unknown}")

    plan = make_folds(matrix.driver_ids)
    raw = cohort.traits.scores(config.target, plan.drivers)
    task = config.task
    if task == TASK_CLASSIFICATION:
        truth: Dict[str, float] = {d: float(v) for d, v in median_split(raw).items()}
    else:
        truth = dict(raw)

    row_drivers = np.asarray(matrix.driver_ids, dtype=str)
    y = np.array([truth[d] for d in matrix.driver_ids], dtype=float)
    X = matrix.values

    report = EvalReport(settings=settings.to_dict())
    for model_index, kind in enumerate(config.models):
        all_kinds = settings.models_for(task)
        stable_index = all_kinds.index(kind) if kind in all_kinds else model_index

        def _fold(fold: Fold) -> FoldRecord:
            return _run_fold(fold, kind, stable_index, task, X, y, row_drivers, truth, settings)

        records = _parallel_map(_fold, list(plan), jobs)
        notes: List[str] = [f"fold {r.index} ({r.test_driver}): {n}" for r in records for n in r.notes]
        predictions = {r.test_driver: r.prediction for r in records}
        drivers = list(plan.drivers)
        metrics = _metrics(task, [truth[d] for d in drivers], [predictions[d] for d in drivers], notes)

        entry = EvalEntry(
            target=config.target,
            model=kind,
            variant=config.variant,
            road_scope=config.road_scope,
            n_features=matrix.shape[1],
            metrics=metrics,
            truth={d: truth[d] for d in drivers},
            predictions=predictions,
            folds=tuple(records),
            notes=tuple(notes),
        )
        report.entries.append(entry)
        headline = metrics.get("pearson_r", metrics.get("macro_f1"))
        logger.info(
            f"{config.target} / {kind.value} / {config.variant.value}-{config.road_scope.value}: "
            f"{'r' if task == TASK_REGRESSION else 'F1'}={headline}"
        )
    return report


def run_grid(
    cohort: Cohort,
    variants: Sequence[Union[Variant, str]] = tuple(Variant),
    targets: Sequence[str] = ALL_TARGETS,
    settings: Optional[PipelineSettings] = None,
    scopes: Optional[Sequence[Union[FeatureScope, str]]] = None,
    jobs: int = 1,
    designs: Optional[Dict[Tuple[Variant, FeatureScope], Design]] = None,
) -> EvalReport:
    """
    变体 x 道路范围 x 目标 的完整评估

    退化目标和空设计矩阵记入 notes 并跳过
    """
    settings = settings or PipelineSettings()
    designs = designs if designs is not None else {}
    wanted = None if scopes is None else {FeatureScope(s) for s in scopes}
    for target in targets:
        if target not in ALL_TARGETS:
            raise ValidationError(f"Unknown target: {target}")

    report = EvalReport(settings=settings.to_dict())
    for variant in (Variant(v) for v in variants):
        for scope in VARIANT_SCOPES[variant]:
            if wanted is not None and scope not in wanted:
                continue
            key = (variant, scope)
            if key not in designs:
                twin = (Variant.I, scope) if variant is Variant.II else (Variant.II, scope)
                if scope is FeatureScope.INTERSECTION and twin in designs:
                    designs[key] = replace(designs[twin], variant=variant)
                else:
                    try:
                        designs[key] = build_design(cohort, variant, scope, settings, jobs)
                    except EmptyMatrixError as e:
                        report.notes.append(f"{variant.value}-{scope.value}: {e}")
                        continue
            for target in targets:
                config = ExperimentConfig(target, variant, scope, settings=settings)
                try:
                    report.extend(run_experiment(config, cohort, designs[key], jobs))
                except DegenerateTargetError as e:
                    message = f"{target} ({variant.value}-{scope.value}) skipped: {e}"
                    logger.warning(message)
                    report.notes.append(message)
    return report


def cohort_summary(traits: TraitTable, drivers: Optional[Sequence[str]] = None) -> Dict[str, Any]:
    """
    队列描述统计

    认知测试：均值、标准差 (n-1) 与两两相关；问卷条目：各取值的人数
    """
    ids = list(drivers) if drivers is not None else list(traits.drivers)
    cognitive = {t: np.array([traits.get(d).value(t) for d in ids]) for t in COGNITIVE_TARGETS}
    summary: Dict[str, Any] = {"n_drivers": len(ids), "cognitive": {}, "correlations": {}, "questionnaire": {}}
    for t, values in cognitive.items():
        summary["cognitive"][t] = {
            "mean": float(values.mean()),
            "sd": float(values.std(ddof=1)) if len(values) > 1 else None,
        }
    for i, a in enumerate(COGNITIVE_TARGETS):
        for b in COGNITIVE_TARGETS[i + 1:]:
            try:
                summary["correlations"][f"{a}~{b}"] = pearson_r(cognitive[a], cognitive[b])
            except UndefinedCorrelationError:
                summary["correlations"][f"{a}~{b}"] = None
    for item in QUESTIONNAIRE_TARGETS:
        counts = Counter(int(traits.get(d).value(item)) for d in ids)
        summary["questionnaire"][item] = {str(k): counts[k] for k in sorted(counts)}
    return summary
