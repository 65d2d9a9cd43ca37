"""
features - 分段统计特征与特征矩阵

每个 (分段, 通道) 计算 6 个统计量：均值、中位数、方差、最大值、峰度、偏度。
列名是可逆的规范字符串，例如 art.d60.w03.steering_angle.kurtosis。
"""

import csv
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import stats

from errors import ConsistencyError, EmptyMatrixError, ParseError, SchemaError
from segmentation import (
    DurationGrid,
    DurationTarget,
    SegmentSet,
    duration_key,
    plan_arterial_windows,
)
from signals import ALL_CHANNELS, ChannelId, DriveSession

logger = logging.getLogger(__name__)


class StatId(str, Enum):
    MEAN = "mean"
    MEDIAN = "median"
    VARIANCE = "variance"
    MAXIMUM = "maximum"
    KURTOSIS = "kurtosis"
    SKEWNESS = "skewness"


STATS: Tuple[StatId, ...] = tuple(StatId)


class FeatureScope(str, Enum):
    """特征所取的道路范围"""

    ARTERIAL = "arterial"
    INTERSECTION = "intersection"
    WHOLE = "whole"


class Phase(str, Enum):
    BEFORE = "before"
    AFTER = "after"
    WHOLE = "whole"


SCOPE_PREFIX = {
    FeatureScope.ARTERIAL: "art",
    FeatureScope.INTERSECTION: "int",
    FeatureScope.WHOLE: "drive",
}
PREFIX_SCOPE = {prefix: scope for scope, prefix in SCOPE_PREFIX.items()}


def stats6_block(block: np.ndarray) -> np.ndarray:
    """
    对 (通道数, 帧数) 矩阵按行计算 6 个统计量

    - 方差为无偏估计 (n-1)；n == 1 或常数序列时为 0
    - 偏度需要 n >= 3、峰度需要 n >= 4（Fisher 超额峰度，偏差校正）
    - 常数序列的偏度、峰度记为缺失
    - 空分段全部缺失

    Returns:
        (通道数, 6) 数组，列顺序同 STATS，缺失为 NaN
    """
    block = np.atleast_2d(np.asarray(block, dtype=float))
    n_rows, n = block.shape
    out = np.full((n_rows, len(STATS)), np.nan)
    if n == 0:
        return out

    constant = np.all(block == block[:, :1], axis=1)
    mean = block.mean(axis=1)
    mean[constant] = block[constant, 0]
    out[:, 0] = mean
    out[:, 1] = np.median(block, axis=1)
    variance = block.var(axis=1, ddof=1) if n > 1 else np.zeros(n_rows)
    variance[constant] = 0.0
    out[:, 2] = variance
    out[:, 3] = block.max(axis=1)

    varying = ~constant
    if varying.any():
        if n >= 4:
            out[varying, 4] = stats.kurtosis(block[varying], axis=1, fisher=True, bias=False)
        if n >= 3:
            out[varying, 5] = stats.skew(block[varying], axis=1, bias=False)
    return out


def stats6(series: Sequence[float]) -> Dict[StatId, Optional[float]]:
    """单条序列的 6 个统计量，缺失为 None"""
    row = stats6_block(np.asarray(series, dtype=float).reshape(1, -1))[0]
    return {stat: (None if math.isnan(v) else float(v)) for stat, v in zip(STATS, row)}


# ---------------------------------------------------------------- 列名

@dataclass(frozen=True)
class FeatureName:
    """
    特征列名

    art.<duration>.w<index>.<channel>.<stat>
    int.<intersection>.<before|after|whole>.<channel>.<stat>
    drive.<channel>.<stat>
    """

    scope: FeatureScope
    channel: ChannelId
    stat: StatId
    duration: Optional[str] = None
    window: Optional[int] = None
    intersection_id: Optional[str] = None
    phase: Optional[Phase] = None

    def canonical(self) -> str:
        tail = f"{self.channel.value}.{self.stat.value}"
        if self.scope is FeatureScope.ARTERIAL:
            return f"art.{self.duration}.w{self.window:02d}.{tail}"
        if self.scope is FeatureScope.INTERSECTION:
            return f"int.{self.intersection_id}.{self.phase.value}.{tail}"
        return f"drive.{tail}"

    def __str__(self) -> str:
        return self.canonical()

    @classmethod
    def parse(cls, text: str) -> "FeatureName":
        parts = text.split(".")
        try:
            scope = PREFIX_SCOPE[parts[0]]
            if scope is FeatureScope.WHOLE and len(parts) == 3:
                return cls(scope, ChannelId(parts[1]), StatId(parts[2]))
            if len(parts) != 5:
                raise ValueError(f"expected 5 fields, got {len(parts)}")
            channel, stat = ChannelId(parts[3]), StatId(parts[4])
            if scope is FeatureScope.ARTERIAL:
                if not parts[2].startswith("w"):
                    raise ValueError("window field must start with 'w'")
                return cls(scope, channel, stat, duration=parts[1], window=int(parts[2][1:]))
            if scope is FeatureScope.INTERSECTION:
                return cls(scope, channel, stat, intersection_id=parts[1], phase=Phase(parts[2]))
            raise ValueError("drive features have 3 fields")
        except (KeyError, ValueError, IndexError) as e:
            raise SchemaError(f"Invalid feature name {text!r}: {e}") from e


def _block_names(prefix: Dict, channels: Sequence[ChannelId]) -> List[FeatureName]:
    return [FeatureName(channel=c, stat=s, **prefix) for c in channels for s in STATS]


def arterial_columns(
    grid: DurationGrid, window_counts: Mapping[DurationTarget, int]
) -> List[FeatureName]:
    columns = []
    for target in grid.targets:
        for w in range(window_counts[target]):
            prefix = {"scope": FeatureScope.ARTERIAL, "duration": duration_key(target), "window": w}
            columns.extend(_block_names(prefix, ALL_CHANNELS))
    return columns


def intersection_phases(include_whole_pass: bool = True) -> Tuple[Phase, ...]:
    if include_whole_pass:
        return (Phase.BEFORE, Phase.AFTER, Phase.WHOLE)
    return (Phase.BEFORE, Phase.AFTER)


def intersection_columns(
    intersection_ids: Sequence[str], include_whole_pass: bool = True
) -> List[FeatureName]:
    columns = []
    for zone_id in intersection_ids:
        for phase in intersection_phases(include_whole_pass):
            prefix = {"scope": FeatureScope.INTERSECTION, "intersection_id": zone_id, "phase": phase}
            columns.extend(_block_names(prefix, ALL_CHANNELS))
    return columns


def whole_drive_columns() -> List[FeatureName]:
    return _block_names({"scope": FeatureScope.WHOLE}, ALL_CHANNELS)


# ---------------------------------------------------------------- 特征矩阵

def _frozen(values: np.ndarray) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FeatureMatrix:
    """
    行 = 会话，列 = 特征；NaN 表示缺失

    Attributes:
        session_ids: 行对应的会话 id
        driver_ids: 行对应的驾驶者
        columns: 列名
        values: (行数, 列数) 只读矩阵
    """

    session_ids: Tuple[str, ...]
    driver_ids: Tuple[str, ...]
    columns: Tuple[FeatureName, ...]
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "session_ids", tuple(self.session_ids))
        object.__setattr__(self, "driver_ids", tuple(self.driver_ids))
        object.__setattr__(self, "columns", tuple(self.columns))
        values = _frozen(self.values).reshape(len(self.session_ids), len(self.columns))
        object.__setattr__(self, "values", values)
        if len(self.driver_ids) != len(self.session_ids):
            raise ConsistencyError("driver_ids and session_ids differ in length")

    @property
    def shape(self) -> Tuple[int, int]:
        return self.values.shape

    @property
    def column_names(self) -> Tuple[str, ...]:
        return tuple(c.canonical() for c in self.columns)

    @property
    def missing_mask(self) -> np.ndarray:
        return np.isnan(self.values)

    def column_index(self, name: Union[str, FeatureName]) -> int:
        text = name.canonical() if isinstance(name, FeatureName) else name
        try:
            return self.column_names.index(text)
        except ValueError:
            raise SchemaError(f"No feature column {text}")

    def select_columns(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=int)
        return FeatureMatrix(
            self.session_ids,
            self.driver_ids,
            [self.columns[i] for i in idx],
            self.values[:, idx],
        )

    def select_rows(self, indices: Sequence[int]) -> "FeatureMatrix":
        idx = np.asarray(indices, dtype=int)
        return FeatureMatrix(
            [self.session_ids[i] for i in idx],
            [self.driver_ids[i] for i in idx],
            self.columns,
            self.values[idx, :],
        )


def _segment_stats(block: np.ndarray, frames) -> np.ndarray:
    """某个分段的 13x6 统计量按 通道-统计量 顺序展平"""
    if frames is None:
        return np.full(block.shape[0] * len(STATS), np.nan)
    if isinstance(frames, range):
        sub = block[:, frames.start:frames.stop]
    else:
        sub = block[:, np.asarray(frames, dtype=int)]
    return stats6_block(sub).ravel()


def _session_row(
    session: DriveSession,
    segments: Optional[SegmentSet],
    scope: FeatureScope,
    grid: DurationGrid,
    window_counts: Mapping[DurationTarget, int],
    intersection_ids: Sequence[str],
    phases: Sequence[Phase],
) -> np.ndarray:
    block = session.channel_block(ALL_CHANNELS)
    parts: List[np.ndarray] = []

    if scope is FeatureScope.WHOLE:
        parts.append(_segment_stats(block, range(0, session.length)))
    elif scope is FeatureScope.ARTERIAL:
        for target in grid.targets:
            windows = segments.arterial.get(target)
            for w in range(window_counts[target]):
                parts.append(_segment_stats(block, None if windows is None else windows[w]))
    else:
        for zone_id in intersection_ids:
            split = segments.intersections.get(zone_id)
            for phase in phases:
                frames = None if split is None else getattr(split, phase.value)
                parts.append(_segment_stats(block, frames))

    return np.concatenate(parts)


def build_feature_matrix(
    sessions: Sequence[DriveSession],
    segment_sets: Optional[Mapping[str, SegmentSet]],
    scope: Union[FeatureScope, str],
    grid: Optional[DurationGrid] = None,
    window_counts: Optional[Mapping[DurationTarget, int]] = None,
    intersection_ids: Optional[Sequence[str]] = None,
    include_whole_pass: bool = True,
    jobs: int = 1,
) -> FeatureMatrix:
    """
    为一组会话生成特征矩阵

    Args:
        sessions: 已含派生通道的会话
        segment_sets: session_id -> SegmentSet；whole 范围可为 None
        scope: arterial / intersection / whole
        grid: 干道时长网格
        window_counts: 各时长目标的窗口数，缺省按 grid 计算
        intersection_ids: 路口顺序，缺省取第一个 SegmentSet 的路口
        include_whole_pass: 路口是否额外输出整段统计
        jobs: 并行线程数，结果与线程数无关

    Raises:
        ConsistencyError: 会话与分段集合对不上
    """
    scope = FeatureScope(scope)
    grid = grid or DurationGrid()
    counts = dict(window_counts) if window_counts is not None else plan_arterial_windows(grid)
    phases = intersection_phases(include_whole_pass)

    segment_sets = segment_sets or {}
    if scope is not FeatureScope.WHOLE:
        known = {s.session_id for s in sessions}
        unknown = sorted(set(segment_sets) - known)
        if unknown:
            raise ConsistencyError(f"Segment sets reference unknown sessions: {unknown}")
        missing = sorted(known - set(segment_sets))
        if missing:
            raise ConsistencyError(f"No segment set for sessions: {missing}")

    if scope is FeatureScope.WHOLE:
        columns = whole_drive_columns()
        ids: Tuple[str, ...] = ()
    elif scope is FeatureScope.ARTERIAL:
        columns = arterial_columns(grid, counts)
        ids = ()
    else:
        if intersection_ids is None:
            first = next(iter(segment_sets.values()), None)
            intersection_ids = tuple(first.intersections) if first is not None else ()
        ids = tuple(intersection_ids)
        for session_id, segments in segment_sets.items():
            if tuple(segments.intersections) != ids:
                raise ConsistencyError(
                    f"Segment set {session_id} has intersections {tuple(segments.intersections)}, "
                    f"expected {ids}"
                )
        columns = intersection_columns(ids, include_whole_pass)

    def _row(session: DriveSession) -> np.ndarray:
        return _session_row(
            session, segment_sets.get(session.session_id), scope, grid, counts, ids, phases
        )

    if jobs > 1 and len(sessions) > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            rows = list(pool.map(_row, sessions))
    else:
        rows = [_row(s) for s in sessions]

    values = np.vstack(rows) if rows else np.empty((0, len(columns)))
    matrix = FeatureMatrix(
        session_ids=[s.session_id for s in sessions],
        driver_ids=[s.driver_id for s in sessions],
        columns=columns,
        values=values,
    )
    logger.info(
        f"Built {scope.value} feature matrix: {matrix.shape[0]} sessions x {matrix.shape[1]} features"
    )
    return matrix


def drop_missing(matrix: FeatureMatrix) -> FeatureMatrix:
    """删除任一会话缺失的列"""
    keep = np.flatnonzero(~matrix.missing_mask.any(axis=0))
    if keep.size == 0:
        raise EmptyMatrixError(f"All {matrix.shape[1]} feature columns have missing values")
    dropped = matrix.shape[1] - keep.size
    if dropped:
        logger.info(f"Dropped {dropped} feature columns with missing values, {keep.size} remain")
    return matrix.select_columns(keep)


# ---------------------------------------------------------------- CSV

def write_feature_csv(matrix: FeatureMatrix, path: Union[str, Path]) -> None:
    """写出特征 CSV，缺失值为空串"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("session_id", "driver_id") + matrix.column_names)
        for i, (session_id, driver_id) in enumerate(zip(matrix.session_ids, matrix.driver_ids)):
            cells = ["" if math.isnan(v) else repr(float(v)) for v in matrix.values[i]]
            writer.writerow([session_id, driver_id] + cells)


def read_feature_csv(path: Union[str, Path]) -> FeatureMatrix:
    path = Path(path)
    with open(path, "r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header is None or header[:2] != ["session_id", "driver_id"]:
            raise SchemaError(f"{path}: missing session_id,driver_id header")
        columns = [FeatureName.parse(name) for name in header[2:]]
        session_ids, driver_ids, rows = [], [], []
        for row in reader:
            if len(row) != len(header):
                raise ParseError(
                    f"expected {len(header)} fields, got {len(row)}", line=reader.line_num, path=str(path)
                )
            session_ids.append(row[0])
            driver_ids.append(row[1])
            try:
                rows.append([float(cell) if cell else math.nan for cell in row[2:]])
            except ValueError as e:
                raise ParseError(str(e), line=reader.line_num, path=str(path)) from e
    values = np.array(rows, dtype=float) if rows else np.empty((0, len(columns)))
    return FeatureMatrix(session_ids, driver_ids, columns, values)
