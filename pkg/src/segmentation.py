"""
segmentation - 道路类型分段

1. 按 GPS 位置把每一帧标为 干道 / 某个路口 / 其他
2. 干道部分按 [All, 60, 30, 15, 10, 5, 3] 秒的平均时长切窗
3. 每个路口按松开刹车的时刻切成 before / after 两段
"""

import errno
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from haversine import Unit, haversine, haversine_vector

from errors import InsufficientDataError, ValidationError
from signals import ChannelId, DriveSession

logger = logging.getLogger(__name__)

ARTERIAL = "arterial"
OTHER = "other"
RESERVED_LABELS = (ARTERIAL, OTHER)

DURATION_ALL = "all"
DEFAULT_DURATION_TARGETS: Tuple[Union[str, int], ...] = (DURATION_ALL, 60, 30, 15, 10, 5, 3)
DEFAULT_COHORT_MEAN_ARTERIAL = 355.0
DEFAULT_BRAKE_EPSILON = 0.02

EARTH_RADIUS_M = 6371008.8

DurationTarget = Union[str, int, float]


# ---------------------------------------------------------------- 路线

@dataclass(frozen=True)
class IntersectionZone:
    """路口区域：圆心 + 半径"""

    id: str
    center: Tuple[float, float]
    radius_m: float


@dataclass(frozen=True)
class ArterialZone:
    """干道区域：折线 + 捕获半径"""

    polyline: Tuple[Tuple[float, float], ...]
    radius_m: float


@dataclass(frozen=True)
class RouteMap:
    """
    干道 + 路口

    路口之间互不重叠；路口可以压在干道上，重叠的帧归路口（见 classify_frames）
    """

    arterial: ArterialZone
    intersections: Tuple[IntersectionZone, ...]

    def __post_init__(self):
        if not self.arterial.polyline:
            raise ValidationError("Arterial polyline must contain at least one point")
        if self.arterial.radius_m <= 0:
            raise ValidationError("Arterial capture radius must be positive")
        if not self.intersections:
            raise ValidationError("Route map needs at least one intersection")

        seen = set()
        for zone in self.intersections:
            if zone.radius_m <= 0:
                raise ValidationError(f"Intersection {zone.id}: radius must be positive")
            if not zone.id or "." in zone.id or zone.id in RESERVED_LABELS:
                raise ValidationError(f"Invalid intersection id: {zone.id!r}")
            if zone.id in seen:
                raise ValidationError(f"Duplicate intersection id: {zone.id}")
            seen.add(zone.id)

        zones = self.intersections
        for i in range(len(zones)):
            for j in range(i + 1, len(zones)):
                gap = haversine(zones[i].center, zones[j].center, unit=Unit.METERS)
                if gap <= zones[i].radius_m + zones[j].radius_m:
                    raise ValidationError(
                        f"Intersections {zones[i].id} and {zones[j].id} overlap"
                    )

    @property
    def intersection_ids(self) -> Tuple[str, ...]:
        return tuple(z.id for z in self.intersections)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "arterial": {
                "polyline": [list(p) for p in self.arterial.polyline],
                "radius_m": self.arterial.radius_m,
            },
            "intersections": [
                {"id": z.id, "center": list(z.center), "radius_m": z.radius_m}
                for z in self.intersections
            ],
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "RouteMap":
        try:
            arterial = data["arterial"]
            zones = data["intersections"]
            return cls(
                arterial=ArterialZone(
                    polyline=tuple((float(p[0]), float(p[1])) for p in arterial["polyline"]),
                    radius_m=float(arterial["radius_m"]),
                ),
                intersections=tuple(
                    IntersectionZone(
                        id=str(z["id"]),
                        center=(float(z["center"][0]), float(z["center"][1])),
                        radius_m=float(z["radius_m"]),
                    )
                    for z in zones
                ),
            )
        except (KeyError, IndexError, TypeError) as e:
            raise ValidationError(f"Malformed route map: {e}") from e


def load_route_map(path: Union[str, Path]) -> RouteMap:
    """读取路线 JSON"""
    route_path = Path(path)
    if not route_path.exists():
        raise FileNotFoundError(errno.ENOENT, "Route map not found", str(route_path))
    with open(route_path, "r", encoding="utf-8") as f:
        data = json.load(f)
    route_map = RouteMap.from_dict(data)
    logger.info(
        f"Loaded route map {route_path}: {len(route_map.intersections)} intersections"
    )
    return route_map


def _project(points: np.ndarray, lat0: float, lon0: float) -> np.ndarray:
    """等距圆柱投影到以 (lat0, lon0) 为原点的平面（米）"""
    lat = np.radians(points[:, 0])
    lon = np.radians(points[:, 1])
    x = EARTH_RADIUS_M * (lon - math.radians(lon0)) * math.cos(math.radians(lat0))
    y = EARTH_RADIUS_M * (lat - math.radians(lat0))
    return np.column_stack([x, y])


def _polyline_distance_m(points: np.ndarray, polyline: Sequence[Tuple[float, float]]) -> np.ndarray:
    """每个点到折线的最短距离（米）"""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    poly = np.asarray(polyline, dtype=float).reshape(-1, 2)
    lat0, lon0 = poly.mean(axis=0)
    p = _project(points, lat0, lon0)
    v = _project(poly, lat0, lon0)
    if len(v) == 1:
        return np.linalg.norm(p - v[0], axis=1)

    a = v[:-1]
    ab = v[1:] - a
    denom = np.einsum("ij,ij->i", ab, ab)
    ap = p[:, None, :] - a[None, :, :]
    with np.errstate(invalid="ignore", divide="ignore"):
        t = np.where(denom > 0, np.einsum("nij,ij->ni", ap, ab) / denom, 0.0)
    t = np.clip(t, 0.0, 1.0)
    closest = a[None, :, :] + t[..., None] * ab[None, :, :]
    return np.linalg.norm(p[:, None, :] - closest, axis=2).min(axis=1)


# ---------------------------------------------------------------- 帧标签

@dataclass(frozen=True)
class RoadLabels:
    """逐帧道路类型标签"""

    labels: np.ndarray
    warnings: Tuple[str, ...] = ()

    def __post_init__(self):
        labels = np.array(self.labels, dtype=str, copy=True)
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    def __len__(self) -> int:
        return self.labels.shape[0]

    def arterial_frames(self) -> np.ndarray:
        return np.flatnonzero(self.labels == ARTERIAL)

    def runs(self, label: str) -> List[range]:
        """给定标签的所有连续帧区间"""
        mask = (self.labels == label).astype(np.int8)
        edges = np.diff(np.concatenate(([0], mask, [0])))
        starts = np.flatnonzero(edges == 1)
        stops = np.flatnonzero(edges == -1)
        return [range(int(s), int(e)) for s, e in zip(starts, stops)]


def classify_frames(session: DriveSession, route_map: RouteMap) -> RoadLabels:
    """
    按位置给每帧打标签

    落在某个路口半径内 -> 该路口 id；否则落在干道捕获距离内 -> arterial；
    否则 -> other。一帧都不在任何区域内时，结果带 empty-route 警告。
    """
    positions = session.position
    n = positions.shape[0]
    labels = np.full(n, OTHER, dtype=object)

    arterial_dist = _polyline_distance_m(positions, route_map.arterial.polyline)
    labels[arterial_dist <= route_map.arterial.radius_m] = ARTERIAL

    for zone in route_map.intersections:
        centers = np.tile(np.asarray(zone.center, dtype=float), (n, 1))
        dist = haversine_vector(centers, positions, unit=Unit.METERS)
        labels[dist <= zone.radius_m] = zone.id

    warnings: Tuple[str, ...] = ()
    if np.all(labels == OTHER):
        message = f"Session {session.session_id}: no frame falls inside any route zone"
        logger.warning(message)
        warnings = (message,)

    return RoadLabels(labels=labels.astype(str), warnings=warnings)


# ---------------------------------------------------------------- 时长网格

def duration_key(target: DurationTarget) -> str:
    """'all' -> 'all'，60 -> 'd60'"""
    if target == DURATION_ALL:
        return DURATION_ALL
    value = float(target)
    return f"d{int(value)}" if value.is_integer() else f"d{value:g}"


@dataclass(frozen=True)
class DurationGrid:
    """
    干道切窗的目标平均时长

    Attributes:
        targets: ['all', 60, 30, 15, 10, 5, 3]，'all' 之后严格递减
        cohort_mean_arterial: 队列平均干道时长（秒）
    """

    targets: Tuple[DurationTarget, ...] = DEFAULT_DURATION_TARGETS
    cohort_mean_arterial: float = DEFAULT_COHORT_MEAN_ARTERIAL

    def __post_init__(self):
        targets = tuple(self.targets)
        if not targets:
            raise ValidationError("Duration grid must not be empty")
        numeric = list(targets[1:] if targets[0] == DURATION_ALL else targets)
        if DURATION_ALL in numeric:
            raise ValidationError("'all' may only appear first in the duration grid")
        values = [float(t) for t in numeric]
        if any(v <= 0 for v in values):
            raise ValidationError(f"Duration targets must be positive: {numeric}")
        if any(b >= a for a, b in zip(values, values[1:])):
            raise ValidationError(f"Duration targets must be strictly decreasing: {numeric}")
        normalized = tuple(
            t if t == DURATION_ALL else (int(t) if float(t).is_integer() else float(t))
            for t in targets
        )
        object.__setattr__(self, "targets", normalized)
        if not (math.isfinite(self.cohort_mean_arterial) and self.cohort_mean_arterial > 0):
            raise ValidationError("cohort_mean_arterial must be positive")

    @property
    def keys(self) -> Tuple[str, ...]:
        return tuple(duration_key(t) for t in self.targets)

    def only_all(self) -> "DurationGrid":
        return DurationGrid((DURATION_ALL,), self.cohort_mean_arterial)


def plan_arterial_windows(grid: DurationGrid) -> Dict[DurationTarget, int]:
    """
    每个时长目标的窗口数 K

    K(all) = 1；K(d) = round(cohort_mean / d)（四舍五入，最小 1）。
    所有会话使用相同的 K，特征列因此对齐。
    """
    counts: Dict[DurationTarget, int] = {}
    for target in grid.targets:
        if target == DURATION_ALL:
            counts[target] = 1
        else:
            counts[target] = max(1, int(math.floor(grid.cohort_mean_arterial / float(target) + 0.5)))
    return counts


def segment_arterial(labels: RoadLabels, k: int) -> List[np.ndarray]:
    """
    把干道帧（按时间拼接）切成 K 个连续、长度相差不超过 1 的窗口

    Returns:
        K 个帧下标数组，余数分给前面的窗口

    Raises:
        InsufficientDataError: 干道帧数少于 K
    """
    if k < 1:
        raise ValidationError(f"Window count must be >= 1, got {k}")
    frames = labels.arterial_frames()
    if frames.size < k:
        raise InsufficientDataError(f"{frames.size} arterial frames cannot fill {k} windows")
    windows = np.array_split(frames, k)
    for window in windows:
        window.setflags(write=False)
    return windows


def cohort_mean_arterial(label_sets: Sequence[RoadLabels], sample_rates: Sequence[float]) -> float:
    """队列平均干道时长（秒）"""
    if not label_sets:
        raise ValidationError("No sessions to average")
    durations = [
        labels.arterial_frames().size / rate for labels, rate in zip(label_sets, sample_rates)
    ]
    return float(np.mean(durations))


# ---------------------------------------------------------------- 路口

@dataclass(frozen=True)
class IntersectionSplit:
    """
    一次路口通过按松开刹车切分的结果

    braked=False 表示通过期间从未踩刹车：before 为空，after 为整个通过。
    released=False 表示通过结束时仍在刹车：after 为空。
    """

    intersection_id: str
    pass_range: range
    before: range
    after: range
    braked: bool = True
    released: bool = True

    @property
    def whole(self) -> range:
        return self.pass_range

    def to_dict(self) -> Dict[str, Any]:
        return {
            "intersection_id": self.intersection_id,
            "pass": [self.pass_range.start, self.pass_range.stop],
            "before": [self.before.start, self.before.stop],
            "after": [self.after.start, self.after.stop],
            "braked": self.braked,
            "released": self.released,
        }


def split_intersection(
    session: DriveSession,
    labels: RoadLabels,
    intersection_id: str,
    brake_epsilon: float = DEFAULT_BRAKE_EPSILON,
) -> IntersectionSplit:
    """
    在松开刹车的帧把路口通过切成 before / after

    松开帧 = 通过内最后一段刹车（brake > epsilon）之后的第一帧。
    同一路口多次通过时只取第一次。

    Raises:
        InsufficientDataError: 没有经过该路口
    """
    runs = labels.runs(intersection_id)
    if not runs:
        raise InsufficientDataError(
            f"Session {session.session_id} never passes intersection {intersection_id}"
        )
    if len(runs) > 1:
        logger.warning(
            f"Session {session.session_id}: {len(runs)} passes through {intersection_id}, "
            f"keeping the first"
        )
    pass_range = runs[0]
    start, stop = pass_range.start, pass_range.stop

    brake = session.channel(ChannelId.BRAKE_PRESSURE)[start:stop]
    braking = np.flatnonzero(brake > brake_epsilon)
    if braking.size == 0:
        logger.debug(f"Session {session.session_id}: no braking at {intersection_id}")
        return IntersectionSplit(
            intersection_id=intersection_id,
            pass_range=pass_range,
            before=range(start, start),
            after=range(start, stop),
            braked=False,
        )

    release = start + int(braking[-1]) + 1
    return IntersectionSplit(
        intersection_id=intersection_id,
        pass_range=pass_range,
        before=range(start, release),
        after=range(release, stop),
        braked=True,
        released=release < stop,
    )


# ---------------------------------------------------------------- 会话分段

@dataclass(frozen=True)
class SegmentSet:
    """
    一个会话的全部分段

    Attributes:
        arterial: 时长目标 -> 窗口帧下标列表；帧数不足时为 None
        intersections: 路口 id -> 切分结果；未经过时为 None
    """

    session_id: str
    n_frames: int
    arterial: Mapping[DurationTarget, Optional[Tuple[np.ndarray, ...]]]
    intersections: Mapping[str, Optional[IntersectionSplit]]
    labels: Optional[RoadLabels] = None
    notes: Tuple[str, ...] = field(default=())

    def __post_init__(self):
        object.__setattr__(self, "arterial", MappingProxyType(dict(self.arterial)))
        object.__setattr__(self, "intersections", MappingProxyType(dict(self.intersections)))

    @property
    def no_brake(self) -> Tuple[str, ...]:
        return tuple(
            zone_id for zone_id, split in self.intersections.items()
            if split is not None and not split.braked
        )


def segment_session(
    session: DriveSession,
    route_map: RouteMap,
    grid: DurationGrid,
    window_counts: Optional[Mapping[DurationTarget, int]] = None,
    brake_epsilon: float = DEFAULT_BRAKE_EPSILON,
) -> SegmentSet:
    """分类帧、切干道窗口、切路口；不足的部分记为 None 而不抛异常"""
    counts = dict(window_counts) if window_counts is not None else plan_arterial_windows(grid)
    labels = classify_frames(session, route_map)
    notes: List[str] = list(labels.warnings)

    arterial: Dict[DurationTarget, Optional[Tuple[np.ndarray, ...]]] = {}
    for target in grid.targets:
        try:
            arterial[target] = tuple(segment_arterial(labels, counts[target]))
        except InsufficientDataError as e:
            notes.append(f"{duration_key(target)}: {e}")
            arterial[target] = None

    intersections: Dict[str, Optional[IntersectionSplit]] = {}
    for zone_id in route_map.intersection_ids:
        try:
            split = split_intersection(session, labels, zone_id, brake_epsilon)
        except InsufficientDataError as e:
            notes.append(str(e))
            split = None
        else:
            if not split.braked:
                notes.append(f"{zone_id}: no braking during pass")
        intersections[zone_id] = split

    for note in notes:
        logger.debug(f"{session.session_id}: {note}")

    return SegmentSet(
        session_id=session.session_id,
        n_frames=session.length,
        arterial=arterial,
        intersections=intersections,
        labels=labels,
        notes=tuple(notes),
    )
