"""
测试用的小型会话 / 路线 / 特质工厂
"""

import sys
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

sys.path.insert(0, str(Path(__file__).parent.parent / 'src'))

from segmentation import ArterialZone, IntersectionZone, RouteMap
from signals import (
    COGNITIVE_TARGETS,
    DSQ_ITEMS,
    MEASURED_CHANNELS,
    WSQ_ITEMS,
    DriveSession,
    DriverTraits,
    TraitTable,
)

LAT0, LON0 = 35.0, 139.0
# 约 111 m / 0.001 度纬度
DEG_PER_M = 1.0 / 111195.0


def make_session(
    driver_id: str = "D01",
    session_index: int = 1,
    n: int = 100,
    rate: float = 10.0,
    seed: int = 0,
    position: Optional[np.ndarray] = None,
    brake: Optional[np.ndarray] = None,
) -> DriveSession:
    """随机的 9 通道会话；默认位置远离任何路线"""
    rng = np.random.default_rng(seed)
    channels = {c: rng.normal(size=n) for c in MEASURED_CHANNELS}
    if brake is not None:
        channels[MEASURED_CHANNELS[7]] = np.asarray(brake, dtype=float)
    if position is None:
        position = np.column_stack([np.full(n, LAT0 + 1.0), np.full(n, LON0 + 1.0)])
    return DriveSession(driver_id, session_index, rate, channels, position)


def east_points(meters: Sequence[float], lat: float = LAT0) -> np.ndarray:
    """沿纬线 lat 向东 meters 米的点"""
    scale = DEG_PER_M / np.cos(np.radians(lat))
    return np.column_stack([np.full(len(meters), lat), LON0 + np.asarray(meters, dtype=float) * scale])


def simple_route(intersections: int = 1) -> RouteMap:
    """
    东西向 1 km 干道；路口在干道以南 500 m 处，彼此相距 300 m
    """
    arterial = ArterialZone(polyline=((LAT0, LON0), (LAT0, LON0 + 1000 * DEG_PER_M / np.cos(np.radians(LAT0)))),
                            radius_m=20.0)
    zones = []
    for i in range(intersections):
        center = tuple(east_points([300.0 * i], lat=LAT0 - 500 * DEG_PER_M)[0])
        zones.append(IntersectionZone(id=f"int{i + 1}", center=center, radius_m=30.0))
    return RouteMap(arterial=arterial, intersections=tuple(zones))


def make_traits(driver_id: str, base: float = 50.0, item: int = 2) -> DriverTraits:
    scores = {t: base + i for i, t in enumerate(COGNITIVE_TARGETS)}
    scores.update({t: item for t in DSQ_ITEMS})
    scores.update({t: item for t in WSQ_ITEMS})
    return DriverTraits.from_scores(driver_id, scores)


def make_table(driver_ids: Sequence[str], values: Optional[Sequence[float]] = None) -> TraitTable:
    values = values if values is not None else [40.0 + 5 * i for i in range(len(driver_ids))]
    return TraitTable.from_traits(make_traits(d, base=v) for d, v in zip(driver_ids, values))
