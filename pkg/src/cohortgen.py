"""
cohortgen - 合成驾驶队列

生成一个与真实实验规模相当的队列：
1. 特质：4 项认知测试用高斯 copula + 截断正态边缘分布（均值/标准差/相关系数按真实队列标定）；
   18 个问卷条目由各自的潜变量经有序 logit 得到
2. 遥测：每次驾驶 = 起步 -> 干道 -> (连接路段 -> 路口) x N -> 收尾；
   耦合 (目标, 通道, 道路范围, 频带, 效应量) 让某个特质的潜变量影响特定道路上的特定通道
3. 路线：干道折线 + N 个互不重叠的圆形路口

同一个种子生成逐字节相同的队列。
"""

import csv
import errno
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from types import MappingProxyType
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import optimize, signal, stats
from scipy.special import expit, logit
from tqdm import tqdm

from errors import ConfigError, SchemaError, ValidationError
from reporting import ArtifactStore
from segmentation import (
    ARTERIAL,
    OTHER,
    ArterialZone,
    IntersectionZone,
    RouteMap,
    load_route_map,
)
from signals import (
    ALL_TARGETS,
    COGNITIVE_TARGETS,
    DERIVED_PARENTS,
    DSQ_ITEMS,
    QUESTIONNAIRE_TARGETS,
    ChannelId,
    DriveSession,
    DriverTraits,
    TraitTable,
    load_session,
    load_traits,
    write_session,
    write_traits,
)

logger = logging.getLogger(__name__)

SESSIONS_INDEX = "sessions.csv"
TRAITS_FILE = "traits.csv"
ROUTE_MAP_FILE = "route_map.json"
COUPLINGS_FILE = "couplings.json"
TRUTH_FILE = "truth.json"
TELEMETRY_DIR = "telemetry"

SCOPE_ARTERIAL = "arterial"
SCOPE_INTERSECTION = "intersection"
BAND_SHORT = "short"
BAND_LONG = "long"

# 真实队列的认知测试均值 / 标准差（秒）
COGNITIVE_MOMENTS: Mapping[str, Tuple[float, float]] = MappingProxyType({
    "tmt_a": (34.1, 10.2),
    "tmt_b": (94.9, 36.3),
    "maze": (26.3, 16.9),
    "ufov": (151.4, 100.1),
})

# 顺序同 COGNITIVE_TARGETS
COGNITIVE_CORRELATION = np.array([
    [1.00, 0.65, 0.57, 0.23],
    [0.65, 1.00, 0.51, 0.53],
    [0.57, 0.51, 1.00, 0.08],
    [0.23, 0.53, 0.08, 1.00],
])

DSQ_BASE_PROBS = (0.15, 0.35, 0.35, 0.15)
WSQ_BASE_PROBS = (0.10, 0.20, 0.40, 0.20, 0.10)
ORDINAL_SLOPE = 1.7

ORIGIN = (35.0, 139.0)
METERS_PER_DEG_LAT = 111195.0

# 短频带抖动的基准标准差 / 长频带偏移的尺度（各通道单位）
JITTER_SD: Mapping[ChannelId, float] = MappingProxyType({
    ChannelId.STEERING_ANGLE: 0.6,
    ChannelId.EPS_TORQUE: 0.05,
    ChannelId.FORWARD_ACCEL: 0.05,
    ChannelId.LATERAL_ACCEL: 0.05,
    ChannelId.YAW_RATE: 0.3,
    ChannelId.SPEED: 0.4,
    ChannelId.ACCELERATOR_POSITION: 1.0,
    ChannelId.BRAKE_PRESSURE: 0.02,
    ChannelId.FUEL_CONSUMPTION: 0.005,
})
LONG_SCALE: Mapping[ChannelId, float] = MappingProxyType({
    ChannelId.STEERING_ANGLE: 2.0,
    ChannelId.EPS_TORQUE: 0.1,
    ChannelId.FORWARD_ACCEL: 0.1,
    ChannelId.LATERAL_ACCEL: 0.1,
    ChannelId.YAW_RATE: 0.5,
    ChannelId.SPEED: 3.0,
    ChannelId.ACCELERATOR_POSITION: 5.0,
    ChannelId.BRAKE_PRESSURE: 0.1,
    ChannelId.FUEL_CONSUMPTION: 0.01,
})
PRIMARY_CHANNELS = (
    ChannelId.SPEED,
    ChannelId.ACCELERATOR_POSITION,
    ChannelId.BRAKE_PRESSURE,
    ChannelId.STEERING_ANGLE,
)

# 帧类型
_LEAD, _ARTERIAL, _CONNECTOR, _PASS = 0, 1, 2, 3
# 路口内阶段
_NONE, _BRAKING, _HOLD, _RELEASE, _ACCEL = 0, 1, 2, 3, 4


# ---------------------------------------------------------------- 配置

@dataclass(frozen=True)
class Coupling:
    """
    特质 -> 遥测 的耦合

    Attributes:
        target: 特质名（如 tmt_b）
        channel: 受影响的通道；派生通道作用于其父通道
        scope: arterial / intersection
        band: short（高频抖动幅度）/ long（慢变偏移）
        effect: 效应量，0 表示无耦合
    """

    target: str
    channel: ChannelId
    scope: str
    band: str
    effect: float

    def __post_init__(self):
        if self.target not in ALL_TARGETS:
            raise ConfigError(f"Unknown coupling target: {self.target}")
        try:
            object.__setattr__(self, "channel", ChannelId(self.channel))
        except ValueError:
            raise ConfigError(f"Unknown coupling channel: {self.channel}")
        if self.scope not in (SCOPE_ARTERIAL, SCOPE_INTERSECTION):
            raise ConfigError(f"Unknown coupling scope: {self.scope}")
        if self.band not in (BAND_SHORT, BAND_LONG):
            raise ConfigError(f"Unknown coupling band: {self.band}")
        if not math.isfinite(self.effect):
            raise ConfigError(f"Coupling effect must be finite: {self.effect}")

    @property
    def measured_channel(self) -> ChannelId:
        return DERIVED_PARENTS.get(self.channel, self.channel)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target": self.target,
            "channel": self.channel.value,
            "scope": self.scope,
            "band": self.band,
            "effect": self.effect,
        }

    @classmethod
    def from_dict(cls, data: Mapping[str, Any]) -> "Coupling":
        try:
            return cls(
                target=str(data["target"]),
                channel=data["channel"],
                scope=str(data.get("scope", SCOPE_ARTERIAL)),
                band=str(data.get("band", BAND_SHORT)),
                effect=float(data.get("effect", 1.0)),
            )
        except KeyError as e:
            raise ConfigError(f"Coupling is missing field {e}") from e


DEFAULT_COUPLINGS: Tuple[Coupling, ...] = (
    Coupling("tmt_b", ChannelId.ACCELERATOR_RATE, SCOPE_ARTERIAL, BAND_SHORT, 1.0),
    Coupling("tmt_b", ChannelId.STEERING_VELOCITY, SCOPE_ARTERIAL, BAND_SHORT, 0.8),
    Coupling("ufov", ChannelId.BRAKE_PRESSURE, SCOPE_INTERSECTION, BAND_SHORT, 0.8),
    Coupling("dsq_3", ChannelId.SPEED, SCOPE_ARTERIAL, BAND_LONG, 0.8),
    Coupling("wsq_5", ChannelId.ACCELERATOR_POSITION, SCOPE_INTERSECTION, BAND_LONG, 0.6),
)


@dataclass(frozen=True)
class CohortConfig:
    """
    合成队列配置

    Attributes:
        n_drivers: 驾驶者数
        n_two_session_drivers: 驾驶两次的人数，缺省按 15/23 的比例
        sample_rate: 采样率 (Hz)
        arterial_mean_s / arterial_sd_s: 干道时长分布（秒）
        n_intersections: 路口数
        couplings: 特质-遥测耦合
    """

    n_drivers: int = 23
    n_two_session_drivers: Optional[int] = None
    sample_rate: float = 10.0
    arterial_mean_s: float = 355.0
    arterial_sd_s: float = 25.0
    n_intersections: int = 4
    intersection_radius_m: float = 40.0
    arterial_radius_m: float = 25.0
    connector_s: Tuple[float, float] = (150.0, 250.0)
    lead_in_s: float = 15.0
    tail_s: float = 45.0
    couplings: Tuple[Coupling, ...] = DEFAULT_COUPLINGS

    def __post_init__(self):
        if self.n_drivers < 2:
            raise ConfigError(f"n_drivers must be >= 2, got {self.n_drivers}")
        two = self.two_session_drivers
        if not 0 <= two <= self.n_drivers:
            raise ConfigError(f"n_two_session_drivers must be in 0..{self.n_drivers}, got {two}")
        if self.sample_rate <= 0:
            raise ConfigError("sample_rate must be positive")
        if self.arterial_mean_s <= 0 or self.arterial_sd_s < 0:
            raise ConfigError("Arterial duration distribution is invalid")
        if self.n_intersections < 1:
            raise ConfigError("n_intersections must be >= 1")
        lo, hi = self.connector_s
        if not 0 < lo <= hi:
            raise ConfigError(f"connector_s must satisfy 0 < min <= max, got {self.connector_s}")
        object.__setattr__(self, "couplings", tuple(self.couplings))

    @property
    def two_session_drivers(self) -> int:
        if self.n_two_session_drivers is not None:
            return int(self.n_two_session_drivers)
        return int(round(self.n_drivers * 15 / 23))

    @property
    def session_counts(self) -> Tuple[int, ...]:
        two = self.two_session_drivers
        return tuple(2 if i < two else 1 for i in range(self.n_drivers))

    @classmethod
    def from_config(cls, config: Mapping[str, Any]) -> "CohortConfig":
        """从配置字典的 cohort 段读取"""
        section = dict(config.get("cohort", {}) or {})
        couplings = section.pop("couplings", None)
        section.pop("seed", None)
        known = set(cls.__dataclass_fields__)
        unknown = sorted(set(section) - known)
        if unknown:
            raise ConfigError(f"Unknown cohort settings: {unknown}")
        if "connector_s" in section:
            section["connector_s"] = tuple(float(v) for v in section["connector_s"])
        if couplings is not None:
            section["couplings"] = tuple(Coupling.from_dict(c) for c in couplings)
        return cls(**section)


# ---------------------------------------------------------------- 队列

@dataclass(frozen=True)
class Cohort:
    """
    一个队列：会话 + 特质 + 路线

    Attributes:
        sessions: 会话（仅测量通道）
        traits: 特质表
        route_map: 路线
        couplings: 生成时使用的耦合（真实数据为空）
        latents: 目标 -> driver -> 潜变量
        labels: session_id -> 逐帧真实道路标签
    """

    sessions: Tuple[DriveSession, ...]
    traits: TraitTable
    route_map: RouteMap
    couplings: Tuple[Coupling, ...] = ()
    latents: Mapping[str, Mapping[str, float]] = field(default_factory=dict)
    labels: Mapping[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "sessions", tuple(self.sessions))
        object.__setattr__(self, "couplings", tuple(self.couplings))
        object.__setattr__(self, "latents", MappingProxyType(dict(self.latents)))
        object.__setattr__(self, "labels", MappingProxyType(dict(self.labels)))

    @property
    def drivers(self) -> Tuple[str, ...]:
        return tuple(sorted({s.driver_id for s in self.sessions}))

    def with_traits(self, traits: TraitTable) -> "Cohort":
        return Cohort(self.sessions, traits, self.route_map, self.couplings, self.latents, self.labels)


def driver_name(index: int) -> str:
    return f"D{index + 1:02d}"


def session_file_name(session: DriveSession) -> str:
    return f"{session.driver_id}_s{session.session_index}.csv"


# ---------------------------------------------------------------- 特质

def _nearest_correlation(matrix: np.ndarray) -> np.ndarray:
    """特征值截断到正数后重新归一为相关矩阵"""
    values, vectors = np.linalg.eigh(matrix)
    if values.min() > 1e-10:
        return matrix
    fixed = vectors @ np.diag(np.clip(values, 1e-6, None)) @ vectors.T
    d = np.sqrt(np.diag(fixed))
    return fixed / np.outer(d, d)


def calibrate_truncnorm(mean: float, sd: float) -> Tuple[float, float]:
    """
    求 (loc, scale) 使截断在 0 处的正态分布具有给定均值和标准差

    Returns:
        (loc, scale)
    """

    def residual(params):
        loc, log_scale = params
        scale = math.exp(log_scale)
        a = (0.0 - loc) / scale
        m, v = stats.truncnorm.stats(a, np.inf, loc=loc, scale=scale, moments="mv")
        return [(float(m) - mean) / sd, (math.sqrt(float(v)) - sd) / sd]

    solution = optimize.least_squares(residual, x0=[mean, math.log(sd)], xtol=1e-12, ftol=1e-12)
    loc, log_scale = solution.x
    return float(loc), float(math.exp(log_scale))


def ordered_logit(latent: np.ndarray, base_probs: Sequence[float], u: np.ndarray,
                  slope: float = ORDINAL_SLOPE) -> np.ndarray:
    """
    潜变量 -> 1..K 的有序类别

    latent = 0 时各类别概率为 base_probs；latent 越大类别越高
    """
    cuts = logit(np.cumsum(base_probs)[:-1])
    cdf = expit(cuts[None, :] - slope * np.asarray(latent)[:, None])
    return 1 + (np.asarray(u)[:, None] > cdf).sum(axis=1)


def generate_traits(
    driver_ids: Sequence[str], rng: np.random.Generator
) -> Tuple[TraitTable, Dict[str, Dict[str, float]]]:
    """
    生成特质表

    Returns:
        (特质表, 目标 -> driver -> 标准正态潜变量)
    """
    n = len(driver_ids)
    corr = _nearest_correlation(COGNITIVE_CORRELATION)
    z_cog = rng.multivariate_normal(np.zeros(len(COGNITIVE_TARGETS)), corr, size=n, method="cholesky")
    latents: Dict[str, Dict[str, float]] = {}
    columns: Dict[str, np.ndarray] = {}

    for k, target in enumerate(COGNITIVE_TARGETS):
        mean, sd = COGNITIVE_MOMENTS[target]
        loc, scale = calibrate_truncnorm(mean, sd)
        a = (0.0 - loc) / scale
        u = stats.norm.cdf(z_cog[:, k])
        columns[target] = stats.truncnorm.ppf(u, a, np.inf, loc=loc, scale=scale)
        latents[target] = {d: float(z) for d, z in zip(driver_ids, z_cog[:, k])}

    for item in QUESTIONNAIRE_TARGETS:
        probs = DSQ_BASE_PROBS if item in DSQ_ITEMS else WSQ_BASE_PROBS
        z = rng.standard_normal(n)
        columns[item] = ordered_logit(z, probs, rng.random(n))
        latents[item] = {d: float(v) for d, v in zip(driver_ids, z)}

    traits = []
    for i, driver_id in enumerate(driver_ids):
        scores = {t: columns[t][i] for t in ALL_TARGETS}
        traits.append(DriverTraits.from_scores(driver_id, scores))
    return TraitTable.from_traits(traits), latents


def permute_labels(table: TraitTable, seed: int) -> TraitTable:
    """
    每个目标列独立打乱（置换检验用）

    seed == 0 时原样返回
    """
    if seed == 0:
        return table
    rng = np.random.default_rng(seed)
    drivers = table.drivers
    permuted = {d: table.get(d).as_row() for d in drivers}
    for target in ALL_TARGETS:
        values = [permuted[d][target] for d in drivers]
        order = rng.permutation(len(drivers))
        for d, j in zip(drivers, order):
            permuted[d][target] = values[j]
    return TraitTable.from_traits(DriverTraits.from_scores(d, permuted[d]) for d in drivers)


# ---------------------------------------------------------------- 路线

def build_route_map(config: CohortConfig) -> RouteMap:
    """干道在原点附近向东约 5 km；路口在其南侧约 1.1 km 一字排开"""
    lat0, lon0 = ORIGIN
    arterial = ArterialZone(
        polyline=((lat0, lon0), (lat0, lon0 + 0.03), (lat0 + 0.005, lon0 + 0.055)),
        radius_m=config.arterial_radius_m,
    )
    zones = tuple(
        IntersectionZone(
            id=f"int{k + 1}",
            center=(lat0 - 0.01, lon0 + 0.01 * (k + 1)),
            radius_m=config.intersection_radius_m,
        )
        for k in range(config.n_intersections)
    )
    return RouteMap(arterial=arterial, intersections=zones)


def _meters_to_deg(d_north: np.ndarray, d_east: np.ndarray, lat: float) -> Tuple[np.ndarray, np.ndarray]:
    return d_north / METERS_PER_DEG_LAT, d_east / (METERS_PER_DEG_LAT * math.cos(math.radians(lat)))


def _along_polyline(polyline: Sequence[Tuple[float, float]], fraction: np.ndarray) -> np.ndarray:
    """折线上按弧长比例取点"""
    poly = np.asarray(polyline, dtype=float)
    lat0 = poly[:, 0].mean()
    north = (poly[:, 0] - poly[0, 0]) * METERS_PER_DEG_LAT
    east = (poly[:, 1] - poly[0, 1]) * METERS_PER_DEG_LAT * math.cos(math.radians(lat0))
    seg = np.hypot(np.diff(north), np.diff(east))
    cum = np.concatenate(([0.0], np.cumsum(seg)))
    s = np.clip(fraction, 0.0, 1.0) * cum[-1]
    lat = np.interp(s, cum, poly[:, 0])
    lon = np.interp(s, cum, poly[:, 1])
    return np.column_stack([lat, lon])


# ---------------------------------------------------------------- 遥测

def _lowpass(rng: np.random.Generator, n: int, tau_s: float, sd: float, rate: float) -> np.ndarray:
    """一阶低通噪声，稳态标准差为 sd"""
    a = math.exp(-1.0 / max(tau_s * rate, 1e-9))
    warmup = int(5 * tau_s * rate) + 1
    white = rng.standard_normal(n + warmup)
    out = signal.lfilter([math.sqrt(1.0 - a * a)], [1.0, -a], white)
    return sd * out[warmup:]


@dataclass
class _Timeline:
    kind: np.ndarray
    zone: np.ndarray
    phase: np.ndarray
    speed: np.ndarray
    accelerator: np.ndarray
    brake: np.ndarray
    steering: np.ndarray


def _latent_for(latents: Mapping[str, Mapping[str, float]], target: str, driver_id: str) -> float:
    return float(latents.get(target, {}).get(driver_id, 0.0))


def _couplings_for(config: CohortConfig, channel: ChannelId, scope: str, band: str) -> List[Coupling]:
    return [
        c for c in config.couplings
        if c.measured_channel is channel and c.scope == scope and c.band == band
    ]


def _intersection_pass(
    rng: np.random.Generator,
    rate: float,
    hold_scale: float,
    brake_scale: float,
) -> Dict[str, np.ndarray]:
    """一次路口通过：制动 -> 停住 -> 松刹车 -> 加速转弯"""
    n_brake = int(round(rng.uniform(3.0, 4.5) * rate))
    n_hold = max(1, int(round(np.clip(rng.uniform(1.2, 1.8) * hold_scale, 0.3, 10.0) * rate)))
    n_release = max(2, int(round(0.5 * rate)))
    n_accel = int(round(rng.uniform(4.0, 6.0) * rate))
    n = n_brake + n_hold + n_release + n_accel

    v_in = rng.uniform(26.0, 34.0)
    v_hold = rng.uniform(0.5, 2.5)
    v_out = rng.uniform(20.0, 28.0)
    peak = rng.uniform(0.5, 0.8) * brake_scale

    phase = np.concatenate([
        np.full(n_brake, _BRAKING), np.full(n_hold, _HOLD),
        np.full(n_release, _RELEASE), np.full(n_accel, _ACCEL),
    ])
    speed = np.concatenate([
        np.linspace(v_in, v_hold, n_brake),
        np.full(n_hold, v_hold),
        np.full(n_release, v_hold),
        np.linspace(v_hold, v_out, n_accel),
    ])
    hold_level = 0.5 * peak
    brake = np.concatenate([
        peak * np.sin(np.linspace(0.3, math.pi / 2, n_brake)),
        np.full(n_hold, hold_level),
        hold_level * np.linspace(1.0, 0.0, n_release + 1)[1:],
        np.zeros(n_accel),
    ])
    level = rng.uniform(20.0, 30.0)
    accelerator = np.concatenate([
        np.zeros(n_brake + n_hold + n_release),
        level * np.sin(np.linspace(0.0, math.pi / 2, n_accel)),
    ])
    turn = rng.choice([-1.0, 1.0]) * rng.uniform(60.0, 120.0)
    steering = np.concatenate([
        np.zeros(n_brake + n_hold + n_release),
        turn * np.sin(np.linspace(0.0, math.pi, n_accel)),
    ])
    return {
        "phase": phase, "speed": speed, "brake": brake,
        "accelerator": accelerator, "steering": steering,
    }


def _build_timeline(
    rng: np.random.Generator,
    config: CohortConfig,
    driver_id: str,
    latents: Mapping[str, Mapping[str, float]],
) -> _Timeline:
    rate = config.sample_rate
    pieces: List[Dict[str, np.ndarray]] = []

    def cruise(kind: int, seconds: float, base_speed: float, speed_sd: float, accel_base: float,
               nuisance: float) -> None:
        n = max(2, int(round(seconds * rate)))
        speed = np.clip(base_speed + _lowpass(rng, n, 12.0, speed_sd, rate), 3.0, None)
        accelerator = accel_base + 0.6 * (speed - base_speed) + _lowpass(rng, n, 3.0, 1.5, rate)
        accelerator += _lowpass(rng, n, 0.3, nuisance, rate)
        steering = _lowpass(rng, n, 3.0, 1.5 if kind == _ARTERIAL else 6.0, rate)
        steering += _lowpass(rng, n, 0.2, nuisance * 0.5, rate)
        pieces.append({
            "kind": np.full(n, kind), "zone": np.full(n, -1), "phase": np.full(n, _NONE),
            "speed": speed, "accelerator": accelerator, "brake": np.zeros(n), "steering": steering,
        })

    # 居民区路段的无关抖动，幅度每次驾驶随机
    nuisance = 2.5 * math.exp(rng.normal(0.0, 0.5))
    residential_speed = 30.0 + rng.normal(0.0, 3.0)

    cruise(_LEAD, config.lead_in_s, residential_speed, 3.0, 12.0, nuisance)
    arterial_s = max(0.5 * config.arterial_mean_s, rng.normal(config.arterial_mean_s, config.arterial_sd_s))
    cruise(_ARTERIAL, arterial_s, 50.0 + rng.normal(0.0, 2.0), 3.0, 20.0, 0.0)

    hold_scale, brake_scale = 1.0, 1.0
    for c in _couplings_for(config, ChannelId.BRAKE_PRESSURE, SCOPE_INTERSECTION, BAND_SHORT):
        hold_scale *= math.exp(0.5 * c.effect * _latent_for(latents, c.target, driver_id))
    for c in _couplings_for(config, ChannelId.BRAKE_PRESSURE, SCOPE_INTERSECTION, BAND_LONG):
        brake_scale *= math.exp(0.3 * c.effect * _latent_for(latents, c.target, driver_id))

    for k in range(config.n_intersections):
        cruise(_CONNECTOR, rng.uniform(*config.connector_s), residential_speed, 5.0, 15.0, nuisance)
        profile = _intersection_pass(rng, rate, hold_scale, brake_scale)
        n = profile["phase"].shape[0]
        pieces.append({
            "kind": np.full(n, _PASS), "zone": np.full(n, k), **profile,
        })
    cruise(_CONNECTOR, config.tail_s, residential_speed, 5.0, 15.0, nuisance)

    def cat(key: str) -> np.ndarray:
        return np.concatenate([p[key] for p in pieces])

    return _Timeline(
        kind=cat("kind"), zone=cat("zone"), phase=cat("phase"), speed=cat("speed"),
        accelerator=cat("accelerator"), brake=cat("brake"), steering=cat("steering"),
    )


def _apply_couplings(
    channels: Dict[ChannelId, np.ndarray],
    timeline: _Timeline,
    config: CohortConfig,
    driver_id: str,
    latents: Mapping[str, Mapping[str, float]],
    rng: np.random.Generator,
    targets: Sequence[ChannelId],
) -> None:
    """短频带：按 exp(0.5 * effect * z) 缩放的高频抖动；长频带：effect * z 的偏移"""
    rate = config.sample_rate
    masks = {
        SCOPE_ARTERIAL: timeline.kind == _ARTERIAL,
        SCOPE_INTERSECTION: timeline.phase == _ACCEL,
    }
    for coupling in config.couplings:
        channel = coupling.measured_channel
        if channel not in targets:
            continue
        if channel is ChannelId.BRAKE_PRESSURE and coupling.scope == SCOPE_INTERSECTION:
            continue
        z = _latent_for(latents, coupling.target, driver_id)
        mask = masks[coupling.scope]
        n = int(mask.sum())
        if n == 0:
            continue
        if coupling.band == BAND_SHORT:
            amplitude = JITTER_SD[channel] * math.exp(0.5 * coupling.effect * z)
            amplitude *= math.exp(rng.normal(0.0, 0.1))
            channels[channel][mask] += _lowpass(rng, n, 0.15, amplitude, rate)
        else:
            drift = _lowpass(rng, n, 20.0, 0.3 * LONG_SCALE[channel], rate)
            channels[channel][mask] += coupling.effect * z * LONG_SCALE[channel] + drift


def _positions(timeline: _Timeline, route_map: RouteMap, speed_kmh: np.ndarray, rate: float,
               rng: np.random.Generator) -> np.ndarray:
    n = timeline.kind.shape[0]
    step = speed_kmh / 3.6 / rate
    lat = np.empty(n)
    lon = np.empty(n)
    lat0, lon0 = ORIGIN

    # 起步、连接、收尾路段在干道北侧约 2.2 km 处向东行驶
    other = (timeline.kind == _LEAD) | (timeline.kind == _CONNECTOR)
    east = np.cumsum(np.where(other, step, 0.0))[other]
    d_lat, d_lon = _meters_to_deg(np.zeros_like(east), east, lat0 + 0.02)
    lat[other] = lat0 + 0.02 + d_lat
    lon[other] = lon0 + d_lon

    arterial = timeline.kind == _ARTERIAL
    if arterial.any():
        dist = np.cumsum(step[arterial])
        fraction = dist / dist[-1] if dist[-1] > 0 else np.linspace(0.0, 1.0, dist.size)
        points = _along_polyline(route_map.arterial.polyline, fraction)
        jitter_n, jitter_e = _meters_to_deg(rng.normal(0, 2.0, dist.size), rng.normal(0, 2.0, dist.size), lat0)
        lat[arterial] = points[:, 0] + jitter_n
        lon[arterial] = points[:, 1] + jitter_e

    for k, zone in enumerate(route_map.intersections):
        mask = (timeline.kind == _PASS) & (timeline.zone == k)
        if not mask.any():
            continue
        dist = np.cumsum(step[mask])
        fraction = dist / dist[-1] if dist[-1] > 0 else np.linspace(0.0, 1.0, dist.size)
        offset = (fraction * 2.0 - 1.0) * 0.8 * zone.radius_m
        d_lat, d_lon = _meters_to_deg(np.zeros_like(offset), offset, zone.center[0])
        lat[mask] = zone.center[0] + d_lat
        lon[mask] = zone.center[1] + d_lon

    return np.column_stack([lat, lon])


def _truth_labels(timeline: _Timeline, route_map: RouteMap) -> np.ndarray:
    labels = np.full(timeline.kind.shape[0], OTHER, dtype=object)
    labels[timeline.kind == _ARTERIAL] = ARTERIAL
    for k, zone in enumerate(route_map.intersections):
        labels[(timeline.kind == _PASS) & (timeline.zone == k)] = zone.id
    return labels.astype(str)


def synthesize_session(
    driver_id: str,
    session_index: int,
    config: CohortConfig,
    route_map: RouteMap,
    latents: Mapping[str, Mapping[str, float]],
    rng: np.random.Generator,
) -> Tuple[DriveSession, np.ndarray]:
    """
    生成一次驾驶的 9 个测量通道与轨迹

    Returns:
        (会话, 逐帧真实道路标签)
    """
    rate = config.sample_rate
    timeline = _build_timeline(rng, config, driver_id, latents)
    n = timeline.kind.shape[0]

    channels: Dict[ChannelId, np.ndarray] = {
        ChannelId.SPEED: timeline.speed.copy(),
        ChannelId.ACCELERATOR_POSITION: timeline.accelerator.copy(),
        ChannelId.BRAKE_PRESSURE: timeline.brake.copy(),
        ChannelId.STEERING_ANGLE: timeline.steering.copy(),
    }
    _apply_couplings(channels, timeline, config, driver_id, latents, rng, PRIMARY_CHANNELS)
    channels[ChannelId.SPEED] = np.clip(channels[ChannelId.SPEED], 0.0, None)
    channels[ChannelId.ACCELERATOR_POSITION] = np.clip(channels[ChannelId.ACCELERATOR_POSITION], 0.0, 100.0)
    channels[ChannelId.BRAKE_PRESSURE] = np.clip(channels[ChannelId.BRAKE_PRESSURE], 0.0, None)

    speed_ms = channels[ChannelId.SPEED] / 3.6
    steering = channels[ChannelId.STEERING_ANGLE]
    # 自行车模型：转向比 15，轴距 2.7 m
    yaw_rad = speed_ms * np.tan(np.radians(steering / 15.0)) / 2.7
    channels[ChannelId.YAW_RATE] = np.degrees(yaw_rad) + rng.normal(0.0, 0.05, n)
    channels[ChannelId.LATERAL_ACCEL] = speed_ms * yaw_rad + rng.normal(0.0, 0.02, n)
    channels[ChannelId.FORWARD_ACCEL] = np.gradient(speed_ms) * rate + rng.normal(0.0, 0.02, n)
    channels[ChannelId.EPS_TORQUE] = (
        0.04 * steering + 0.3 * channels[ChannelId.LATERAL_ACCEL] + rng.normal(0.0, 0.05, n)
    )
    channels[ChannelId.FUEL_CONSUMPTION] = (
        0.002 * channels[ChannelId.ACCELERATOR_POSITION] * (1.0 + channels[ChannelId.SPEED] / 100.0)
        + np.abs(rng.normal(0.0, 0.001, n))
    )
    dependent = tuple(c for c in channels if c not in PRIMARY_CHANNELS)
    _apply_couplings(channels, timeline, config, driver_id, latents, rng, dependent)
    channels[ChannelId.FUEL_CONSUMPTION] = np.clip(channels[ChannelId.FUEL_CONSUMPTION], 0.0, None)

    position = _positions(timeline, route_map, channels[ChannelId.SPEED], rate, rng)
    session = DriveSession(
        driver_id=driver_id,
        session_index=session_index,
        sample_rate=rate,
        channels=channels,
        position=position,
        timestamps=np.arange(n) / rate,
    )
    return session, _truth_labels(timeline, route_map)


def generate_cohort(config: CohortConfig, seed: int, jobs: int = 1, progress: bool = False) -> Cohort:
    """
    生成合成队列

    Args:
        config: 队列配置
        seed: 随机种子；特质和每名驾驶者的随机源由 SeedSequence.spawn 派生
        jobs: 并行线程数，结果与线程数无关
        progress: 是否显示进度条
    """
    route_map = build_route_map(config)
    driver_ids = [driver_name(i) for i in range(config.n_drivers)]
    trait_seq, *driver_seqs = np.random.SeedSequence(seed).spawn(1 + config.n_drivers)
    traits, latents = generate_traits(driver_ids, np.random.default_rng(trait_seq))

    def _driver(i: int) -> List[Tuple[DriveSession, np.ndarray]]:
        session_seqs = driver_seqs[i].spawn(config.session_counts[i])
        return [
            synthesize_session(driver_ids[i], k + 1, config, route_map, latents, np.random.default_rng(seq))
            for k, seq in enumerate(session_seqs)
        ]

    indices = range(config.n_drivers)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            per_driver = list(tqdm(pool.map(_driver, indices), total=config.n_drivers,
                                   desc="drivers", disable=not progress))
    else:
        per_driver = [_driver(i) for i in tqdm(indices, desc="drivers", disable=not progress)]

    sessions, labels = [], {}
    for generated in per_driver:
        for session, truth in generated:
            sessions.append(session)
            labels[session.session_id] = truth

    logger.info(
        f"Generated cohort: {config.n_drivers} drivers, {len(sessions)} sessions, "
        f"{len(config.couplings)} couplings (seed={seed})"
    )
    return Cohort(
        sessions=tuple(sessions),
        traits=traits,
        route_map=route_map,
        couplings=config.couplings,
        latents=latents,
        labels=labels,
    )


# ---------------------------------------------------------------- 读写

def _run_length(labels: np.ndarray) -> List[List[Any]]:
    runs: List[List[Any]] = []
    start = 0
    for i in range(1, labels.shape[0] + 1):
        if i == labels.shape[0] or labels[i] != labels[start]:
            runs.append([str(labels[start]), start, i])
            start = i
    return runs


def write_cohort(cohort: Cohort, out_dir: Union[str, Path], store: Optional[ArtifactStore] = None) -> ArtifactStore:
    """
    写出队列目录

    telemetry/<driver>_s<k>.csv、sessions.csv、traits.csv、route_map.json，
    合成队列另有 couplings.json 与 truth.json
    """
    store = store or ArtifactStore(out_dir)
    rows = []
    for session in cohort.sessions:
        name = f"{TELEMETRY_DIR}/{session_file_name(session)}"
        write_session(session, store.path(name))
        store.written.append(name)
        rows.append([session.driver_id, session.session_index, name])
    store.write_csv(SESSIONS_INDEX, ["driver_id", "session_index", "file"], rows)

    write_traits(cohort.traits, store.path(TRAITS_FILE))
    store.written.append(TRAITS_FILE)
    store.write_json(ROUTE_MAP_FILE, cohort.route_map.to_dict())

    if cohort.couplings or cohort.latents:
        store.write_json(COUPLINGS_FILE, {
            "couplings": [c.to_dict() for c in cohort.couplings],
            "latents": {t: dict(v) for t, v in cohort.latents.items()},
        })
    if cohort.labels:
        store.write_json(TRUTH_FILE, {sid: _run_length(lab) for sid, lab in cohort.labels.items()})
    logger.info(f"Wrote cohort with {len(cohort.sessions)} sessions to {store.out_dir}")
    return store


def load_cohort(
    data_dir: Union[str, Path],
    route_map_path: Optional[Union[str, Path]] = None,
    traits_path: Optional[Union[str, Path]] = None,
    default_sample_rate: float = 10.0,
) -> Cohort:
    """
    读取队列目录

    Raises:
        FileNotFoundError: 索引、特质或路线文件不存在
        SchemaError: sessions.csv 缺列
    """
    data_dir = Path(data_dir)
    index_path = data_dir / SESSIONS_INDEX
    if not index_path.exists():
        raise FileNotFoundError(errno.ENOENT, "Session index not found", str(index_path))

    sessions = []
    with open(index_path, "r", encoding="utf-8", newline="") as f:
        reader = csv.DictReader(f)
        missing = {"driver_id", "session_index", "file"} - set(reader.fieldnames or [])
        if missing:
            raise SchemaError(f"{index_path}: missing columns {sorted(missing)}")
        for row in reader:
            try:
                session_index = int(row["session_index"])
            except ValueError:
                raise ValidationError(f"{index_path}: bad session_index {row['session_index']!r}",
                                      row=reader.line_num)
            sessions.append(load_session(
                data_dir / row["file"], row["driver_id"], session_index, default_sample_rate
            ))

    traits = load_traits(traits_path or data_dir / TRAITS_FILE)
    route_map = load_route_map(route_map_path or data_dir / ROUTE_MAP_FILE)

    couplings: Tuple[Coupling, ...] = ()
    latents: Dict[str, Dict[str, float]] = {}
    couplings_path = data_dir / COUPLINGS_FILE
    if couplings_path.exists():
        with open(couplings_path, "r", encoding="utf-8") as f:
            payload = json.load(f)
        couplings = tuple(Coupling.from_dict(c) for c in payload.get("couplings", []))
        latents = payload.get("latents", {})

    labels: Dict[str, np.ndarray] = {}
    truth_path = data_dir / TRUTH_FILE
    if truth_path.exists():
        with open(truth_path, "r", encoding="utf-8") as f:
            for session_id, runs in json.load(f).items():
                n = runs[-1][2] if runs else 0
                arr = np.full(n, OTHER, dtype=object)
                for label, start, stop in runs:
                    arr[start:stop] = label
                labels[session_id] = arr.astype(str)

    logger.info(f"Loaded cohort from {data_dir}: {len(sessions)} sessions, {len(traits)} drivers")
    return Cohort(tuple(sessions), traits, route_map, couplings, latents, labels)
