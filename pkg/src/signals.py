"""
signals - 车载传感器数据模型

1. 13 个通道的定义（9 个实测 + 4 个一阶差分派生）
2. DriveSession / TraitTable 数据结构
3. 遥测 CSV 与特质 CSV 的读写
"""

import csv
import errno
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from types import MappingProxyType
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np

from errors import (
    DerivationError,
    EmptyTableError,
    ParseError,
    SchemaError,
    ValidationError,
)

logger = logging.getLogger(__name__)

DEFAULT_SAMPLE_RATE = 10.0
SAMPLE_RATE_PREFIX = "# sample_rate_hz="


class ChannelId(str, Enum):
    """传感器通道"""

    STEERING_ANGLE = "steering_angle"
    EPS_TORQUE = "eps_torque"
    FORWARD_ACCEL = "forward_accel"
    LATERAL_ACCEL = "lateral_accel"
    YAW_RATE = "yaw_rate"
    SPEED = "speed"
    ACCELERATOR_POSITION = "accelerator_position"
    BRAKE_PRESSURE = "brake_pressure"
    FUEL_CONSUMPTION = "fuel_consumption"
    STEERING_VELOCITY = "steering_velocity"
    FORWARD_JERK = "forward_jerk"
    LATERAL_JERK = "lateral_jerk"
    ACCELERATOR_RATE = "accelerator_rate"

    @property
    def unit(self) -> str:
        return CHANNEL_UNITS[self]

    @property
    def is_derived(self) -> bool:
        return self in DERIVED_PARENTS


MEASURED_CHANNELS: Tuple[ChannelId, ...] = (
    ChannelId.STEERING_ANGLE,
    ChannelId.EPS_TORQUE,
    ChannelId.FORWARD_ACCEL,
    ChannelId.LATERAL_ACCEL,
    ChannelId.YAW_RATE,
    ChannelId.SPEED,
    ChannelId.ACCELERATOR_POSITION,
    ChannelId.BRAKE_PRESSURE,
    ChannelId.FUEL_CONSUMPTION,
)

# 派生通道 -> 父通道
DERIVED_PARENTS: Mapping[ChannelId, ChannelId] = MappingProxyType({
    ChannelId.STEERING_VELOCITY: ChannelId.STEERING_ANGLE,
    ChannelId.FORWARD_JERK: ChannelId.FORWARD_ACCEL,
    ChannelId.LATERAL_JERK: ChannelId.LATERAL_ACCEL,
    ChannelId.ACCELERATOR_RATE: ChannelId.ACCELERATOR_POSITION,
})

DERIVED_CHANNELS: Tuple[ChannelId, ...] = tuple(DERIVED_PARENTS)
ALL_CHANNELS: Tuple[ChannelId, ...] = MEASURED_CHANNELS + DERIVED_CHANNELS

CHANNEL_UNITS: Mapping[ChannelId, str] = MappingProxyType({
    ChannelId.STEERING_ANGLE: "deg",
    ChannelId.EPS_TORQUE: "Nm",
    ChannelId.FORWARD_ACCEL: "m/s^2",
    ChannelId.LATERAL_ACCEL: "m/s^2",
    ChannelId.YAW_RATE: "deg/s",
    ChannelId.SPEED: "km/h",
    ChannelId.ACCELERATOR_POSITION: "%",
    ChannelId.BRAKE_PRESSURE: "MPa",
    ChannelId.FUEL_CONSUMPTION: "ml",
    ChannelId.STEERING_VELOCITY: "deg/s",
    ChannelId.FORWARD_JERK: "m/s^3",
    ChannelId.LATERAL_JERK: "m/s^3",
    ChannelId.ACCELERATOR_RATE: "%/s",
})

# CSV 列名 -> 通道
CSV_CHANNEL_COLUMNS: Mapping[str, ChannelId] = MappingProxyType({
    "steering_deg": ChannelId.STEERING_ANGLE,
    "eps_torque_nm": ChannelId.EPS_TORQUE,
    "acc_fwd_ms2": ChannelId.FORWARD_ACCEL,
    "acc_lat_ms2": ChannelId.LATERAL_ACCEL,
    "yaw_deg_s": ChannelId.YAW_RATE,
    "speed_kmh": ChannelId.SPEED,
    "accel_pct": ChannelId.ACCELERATOR_POSITION,
    "brake_mpa": ChannelId.BRAKE_PRESSURE,
    "fuel_ml": ChannelId.FUEL_CONSUMPTION,
})

TELEMETRY_HEADER: Tuple[str, ...] = ("t",) + tuple(CSV_CHANNEL_COLUMNS) + ("lat", "lon")


# ---------------------------------------------------------------- 目标定义

COGNITIVE_TARGETS: Tuple[str, ...] = ("tmt_a", "tmt_b", "maze", "ufov")
DSQ_ITEMS: Tuple[str, ...] = tuple(f"dsq_{i}" for i in range(1, 9))
WSQ_ITEMS: Tuple[str, ...] = tuple(f"wsq_{i}" for i in range(1, 11))
QUESTIONNAIRE_TARGETS: Tuple[str, ...] = DSQ_ITEMS + WSQ_ITEMS
ALL_TARGETS: Tuple[str, ...] = COGNITIVE_TARGETS + QUESTIONNAIRE_TARGETS

TRAITS_HEADER: Tuple[str, ...] = ("driver_id",) + ALL_TARGETS

DSQ_SCALE = (1, 4)
WSQ_SCALE = (1, 5)

TARGET_CAPTIONS: Mapping[str, str] = MappingProxyType({
    "tmt_a": "TMT (A) [s]",
    "tmt_b": "TMT (B) [s]",
    "maze": "Maze task [s]",
    "ufov": "UFOV [ms]",
    "dsq_1": "Confidence in driving skill",
    "dsq_2": "Hesitation for driving",
    "dsq_3": "Impatience in driving",
    "dsq_4": "Methodical driving",
    "dsq_5": "Preparatory maneuvers at traffic signals",
    "dsq_6": "Importance of automobile for self-expression",
    "dsq_7": "Moodiness in driving",
    "dsq_8": "Anxiety about traffic accidents",
    "wsq_1": "Understanding of traffic conditions",
    "wsq_2": "Understanding of road conditions",
    "wsq_3": "Interference with concentration",
    "wsq_4": "Decline in physical activity",
    "wsq_5": "Disturbance on the pace of driving",
    "wsq_6": "Physical pain",
    "wsq_7": "Path understanding and search",
    "wsq_8": "In-vehicle environment",
    "wsq_9": "Control operation",
    "wsq_10": "Driving posture",
})


def is_regression_target(target: str) -> bool:
    """认知测试是回归目标，问卷条目是分类目标"""
    if target not in ALL_TARGETS:
        raise ValidationError(f"Unknown target: {target}")
    return target in COGNITIVE_TARGETS


def target_scale(target: str) -> Optional[Tuple[int, int]]:
    if target in DSQ_ITEMS:
        return DSQ_SCALE
    if target in WSQ_ITEMS:
        return WSQ_SCALE
    return None


# ---------------------------------------------------------------- 会话

def _frozen_array(values: Iterable[float], dtype=float) -> np.ndarray:
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DriveSession:
    """
    一名驾驶者的一次驾驶

    Attributes:
        driver_id: 驾驶者标识
        session_index: 第几次驾驶（1 或 2）
        sample_rate: 采样率 (Hz)
        channels: 通道 -> 等长采样序列（只读）
        position: (n, 2) 的 (lat, lon) 轨迹
        timestamps: 原始时间戳（秒），从文件加载时保留
    """

    driver_id: str
    session_index: int
    sample_rate: float
    channels: Mapping[ChannelId, np.ndarray]
    position: np.ndarray
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self):
        if not self.driver_id:
            raise ValidationError("driver_id must be non-empty")
        if self.session_index not in (1, 2):
            raise ValidationError(f"session_index must be 1 or 2, got {self.session_index}")
        if not (math.isfinite(self.sample_rate) and self.sample_rate > 0):
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")

        frozen: Dict[ChannelId, np.ndarray] = {}
        length = None
        for key, series in self.channels.items():
            channel = ChannelId(key)
            arr = _frozen_array(series)
            if arr.ndim != 1:
                raise ValidationError(f"Channel {channel.value} must be one-dimensional")
            if length is None:
                length = arr.shape[0]
            elif arr.shape[0] != length:
                raise ValidationError(
                    f"Channel {channel.value} has length {arr.shape[0]}, expected {length}"
                )
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"Channel {channel.value} contains non-finite samples")
            frozen[channel] = arr

        if length is None:
            raise ValidationError("Session has no channels")
        if length < 2:
            raise ValidationError(f"Session needs at least 2 samples, got {length}")

        position = _frozen_array(self.position)
        if position.shape != (length, 2):
            raise ValidationError(
                f"Position trace has shape {position.shape}, expected ({length}, 2)"
            )

        object.__setattr__(self, "channels", MappingProxyType(frozen))
        object.__setattr__(self, "position", position)
        if self.timestamps is not None:
            timestamps = _frozen_array(self.timestamps)
            if timestamps.shape != (length,):
                raise ValidationError("Timestamps must align with channel samples")
            object.__setattr__(self, "timestamps", timestamps)

    @property
    def session_id(self) -> str:
        return f"{self.driver_id}#{self.session_index}"

    @property
    def length(self) -> int:
        return next(iter(self.channels.values())).shape[0]

    @property
    def duration(self) -> float:
        """首尾采样之间的时长（秒）"""
        return (self.length - 1) / self.sample_rate

    @property
    def has_derived(self) -> bool:
        return any(c in self.channels for c in DERIVED_CHANNELS)

    def channel(self, channel: ChannelId) -> np.ndarray:
        try:
            return self.channels[ChannelId(channel)]
        except KeyError:
            raise SchemaError(f"Session {self.session_id} has no channel {ChannelId(channel).value}")

    def channel_block(self, channels: Sequence[ChannelId] = ALL_CHANNELS) -> np.ndarray:
        """按给定顺序堆叠通道，返回 (通道数, 帧数) 矩阵"""
        return np.vstack([self.channel(c) for c in channels])

    def with_channels(self, extra: Mapping[ChannelId, np.ndarray]) -> "DriveSession":
        merged = dict(self.channels)
        merged.update(extra)
        return DriveSession(
            driver_id=self.driver_id,
            session_index=self.session_index,
            sample_rate=self.sample_rate,
            channels=merged,
            position=self.position,
            timestamps=self.timestamps,
        )


def _read_sample_rate(first_line: str, default: float) -> Tuple[float, bool]:
    """解析可选的首行注释 '# sample_rate_hz=10'"""
    if not first_line.startswith("#"):
        return default, False
    text = first_line.strip()
    if not text.startswith(SAMPLE_RATE_PREFIX):
        raise ParseError(f"Unrecognized header comment: {text!r}", line=1)
    try:
        rate = float(text[len(SAMPLE_RATE_PREFIX):])
    except ValueError:
        raise ParseError(f"Invalid sample rate in header: {text!r}", line=1)
    if not (math.isfinite(rate) and rate > 0):
        raise ValidationError(f"Sample rate must be positive, got {rate}", row=0)
    return rate, True


def load_session(
    telemetry_file: Union[str, Path],
    driver_id: str,
    session_index: int,
    default_sample_rate: float = DEFAULT_SAMPLE_RATE,
) -> DriveSession:
    """
    读取遥测 CSV，得到只含 9 个实测通道的 DriveSession

    Args:
        telemetry_file: CSV 路径，表头见 TELEMETRY_HEADER
        driver_id: 驾驶者标识
        session_index: 1 或 2
        default_sample_rate: 文件首行未声明采样率时使用

    Returns:
        DriveSession（不含派生通道）

    Raises:
        FileNotFoundError: 文件不存在
        SchemaError: 缺少必需列
        ParseError: 某行无法解析（消息中带行号）
        ValidationError: 时间戳非严格递增
        EmptyTableError: 没有数据行
    """
    path = Path(telemetry_file)
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, "Telemetry file not found", str(path))

    with open(path, "r", encoding="utf-8", newline="") as f:
        first_line = f.readline()
        sample_rate, has_comment = _read_sample_rate(first_line, default_sample_rate)
        line_offset = 1 if has_comment else 0
        if not has_comment:
            f.seek(0)

        reader = csv.reader(f)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise EmptyTableError(f"Telemetry file is empty: {path}")

        missing = [col for col in TELEMETRY_HEADER if col not in header]
        if missing:
            raise SchemaError(f"Telemetry file {path} is missing columns: {missing}")
        index = {col: header.index(col) for col in TELEMETRY_HEADER}

        rows: List[List[float]] = []
        for fields in reader:
            line = reader.line_num + line_offset
            if not fields or all(not v.strip() for v in fields):
                continue
            if len(fields) != len(header):
                raise ParseError(
                    f"Expected {len(header)} fields, got {len(fields)}", line=line, path=str(path)
                )
            try:
                values = [float(fields[index[col]]) for col in TELEMETRY_HEADER]
            except ValueError as e:
                raise ParseError(f"Malformed value: {e}", line=line, path=str(path))
            if not all(math.isfinite(v) for v in values):
                raise ParseError("Non-finite value", line=line, path=str(path))
            rows.append(values)

    if not rows:
        raise EmptyTableError(f"Telemetry file has no data rows: {path}")

    data = np.array(rows, dtype=float)
    timestamps = data[:, 0]
    steps = np.diff(timestamps)
    bad = np.flatnonzero(steps <= 0)
    if bad.size:
        row = int(bad[0]) + 2  # 数据行从 1 开始计
        raise ValidationError(
            f"Timestamps not strictly increasing at row {row} of {path}", row=row
        )

    if steps.size:
        median_step = float(np.median(steps))
        expected = 1.0 / sample_rate
        if abs(median_step - expected) > 0.05 * expected:
            logger.warning(
                f"{path.name}: median timestamp step {median_step:.4f}s "
                f"does not match sample rate {sample_rate} Hz"
            )

    channels = {
        channel: data[:, TELEMETRY_HEADER.index(col)]
        for col, channel in CSV_CHANNEL_COLUMNS.items()
    }
    position = data[:, [TELEMETRY_HEADER.index("lat"), TELEMETRY_HEADER.index("lon")]]

    session = DriveSession(
        driver_id=driver_id,
        session_index=session_index,
        sample_rate=sample_rate,
        channels=channels,
        position=position,
        timestamps=timestamps,
    )
    logger.debug(
        f"Loaded session {session.session_id}: {session.length} frames at {sample_rate} Hz"
    )
    return session


def write_session(session: DriveSession, telemetry_file: Union[str, Path]) -> None:
    """写出遥测 CSV（只写实测通道），load_session 可逐位读回"""
    path = Path(telemetry_file)
    path.parent.mkdir(parents=True, exist_ok=True)

    if session.timestamps is not None:
        timestamps = session.timestamps
    else:
        timestamps = np.arange(session.length) / session.sample_rate

    columns = [timestamps]
    columns += [session.channel(channel) for channel in CSV_CHANNEL_COLUMNS.values()]
    columns += [session.position[:, 0], session.position[:, 1]]

    with open(path, "w", encoding="utf-8", newline="") as f:
        f.write(f"{SAMPLE_RATE_PREFIX}{session.sample_rate!r}\n")
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(TELEMETRY_HEADER)
        for i in range(session.length):
            writer.writerow([repr(float(col[i])) for col in columns])


def derive_channels(session: DriveSession) -> DriveSession:
    """
    计算 4 个一阶差分派生通道

    derived[t] = (parent[t] - parent[t-1]) * sample_rate，derived[0] = 0，
    长度与父通道一致。

    Raises:
        DerivationError: 派生通道已存在，或父通道缺失
    """
    present = [c.value for c in DERIVED_CHANNELS if c in session.channels]
    if present:
        raise DerivationError(
            f"Session {session.session_id} already has derived channels: {present}"
        )

    derived = {}
    for child, parent in DERIVED_PARENTS.items():
        if parent not in session.channels:
            raise DerivationError(
                f"Session {session.session_id} lacks parent channel {parent.value}"
            )
        series = session.channels[parent]
        derived[child] = np.diff(series, prepend=series[0]) * session.sample_rate

    return session.with_channels(derived)


# ---------------------------------------------------------------- 特质表

@dataclass(frozen=True)
class DriverTraits:
    """一名驾驶者的 22 个目标分数"""

    driver_id: str
    tmt_a: float
    tmt_b: float
    maze: float
    ufov: float
    dsq: Tuple[int, ...]
    wsq: Tuple[int, ...]

    def __post_init__(self):
        for name in COGNITIVE_TARGETS:
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise ValidationError(
                    f"Driver {self.driver_id}: {name} must be positive, got {value}"
                )
        object.__setattr__(self, "dsq", tuple(int(v) for v in self.dsq))
        object.__setattr__(self, "wsq", tuple(int(v) for v in self.wsq))
        if len(self.dsq) != len(DSQ_ITEMS) or len(self.wsq) != len(WSQ_ITEMS):
            raise ValidationError(f"Driver {self.driver_id}: expected 8 DSQ and 10 WSQ items")
        for items, names, (low, high) in (
            (self.dsq, DSQ_ITEMS, DSQ_SCALE),
            (self.wsq, WSQ_ITEMS, WSQ_SCALE),
        ):
            for name, value in zip(names, items):
                if not low <= value <= high:
                    raise ValidationError(
                        f"Driver {self.driver_id}: {name}={value} outside {low}..{high}"
                    )

    def value(self, target: str) -> float:
        if target in COGNITIVE_TARGETS:
            return float(getattr(self, target))
        if target in DSQ_ITEMS:
            return float(self.dsq[DSQ_ITEMS.index(target)])
        if target in WSQ_ITEMS:
            return float(self.wsq[WSQ_ITEMS.index(target)])
        raise ValidationError(f"Unknown target: {target}")

    def as_row(self) -> Dict[str, Union[str, float, int]]:
        row: Dict[str, Union[str, float, int]] = {"driver_id": self.driver_id}
        for name in COGNITIVE_TARGETS:
            row[name] = getattr(self, name)
        row.update(zip(DSQ_ITEMS, self.dsq))
        row.update(zip(WSQ_ITEMS, self.wsq))
        return row

    @classmethod
    def from_scores(cls, driver_id: str, scores: Mapping[str, float]) -> "DriverTraits":
        return cls(
            driver_id=driver_id,
            tmt_a=float(scores["tmt_a"]),
            tmt_b=float(scores["tmt_b"]),
            maze=float(scores["maze"]),
            ufov=float(scores["ufov"]),
            dsq=tuple(int(scores[name]) for name in DSQ_ITEMS),
            wsq=tuple(int(scores[name]) for name in WSQ_ITEMS),
        )


@dataclass(frozen=True)
class TraitTable:
    """driver_id -> DriverTraits，保持插入顺序"""

    rows: Mapping[str, DriverTraits] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "rows", MappingProxyType(dict(self.rows)))

    def __len__(self) -> int:
        return len(self.rows)

    def __contains__(self, driver_id: object) -> bool:
        return driver_id in self.rows

    @property
    def drivers(self) -> Tuple[str, ...]:
        return tuple(self.rows)

    def get(self, driver_id: str) -> DriverTraits:
        return self.rows[driver_id]

    def scores(self, target: str, drivers: Optional[Sequence[str]] = None) -> Dict[str, float]:
        """某个目标的 driver -> 分数"""
        ids = self.drivers if drivers is None else drivers
        return {d: self.rows[d].value(target) for d in ids}

    def with_scores(self, target: str, scores: Mapping[str, float]) -> "TraitTable":
        """替换一个目标列，返回新表"""
        rows = {}
        for driver_id, traits in self.rows.items():
            row = traits.as_row()
            row[target] = scores[driver_id]
            rows[driver_id] = DriverTraits.from_scores(driver_id, row)
        return TraitTable(rows)

    @classmethod
    def from_traits(cls, traits: Iterable[DriverTraits]) -> "TraitTable":
        rows: Dict[str, DriverTraits] = {}
        for item in traits:
            if item.driver_id in rows:
                raise ValidationError(f"Duplicate driver_id: {item.driver_id}")
            rows[item.driver_id] = item
        return cls(rows)


def _parse_ordinal(text: str, name: str, row: int) -> int:
    try:
        value = float(text)
    except ValueError:
        raise ValidationError(f"Row {row}: {name}={text!r} is not a number", row=row)
    if not value.is_integer():
        raise ValidationError(f"Row {row}: {name}={text!r} is not an integer", row=row)
    return int(value)


def load_traits(traits_file: Union[str, Path]) -> TraitTable:
    """
    读取特质 CSV

    Raises:
        FileNotFoundError: 文件不存在
        EmptyTableError: 没有数据行
        SchemaError: 缺少必需列
        ValidationError: driver_id 重复、量表越界或认知分数非正
    """
    path = Path(traits_file)
    if not path.exists():
        raise FileNotFoundError(errno.ENOENT, "Traits file not found", str(path))

    traits: List[DriverTraits] = []
    seen = set()
    with open(path, "r", encoding="utf-8-sig", newline="") as f:
        reader = csv.DictReader(f)
        if reader.fieldnames is None:
            raise EmptyTableError(f"Traits file is empty: {path}")
        missing = [col for col in TRAITS_HEADER if col not in reader.fieldnames]
        if missing:
            raise SchemaError(f"Traits file {path} is missing columns: {missing}")

        for row_number, row in enumerate(reader, start=1):
            driver_id = (row.get("driver_id") or "").strip()
            if not driver_id:
                raise ValidationError(f"Row {row_number}: empty driver_id", row=row_number)
            if driver_id in seen:
                raise ValidationError(f"Row {row_number}: duplicate driver_id {driver_id}", row=row_number)
            seen.add(driver_id)

            scores: Dict[str, float] = {}
            for name in COGNITIVE_TARGETS:
                try:
                    scores[name] = float(row[name])
                except (TypeError, ValueError):
                    raise ParseError(f"Malformed {name}={row[name]!r}", line=reader.line_num, path=str(path))
            for name in QUESTIONNAIRE_TARGETS:
                scores[name] = _parse_ordinal(row[name], name, row_number)

            try:
                traits.append(DriverTraits.from_scores(driver_id, scores))
            except ValidationError as e:
                raise ValidationError(f"Row {row_number}: {e}", row=row_number) from e

    if not traits:
        raise EmptyTableError(f"Traits file has no data rows: {path}")

    logger.info(f"Loaded traits for {len(traits)} drivers from {path}")
    return TraitTable.from_traits(traits)


def write_traits(table: TraitTable, traits_file: Union[str, Path]) -> None:
    path = Path(traits_file)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=TRAITS_HEADER, lineterminator="\n")
        writer.writeheader()
        for traits in table.rows.values():
            row = traits.as_row()
            for name in COGNITIVE_TARGETS:
                row[name] = repr(float(row[name]))
            writer.writerow(row)
