"""
reporting - 结果文件输出

1. 原子写 JSON / CSV（临时文件 + os.replace）
2. 每个输出目录一个 manifest.json
3. 回归结果的真值-预测散点图（SVG）

输出不含时间戳，相同输入 + 种子 + 版本得到逐字节相同的 CSV/JSON。
"""

import csv
import io
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Optional, Sequence, Union

import numpy as np

logger = logging.getLogger(__name__)

TOOL_VERSION = "1.0.0"
MANIFEST_FILE = "manifest.json"
ERROR_FILE = "error.json"


def json_ready(obj: Any) -> Any:
    """
    把结果对象转换成可 JSON 序列化的结构

    numpy 标量/数组转成 Python 类型，NaN/inf 转成 None，Enum 取 value
    """
    if isinstance(obj, dict):
        return {str(json_ready(k)): json_ready(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [json_ready(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [json_ready(v) for v in obj.tolist()]
    if isinstance(obj, Enum):
        return obj.value
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    if isinstance(obj, Path):
        return str(obj)
    return obj


def format_float(value: Optional[float]) -> str:
    """CSV 中的浮点数：repr 保证往返精确，缺失为空串"""
    if value is None:
        return ""
    value = float(value)
    return repr(value) if math.isfinite(value) else ""


class ArtifactStore:
    """
    输出目录

    功能:
    1. 原子写 JSON / CSV / 文本
    2. 记录本次写出的文件
    """

    def __init__(self, out_dir: Union[str, Path]):
        """
        Args:
            out_dir: 输出目录，不存在时自动创建
        """
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.written: List[str] = []

    def path(self, name: str) -> Path:
        return self.out_dir / name

    def _atomic_write(self, name: str, text: str) -> Path:
        """
        原子写文件

        先写临时文件再 os.replace，写入中途崩溃不会留下半个文件
        """
        target = self.path(name)
        target.parent.mkdir(parents=True, exist_ok=True)
        temp_file = target.with_name(target.name + ".tmp")
        try:
            with open(temp_file, "w", encoding="utf-8", newline="") as f:
                f.write(text)
            os.replace(temp_file, target)
        except Exception:
            if temp_file.exists():
                temp_file.unlink()
            raise
        if name not in self.written:
            self.written.append(name)
        logger.debug(f"Wrote {target}")
        return target

    def write_json(self, name: str, data: Any) -> Path:
        text = json.dumps(json_ready(data), ensure_ascii=False, indent=2, sort_keys=True,
                          allow_nan=False)
        return self._atomic_write(name, text + "\n")

    def write_csv(self, name: str, header: Sequence[str], rows: Iterable[Sequence[Any]]) -> Path:
        buffer = io.StringIO()
        writer = csv.writer(buffer, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([format_float(v) if isinstance(v, (float, np.floating)) else v for v in row])
        return self._atomic_write(name, buffer.getvalue())

    def write_text(self, name: str, text: str) -> Path:
        return self._atomic_write(name, text)

    def read_json(self, name: str) -> Any:
        with open(self.path(name), "r", encoding="utf-8") as f:
            return json.load(f)


@dataclass(frozen=True)
class RunManifest:
    """
    一次运行的记录

    Attributes:
        subcommand: gen / featurize / eval / importance / repro
        config_path: 配置文件
        seed: 随机种子
        inputs: 输入路径与选项
        outputs: 写出的文件（相对输出目录）
        tool_version: 工具版本
    """

    subcommand: str
    config_path: Optional[str]
    seed: Optional[int]
    inputs: Dict[str, Any] = field(default_factory=dict)
    outputs: List[str] = field(default_factory=list)
    tool_version: str = TOOL_VERSION

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["outputs"] = sorted(self.outputs)
        return data


def write_manifest(store: ArtifactStore, manifest: RunManifest) -> Path:
    """写 manifest.json，输出列表取自 store 已写出的文件"""
    outputs = [name for name in store.written if name != MANIFEST_FILE]
    full = RunManifest(
        subcommand=manifest.subcommand,
        config_path=manifest.config_path,
        seed=manifest.seed,
        inputs=dict(manifest.inputs),
        outputs=outputs,
        tool_version=manifest.tool_version,
    )
    return store.write_json(MANIFEST_FILE, full.to_dict())


def write_error(out_dir: Union[str, Path], error: BaseException, subcommand: str) -> Path:
    """失败时写 error.json"""
    payload: Dict[str, Any] = {
        "subcommand": subcommand,
        "error": type(error).__name__,
        "message": str(error),
    }
    for attr in ("filename", "line", "row", "path", "fold_index", "test_driver"):
        value = getattr(error, attr, None)
        if value is not None:
            payload["path" if attr == "filename" else attr] = value
    return ArtifactStore(out_dir).write_json(ERROR_FILE, payload)


def scatter_svg(
    store: ArtifactStore,
    name: str,
    truth: Sequence[float],
    predicted: Sequence[float],
    title: str,
) -> Path:
    """真值-预测散点图，带 y = x 参考线"""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    matplotlib.rcParams["svg.hashsalt"] = "drivetraits"
    matplotlib.rcParams["svg.fonttype"] = "none"

    truth = np.asarray(truth, dtype=float)
    predicted = np.asarray(predicted, dtype=float)
    fig, ax = plt.subplots(figsize=(4, 4))
    try:
        ax.scatter(truth, predicted, s=14)
        lo = float(np.nanmin(np.concatenate([truth, predicted])))
        hi = float(np.nanmax(np.concatenate([truth, predicted])))
        ax.plot([lo, hi], [lo, hi], linestyle="--", linewidth=0.8, color="grey")
        ax.set_xlabel("truth")
        ax.set_ylabel("predicted")
        ax.set_title(title, fontsize=9)
        buffer = io.StringIO()
        fig.savefig(buffer, format="svg", metadata={"Date": None})
    finally:
        plt.close(fig)
    return store.write_text(name, buffer.getvalue())
