"""
errors - 流水线异常定义

所有异常都继承 PipelineError，同时继承 ValueError，
调用方按 ValueError 捕获也能工作。
"""

from typing import Any, Optional


class PipelineError(ValueError):
    """流水线异常基类"""


class ParseError(PipelineError):
    """CSV 行无法解析"""

    def __init__(self, message: str, line: Optional[int] = None, path: Optional[str] = None):
        self.line = line
        self.path = path
        where = f"{path}:{line}" if path and line else (f"line {line}" if line else path)
        super().__init__(f"{message} ({where})" if where else message)


class SchemaError(PipelineError):
    """列缺失或列集合不匹配"""


class ValidationError(PipelineError):
    """数值违反约束（时间戳倒退、量表越界等）"""

    def __init__(self, message: str, row: Optional[int] = None):
        self.row = row
        super().__init__(message)


class DerivationError(PipelineError):
    """派生通道已存在或父通道缺失"""


class EmptyTableError(PipelineError):
    """文件没有任何数据行"""


class InsufficientDataError(PipelineError):
    """帧数不足以切分出要求的窗口数"""


class ConsistencyError(PipelineError):
    """会话、分段与特征矩阵之间不一致"""


class EmptyMatrixError(PipelineError):
    """删除缺失列后没有剩余特征"""


class ConvergenceError(PipelineError):
    """迭代求解器在最大轮数内未收敛，携带最后一次迭代结果"""

    def __init__(self, message: str, last_iterate: Any = None, n_iter: int = 0):
        self.last_iterate = last_iterate
        self.n_iter = n_iter
        super().__init__(message)


class DegenerateLabelError(PipelineError):
    """分类训练集中只有一个类别"""


class DegenerateTargetError(PipelineError):
    """目标分数全部相同，无法做中位数切分"""


class UndefinedCorrelationError(PipelineError):
    """方差为零，相关系数无定义"""


class UnsupportedModelError(PipelineError):
    """该模型类型不支持请求的操作"""


class UndefinedShareError(PipelineError):
    """贡献总和为零，占比无定义"""


class ConfigError(PipelineError):
    """配置项非法"""


class FoldError(PipelineError):
    """交叉验证某一折失败，附带折信息"""

    def __init__(self, message: str, fold_index: int, test_driver: str):
        self.fold_index = fold_index
        self.test_driver = test_driver
        super().__init__(f"fold {fold_index} (test driver {test_driver}): {message}")
