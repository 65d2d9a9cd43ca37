"""
models - 回归与分类模型

所有模型都在标准化后的特征上训练（按训练集均值、总体标准差），
系数以标准化单位报告。截距不做正则化。

- ridge:  最小化 ||y - Xb||^2 + lambda ||b||^2
- lasso:  最小化 (1/2n) ||y - Xb||^2 + lambda ||b||_1（坐标下降）
- logistic_l2: 最小化 平均对数损失 + (1/2C) ||b||^2（L-BFGS）
- linear_svm:  最小化 (1/2) ||b||^2 + C * sum hinge（对偶 SMO）
- random_forest_reg / random_forest_clf
"""

import json
import logging
import math
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy import linalg, optimize
from scipy.special import expit

from errors import (
    ConvergenceError,
    DegenerateLabelError,
    SchemaError,
    ValidationError,
)
from forest import TASK_CLASSIFICATION, TASK_REGRESSION, RandomForest

logger = logging.getLogger(__name__)

REGULARIZATION_GRID: Tuple[float, ...] = (0.001, 0.01, 0.1, 1.0, 10.0, 100.0)
DEPTH_GRID: Tuple[int, ...] = (3, 5, 7, 9, 11)
DEFAULT_N_TREES = 200
SCALE_FLOOR = 1e-12


class ModelKind(str, Enum):
    RIDGE = "ridge"
    LASSO = "lasso"
    LOGISTIC_L2 = "logistic_l2"
    LINEAR_SVM = "linear_svm"
    RANDOM_FOREST_REG = "random_forest_reg"
    RANDOM_FOREST_CLF = "random_forest_clf"

    @property
    def is_classifier(self) -> bool:
        return self in (ModelKind.LOGISTIC_L2, ModelKind.LINEAR_SVM, ModelKind.RANDOM_FOREST_CLF)

    @property
    def is_linear(self) -> bool:
        return self not in (ModelKind.RANDOM_FOREST_REG, ModelKind.RANDOM_FOREST_CLF)

    @property
    def is_forest(self) -> bool:
        return not self.is_linear

    @property
    def param_name(self) -> str:
        if self in (ModelKind.RIDGE, ModelKind.LASSO):
            return "lambda"
        if self.is_forest:
            return "max_depth"
        return "C"

    @property
    def default_grid(self) -> Tuple[float, ...]:
        return DEPTH_GRID if self.is_forest else REGULARIZATION_GRID


REGRESSION_MODELS = (ModelKind.RIDGE, ModelKind.LASSO, ModelKind.RANDOM_FOREST_REG)
CLASSIFICATION_MODELS = (ModelKind.LOGISTIC_L2, ModelKind.LINEAR_SVM, ModelKind.RANDOM_FOREST_CLF)


@dataclass(frozen=True)
class ModelSpec:
    """
    模型类型 + 超参数

    Attributes:
        kind: 模型类型
        param: lambda（ridge/lasso）、C（logistic/svm）或 max_depth（森林）
        n_trees: 森林的树数
        seed: 森林随机种子
        bootstrap: 森林是否 bootstrap
        strict_grid: 为 True 时 param 必须在默认网格内
    """

    kind: ModelKind
    param: float
    n_trees: int = DEFAULT_N_TREES
    seed: int = 0
    bootstrap: bool = True
    strict_grid: bool = False

    def __post_init__(self):
        kind = ModelKind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not math.isfinite(self.param):
            raise ValidationError(f"{kind.value}: {kind.param_name} must be finite")
        if kind in (ModelKind.RIDGE, ModelKind.LASSO) and self.param < 0:
            raise ValidationError(f"{kind.value}: lambda must be >= 0, got {self.param}")
        if kind in (ModelKind.LOGISTIC_L2, ModelKind.LINEAR_SVM) and self.param <= 0:
            raise ValidationError(f"{kind.value}: C must be > 0, got {self.param}")
        if kind.is_forest:
            if self.param < 1 or float(self.param) != int(self.param):
                raise ValidationError(f"{kind.value}: max_depth must be a positive integer")
            if self.n_trees < 1:
                raise ValidationError("n_trees must be >= 1")
        if self.strict_grid and not any(
            math.isclose(self.param, g, rel_tol=1e-12) for g in kind.default_grid
        ):
            raise ValidationError(
                f"{kind.value}: {kind.param_name}={self.param} is not in {kind.default_grid}"
            )


# ---------------------------------------------------------------- 标准化

@dataclass(frozen=True)
class Standardizer:
    """按列减均值、除总体标准差；常数列的 scale 取 1"""

    center: np.ndarray
    scale: np.ndarray

    @classmethod
    def fit(cls, X: np.ndarray) -> "Standardizer":
        X = np.asarray(X, dtype=float)
        center = X.mean(axis=0)
        constant = np.all(X == X[:1], axis=0)
        center[constant] = X[0, constant]
        scale = X.std(axis=0)
        scale[constant | (scale < SCALE_FLOOR)] = 1.0
        return cls(center, scale)

    def transform(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.center) / self.scale

    def to_dict(self) -> Dict[str, List[float]]:
        return {"center": self.center.tolist(), "scale": self.scale.tolist()}

    @classmethod
    def from_dict(cls, data: Dict[str, List[float]]) -> "Standardizer":
        return cls(np.asarray(data["center"], dtype=float), np.asarray(data["scale"], dtype=float))


# ---------------------------------------------------------------- 拟合结果

@dataclass(frozen=True)
class Prediction:
    """values 为预测值/类别；scores 为连续打分（回归时与 values 相同）"""

    values: np.ndarray
    scores: np.ndarray


@dataclass(frozen=True)
class FittedModel:
    """
    训练好的模型（不可变）

    Attributes:
        kind: 模型类型
        params: 超参数
        feature_names: 训练时的特征列
        standardizer: 训练集标准化参数
        coef: 线性模型的标准化系数
        intercept: 截距
        forest: 森林模型
        classes: 分类时的类别（升序）
        history: 每轮迭代的目标函数值
        converged: 求解器是否达到容差
        n_iter: 迭代轮数
    """

    kind: ModelKind
    params: Dict[str, float]
    feature_names: Tuple[str, ...]
    standardizer: Standardizer
    coef: Optional[np.ndarray] = None
    intercept: float = 0.0
    forest: Optional[RandomForest] = None
    classes: Tuple[float, ...] = ()
    history: Tuple[float, ...] = field(default=(), repr=False)
    converged: bool = True
    n_iter: int = 0

    @property
    def is_classifier(self) -> bool:
        return self.kind.is_classifier

    @property
    def decision_threshold(self) -> float:
        """分数大于阈值判为较大类别"""
        return 0.5 if self.kind is ModelKind.RANDOM_FOREST_CLF else 0.0

    @property
    def raw_coef(self) -> np.ndarray:
        """换算回原始特征单位的系数"""
        return self.coef / self.standardizer.scale

    @property
    def raw_intercept(self) -> float:
        return float(self.intercept - np.dot(self.raw_coef, self.standardizer.center))

    @property
    def objective(self) -> Optional[float]:
        return self.history[-1] if self.history else None

    def to_dict(self) -> Dict[str, Any]:
        return {
            "kind": self.kind.value,
            "params": dict(self.params),
            "feature_names": list(self.feature_names),
            "standardizer": self.standardizer.to_dict(),
            "coef": None if self.coef is None else self.coef.tolist(),
            "intercept": self.intercept,
            "forest": None if self.forest is None else self.forest.to_dict(),
            "classes": list(self.classes),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "objective": self.objective,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "FittedModel":
        objective = data.get("objective")
        return cls(
            kind=ModelKind(data["kind"]),
            params=dict(data["params"]),
            feature_names=tuple(data["feature_names"]),
            standardizer=Standardizer.from_dict(data["standardizer"]),
            coef=None if data.get("coef") is None else np.asarray(data["coef"], dtype=float),
            intercept=float(data.get("intercept", 0.0)),
            forest=None if data.get("forest") is None else RandomForest.from_dict(data["forest"]),
            classes=tuple(float(c) for c in data.get("classes", [])),
            history=() if objective is None else (float(objective),),
            converged=bool(data.get("converged", True)),
            n_iter=int(data.get("n_iter", 0)),
        )

    def save(self, path: Union[str, Path]) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            json.dump(self.to_dict(), f, indent=2, sort_keys=True)
            f.write("\n")

    @classmethod
    def load(cls, path: Union[str, Path]) -> "FittedModel":
        with open(path, "r", encoding="utf-8") as f:
            return cls.from_dict(json.load(f))


# ---------------------------------------------------------------- 输入检查

def _check_xy(X, y) -> Tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if X.ndim != 2:
        raise ValidationError(f"X must be two-dimensional, got shape {X.shape}")
    if y.ndim != 1 or y.shape[0] != X.shape[0]:
        raise ValidationError(f"y has shape {y.shape}, expected ({X.shape[0]},)")
    if X.shape[0] < 1 or X.shape[1] < 1:
        raise ValidationError(f"Empty training matrix {X.shape}")
    if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValidationError("Training inputs contain non-finite values")
    return X, y


def _names(feature_names: Optional[Sequence[str]], p: int) -> Tuple[str, ...]:
    if feature_names is None:
        return tuple(f"x{j}" for j in range(p))
    names = tuple(str(n) for n in feature_names)
    if len(names) != p:
        raise SchemaError(f"{len(names)} feature names for {p} columns")
    return names


def _binary_classes(y: np.ndarray) -> Tuple[float, float]:
    classes = np.unique(y)
    if classes.size < 2:
        raise DegenerateLabelError(f"Training labels contain a single class {classes.tolist()}")
    if classes.size > 2:
        raise ValidationError(f"Expected two classes, got {classes.tolist()}")
    return float(classes[0]), float(classes[1])


def _spd_solve(A: np.ndarray, b: np.ndarray) -> np.ndarray:
    """对称正定求解，奇异时退回最小范数解"""
    try:
        return linalg.solve(A, b, assume_a="pos")
    except (linalg.LinAlgError, ValueError):
        return np.linalg.lstsq(A, b, rcond=None)[0]


# ---------------------------------------------------------------- ridge

def ridge_objective(Z: np.ndarray, yc: np.ndarray, beta: np.ndarray, lam: float) -> float:
    resid = yc - Z @ beta
    return float(resid @ resid + lam * beta @ beta)


def ridge_fit(X, y, lam: float, feature_names: Optional[Sequence[str]] = None) -> FittedModel:
    """
    闭式解岭回归

    p <= n 时解 (Z'Z + lambda I) b = Z'y；p > n 时走对偶形式
    b = Z' (ZZ' + lambda I)^-1 y，两种情况都做一次残差修正。
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    names = _names(feature_names, X.shape[1])
    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)
    y_mean = float(y.mean())
    yc = y - y_mean
    n, p = Z.shape

    if p <= n:
        A = Z.T @ Z + lam * np.eye(p)
        beta = _spd_solve(A, Z.T @ yc)
        for _ in range(2):
            residual = Z.T @ yc - A @ beta
            if np.linalg.norm(residual) <= 1e-12 * max(1.0, np.linalg.norm(Z.T @ yc)):
                break
            beta = beta + _spd_solve(A, residual)
    else:
        K = Z @ Z.T + lam * np.eye(n)
        alpha = _spd_solve(K, yc)
        for _ in range(2):
            residual = yc - K @ alpha
            if np.linalg.norm(residual) <= 1e-12 * max(1.0, np.linalg.norm(yc)):
                break
            alpha = alpha + _spd_solve(K, residual)
        beta = Z.T @ alpha

    history = (ridge_objective(Z, yc, np.zeros(p), lam), ridge_objective(Z, yc, beta, lam))
    return FittedModel(
        kind=ModelKind.RIDGE,
        params={"lambda": float(lam)},
        feature_names=names,
        standardizer=standardizer,
        coef=beta,
        intercept=y_mean,
        history=history,
        n_iter=1,
    )


# ---------------------------------------------------------------- lasso

def soft_threshold(value: float, threshold: float) -> float:
    if value > threshold:
        return value - threshold
    if value < -threshold:
        return value + threshold
    return 0.0


def lasso_objective(resid: np.ndarray, beta: np.ndarray, lam: float) -> float:
    n = resid.shape[0]
    return float(resid @ resid / (2.0 * n) + lam * np.abs(beta).sum())


def lasso_fit(
    X,
    y,
    lam: float,
    feature_names: Optional[Sequence[str]] = None,
    tol: float = 1e-7,
    max_sweeps: int = 10_000,
) -> FittedModel:
    """
    坐标下降 lasso

    先做一轮全量扫描，再只在非零系数上迭代到稳定，然后回到全量扫描确认；
    全量扫描的最大系数变化 < tol 视为收敛。

    Raises:
        ConvergenceError: max_sweeps 轮内未收敛，last_iterate 为最后一次的模型
    """
    X, y = _check_xy(X, y)
    if lam < 0:
        raise ValidationError(f"lambda must be >= 0, got {lam}")
    names = _names(feature_names, X.shape[1])
    standardizer = Standardizer.fit(X)
    Z = np.asfortranarray(standardizer.transform(X))
    y_mean = float(y.mean())
    resid = y - y_mean
    n, p = Z.shape

    col_sq = (Z * Z).sum(axis=0) / n
    usable = np.flatnonzero(col_sq > 0)
    beta = np.zeros(p)
    history = [lasso_objective(resid, beta, lam)]

    def sweep(indices: np.ndarray) -> float:
        max_change = 0.0
        for j in indices:
            zj = Z[:, j]
            old = beta[j]
            rho = zj @ resid / n + col_sq[j] * old
            new = soft_threshold(rho, lam) / col_sq[j]
            if new != old:
                resid[:] -= zj * (new - old)
                beta[j] = new
                max_change = max(max_change, abs(new - old))
        history.append(lasso_objective(resid, beta, lam))
        return max_change

    sweeps = 0
    converged = False
    while sweeps < max_sweeps:
        change = sweep(usable)
        sweeps += 1
        if change < tol:
            converged = True
            break
        support = np.flatnonzero(beta)
        while sweeps < max_sweeps:
            change = sweep(support)
            sweeps += 1
            if change < tol:
                break

    model = FittedModel(
        kind=ModelKind.LASSO,
        params={"lambda": float(lam)},
        feature_names=names,
        standardizer=standardizer,
        coef=beta.copy(),
        intercept=y_mean,
        history=tuple(history),
        converged=converged,
        n_iter=sweeps,
    )
    if not converged:
        raise ConvergenceError(
            f"lasso did not converge in {max_sweeps} sweeps (lambda={lam})",
            last_iterate=model,
            n_iter=sweeps,
        )
    return model


# ---------------------------------------------------------------- logistic

def logistic_objective(w: np.ndarray, Z: np.ndarray, t: np.ndarray, C: float) -> Tuple[float, np.ndarray]:
    """
    平均对数损失 + (1/2C)||b||^2 及其梯度

    Args:
        w: [截距, b_1..b_p]
        t: 0/1 标签
    """
    b, beta = w[0], w[1:]
    margin = Z @ beta + b
    loss = float(np.mean(np.logaddexp(0.0, margin) - t * margin) + beta @ beta / (2.0 * C))
    s = expit(margin) - t
    grad = np.empty_like(w)
    grad[0] = s.mean()
    grad[1:] = Z.T @ s / Z.shape[0] + beta / C
    return loss, grad


def logistic_fit(
    X,
    y,
    C: float,
    feature_names: Optional[Sequence[str]] = None,
    gtol: float = 1e-6,
    max_iter: int = 15_000,
) -> FittedModel:
    """L2 逻辑回归（L-BFGS），截距不正则化"""
    X, y = _check_xy(X, y)
    if C <= 0:
        raise ValidationError(f"C must be > 0, got {C}")
    names = _names(feature_names, X.shape[1])
    classes = _binary_classes(y)
    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)
    t = (y == classes[1]).astype(float)

    history: List[float] = []
    result = optimize.minimize(
        logistic_objective,
        x0=np.zeros(Z.shape[1] + 1),
        args=(Z, t, C),
        jac=True,
        method="L-BFGS-B",
        callback=lambda wk: history.append(logistic_objective(wk, Z, t, C)[0]),
        options={"maxiter": max_iter, "gtol": 1e-12, "ftol": 1e-15, "maxcor": 30},
    )
    grad_norm = float(np.linalg.norm(logistic_objective(result.x, Z, t, C)[1]))
    converged = grad_norm <= gtol
    if not converged:
        logger.warning(f"logistic_l2 (C={C}) stopped with gradient norm {grad_norm:.2e}")

    return FittedModel(
        kind=ModelKind.LOGISTIC_L2,
        params={"C": float(C)},
        feature_names=names,
        standardizer=standardizer,
        coef=result.x[1:].copy(),
        intercept=float(result.x[0]),
        classes=classes,
        history=tuple(history) or (float(result.fun),),
        converged=converged,
        n_iter=int(result.nit),
    )


# ---------------------------------------------------------------- linear svm

def svm_primal_objective(w: np.ndarray, Z: np.ndarray, s: np.ndarray, C: float) -> Tuple[float, np.ndarray]:
    """
    (1/2)||b||^2 + C * sum max(0, 1 - s (Zb + intercept)) 及次梯度

    Args:
        w: [截距, b_1..b_p]
        s: +1/-1 标签
    """
    b, beta = w[0], w[1:]
    margin = s * (Z @ beta + b)
    active = margin < 1.0
    value = float(0.5 * beta @ beta + C * np.maximum(0.0, 1.0 - margin).sum())
    grad = np.empty_like(w)
    grad[0] = -C * s[active].sum()
    grad[1:] = beta - C * Z[active].T @ s[active]
    return value, grad


def _smo(K: np.ndarray, s: np.ndarray, C: float, tol: float, max_iter: int):
    """
    对偶 SMO（最大违反对选择）

    min_a (1/2) a'Qa - sum(a)，Q = (s s') * K，0 <= a <= C，s'a = 0
    """
    n = s.shape[0]
    Q = np.outer(s, s) * K
    QD = np.diag(Q).copy()
    alpha = np.zeros(n)
    G = -np.ones(n)
    history = [0.0]
    tau = 1e-12

    for it in range(1, max_iter + 1):
        yg = -s * G
        up = ((s > 0) & (alpha < C)) | ((s < 0) & (alpha > 0))
        low = ((s > 0) & (alpha > 0)) | ((s < 0) & (alpha < C))
        if not up.any() or not low.any():
            return alpha, G, history, True, it - 1
        i = int(np.flatnonzero(up)[np.argmax(yg[up])])
        j = int(np.flatnonzero(low)[np.argmin(yg[low])])
        if yg[i] - yg[j] < tol:
            return alpha, G, history, True, it - 1

        old_i, old_j = alpha[i], alpha[j]
        if s[i] != s[j]:
            quad = max(QD[i] + QD[j] + 2.0 * Q[i, j], tau)
            delta = (-G[i] - G[j]) / quad
            diff = alpha[i] - alpha[j]
            alpha[i] += delta
            alpha[j] += delta
            if diff > 0:
                if alpha[j] < 0:
                    alpha[j] = 0.0
                    alpha[i] = diff
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = -diff
            if diff > 0:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = C - diff
            elif alpha[j] > C:
                alpha[j] = C
                alpha[i] = C + diff
        else:
            quad = max(QD[i] + QD[j] - 2.0 * Q[i, j], tau)
            delta = (G[i] - G[j]) / quad
            total = alpha[i] + alpha[j]
            alpha[i] -= delta
            alpha[j] += delta
            if total > C:
                if alpha[i] > C:
                    alpha[i] = C
                    alpha[j] = total - C
            elif alpha[j] < 0:
                alpha[j] = 0.0
                alpha[i] = total
            if total > C:
                if alpha[j] > C:
                    alpha[j] = C
                    alpha[i] = total - C
            elif alpha[i] < 0:
                alpha[i] = 0.0
                alpha[j] = total

        G += Q[:, i] * (alpha[i] - old_i) + Q[:, j] * (alpha[j] - old_j)
        history.append(float(0.5 * alpha @ (G - 1.0)))

    return alpha, G, history, False, max_iter


def _svm_bias(alpha: np.ndarray, G: np.ndarray, s: np.ndarray, C: float) -> float:
    """由 KKT 条件求截距：自由支持向量取平均，否则取上下界中点"""
    yg = s * G
    free = (alpha > 0) & (alpha < C)
    if free.any():
        rho = yg[free].mean()
    else:
        at_upper = alpha >= C
        ub_mask = (at_upper & (s < 0)) | (~at_upper & (s > 0))
        lb_mask = ~ub_mask
        ub = yg[ub_mask].min() if ub_mask.any() else np.inf
        lb = yg[lb_mask].max() if lb_mask.any() else -np.inf
        if not np.isfinite(ub):
            ub = lb
        if not np.isfinite(lb):
            lb = ub
        rho = (ub + lb) / 2.0
    return float(-rho)


def svm_fit(
    X,
    y,
    C: float,
    feature_names: Optional[Sequence[str]] = None,
    tol: float = 1e-8,
    max_iter: int = 200_000,
) -> FittedModel:
    """
    线性软间隔 SVM

    在线性核上解对偶问题，截距由 KKT 条件得到，不参与正则化。
    history 记录对偶目标 (1/2) a'Qa - sum(a)，逐步不增。
    """
    X, y = _check_xy(X, y)
    if C <= 0:
        raise ValidationError(f"C must be > 0, got {C}")
    names = _names(feature_names, X.shape[1])
    classes = _binary_classes(y)
    standardizer = Standardizer.fit(X)
    Z = standardizer.transform(X)
    s = np.where(y == classes[1], 1.0, -1.0)

    alpha, G, history, converged, n_iter = _smo(Z @ Z.T, s, C, tol, max_iter)
    if not converged:
        logger.warning(f"linear_svm (C={C}) hit {max_iter} SMO iterations")

    return FittedModel(
        kind=ModelKind.LINEAR_SVM,
        params={"C": float(C)},
        feature_names=names,
        standardizer=standardizer,
        coef=Z.T @ (alpha * s),
        intercept=_svm_bias(alpha, G, s, C),
        classes=classes,
        history=tuple(history),
        converged=converged,
        n_iter=n_iter,
    )


# ---------------------------------------------------------------- forest

def forest_fit(
    X,
    y,
    max_depth: int,
    classification: bool = False,
    n_trees: int = DEFAULT_N_TREES,
    seed: int = 0,
    bootstrap: bool = True,
    feature_names: Optional[Sequence[str]] = None,
) -> FittedModel:
    """随机森林；y 为常数的回归得到常数预测"""
    X, y = _check_xy(X, y)
    names = _names(feature_names, X.shape[1])
    standardizer = Standardizer.fit(X)
    task = TASK_CLASSIFICATION if classification else TASK_REGRESSION
    forest = RandomForest(task, n_trees=n_trees, max_depth=int(max_depth), seed=seed,
                          bootstrap=bootstrap).fit(standardizer.transform(X), y)
    kind = ModelKind.RANDOM_FOREST_CLF if classification else ModelKind.RANDOM_FOREST_REG
    return FittedModel(
        kind=kind,
        params={"max_depth": int(max_depth), "n_trees": n_trees, "seed": seed},
        feature_names=names,
        standardizer=standardizer,
        forest=forest,
        classes=forest.classes,
    )


# ---------------------------------------------------------------- 预测

def predict(
    model: FittedModel,
    X,
    feature_names: Optional[Sequence[str]] = None,
    depth: Optional[int] = None,
) -> Prediction:
    """
    用训练好的模型预测

    Args:
        feature_names: 给出时必须与训练列完全一致
        depth: 森林按更浅的深度截断预测

    Raises:
        SchemaError: 列数或列名与训练时不同
    """
    X = np.asarray(X, dtype=float)
    p = len(model.feature_names)
    if X.size == 0:
        X = X.reshape(0, p)
    if X.ndim != 2 or X.shape[1] != p:
        raise SchemaError(f"Expected {p} feature columns, got shape {X.shape}")
    if feature_names is not None and tuple(feature_names) != model.feature_names:
        raise SchemaError("Feature columns differ from the training columns")
    if X.shape[0] == 0:
        empty = np.empty(0)
        return Prediction(empty, empty)

    Z = model.standardizer.transform(X)
    if model.forest is not None:
        if model.kind is ModelKind.RANDOM_FOREST_REG:
            values = model.forest.predict(Z, depth)
            return Prediction(values, values)
        scores = model.forest.vote_share(Z, depth)
        if len(model.classes) == 1:
            values = np.full(Z.shape[0], model.classes[0])
        else:
            values = np.where(scores > model.decision_threshold, model.classes[-1], model.classes[0])
        return Prediction(values, scores)

    scores = Z @ model.coef + model.intercept
    if not model.is_classifier:
        return Prediction(scores, scores)
    values = np.where(scores > model.decision_threshold, model.classes[1], model.classes[0])
    return Prediction(values, scores)


def fit_model(
    spec: ModelSpec,
    X,
    y,
    feature_names: Optional[Sequence[str]] = None,
    lasso_max_sweeps: int = 10_000,
) -> FittedModel:
    """按 ModelSpec 分派到具体的训练函数"""
    kind = spec.kind
    if kind is ModelKind.RIDGE:
        return ridge_fit(X, y, spec.param, feature_names)
    if kind is ModelKind.LASSO:
        return lasso_fit(X, y, spec.param, feature_names, max_sweeps=lasso_max_sweeps)
    if kind is ModelKind.LOGISTIC_L2:
        return logistic_fit(X, y, spec.param, feature_names)
    if kind is ModelKind.LINEAR_SVM:
        return svm_fit(X, y, spec.param, feature_names)
    return forest_fit(
        X,
        y,
        int(spec.param),
        classification=kind is ModelKind.RANDOM_FOREST_CLF,
        n_trees=spec.n_trees,
        seed=spec.seed,
        bootstrap=spec.bootstrap,
        feature_names=feature_names,
    )
