"""
forest - 随机森林（CART 树 + bootstrap）

每个节点随机抽 ceil(sqrt(p)) 个候选特征；候选特征全部无法切分时继续抽，
直到找到可切分的特征或候选用尽。阈值取相邻取值的中点，x <= 阈值 走左子树。

树按层生长，随机数按层消耗：深度 D 的树截断到深度 d，
与直接用 max_depth=d 生长的树完全相同。
"""

import logging
import math
from collections import deque
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from errors import ValidationError

logger = logging.getLogger(__name__)

TASK_REGRESSION = "regression"
TASK_CLASSIFICATION = "classification"
LEAF = -1


@dataclass(frozen=True)
class TreeArrays:
    """扁平化的树：feature == -1 表示叶子；内部节点的 value 是其样本的叶子值"""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    node_depth: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def depth(self) -> int:
        return int(self.node_depth[self.feature == LEAF].max())

    def apply(self, X: np.ndarray, max_depth: Optional[int] = None) -> np.ndarray:
        """每个样本落到的节点编号；给定 max_depth 时在该深度截断"""
        node = np.zeros(X.shape[0], dtype=int)
        rows = np.arange(X.shape[0])
        while True:
            feat = self.feature[node]
            active = feat != LEAF
            if max_depth is not None:
                active &= self.node_depth[node] < max_depth
            if not active.any():
                return node
            current = node[active]
            go_left = X[rows[active], feat[active]] <= self.threshold[current]
            node[active] = np.where(go_left, self.left[current], self.right[current])

    def predict(self, X: np.ndarray, max_depth: Optional[int] = None) -> np.ndarray:
        return self.value[self.apply(X, max_depth)]

    def to_dict(self) -> Dict[str, List]:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "value": self.value.tolist(),
            "node_depth": self.node_depth.tolist(),
        }

    @classmethod
    def from_dict(cls, data: Dict[str, List]) -> "TreeArrays":
        return cls(
            feature=np.asarray(data["feature"], dtype=int),
            threshold=np.asarray(data["threshold"], dtype=float),
            left=np.asarray(data["left"], dtype=int),
            right=np.asarray(data["right"], dtype=int),
            value=np.asarray(data["value"], dtype=float),
            node_depth=np.asarray(data["node_depth"], dtype=int),
        )


def _best_split(
    X: np.ndarray, y: np.ndarray, task: str, n_classes: int
) -> Optional[Tuple[int, float, float]]:
    """
    在 X 的所有列上找最优切分

    Returns:
        (列下标, 阈值, 代价) 或 None（所有列都是常数）
    """
    m = X.shape[0]
    order = np.argsort(X, axis=0, kind="stable")
    xs = np.take_along_axis(X, order, axis=0)
    valid = xs[1:] > xs[:-1]
    if not valid.any():
        return None

    n_left = np.arange(1, m, dtype=float)[:, None]
    n_right = m - n_left
    if task == TASK_REGRESSION:
        ys = y[order]
        csum = np.cumsum(ys, axis=0)[:-1]
        csq = np.cumsum(ys * ys, axis=0)[:-1]
        total, total_sq = y.sum(), (y * y).sum()
        cost = (csq - csum ** 2 / n_left) + ((total_sq - csq) - (total - csum) ** 2 / n_right)
    else:
        onehot = np.eye(n_classes)[y.astype(int)]
        counts = np.cumsum(onehot[order], axis=0)[:-1]
        totals = onehot.sum(axis=0)
        left_p = counts / n_left[..., None]
        right_p = (totals - counts) / n_right[..., None]
        gini_left = 1.0 - (left_p ** 2).sum(axis=2)
        gini_right = 1.0 - (right_p ** 2).sum(axis=2)
        cost = n_left * gini_left + n_right * gini_right

    cost = np.where(valid, cost, np.inf)
    pos, col = np.unravel_index(int(np.argmin(cost)), cost.shape)
    lo, hi = xs[pos, col], xs[pos + 1, col]
    threshold = (lo + hi) / 2.0
    if threshold >= hi:
        threshold = lo
    return int(col), float(threshold), float(cost[pos, col])


class DecisionTree:
    """
    CART 树

    Args:
        task: regression / classification
        max_depth: 最大深度（根为 0）
        max_features: 每个节点的候选特征数
        rng: numpy Generator
        n_classes: 分类时的类别数
    """

    def __init__(self, task: str, max_depth: int, max_features: int, rng: np.random.Generator,
                 n_classes: int = 0):
        self.task = task
        self.max_depth = max_depth
        self.max_features = max_features
        self.rng = rng
        self.n_classes = n_classes
        self.arrays: Optional[TreeArrays] = None

    def _leaf_value(self, y: np.ndarray) -> float:
        if self.task == TASK_REGRESSION:
            return float(y.mean())
        # 并列时 argmax 取较小类别
        return float(np.argmax(np.bincount(y.astype(int), minlength=self.n_classes)))

    def _choose_split(self, X: np.ndarray, y: np.ndarray) -> Optional[Tuple[int, float]]:
        order = self.rng.permutation(X.shape[1])
        for start in range(0, order.size, self.max_features):
            candidates = order[start:start + self.max_features]
            found = _best_split(X[:, candidates], y, self.task, self.n_classes)
            if found is not None:
                col, threshold, _ = found
                return int(candidates[col]), threshold
        return None

    def fit(self, X: np.ndarray, y: np.ndarray) -> "DecisionTree":
        feature: List[int] = []
        threshold: List[float] = []
        left: List[int] = []
        right: List[int] = []
        value: List[float] = []
        node_depth: List[int] = []

        def new_node(idx: np.ndarray, depth: int) -> int:
            feature.append(LEAF)
            threshold.append(0.0)
            left.append(LEAF)
            right.append(LEAF)
            value.append(self._leaf_value(y[idx]))
            node_depth.append(depth)
            return len(feature) - 1

        root = np.arange(X.shape[0])
        queue = deque([(new_node(root, 0), root, 0)])
        while queue:
            node, idx, depth = queue.popleft()
            if depth >= self.max_depth or idx.size < 2 or np.all(y[idx] == y[idx[0]]):
                continue
            split = self._choose_split(X[idx], y[idx])
            if split is None:
                continue
            col, thr = split
            mask = X[idx, col] <= thr
            left_idx, right_idx = idx[mask], idx[~mask]
            feature[node] = col
            threshold[node] = thr
            left[node] = new_node(left_idx, depth + 1)
            right[node] = new_node(right_idx, depth + 1)
            queue.append((left[node], left_idx, depth + 1))
            queue.append((right[node], right_idx, depth + 1))

        self.arrays = TreeArrays(
            feature=np.asarray(feature, dtype=int),
            threshold=np.asarray(threshold, dtype=float),
            left=np.asarray(left, dtype=int),
            right=np.asarray(right, dtype=int),
            value=np.asarray(value, dtype=float),
            node_depth=np.asarray(node_depth, dtype=int),
        )
        return self


class RandomForest:
    """
    随机森林

    同一个 seed 得到完全相同的森林；每棵树的随机源由 SeedSequence.spawn 派生。
    分类时多数投票，票数相同取较小类别；回归取各树平均。
    """

    def __init__(self, task: str, n_trees: int = 200, max_depth: int = 5, seed: int = 0,
                 bootstrap: bool = True):
        if task not in (TASK_REGRESSION, TASK_CLASSIFICATION):
            raise ValidationError(f"Unknown forest task: {task}")
        if n_trees < 1:
            raise ValidationError(f"n_trees must be >= 1, got {n_trees}")
        if max_depth < 1:
            raise ValidationError(f"max_depth must be >= 1, got {max_depth}")
        self.task = task
        self.n_trees = n_trees
        self.max_depth = max_depth
        self.seed = seed
        self.bootstrap = bootstrap
        self.classes: Tuple[float, ...] = ()
        self.trees: List[TreeArrays] = []

    def fit(self, X: np.ndarray, y: np.ndarray) -> "RandomForest":
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float)
        n, p = X.shape
        max_features = max(1, math.ceil(math.sqrt(p)))

        if self.task == TASK_CLASSIFICATION:
            classes, encoded = np.unique(y, return_inverse=True)
            self.classes = tuple(float(c) for c in classes)
            target = encoded.astype(float)
        else:
            target = y

        self.trees = []
        for child in np.random.SeedSequence(self.seed).spawn(self.n_trees):
            rng = np.random.default_rng(child)
            idx = rng.integers(0, n, n) if self.bootstrap else np.arange(n)
            tree = DecisionTree(self.task, self.max_depth, max_features, rng, len(self.classes))
            self.trees.append(tree.fit(X[idx], target[idx]).arrays)
        logger.debug(
            f"Fitted {self.n_trees} {self.task} trees (depth <= {self.max_depth}, mtry={max_features})"
        )
        return self

    def _depth(self, depth: Optional[int]) -> int:
        if depth is None:
            return self.max_depth
        if depth < 1 or depth > self.max_depth:
            raise ValidationError(f"Depth {depth} outside 1..{self.max_depth}")
        return depth

    def vote_counts(self, X: np.ndarray, depth: Optional[int] = None) -> np.ndarray:
        """(样本数, 类别数) 票数"""
        depth = self._depth(depth)
        votes = np.zeros((X.shape[0], len(self.classes)), dtype=int)
        rows = np.arange(X.shape[0])
        for tree in self.trees:
            np.add.at(votes, (rows, tree.predict(X, depth).astype(int)), 1)
        return votes

    def predict(self, X: np.ndarray, depth: Optional[int] = None) -> np.ndarray:
        """depth 小于 max_depth 时按截断后的树预测"""
        X = np.asarray(X, dtype=float)
        if self.task == TASK_REGRESSION:
            depth = self._depth(depth)
            return np.mean([tree.predict(X, depth) for tree in self.trees], axis=0)
        winners = np.argmax(self.vote_counts(X, depth), axis=1)
        return np.asarray(self.classes)[winners]

    def vote_share(self, X: np.ndarray, depth: Optional[int] = None) -> np.ndarray:
        """投给最大类别的树的比例"""
        votes = self.vote_counts(np.asarray(X, dtype=float), depth)
        return votes[:, -1] / float(len(self.trees))

    def to_dict(self) -> Dict[str, Any]:
        return {
            "task": self.task,
            "n_trees": self.n_trees,
            "max_depth": self.max_depth,
            "seed": self.seed,
            "bootstrap": self.bootstrap,
            "classes": list(self.classes),
            "trees": [tree.to_dict() for tree in self.trees],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RandomForest":
        forest = cls(
            task=data["task"],
            n_trees=int(data["n_trees"]),
            max_depth=int(data["max_depth"]),
            seed=int(data["seed"]),
            bootstrap=bool(data["bootstrap"]),
        )
        forest.classes = tuple(float(c) for c in data["classes"])
        forest.trees = [TreeArrays.from_dict(t) for t in data["trees"]]
        return forest
