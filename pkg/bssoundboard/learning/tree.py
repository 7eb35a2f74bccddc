"""
Árbol de decisión binario (CART) con profundidad limitada, criterio Gini o entropía.

Umbrales candidatos: puntos medios entre valores distintos consecutivos de cada característica.
Se elige el corte de mayor reducción de impureza; los empates se resuelven por menor índice de
característica y después por menor umbral. Una muestra va a la izquierda si ``valor ≤ umbral``.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from bssoundboard.base import BSClassifier, BSTrainedModel
from bssoundboard.exceptions import BSValidationError
from bssoundboard.learning.matrix import LABEL_REDUCED, LABEL_UNREDUCED, BSFeatureMatrix, BSFeatureVector
from bssoundboard.learning.svm import class_weights
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

CRITERIA = ("gini", "entropy")
# Rango de profundidades que recorre la validación según el origen de las características
DEPTH_RANGES: dict[str, tuple[int, int]] = {"profile": (1, 3), "pca": (1, 3), "map": (1, 5)}
_GAIN_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BSTreeConfig:
    criterion: str = "gini"
    max_depth: int = 3
    depth_range: tuple[int, int] = DEPTH_RANGES["profile"]
    weighted: bool = False

    def __post_init__(self):
        if self.criterion not in CRITERIA:
            raise BSValidationError(f"criterio desconocido: {self.criterion!r} (usa {CRITERIA})")
        if int(self.max_depth) != self.max_depth or self.max_depth < 1:
            raise BSValidationError(f"max_depth debe ser un entero ≥ 1: {self.max_depth}")
        low, high = self.depth_range
        if low < 1 or high < low:
            raise BSValidationError(f"rango de profundidad inválido: {self.depth_range}")
        object.__setattr__(self, "max_depth", int(self.max_depth))
        object.__setattr__(self, "depth_range", (int(low), int(high)))


@dataclass(frozen=True)
class BSTreeNode:
    histogram: tuple[int, int]  # (reduced, unreduced) que alcanzan el nodo
    label: str
    feature: int | None = None
    threshold: float | None = None
    gain: float = 0.0
    left: "BSTreeNode | None" = None
    right: "BSTreeNode | None" = None

    @property
    def is_leaf(self) -> bool:
        return self.feature is None

    def depth(self) -> int:
        if self.is_leaf:
            return 0
        assert self.left is not None and self.right is not None
        return 1 + max(self.left.depth(), self.right.depth())

    def n_leaves(self) -> int:
        if self.is_leaf:
            return 1
        assert self.left is not None and self.right is not None
        return self.left.n_leaves() + self.right.n_leaves()

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"histogram": list(self.histogram), "label": self.label}
        if not self.is_leaf:
            assert self.left is not None and self.right is not None
            out.update(
                feature=self.feature,
                threshold=self.threshold,
                gain=self.gain,
                left=self.left.to_dict(),
                right=self.right.to_dict(),
            )
        return out

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "BSTreeNode":
        histogram = (int(data["histogram"][0]), int(data["histogram"][1]))
        if "feature" not in data:
            return BSTreeNode(histogram=histogram, label=data["label"])
        return BSTreeNode(
            histogram=histogram,
            label=data["label"],
            feature=int(data["feature"]),
            threshold=float(data["threshold"]),
            gain=float(data.get("gain", 0.0)),
            left=BSTreeNode.from_dict(data["left"]),
            right=BSTreeNode.from_dict(data["right"]),
        )


@dataclass(frozen=True, eq=False)
class BSTreeModel(BSTrainedModel):
    feature_names: tuple[str, ...]
    root: BSTreeNode
    criterion: str
    max_depth: int
    weighted: bool = False

    @property
    def depth(self) -> int:
        return self.root.depth()

    def leaf_for(self, values: np.ndarray) -> BSTreeNode:
        node = self.root
        while not node.is_leaf:
            assert node.left is not None and node.right is not None and node.threshold is not None
            node = node.left if values[node.feature] <= node.threshold else node.right
        return node

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        return np.array([1.0 if self.leaf_for(row).label == LABEL_REDUCED else -1.0 for row in X])

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": "tree",
            "feature_names": list(self.feature_names),
            "criterion": self.criterion,
            "max_depth": self.max_depth,
            "weighted": self.weighted,
            "root": self.root.to_dict(),
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "BSTreeModel":
        return BSTreeModel(
            feature_names=tuple(data["feature_names"]),
            root=BSTreeNode.from_dict(data["root"]),
            criterion=data["criterion"],
            max_depth=int(data["max_depth"]),
            weighted=bool(data.get("weighted", False)),
        )


# ========== Impureza ==========

def impurity(pos: np.ndarray | float, neg: np.ndarray | float, criterion: str) -> np.ndarray:
    """Impureza de nodos con masas ``pos`` (reduced) y ``neg`` (unreduced); vectorizada."""
    pos = np.asarray(pos, dtype=np.float64)
    neg = np.asarray(neg, dtype=np.float64)
    total = pos + neg
    with np.errstate(invalid="ignore", divide="ignore"):
        p = np.where(total > 0, pos / total, 0.0)
    q = 1.0 - p
    if criterion == "gini":
        return 1.0 - p**2 - q**2
    with np.errstate(invalid="ignore", divide="ignore"):
        terms = np.where(p > 0, -p * np.log2(np.where(p > 0, p, 1.0)), 0.0)
        terms = terms + np.where(q > 0, -q * np.log2(np.where(q > 0, q, 1.0)), 0.0)
    return terms


def _best_split(X: np.ndarray, w_pos: np.ndarray, w_neg: np.ndarray, criterion: str):
    """(característica, umbral, ganancia) del mejor corte o ``None`` si ninguno mejora."""
    total_pos = w_pos.sum()
    total_neg = w_neg.sum()
    total = total_pos + total_neg
    parent = float(impurity(total_pos, total_neg, criterion))

    best: tuple[int, float, float] | None = None
    for feature in range(X.shape[1]):
        order = np.argsort(X[:, feature], kind="stable")
        values = X[order, feature]
        distinct = values[1:] > values[:-1]
        if not distinct.any():
            continue
        left_pos = np.cumsum(w_pos[order])[:-1]
        left_neg = np.cumsum(w_neg[order])[:-1]
        right_pos = total_pos - left_pos
        right_neg = total_neg - left_neg
        left_mass = left_pos + left_neg
        gains = parent - (
            left_mass / total * impurity(left_pos, left_neg, criterion)
            + (total - left_mass) / total * impurity(right_pos, right_neg, criterion)
        )
        gains = np.where(distinct, gains, -np.inf)
        top = float(gains.max())
        if top <= _GAIN_TOLERANCE:
            continue
        k = int(np.flatnonzero(gains >= top - _GAIN_TOLERANCE)[0])
        if best is None or top > best[2] + _GAIN_TOLERANCE:
            threshold = 0.5 * (values[k] + values[k + 1])
            if threshold >= values[k + 1]:
                threshold = float(values[k])
            best = (feature, float(threshold), top)
    return best


def _majority(pos_mass: float, neg_mass: float) -> str:
    return LABEL_REDUCED if pos_mass >= neg_mass else LABEL_UNREDUCED


def _grow(X: np.ndarray, y: np.ndarray, weights: np.ndarray, depth: int, cfg: BSTreeConfig) -> BSTreeNode:
    positive = y > 0
    w_pos = np.where(positive, weights, 0.0)
    w_neg = np.where(positive, 0.0, weights)
    histogram = (int(positive.sum()), int((~positive).sum()))
    label = _majority(float(w_pos.sum()), float(w_neg.sum()))

    if depth >= cfg.max_depth or histogram[0] == 0 or histogram[1] == 0:
        return BSTreeNode(histogram=histogram, label=label)
    split = _best_split(X, w_pos, w_neg, cfg.criterion)
    if split is None:
        return BSTreeNode(histogram=histogram, label=label)

    feature, threshold, gain = split
    go_left = X[:, feature] <= threshold
    return BSTreeNode(
        histogram=histogram,
        label=label,
        feature=feature,
        threshold=threshold,
        gain=gain,
        left=_grow(X[go_left], y[go_left], weights[go_left], depth + 1, cfg),
        right=_grow(X[~go_left], y[~go_left], weights[~go_left], depth + 1, cfg),
    )


# ========== Operaciones públicas ==========

def tree_train(data: BSFeatureMatrix, cfg: BSTreeConfig) -> BSTreeModel:
    """Inducción voraz descendente; para en ``max_depth``, en nodo puro o sin corte que mejore."""
    y = data.require_both_classes()
    X = np.asarray(data.X, dtype=np.float64)
    if cfg.weighted:
        w = class_weights(y, "balanced")
        weights = np.where(y > 0, w[LABEL_REDUCED], w[LABEL_UNREDUCED])
    else:
        weights = np.ones(y.size)
    root = _grow(X, y, weights, 0, cfg)
    logger.debug(f"árbol {cfg.criterion}: profundidad {root.depth()}/{cfg.max_depth}, {root.n_leaves()} hojas")
    return BSTreeModel(
        feature_names=data.names, root=root, criterion=cfg.criterion, max_depth=cfg.max_depth, weighted=cfg.weighted
    )


def tree_predict(model: BSTreeModel, vector: BSFeatureVector) -> str:
    model.check_dimension(len(vector))
    return model.leaf_for(vector.values).label


class BSTreeLearner(BSClassifier):
    family = "tree"
    hyperparameter_name = "max_depth"

    def __init__(self, config: BSTreeConfig | None = None):
        super().__init__(config or BSTreeConfig())

    def train(self, data: BSFeatureMatrix) -> BSTreeModel:
        return tree_train(data, self.config)

    def with_hyperparameter(self, value: float) -> "BSTreeLearner":
        return BSTreeLearner(replace(self.config, max_depth=int(value)))

    def describe(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "criterion": self.config.criterion,
            "depth_range": list(self.config.depth_range),
            "weighted": self.config.weighted,
        }

    @property
    def variant(self) -> str:
        return self.config.criterion
