"""
SVM de margen blando con pesos por clase, resuelta por optimización mínima secuencial (SMO).

Se trabaja con las variables b_i = y_i·α_i, acotadas en [min(0, y_i·C_i), max(0, y_i·C_i)] con
Σ b_i = 0. En cada iteración se elige el par que más viola las condiciones KKT (heurística de
primer orden) y se resuelve analíticamente el subproblema de dos variables.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, replace
from typing import Any

import numpy as np

from bssoundboard.base import BSClassifier, BSTrainedModel
from bssoundboard.exceptions import BSConvergenceWarning, BSTrainingError, BSValidationError
from bssoundboard.learning.matrix import BSFeatureMatrix, BSFeatureVector, decode_label
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

KERNELS = ("linear", "rbf")
WEIGHTINGS = ("balanced", "none")
DEFAULT_TOLERANCE = 1e-3
_TAU = 1e-12


@dataclass(frozen=True)
class BSSvmConfig:
    kernel: str = "linear"
    C: float = 1.0
    gamma: float | str = "auto"
    class_weighting: str = "balanced"
    tolerance: float = DEFAULT_TOLERANCE
    max_passes: int | None = None

    def __post_init__(self):
        if self.kernel not in KERNELS:
            raise BSValidationError(f"kernel desconocido: {self.kernel!r} (usa {KERNELS})")
        if not self.C > 0:
            raise BSValidationError(f"C debe ser positivo: {self.C}")
        if self.gamma != "auto" and not (isinstance(self.gamma, (int, float)) and self.gamma > 0):
            raise BSValidationError(f"gamma debe ser positivo o 'auto': {self.gamma!r}")
        if self.class_weighting not in WEIGHTINGS:
            raise BSValidationError(f"ponderación desconocida: {self.class_weighting!r}")
        if not self.tolerance > 0:
            raise BSValidationError(f"tolerancia no positiva: {self.tolerance}")
        if self.max_passes is not None and self.max_passes < 1:
            raise BSValidationError(f"max_passes debe ser ≥ 1: {self.max_passes}")


def kernel_matrix(A: np.ndarray, B: np.ndarray, kernel: str, gamma: float) -> np.ndarray:
    if kernel == "linear":
        return A @ B.T
    sq = np.sum(A**2, axis=1)[:, None] + np.sum(B**2, axis=1)[None, :] - 2.0 * (A @ B.T)
    return np.exp(-gamma * np.maximum(sq, 0.0))


def auto_gamma(X: np.ndarray) -> float:
    """1 / (d · varianza media por característica); 1/d si los datos son constantes."""
    d = X.shape[1]
    variance = float(np.mean(np.var(X, axis=0))) if X.shape[0] > 0 else 0.0
    return 1.0 / (d * variance) if variance > 0 else 1.0 / d


def class_weights(y: np.ndarray, weighting: str) -> dict[str, float]:
    """Pesos balanceados n / (2·n_c) o unitarios."""
    if weighting == "none":
        return {"reduced": 1.0, "unreduced": 1.0}
    n = y.size
    n_pos = int(np.sum(y > 0))
    n_neg = n - n_pos
    return {"reduced": n / (2.0 * n_pos), "unreduced": n / (2.0 * n_neg)}


@dataclass(frozen=True, eq=False)
class BSSvmModel(BSTrainedModel):
    feature_names: tuple[str, ...]
    kernel: str
    gamma: float
    C: float
    support_vectors: np.ndarray
    dual_coef: np.ndarray
    bias: float
    class_weights: dict[str, float]
    alpha: np.ndarray
    upper_bounds: np.ndarray
    converged: bool = True
    n_iter: int = 0
    kkt_gap: float = 0.0

    def decision_values(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if self.support_vectors.shape[0] == 0:
            return np.full(X.shape[0], self.bias)
        return kernel_matrix(X, self.support_vectors, self.kernel, self.gamma) @ self.dual_coef + self.bias

    @property
    def weights(self) -> np.ndarray:
        """w = Σ α_i y_i x_i (solo kernel lineal)."""
        if self.kernel != "linear":
            raise BSValidationError("el vector de pesos solo existe con kernel lineal")
        return self.dual_coef @ self.support_vectors if self.support_vectors.size else np.zeros(self.n_features)

    def to_dict(self) -> dict[str, Any]:
        return {
            "family": "svm",
            "feature_names": list(self.feature_names),
            "kernel": self.kernel,
            "gamma": self.gamma,
            "C": self.C,
            "bias": self.bias,
            "class_weights": dict(self.class_weights),
            "support_vectors": self.support_vectors.tolist(),
            "dual_coef": self.dual_coef.tolist(),
            "converged": self.converged,
            "n_iter": self.n_iter,
            "kkt_gap": self.kkt_gap,
        }

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "BSSvmModel":
        dual = np.asarray(data["dual_coef"], dtype=np.float64)
        n_features = len(data["feature_names"])
        return BSSvmModel(
            feature_names=tuple(data["feature_names"]),
            kernel=data["kernel"],
            gamma=float(data["gamma"]),
            C=float(data["C"]),
            support_vectors=np.asarray(data["support_vectors"], dtype=np.float64).reshape(-1, n_features),
            dual_coef=dual,
            bias=float(data["bias"]),
            class_weights=dict(data["class_weights"]),
            alpha=np.abs(dual),
            upper_bounds=np.full(dual.size, np.nan),
            converged=bool(data.get("converged", True)),
            n_iter=int(data.get("n_iter", 0)),
            kkt_gap=float(data.get("kkt_gap", 0.0)),
        )


def _smo(K: np.ndarray, y: np.ndarray, box: np.ndarray, tol: float, max_iter: int):
    """Devuelve (b, sesgo, iteraciones, convergido, hueco KKT)."""
    n = y.size
    lower = np.minimum(0.0, y * box)
    upper = np.maximum(0.0, y * box)
    b = np.zeros(n)
    grad = y.copy()  # y_i − (K b)_i
    diag = np.diag(K)

    converged = False
    gap = np.inf
    it = 0
    while it < max_iter:
        can_up = b < upper
        can_down = b > lower
        if not can_up.any() or not can_down.any():
            converged = True
            gap = 0.0
            break
        i = int(np.argmax(np.where(can_up, grad, -np.inf)))
        j = int(np.argmin(np.where(can_down, grad, np.inf)))
        gap = float(grad[i] - grad[j])
        if gap <= tol:
            converged = True
            break

        curvature = diag[i] + diag[j] - 2.0 * K[i, j]
        room_i = upper[i] - b[i]
        room_j = b[j] - lower[j]
        step = min(room_i, room_j, gap / max(curvature, _TAU))

        b[i] = upper[i] if step == room_i else b[i] + step
        b[j] = lower[j] if step == room_j else b[j] - step
        grad -= step * (K[i] - K[j])
        it += 1

    free = (b > lower) & (b < upper)
    if free.any():
        bias = float(np.mean(grad[free]))
    else:
        up = np.where(b < upper, grad, -np.inf).max(initial=-np.inf)
        down = np.where(b > lower, grad, np.inf).min(initial=np.inf)
        finite = [v for v in (up, down) if np.isfinite(v)]
        bias = float(np.mean(finite)) if finite else 0.0
    return b, bias, it, converged, (gap if np.isfinite(gap) else 0.0)


def svm_train(data: BSFeatureMatrix, cfg: BSSvmConfig) -> BSSvmModel:
    """
    Resuelve el dual ponderado: 0 ≤ α_i ≤ C·w(y_i), Σ α_i y_i = 0.

    Si se agota el máximo de iteraciones devuelve el último iterado con ``converged = False`` y
    emite ``BSConvergenceWarning``.
    """
    y = data.require_both_classes()
    X = np.asarray(data.X, dtype=np.float64)
    n = y.size
    if X.shape[1] == 0:
        raise BSTrainingError("no hay características")

    gamma = 0.0
    if cfg.kernel == "rbf":
        gamma = auto_gamma(X) if cfg.gamma == "auto" else float(cfg.gamma)
    weights = class_weights(y, cfg.class_weighting)
    box = cfg.C * np.where(y > 0, weights["reduced"], weights["unreduced"])

    passes = cfg.max_passes if cfg.max_passes is not None else 10 * n
    max_iter = max(1000, passes * n)
    K = kernel_matrix(X, X, cfg.kernel, gamma)
    coef, bias, n_iter, converged, gap = _smo(K, y, box, cfg.tolerance, max_iter)

    if not converged:
        message = f"SMO sin converger tras {n_iter} iteraciones (hueco KKT {gap:.3g}, C = {cfg.C:g})"
        logger.warning(message)
        warnings.warn(message, BSConvergenceWarning, stacklevel=2)

    support = np.flatnonzero(coef != 0.0)
    return BSSvmModel(
        feature_names=data.names,
        kernel=cfg.kernel,
        gamma=gamma,
        C=cfg.C,
        support_vectors=X[support].copy(),
        dual_coef=coef[support].copy(),
        bias=bias,
        class_weights=weights,
        alpha=np.abs(coef),
        upper_bounds=box,
        converged=converged,
        n_iter=n_iter,
        kkt_gap=gap,
    )


def svm_predict(model: BSSvmModel, vector: BSFeatureVector) -> tuple[str, float]:
    """Etiqueta y valor de decisión Σ α_i y_i K(x_i, v) + b."""
    model.check_dimension(len(vector))
    margin = float(model.decision_values(vector.values.reshape(1, -1))[0])
    return decode_label(margin), margin


class BSSvmLearner(BSClassifier):
    family = "svm"
    hyperparameter_name = "C"

    def __init__(self, config: BSSvmConfig | None = None):
        super().__init__(config or BSSvmConfig())

    def train(self, data: BSFeatureMatrix) -> BSSvmModel:
        return svm_train(data, self.config)

    def with_hyperparameter(self, value: float) -> "BSSvmLearner":
        return BSSvmLearner(replace(self.config, C=float(value)))

    def describe(self) -> dict[str, Any]:
        return {
            "family": self.family,
            "kernel": self.config.kernel,
            "gamma": self.config.gamma,
            "class_weighting": self.config.class_weighting,
            "tolerance": self.config.tolerance,
        }

    @property
    def variant(self) -> str:
        return self.config.kernel
