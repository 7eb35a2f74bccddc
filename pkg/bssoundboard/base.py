from __future__ import annotations

from abc import ABC, abstractmethod
from typing import Any

import numpy as np

from bssoundboard.exceptions import BSDimensionError
from bssoundboard.learning.matrix import BSFeatureMatrix, BSFeatureVector, decode_label


class BSTrainedModel(ABC):
    """Modelo entrenado, inmutable. Predice ``reduced`` / ``unreduced``."""

    feature_names: tuple[str, ...]

    @abstractmethod
    def decision_values(self, X: np.ndarray) -> np.ndarray:
        """Valor con signo por fila: positivo → reduced."""
        pass

    @abstractmethod
    def to_dict(self) -> dict[str, Any]:
        pass

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def check_dimension(self, n_features: int) -> None:
        if n_features != self.n_features:
            raise BSDimensionError(f"el modelo espera {self.n_features} características y recibe {n_features}")

    def predict(self, vector: BSFeatureVector) -> str:
        self.check_dimension(len(vector))
        return decode_label(float(self.decision_values(vector.values.reshape(1, -1))[0]))

    def predict_many(self, X: np.ndarray) -> list[str]:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        self.check_dimension(X.shape[1])
        return [decode_label(float(v)) for v in self.decision_values(X)]


class BSClassifier(ABC):
    """
    Familia de clasificador con su configuración.

    ``hyperparameter_name`` es el campo de la configuración que recorre la validación cruzada
    anidada (C en las SVM, profundidad en los árboles).
    """

    family: str = ""
    hyperparameter_name: str = ""

    def __init__(self, config: Any):
        self.config = config

    @abstractmethod
    def train(self, data: BSFeatureMatrix) -> BSTrainedModel:
        pass

    @abstractmethod
    def with_hyperparameter(self, value: float) -> "BSClassifier":
        pass

    @abstractmethod
    def describe(self) -> dict[str, Any]:
        """Resumen de configuración para la huella del informe."""
        pass

    @property
    def variant(self) -> str:
        """Kernel o criterio."""
        return ""
