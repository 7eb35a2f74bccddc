"""
Jerarquía de errores de bssoundboard.

Todas las excepciones derivan de ``BSSoundboardError``. Las que indican una entrada o configuración
incorrecta derivan además de ``ValueError`` a través de ``BSValidationError`` (el CLI las traduce a
código de salida 1); el resto son fallos numéricos o de ejecución (código de salida 2).
"""
from __future__ import annotations

from typing import Any


class BSSoundboardError(Exception):
    """Raíz de la jerarquía."""


# ========== Errores de validación ==========

class BSValidationError(BSSoundboardError, ValueError):
    """Entrada, fichero o configuración inválidos."""


class BSConfigError(BSValidationError):
    """Configuración de experimento o de ejecución incoherente."""


class BSDimensionError(BSValidationError):
    """Dimensiones incompatibles entre un vector y un modelo."""


class BSMeshError(BSValidationError):

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        location = ""
        if path is not None:
            location = f"{path}"
            if line is not None:
                location += f":{line}"
            location += ": "
        super().__init__(f"{location}{message}")


class BSMeshParseError(BSMeshError):
    """Error sintáctico al leer una malla (lleva el número de línea)."""


class BSMeshIndexError(BSMeshError):
    """Índice de vértice fuera de rango o triángulo degenerado."""


class BSEmptyMeshError(BSMeshError):
    """Malla sin vértices suficientes o sin triángulos."""


# ========== Errores de ejecución ==========

class BSElevationError(BSSoundboardError):
    """Mapa de elevación vacío o imposible de construir."""


class BSZeroVarianceError(BSElevationError):
    """Normalización imposible: las alturas definidas son constantes."""


class BSContourFitError(BSSoundboardError):
    """
    El ajuste de una curva de nivel no converge en ninguno de los arranques.

    ``best_fit`` guarda el mejor ajuste alcanzado (o ``None`` si no llegó a evaluarse ninguno).
    """

    def __init__(self, message: str, best_fit: Any = None):
        super().__init__(message)
        self.best_fit = best_fit


class BSProfileError(BSSoundboardError):
    """Perfil de parámetros con demasiados pocos niveles."""


class BSFeatureError(BSSoundboardError):
    """Fallo al construir un vector de características."""


class BSRankDeficiencyError(BSFeatureError):
    """Sistema de mínimos cuadrados sin rango completo."""


class BSPcaError(BSFeatureError):
    """PCA imposible con los datos o el k pedidos."""


class BSTrainingError(BSSoundboardError):
    """Datos de entrenamiento no válidos para un clasificador."""


# ========== Avisos ==========

class BSConvergenceWarning(UserWarning):
    """El optimizador terminó sin alcanzar la tolerancia."""


class BSSkippedFoldWarning(UserWarning):
    """Un pliegue interno se omitió por contener una sola clase."""
