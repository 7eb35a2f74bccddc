"""
PCA de mapas de elevación remuestreados con máscara común.

Una celda se conserva solo si está definida en todos los instrumentos; así todos los vectores
comparten soporte espacial. La descomposición se hace por SVD de la matriz centrada.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from bssoundboard.exceptions import BSConfigError, BSDimensionError, BSPcaError
from bssoundboard.geometry.elevation import BSElevationMap, map_stack
from bssoundboard.learning.matrix import BSFeatureVector
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

PCA_SWEEP = (2, 3, 5, 8, 10, 12)
RELATIVE_ONLY_MESSAGE = "PCA only with relative resampling: la PCA solo se aplica a rejillas con remuestreo relativo"


@dataclass(frozen=True, eq=False)
class BSPcaModel:
    mask: np.ndarray
    mean: np.ndarray
    components: np.ndarray
    explained_variance: np.ndarray
    singular_values: np.ndarray
    k: int
    grid_shape: tuple[int, int] | None = None

    @property
    def raw_dimension(self) -> int:
        return int(self.mask.size)

    @property
    def kept_dimension(self) -> int:
        return int(self.mask.sum())

    @property
    def explained_variance_ratio(self) -> np.ndarray:
        total = self.explained_variance.sum()
        return self.explained_variance / total if total > 0 else np.zeros_like(self.explained_variance)

    def project_values(self, values: np.ndarray) -> np.ndarray:
        """Coeficientes de una o varias filas crudas (n × dimensión cruda)."""
        values = np.atleast_2d(np.asarray(values, dtype=np.float64))
        if values.shape[1] != self.raw_dimension:
            raise BSDimensionError(f"dimensión {values.shape[1]}, el modelo espera {self.raw_dimension}")
        return (values[:, self.mask] - self.mean) @ self.components.T

    def reconstruct(self, coefficients: np.ndarray) -> np.ndarray:
        """Vector sobre las celdas conservadas a partir de los coeficientes."""
        return self.mean + np.asarray(coefficients, dtype=np.float64) @ self.components


def pca_fit_arrays(
    values: np.ndarray, defined: np.ndarray, k: int, grid_shape: tuple[int, int] | None = None
) -> BSPcaModel:
    """
    Ajusta la PCA sobre filas crudas ``values`` con sus máscaras ``defined`` (ambas n × m).

    Componentes ordenadas por varianza decreciente; el signo de cada una se fija para que su entrada
    de mayor magnitud sea positiva.
    """
    values = np.asarray(values, dtype=np.float64)
    defined = np.asarray(defined, dtype=bool)
    if values.shape != defined.shape or values.ndim != 2:
        raise BSDimensionError(f"valores {values.shape} y máscaras {defined.shape} incompatibles")
    if k < 1:
        raise BSPcaError(f"k debe ser ≥ 1: {k}")

    n = values.shape[0]
    mask = defined.all(axis=0)
    if not mask.any():
        raise BSPcaError("la máscara común no conserva ninguna celda")
    data = values[:, mask]
    mean = data.mean(axis=0)
    centered = data - mean

    _, singular, vt = np.linalg.svd(centered, full_matrices=False)
    tol = singular[0] * max(centered.shape) * np.finfo(np.float64).eps if singular.size else 0.0
    rank = int(np.sum(singular > tol)) if singular.size and singular[0] > 0 else 0
    if k > rank:
        raise BSPcaError(f"k = {k} supera el rango numérico de los datos ({rank})")

    components = vt[:k].copy()
    for row in components:
        pivot = int(np.argmax(np.abs(row)))
        if row[pivot] < 0:
            row *= -1.0

    explained = singular**2 / max(n - 1, 1)
    logger.debug(f"PCA: {n} instrumentos, {int(mask.sum())}/{mask.size} celdas, rango {rank}, k = {k}")
    return BSPcaModel(
        mask=mask,
        mean=mean,
        components=components,
        explained_variance=explained,
        singular_values=singular,
        k=k,
        grid_shape=grid_shape,
    )


def pca_fit(maps: Sequence[BSElevationMap], k: int) -> BSPcaModel:
    """PCA sobre mapas remuestreados en modo relativo; los absolutos se rechazan."""
    if not maps:
        raise BSPcaError("pca_fit necesita al menos un mapa")
    for m in maps:
        if m.resample_mode != "relative":
            raise BSConfigError(f"{m.instrument_id}: {RELATIVE_ONLY_MESSAGE} (modo {m.resample_mode!r})")
    values, masks = map_stack(maps)
    return pca_fit_arrays(values, masks, k, grid_shape=maps[0].shape)


def pca_project(model: BSPcaModel, vector: BSFeatureVector) -> BSFeatureVector:
    """k coeficientes ⟨componente_j, v enmascarado − media⟩."""
    if len(vector) != model.raw_dimension:
        raise BSDimensionError(
            f"{vector.instrument_id}: dimensión {len(vector)}, el modelo espera {model.raw_dimension}"
        )
    coefficients = model.project_values(vector.values)[0]
    return BSFeatureVector(
        tuple(f"pc_{j + 1}" for j in range(model.k)), coefficients, vector.instrument_id, vector.label
    )
