"""
Vectores y matrices de características etiquetadas.

Etiquetas binarias: ``reduced`` (clase positiva, +1) y ``unreduced`` (−1).
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from bssoundboard.exceptions import BSDimensionError, BSTrainingError, BSValidationError

LABEL_REDUCED = "reduced"
LABEL_UNREDUCED = "unreduced"
LABELS = (LABEL_REDUCED, LABEL_UNREDUCED)


def encode_labels(labels: Iterable[str]) -> np.ndarray:
    """reduced → +1, unreduced → −1."""
    out = []
    for label in labels:
        if label not in LABELS:
            raise BSValidationError(f"etiqueta desconocida: {label!r} (usa {LABELS})")
        out.append(1.0 if label == LABEL_REDUCED else -1.0)
    return np.asarray(out, dtype=np.float64)


def decode_label(sign: float) -> str:
    return LABEL_REDUCED if sign > 0 else LABEL_UNREDUCED


@dataclass(frozen=True, eq=False)
class BSFeatureVector:
    names: tuple[str, ...]
    values: np.ndarray
    instrument_id: str = ""
    label: str | None = None

    def __post_init__(self):
        names = tuple(self.names)
        values = np.array(self.values, dtype=np.float64, copy=True).reshape(-1)
        if len(names) != values.size:
            raise BSDimensionError(f"{len(names)} nombres para {values.size} valores")
        if len(set(names)) != len(names):
            raise BSValidationError("nombres de característica repetidos")
        if self.label is not None and self.label not in LABELS:
            raise BSValidationError(f"etiqueta desconocida: {self.label!r}")
        values.setflags(write=False)
        object.__setattr__(self, "names", names)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.names)

    def concat(self, other: "BSFeatureVector") -> "BSFeatureVector":
        return BSFeatureVector(
            names=self.names + other.names,
            values=np.concatenate([self.values, other.values]),
            instrument_id=self.instrument_id or other.instrument_id,
            label=self.label if self.label is not None else other.label,
        )

    def with_identity(self, instrument_id: str, label: str | None) -> "BSFeatureVector":
        return BSFeatureVector(self.names, self.values, instrument_id, label)


class BSFeatureMatrix:
    """
    Filas de ``BSFeatureVector`` con los mismos nombres en el mismo orden.

    Se guarda también la matriz densa ``X`` (n × d) para los clasificadores.
    """

    def __init__(self, rows: Sequence[BSFeatureVector]):
        rows = list(rows)
        if len(rows) < 2:
            raise BSValidationError(f"una matriz de características necesita al menos 2 filas (tiene {len(rows)})")
        names = rows[0].names
        for row in rows[1:]:
            if row.names != names:
                raise BSDimensionError(
                    f"la fila {row.instrument_id!r} no comparte nombres/orden con {rows[0].instrument_id!r}"
                )
        self.rows: list[BSFeatureVector] = rows
        self.names: tuple[str, ...] = names
        self.X: np.ndarray = np.vstack([row.values for row in rows]) if names else np.zeros((len(rows), 0))
        self.X.setflags(write=False)

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def n_features(self) -> int:
        return len(self.names)

    @property
    def instrument_ids(self) -> list[str]:
        return [row.instrument_id for row in self.rows]

    @property
    def labels(self) -> list[str | None]:
        return [row.label for row in self.rows]

    def encoded_labels(self) -> np.ndarray:
        labels = self.labels
        if any(label is None for label in labels):
            raise BSTrainingError("hay filas sin etiqueta")
        return encode_labels(labels)  # type: ignore[arg-type]

    def require_both_classes(self) -> np.ndarray:
        y = self.encoded_labels()
        if not (np.any(y > 0) and np.any(y < 0)):
            raise BSTrainingError("los datos de entrenamiento contienen una sola clase")
        if not np.all(np.isfinite(self.X)):
            raise BSTrainingError("hay características no finitas")
        return y

    def subset(self, indices: Iterable[int]) -> "BSFeatureMatrix":
        return BSFeatureMatrix([self.rows[i] for i in indices])

    @staticmethod
    def from_arrays(
        X: np.ndarray, labels: Sequence[str], names: Sequence[str] | None = None, ids: Sequence[str] | None = None
    ) -> "BSFeatureMatrix":
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2:
            raise BSDimensionError("X debe ser una matriz n × d")
        names = tuple(names) if names is not None else tuple(f"f{j}" for j in range(X.shape[1]))
        ids = list(ids) if ids is not None else [f"i{k:03d}" for k in range(X.shape[0])]
        return BSFeatureMatrix(
            [BSFeatureVector(names, X[k], ids[k], labels[k]) for k in range(X.shape[0])]
        )
