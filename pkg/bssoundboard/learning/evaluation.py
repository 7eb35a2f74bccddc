"""
Validación cruzada anidada por instrumento, precisión equilibrada y matriz de experimentos.

Para cada instrumento retenido T, un leave-one-out interno sobre los n−1 restantes puntúa cada valor
de la rejilla de hiperparámetros; se elige el mejor (empates resueltos por la política ``min`` o
``max``), se entrena sobre los n−1 y se predice T. Cada modelo entrenado deja una línea de auditoría
con los identificadores de su conjunto de entrenamiento.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
from joblib import Parallel, delayed
from sklearn.metrics import confusion_matrix
from sklearn.model_selection import LeaveOneOut

from bssoundboard.base import BSClassifier
from bssoundboard.exceptions import (
    BSConfigError,
    BSFeatureError,
    BSSkippedFoldWarning,
    BSSoundboardError,
    BSValidationError,
)
from bssoundboard.geometry.contours import DEFAULT_LEVEL_STEP, BSParameterProfile, profile_from_map
from bssoundboard.geometry.elevation import (
    DEFAULT_SPACING,
    RESAMPLE_MODES,
    RESAMPLE_PRESETS,
    BSElevationMap,
    BSResampleSpec,
    compute_elevation_map,
    crop_zone_of_interest,
    flatten,
    global_box,
    normalize_heights,
    resample,
)
from bssoundboard.geometry.mesh_io import load_mesh
from bssoundboard.learning.features import FEATURE_SETS, compose_feature_set
from bssoundboard.learning.matrix import LABEL_REDUCED, LABEL_UNREDUCED, LABELS, BSFeatureMatrix
from bssoundboard.learning.pca import PCA_SWEEP, RELATIVE_ONLY_MESSAGE, pca_fit, pca_project
from bssoundboard.learning.svm import KERNELS, BSSvmConfig, BSSvmLearner
from bssoundboard.learning.tree import CRITERIA, DEPTH_RANGES, BSTreeConfig, BSTreeLearner
from bssoundboard.utils.logger import get_logger
from bssoundboard.utils.persistence import read_json, read_manifest

logger = get_logger(__name__)

C_GRID = tuple(10.0**k for k in range(-4, 5))
TIE_BREAKS = ("min", "max")
SOURCE_KINDS = ("profile", "map", "pca")
_SCORE_TOLERANCE = 1e-12


# ========== Rejilla y métricas ==========

@dataclass(frozen=True)
class BSHyperGrid:
    name: str
    values: tuple[float, ...]

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        if not values:
            raise BSValidationError(f"rejilla {self.name!r} vacía")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise BSValidationError(f"la rejilla {self.name!r} debe ser estrictamente creciente: {values}")
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return len(self.values)

    @staticmethod
    def svm_c(values: Sequence[float] = C_GRID) -> "BSHyperGrid":
        return BSHyperGrid("C", tuple(values))

    @staticmethod
    def depths(depth_range: tuple[int, int]) -> "BSHyperGrid":
        low, high = depth_range
        return BSHyperGrid("max_depth", tuple(float(d) for d in range(low, high + 1)))

    def select(self, scores: Sequence[float], tie_break: str) -> tuple[float, float]:
        """
        Valor con mejor puntuación; entre empatados, el menor (``min``) o el mayor (``max``).

        Las puntuaciones NaN (todos los pliegues internos omitidos) nunca ganan; si todas lo son,
        empatan todos los valores.
        """
        if tie_break not in TIE_BREAKS:
            raise BSValidationError(f"política de desempate desconocida: {tie_break!r} (usa {TIE_BREAKS})")
        arr = np.asarray(scores, dtype=np.float64)
        valid = ~np.isnan(arr)
        if valid.any():
            best = arr[valid].max()
            candidates = np.flatnonzero(valid & (arr >= best - _SCORE_TOLERANCE))
        else:
            candidates = np.arange(arr.size)
        index = int(candidates[0] if tie_break == "min" else candidates[-1])
        return self.values[index], float(arr[index])


def confusion_counts(truth: Sequence[str], pred: Sequence[str]) -> tuple[int, int, int, int]:
    """(TP, TN, FP, FN) con ``reduced`` como clase positiva."""
    if len(truth) != len(pred):
        raise BSValidationError(f"longitudes distintas: {len(truth)} etiquetas y {len(pred)} predicciones")
    unknown = (set(truth) | set(pred)) - set(LABELS)
    if unknown:
        raise BSValidationError(f"etiquetas desconocidas: {sorted(unknown)}")
    cm = confusion_matrix(list(truth), list(pred), labels=[LABEL_REDUCED, LABEL_UNREDUCED])
    tp, fn = int(cm[0, 0]), int(cm[0, 1])
    fp, tn = int(cm[1, 0]), int(cm[1, 1])
    return tp, tn, fp, fn


def balanced_accuracy(truth: Sequence[str], pred: Sequence[str]) -> float:
    """(TPR + TNR) / 2; exige las dos clases en ``truth``."""
    tp, tn, fp, fn = confusion_counts(truth, pred)
    if tp + fn == 0 or tn + fp == 0:
        raise BSValidationError("la precisión equilibrada necesita las dos clases en las etiquetas reales")
    return (tp / (tp + fn) + tn / (tn + fp)) / 2.0


def _inner_score(truth: Sequence[str], pred: Sequence[str]) -> float:
    """Como ``balanced_accuracy``, promediando solo las tasas de las clases presentes."""
    if not truth:
        return float("nan")
    tp, tn, fp, fn = confusion_counts(truth, pred)
    rates = []
    if tp + fn:
        rates.append(tp / (tp + fn))
    if tn + fp:
        rates.append(tn / (tn + fp))
    return float(np.mean(rates))


# ========== Informe ==========

@dataclass(frozen=True)
class BSOuterResult:
    index: int
    instrument_id: str
    truth: str
    prediction: str
    chosen: float
    inner_scores: tuple[float, ...]
    skipped_inner: int = 0

    def to_dict(self) -> dict[str, Any]:
        return {
            "index": self.index,
            "instrument_id": self.instrument_id,
            "truth": self.truth,
            "prediction": self.prediction,
            "chosen": self.chosen,
            "inner_scores": [None if np.isnan(s) else s for s in self.inner_scores],
            "skipped_inner": self.skipped_inner,
        }


@dataclass(frozen=True)
class BSEvalReport:
    outcomes: tuple[BSOuterResult, ...]
    grid: BSHyperGrid
    tie_break: str
    audit: tuple[dict[str, Any], ...] = ()
    fingerprint: dict[str, Any] = field(default_factory=dict)

    @property
    def truth(self) -> list[str]:
        return [o.truth for o in self.outcomes]

    @property
    def predictions(self) -> list[str]:
        return [o.prediction for o in self.outcomes]

    @property
    def confusion(self) -> tuple[int, int, int, int]:
        return confusion_counts(self.truth, self.predictions)

    @property
    def tpr(self) -> float:
        tp, _, _, fn = self.confusion
        return tp / (tp + fn)

    @property
    def tnr(self) -> float:
        _, tn, fp, _ = self.confusion
        return tn / (tn + fp)

    @property
    def balanced_accuracy(self) -> float:
        return (self.tpr + self.tnr) / 2.0

    @property
    def n_trainings(self) -> int:
        return len(self.audit)

    @property
    def skipped_inner(self) -> int:
        return sum(o.skipped_inner for o in self.outcomes)

    def to_dict(self) -> dict[str, Any]:
        tp, tn, fp, fn = self.confusion
        return {
            "grid": {"name": self.grid.name, "values": list(self.grid.values)},
            "tie_break": self.tie_break,
            "tp": tp,
            "tn": tn,
            "fp": fp,
            "fn": fn,
            "tpr": self.tpr,
            "tnr": self.tnr,
            "balanced_accuracy": self.balanced_accuracy,
            "n_trainings": self.n_trainings,
            "skipped_inner": self.skipped_inner,
            "outcomes": [o.to_dict() for o in self.outcomes],
            "fingerprint": self.fingerprint,
        }


# ========== Validación cruzada ==========

def _check_nested_data(data: BSFeatureMatrix) -> None:
    labels = data.labels
    if any(label is None for label in labels):
        raise BSValidationError("todas las filas necesitan etiqueta para la validación cruzada")
    if len(data) < 3:
        raise BSValidationError(f"la validación anidada necesita al menos 3 instrumentos ({len(data)})")
    for label in LABELS:
        if labels.count(label) < 2:
            raise BSValidationError(f"la clase {label!r} necesita al menos 2 instrumentos ({labels.count(label)})")


def _outer_fold(
    data: BSFeatureMatrix, learner: BSClassifier, grid: BSHyperGrid, tie_break: str, held_out: int
) -> tuple[BSOuterResult, list[dict[str, Any]]]:
    ids = data.instrument_ids
    labels = data.labels
    rest = np.array([i for i in range(len(data)) if i != held_out])

    audit: list[dict[str, Any]] = []
    scores: list[float] = []
    skipped = 0
    for value in grid.values:
        candidate = learner.with_hyperparameter(value)
        truth: list[str] = []
        pred: list[str] = []
        records: list[dict[str, Any]] = []
        for train_pos, test_pos in LeaveOneOut().split(rest):
            train_idx = rest[train_pos]
            inner = int(rest[test_pos[0]])
            if len({labels[i] for i in train_idx}) < 2:
                skipped += 1
                continue
            model = candidate.train(data.subset(train_idx))
            truth.append(labels[inner])  # type: ignore[arg-type]
            pred.append(model.predict(data.rows[inner]))
            records.append(
                {
                    "fold": held_out,
                    "held_out": ids[held_out],
                    "stage": "inner",
                    "inner_held_out": ids[inner],
                    "hyperparameter": value,
                    "training_ids": [ids[i] for i in train_idx],
                }
            )
        score = _inner_score(truth, pred)
        for record in records:
            record["inner_score"] = None if np.isnan(score) else score
        audit.extend(records)
        scores.append(score)

    chosen, chosen_score = grid.select(scores, tie_break)
    final = learner.with_hyperparameter(chosen).train(data.subset(rest))
    prediction = final.predict(data.rows[held_out])
    audit.append(
        {
            "fold": held_out,
            "held_out": ids[held_out],
            "stage": "final",
            "inner_held_out": None,
            "hyperparameter": chosen,
            "training_ids": [ids[i] for i in rest],
            "inner_score": None if np.isnan(chosen_score) else chosen_score,
        }
    )
    outcome = BSOuterResult(
        index=held_out,
        instrument_id=ids[held_out],
        truth=labels[held_out],  # type: ignore[arg-type]
        prediction=prediction,
        chosen=chosen,
        inner_scores=tuple(scores),
        skipped_inner=skipped,
    )
    return outcome, audit


def nested_loocv(
    data: BSFeatureMatrix,
    learner: BSClassifier,
    grid: BSHyperGrid,
    tie_break: str = "min",
    n_jobs: int = 1,
    fingerprint: dict[str, Any] | None = None,
) -> BSEvalReport:
    """
    Leave-one-out anidado por instrumento.

    Entrena n·(|rejilla|·(n−1) + 1) modelos si no se omite ningún pliegue interno. Los pliegues
    externos se reparten entre ``n_jobs`` procesos y se ensamblan por índice.
    """
    if tie_break not in TIE_BREAKS:
        raise BSValidationError(f"política de desempate desconocida: {tie_break!r} (usa {TIE_BREAKS})")
    _check_nested_data(data)

    folds = [int(test[0]) for _, test in LeaveOneOut().split(data.X)]
    results = Parallel(n_jobs=n_jobs)(delayed(_outer_fold)(data, learner, grid, tie_break, t) for t in folds)
    results = sorted(results, key=lambda r: r[0].index)

    outcomes = tuple(outcome for outcome, _ in results)
    audit = tuple(record for _, records in results for record in records)
    skipped = sum(o.skipped_inner for o in outcomes)
    if skipped:
        message = f"{skipped} pliegues internos omitidos por contener una sola clase"
        logger.warning(message)
        warnings.warn(message, BSSkippedFoldWarning, stacklevel=2)

    report = BSEvalReport(
        outcomes=outcomes, grid=grid, tie_break=tie_break, audit=audit, fingerprint=dict(fingerprint or {})
    )
    logger.debug(
        f"{learner.family}/{learner.variant} {tie_break}: {report.n_trainings} entrenamientos, "
        f"precisión equilibrada {report.balanced_accuracy:.3f}"
    )
    return report


def loo_sweep(data: BSFeatureMatrix, learner: BSClassifier, grid: BSHyperGrid) -> list[tuple[float, float]]:
    """Precisión equilibrada leave-one-out para cada valor fijo de la rejilla (sin selección interna)."""
    _check_nested_data(data)
    labels = data.labels
    curve = []
    for value in grid.values:
        candidate = learner.with_hyperparameter(value)
        truth: list[str] = []
        pred: list[str] = []
        for train_idx, test_idx in LeaveOneOut().split(data.X):
            held = int(test_idx[0])
            model = candidate.train(data.subset(train_idx))
            truth.append(labels[held])  # type: ignore[arg-type]
            pred.append(model.predict(data.rows[held]))
        curve.append((value, balanced_accuracy(truth, pred)))
    return curve


# ========== Configuración de experimentos ==========

@dataclass(frozen=True)
class BSFeatureSource:
    """Origen de características de una fila de tabla: perfil β, mapa remuestreado o PCA."""

    kind: str
    set_id: str | None = None
    grid: str | None = None
    mode: str = "relative"
    normalize: bool = False
    k: int | None = None

    def __post_init__(self):
        if self.kind not in SOURCE_KINDS:
            raise BSConfigError(f"origen de características desconocido: {self.kind!r} (usa {SOURCE_KINDS})")
        if self.kind == "profile":
            if self.set_id not in FEATURE_SETS:
                raise BSConfigError(f"conjunto de características desconocido: {self.set_id!r}")
            return
        if self.grid not in RESAMPLE_PRESETS:
            raise BSConfigError(f"rejilla desconocida: {self.grid!r} (disponibles: {', '.join(RESAMPLE_PRESETS)})")
        if self.mode not in RESAMPLE_MODES:
            raise BSConfigError(f"modo de remuestreo desconocido: {self.mode!r}")
        if self.kind == "pca":
            if self.mode != "relative":
                raise BSConfigError(RELATIVE_ONLY_MESSAGE)
            if self.k is None or self.k < 1:
                raise BSConfigError(f"la PCA necesita k ≥ 1: {self.k}")

    @property
    def source_id(self) -> str:
        if self.kind == "profile":
            return f"profile:{self.set_id}"
        norm = "norm" if self.normalize else "raw"
        if self.kind == "map":
            return f"map:{self.mode}:{self.grid}:{norm}"
        return f"pca:{self.grid}:k{self.k}:{norm}"

    @property
    def box(self) -> str:
        """Bloque de tabla al que pertenece la fila."""
        return self.mode if self.kind == "map" else self.kind

    @property
    def depth_range(self) -> tuple[int, int]:
        return DEPTH_RANGES[self.kind]

    @property
    def row_label(self) -> str:
        if self.kind == "profile":
            return FEATURE_SETS[self.set_id].row_label  # type: ignore[index]
        rows, cols = RESAMPLE_PRESETS[self.grid]  # type: ignore[index]
        if self.kind == "map":
            return f"{rows * cols} ({cols} x {rows} {self.mode} grid resampling)"
        return f"{self.k} (PCA on {cols} x {rows} relative grid resampling)"

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {"kind": self.kind}
        if self.kind == "profile":
            out["set_id"] = self.set_id
        else:
            out.update(grid=self.grid, mode=self.mode, normalize=self.normalize)
            if self.kind == "pca":
                out["k"] = self.k
        return out

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "BSFeatureSource":
        unknown = set(data) - {"kind", "set_id", "grid", "mode", "normalize", "k"}
        if unknown:
            raise BSConfigError(f"claves desconocidas en el origen de características: {sorted(unknown)}")
        return BSFeatureSource(
            kind=data.get("kind", ""),
            set_id=data.get("set_id"),
            grid=data.get("grid"),
            mode=data.get("mode", "relative"),
            normalize=bool(data.get("normalize", False)),
            k=data.get("k"),
        )


@dataclass(frozen=True)
class BSModelSpec:
    family: str
    variant: str

    def __post_init__(self):
        if self.family == "svm" and self.variant not in KERNELS:
            raise BSConfigError(f"kernel desconocido: {self.variant!r} (usa {KERNELS})")
        elif self.family == "tree" and self.variant not in CRITERIA:
            raise BSConfigError(f"criterio desconocido: {self.variant!r} (usa {CRITERIA})")
        elif self.family not in ("svm", "tree"):
            raise BSConfigError(f"familia de modelo desconocida: {self.family!r} (usa svm o tree)")

    @staticmethod
    def from_dict(data: dict[str, Any]) -> "BSModelSpec":
        unknown = set(data) - {"family", "kernel", "criterion"}
        if unknown:
            raise BSConfigError(f"claves desconocidas en el modelo: {sorted(unknown)}")
        family = data.get("family", "")
        if family == "svm":
            return BSModelSpec(family, data.get("kernel", "linear"))
        return BSModelSpec(family, data.get("criterion", "gini"))

    def to_dict(self) -> dict[str, str]:
        key = "kernel" if self.family == "svm" else "criterion"
        return {"family": self.family, key: self.variant}


_CONFIG_KEYS = {
    "dataset",
    "sources",
    "feature_sets",
    "maps",
    "pca",
    "models",
    "tie_breaks",
    "c_grid",
    "class_weighting",
    "gamma",
    "tolerance",
    "tree_weighted",
    "spacing",
    "level_step",
    "sensitivity_sweep",
    "n_jobs",
}


def _as_list(value: Any, everything: Sequence[Any]) -> list[Any]:
    if value == "all":
        return list(everything)
    return list(value) if isinstance(value, (list, tuple)) else [value]


def _expand_sources(data: dict[str, Any]) -> list[BSFeatureSource]:
    sources = [BSFeatureSource.from_dict(s) for s in data.get("sources", [])]
    for set_id in _as_list(data.get("feature_sets", []), list(FEATURE_SETS)):
        sources.append(BSFeatureSource("profile", set_id=set_id))
    if "maps" in data:
        block = data["maps"]
        unknown = set(block) - {"grids", "modes", "normalize"}
        if unknown:
            raise BSConfigError(f"claves desconocidas en 'maps': {sorted(unknown)}")
        for mode in _as_list(block.get("modes", ["relative"]), RESAMPLE_MODES):
            for normalize in _as_list(block.get("normalize", [False]), [False, True]):
                for grid in _as_list(block.get("grids", "all"), list(RESAMPLE_PRESETS)):
                    sources.append(BSFeatureSource("map", grid=grid, mode=mode, normalize=bool(normalize)))
    if "pca" in data:
        block = data["pca"]
        unknown = set(block) - {"grid", "ks", "normalize", "mode"}
        if unknown:
            raise BSConfigError(f"claves desconocidas en 'pca': {sorted(unknown)}")
        if block.get("mode", "relative") != "relative":
            raise BSConfigError(RELATIVE_ONLY_MESSAGE)
        for normalize in _as_list(block.get("normalize", [False]), [False, True]):
            for k in _as_list(block.get("ks", "all"), PCA_SWEEP):
                source = BSFeatureSource("pca", grid=block.get("grid", "5x10"), normalize=bool(normalize), k=int(k))
                sources.append(source)
    return sources


@dataclass(frozen=True)
class BSExperimentConfig:
    dataset: str
    sources: tuple[BSFeatureSource, ...]
    models: tuple[BSModelSpec, ...] = (BSModelSpec("svm", "linear"),)
    tie_breaks: tuple[str, ...] = TIE_BREAKS
    c_grid: tuple[float, ...] = C_GRID
    class_weighting: str = "balanced"
    gamma: float | str = "auto"
    tolerance: float = 1e-3
    tree_weighted: bool = False
    spacing: float = DEFAULT_SPACING
    level_step: float = DEFAULT_LEVEL_STEP
    sensitivity_sweep: bool = False
    n_jobs: int = 1

    def __post_init__(self):
        if not self.sources:
            raise BSConfigError("el experimento no define ningún origen de características")
        if not self.models:
            raise BSConfigError("el experimento no define ningún modelo")
        bad = [t for t in self.tie_breaks if t not in TIE_BREAKS]
        if bad or not self.tie_breaks:
            raise BSConfigError(f"políticas de desempate inválidas: {list(self.tie_breaks)}")
        if len({s.source_id for s in self.sources}) != len(self.sources):
            raise BSConfigError("orígenes de características repetidos")
        BSHyperGrid.svm_c(self.c_grid)
        BSSvmConfig(class_weighting=self.class_weighting, gamma=self.gamma, tolerance=self.tolerance)
        if not (self.spacing > 0 and self.level_step > 0):
            raise BSConfigError(f"spacing y level_step deben ser positivos: {self.spacing}, {self.level_step}")

    @staticmethod
    def from_dict(data: dict[str, Any], base_dir: str | Path | None = None) -> "BSExperimentConfig":
        """Las claves desconocidas se rechazan; ``dataset`` se resuelve respecto a ``base_dir``."""
        unknown = set(data) - _CONFIG_KEYS
        if unknown:
            raise BSConfigError(f"claves desconocidas en el experimento: {sorted(unknown)}")
        if "dataset" not in data:
            raise BSConfigError("el experimento necesita 'dataset'")
        dataset = Path(data["dataset"])
        if base_dir is not None and not dataset.is_absolute():
            dataset = Path(base_dir) / dataset
        models = tuple(BSModelSpec.from_dict(m) for m in data.get("models", [{"family": "svm", "kernel": "linear"}]))
        try:
            return BSExperimentConfig(
                dataset=str(dataset),
                sources=tuple(_expand_sources(data)),
                models=models,
                tie_breaks=tuple(data.get("tie_breaks", TIE_BREAKS)),
                c_grid=tuple(float(c) for c in data.get("c_grid", C_GRID)),
                class_weighting=data.get("class_weighting", "balanced"),
                gamma=data.get("gamma", "auto"),
                tolerance=float(data.get("tolerance", 1e-3)),
                tree_weighted=bool(data.get("tree_weighted", False)),
                spacing=float(data.get("spacing", DEFAULT_SPACING)),
                level_step=float(data.get("level_step", DEFAULT_LEVEL_STEP)),
                sensitivity_sweep=bool(data.get("sensitivity_sweep", False)),
                n_jobs=int(data.get("n_jobs", 1)),
            )
        except BSConfigError:
            raise
        except BSValidationError as e:
            raise BSConfigError(str(e)) from e

    @staticmethod
    def from_json(path: str | Path) -> "BSExperimentConfig":
        path = Path(path)
        data = read_json(path)
        if not isinstance(data, dict):
            raise BSConfigError(f"{path}: el experimento debe ser un objeto JSON")
        return BSExperimentConfig.from_dict(data, base_dir=path.parent)

    def to_dict(self) -> dict[str, Any]:
        return {
            "dataset": self.dataset,
            "sources": [s.to_dict() for s in self.sources],
            "models": [m.to_dict() for m in self.models],
            "tie_breaks": list(self.tie_breaks),
            "c_grid": list(self.c_grid),
            "class_weighting": self.class_weighting,
            "gamma": self.gamma,
            "tolerance": self.tolerance,
            "tree_weighted": self.tree_weighted,
            "spacing": self.spacing,
            "level_step": self.level_step,
            "sensitivity_sweep": self.sensitivity_sweep,
        }

    def learner(self, model: BSModelSpec, source: BSFeatureSource) -> tuple[BSClassifier, BSHyperGrid]:
        if model.family == "svm":
            grid = BSHyperGrid.svm_c(self.c_grid)
            cfg = BSSvmConfig(
                kernel=model.variant,
                C=grid.values[0],
                gamma=self.gamma,
                class_weighting=self.class_weighting,
                tolerance=self.tolerance,
            )
            return BSSvmLearner(cfg), grid
        grid = BSHyperGrid.depths(source.depth_range)
        tree_cfg = BSTreeConfig(
            criterion=model.variant,
            max_depth=source.depth_range[0],
            depth_range=source.depth_range,
            weighted=self.tree_weighted,
        )
        return BSTreeLearner(tree_cfg), grid


# ========== Conjunto de datos ==========

def _prepare_instrument(
    entry: dict[str, Any], spacing: float, level_step: float
) -> tuple[BSElevationMap, BSParameterProfile | None, str | None]:
    mesh = load_mesh(entry["path"], instrument_id=entry["instrument_id"])
    cropped = crop_zone_of_interest(compute_elevation_map(mesh, spacing))
    try:
        profile, _ = profile_from_map(cropped, level_step)
        return cropped, profile, None
    except BSSoundboardError as e:
        return cropped, None, str(e)


@dataclass
class BSDataset:
    """Mapas finos recortados y perfiles β de un corpus, con caché de mapas remuestreados."""

    ids: list[str]
    labels: list[str]
    maps: list[BSElevationMap]
    profiles: list[BSParameterProfile | None]
    profile_errors: dict[str, str] = field(default_factory=dict)
    _resampled: dict[tuple[str, str, bool], list[BSElevationMap]] = field(default_factory=dict, repr=False)

    def __len__(self) -> int:
        return len(self.ids)

    def resampled(self, grid: str, mode: str, normalize: bool) -> list[BSElevationMap]:
        key = (grid, mode, normalize)
        if key not in self._resampled:
            box = global_box(self.maps) if mode == "absolute" else None
            spec = BSResampleSpec.from_preset(grid, mode, box)
            maps = [resample(m, spec) for m in self.maps]
            self._resampled[key] = [normalize_heights(m) for m in maps] if normalize else maps
        return self._resampled[key]

    def features(self, source: BSFeatureSource) -> BSFeatureMatrix:
        if source.kind == "profile":
            if self.profile_errors:
                failed = ", ".join(f"{k} ({v})" for k, v in self.profile_errors.items())
                raise BSFeatureError(f"perfiles no disponibles: {failed}")
            rows = [
                compose_feature_set(p, source.set_id).with_identity(i, label)  # type: ignore[arg-type]
                for i, label, p in zip(self.ids, self.labels, self.profiles)
            ]
            return BSFeatureMatrix(rows)

        maps = self.resampled(source.grid, source.mode, source.normalize)  # type: ignore[arg-type]
        if source.kind == "map":
            return BSFeatureMatrix([flatten(m).with_identity(i, lb) for i, lb, m in zip(self.ids, self.labels, maps)])
        model = pca_fit(maps, source.k)  # type: ignore[arg-type]
        return BSFeatureMatrix(
            [pca_project(model, flatten(m)).with_identity(i, lb) for i, lb, m in zip(self.ids, self.labels, maps)]
        )


def load_dataset(
    manifest: str | Path, spacing: float = DEFAULT_SPACING, level_step: float = DEFAULT_LEVEL_STEP, n_jobs: int = 1
) -> BSDataset:
    entries = read_manifest(manifest)
    prepared = Parallel(n_jobs=n_jobs)(delayed(_prepare_instrument)(e, spacing, level_step) for e in entries)
    errors = {e["instrument_id"]: err for e, (_, _, err) in zip(entries, prepared) if err is not None}
    for instrument_id, err in errors.items():
        logger.warning(f"{instrument_id}: sin perfil ({err})")
    logger.info(f"{len(entries)} instrumentos preparados ({len(errors)} sin perfil)")
    return BSDataset(
        ids=[e["instrument_id"] for e in entries],
        labels=[e["label"] for e in entries],
        maps=[m for m, _, _ in prepared],
        profiles=[p for _, p, _ in prepared],
        profile_errors=errors,
    )


# ========== Matriz de experimentos ==========

@dataclass
class BSCellResult:
    cell_id: str
    source: BSFeatureSource
    model: BSModelSpec
    tie_break: str
    row_order: int
    column_order: int
    report: BSEvalReport | None = None
    error: str | None = None
    sweep: list[tuple[float, float]] | None = None

    @property
    def table_id(self) -> str:
        table = f"{self.model.family}_{self.source.box}"
        if self.model.family == "svm" and self.source.kind == "pca":
            table += f"_{self.model.variant}"
        return table


def run_experiment_matrix(config: BSExperimentConfig, dataset: BSDataset | None = None) -> list[BSCellResult]:
    """
    Una validación anidada por celda (origen × modelo × política); los fallos se anotan en la celda
    y la ejecución continúa.
    """
    if dataset is None:
        dataset = load_dataset(config.dataset, config.spacing, config.level_step, config.n_jobs)

    cells: list[BSCellResult] = []
    for row_order, source in enumerate(config.sources):
        try:
            matrix: BSFeatureMatrix | None = dataset.features(source)
            source_error = None
        except BSSoundboardError as e:
            matrix, source_error = None, str(e)
            logger.error(f"{source.source_id}: {e}")

        for model_order, model in enumerate(config.models):
            for tb_order, tie_break in enumerate(config.tie_breaks):
                cell = BSCellResult(
                    cell_id=f"{source.source_id}|{model.family}:{model.variant}|{tie_break}",
                    source=source,
                    model=model,
                    tie_break=tie_break,
                    row_order=row_order,
                    column_order=tb_order * 100 + int(source.normalize) * 10 + model_order,
                )
                cells.append(cell)
                if matrix is None:
                    cell.error = source_error
                    continue
                learner, grid = config.learner(model, source)
                fingerprint = {
                    "source": source.to_dict(),
                    "learner": learner.describe(),
                    "grid": list(grid.values),
                    "tie_break": tie_break,
                }
                try:
                    cell.report = nested_loocv(matrix, learner, grid, tie_break, config.n_jobs, fingerprint)
                    # la curva no depende de la política de desempate
                    if config.sensitivity_sweep and tb_order == 0:
                        cell.sweep = loo_sweep(matrix, learner, grid)
                    logger.info(f"{cell.cell_id}: {cell.report.balanced_accuracy:.3f}")
                except BSSoundboardError as e:
                    cell.error = str(e)
                    logger.error(f"{cell.cell_id}: {e}")
    return cells
