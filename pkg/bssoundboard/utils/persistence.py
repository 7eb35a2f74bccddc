"""
Lectura y escritura de los artefactos que se pasan entre etapas: mapas, perfiles, matrices de
características, modelos, manifiestos y registros JSONL.

Los CSV se escriben con pandas; los valores en coma flotante usan la representación más corta que
se relee exacta, de modo que escribir y volver a leer no altera nada.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

from bssoundboard.base import BSTrainedModel
from bssoundboard.exceptions import BSValidationError
from bssoundboard.geometry.contours import BSParameterProfile
from bssoundboard.geometry.elevation import BSElevationMap
from bssoundboard.learning.matrix import LABELS, BSFeatureMatrix, BSFeatureVector
from bssoundboard.learning.svm import BSSvmModel
from bssoundboard.learning.tree import BSTreeModel

PROFILE_COLUMNS = ("level", "alpha", "beta", "gamma", "delta", "lambda", "rss")
NA = "NA"


# ========== Utilidades ==========

def write_json(data: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")
    return path


def read_json(path: str | Path) -> Any:
    path = Path(path)
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise BSValidationError(f"{path}: JSON inválido ({e})") from e


def write_jsonl(records: Iterable[dict[str, Any]], path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8") as fh:
        for record in records:
            fh.write(json.dumps(record, sort_keys=True, ensure_ascii=False) + "\n")
    return path


def read_jsonl(path: str | Path) -> list[dict[str, Any]]:
    with Path(path).open(encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


# ========== Mapas de elevación ==========

def save_map_csv(elevation_map: BSElevationMap, path: str | Path) -> Path:
    """
    Cabecera ``# origin x0 y0 spacing dx dy``, una línea ``# instrument <id> mode <modo>`` y después
    las filas de alturas; las celdas indefinidas se escriben como ``NA``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    (x0, y0), (dx, dy) = elevation_map.origin, elevation_map.spacing
    mode = elevation_map.resample_mode or "none"
    frame = pd.DataFrame(np.where(elevation_map.defined, elevation_map.heights, np.nan))
    with path.open("w", encoding="utf-8", newline="") as fh:
        fh.write(f"# origin {x0!r} {y0!r} spacing {dx!r} {dy!r}\n")
        fh.write(f"# instrument {elevation_map.instrument_id or '-'} mode {mode}\n")
        frame.to_csv(fh, header=False, index=False, na_rep=NA, lineterminator="\n")
    return path


def load_map_csv(path: str | Path) -> BSElevationMap:
    path = Path(path)
    with path.open(encoding="utf-8") as fh:
        first = fh.readline().split()
        second = fh.readline().split()
    if len(first) != 7 or first[:2] != ["#", "origin"] or first[4] != "spacing":
        raise BSValidationError(f"{path}: cabecera de mapa inválida")
    instrument_id, mode = "", None
    if len(second) == 5 and second[:2] == ["#", "instrument"]:
        instrument_id = "" if second[2] == "-" else second[2]
        mode = None if second[4] == "none" else second[4]

    frame = pd.read_csv(
        path,
        skiprows=2,
        header=None,
        na_values=[NA],
        keep_default_na=False,
        dtype=np.float64,
        float_precision="round_trip",
    )
    values = frame.to_numpy()
    defined = ~np.isnan(values)
    return BSElevationMap(
        origin=(float(first[2]), float(first[3])),
        spacing=(float(first[5]), float(first[6])),
        heights=np.where(defined, values, 0.0),
        defined=defined,
        instrument_id=instrument_id,
        resample_mode=mode,
    )


def map_to_dict(elevation_map: BSElevationMap) -> dict[str, Any]:
    return {
        "instrument_id": elevation_map.instrument_id,
        "origin": list(elevation_map.origin),
        "spacing": list(elevation_map.spacing),
        "resample_mode": elevation_map.resample_mode,
        "heights": elevation_map.heights.tolist(),
        "defined": elevation_map.defined.astype(int).tolist(),
    }


def map_from_dict(data: dict[str, Any]) -> BSElevationMap:
    return BSElevationMap(
        origin=tuple(data["origin"]),  # type: ignore[arg-type]
        spacing=tuple(data["spacing"]),  # type: ignore[arg-type]
        heights=np.asarray(data["heights"], dtype=np.float64),
        defined=np.asarray(data["defined"], dtype=bool),
        instrument_id=data.get("instrument_id", ""),
        resample_mode=data.get("resample_mode"),
    )


def save_map_json(elevation_map: BSElevationMap, path: str | Path) -> Path:
    return write_json(map_to_dict(elevation_map), path)


def load_map_json(path: str | Path) -> BSElevationMap:
    return map_from_dict(read_json(path))


def load_map(path: str | Path) -> BSElevationMap:
    path = Path(path)
    return load_map_json(path) if path.suffix.lower() == ".json" else load_map_csv(path)


# ========== Perfiles ==========

def save_profile_csv(profile: BSParameterProfile, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(
        {
            "level": profile.levels,
            "alpha": profile.alpha,
            "beta": profile.beta,
            "gamma": profile.gamma,
            "delta": profile.delta,
            "lambda": profile.width,
            "rss": profile.rss,
        },
        columns=list(PROFILE_COLUMNS),
    )
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def load_profile_csv(path: str | Path, instrument_id: str | None = None) -> BSParameterProfile:
    """El identificador por defecto es el nombre del fichero sin extensión."""
    path = Path(path)
    frame = pd.read_csv(path, float_precision="round_trip")
    missing = [c for c in PROFILE_COLUMNS if c not in frame.columns]
    if missing:
        raise BSValidationError(f"{path}: faltan columnas {missing}")
    levels = frame["level"].to_numpy(dtype=np.float64)
    steps = np.diff(levels)
    step = float(steps.min()) if steps.size else 1.0
    expected = np.arange(levels[0], levels[-1] + step / 2.0, step) if levels.size else levels
    gaps = tuple(float(v) for v in expected if not np.any(np.isclose(levels, v)))
    return BSParameterProfile(
        levels=levels,
        alpha=frame["alpha"].to_numpy(dtype=np.float64),
        beta=frame["beta"].to_numpy(dtype=np.float64),
        gamma=frame["gamma"].to_numpy(dtype=np.float64),
        delta=frame["delta"].to_numpy(dtype=np.float64),
        width=frame["lambda"].to_numpy(dtype=np.float64),
        rss=frame["rss"].to_numpy(dtype=np.float64),
        gaps=gaps,
        instrument_id=instrument_id if instrument_id is not None else path.stem,
    )


# ========== Matrices de características ==========

def save_feature_matrix_csv(matrix: BSFeatureMatrix, path: str | Path) -> Path:
    """Primera columna ``instrument_id``, última ``label``; en medio, las características por nombre."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame(np.asarray(matrix.X), columns=list(matrix.names))
    frame.insert(0, "instrument_id", matrix.instrument_ids)
    frame["label"] = [label if label is not None else "" for label in matrix.labels]
    frame.to_csv(path, index=False, lineterminator="\n")
    return path


def load_feature_matrix_csv(path: str | Path) -> BSFeatureMatrix:
    path = Path(path)
    frame = pd.read_csv(
        path, dtype={"instrument_id": str, "label": str}, keep_default_na=False, float_precision="round_trip"
    )
    if list(frame.columns[:1]) != ["instrument_id"] or frame.columns[-1] != "label":
        raise BSValidationError(f"{path}: se esperaban las columnas instrument_id … label")
    names = tuple(frame.columns[1:-1])
    values = frame[list(names)].to_numpy(dtype=np.float64)
    rows = []
    for k, (instrument_id, label) in enumerate(zip(frame["instrument_id"], frame["label"])):
        if label and label not in LABELS:
            raise BSValidationError(f"{path}: etiqueta desconocida {label!r} en {instrument_id}")
        rows.append(BSFeatureVector(names, values[k], instrument_id, label or None))
    return BSFeatureMatrix(rows)


# ========== Modelos y manifiestos ==========

def save_model_json(model: BSTrainedModel, path: str | Path) -> Path:
    return write_json(model.to_dict(), path)


def load_model_json(path: str | Path) -> BSTrainedModel:
    data = read_json(path)
    family = data.get("family")
    if family == "svm":
        return BSSvmModel.from_dict(data)
    if family == "tree":
        return BSTreeModel.from_dict(data)
    raise BSValidationError(f"{path}: familia de modelo desconocida {family!r}")


def read_manifest(path: str | Path) -> list[dict[str, Any]]:
    """
    Entradas del manifiesto con ``path`` resuelto respecto a su directorio.

    Acepta la ruta del fichero o la del directorio que contiene ``manifest.json``.
    """
    path = Path(path)
    if path.is_dir():
        path = path / "manifest.json"
    if not path.exists():
        raise FileNotFoundError(f"no existe el manifiesto {path}")
    entries = read_json(path)
    if not isinstance(entries, list):
        raise BSValidationError(f"{path}: el manifiesto debe ser una lista")
    resolved = []
    for entry in entries:
        for key in ("instrument_id", "label", "path"):
            if key not in entry:
                raise BSValidationError(f"{path}: entrada sin {key!r}: {entry}")
        if entry["label"] not in LABELS:
            raise BSValidationError(f"{path}: etiqueta desconocida {entry['label']!r}")
        resolved.append({**entry, "path": str((path.parent / entry["path"]).resolve())})
    return resolved
