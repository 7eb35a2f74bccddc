"""
Tablas de resultados agrupadas por familia de modelo y bloque de origen: filas = orígenes de
características, columnas = política × normalización × kernel o criterio.

``report.csv`` guarda la forma larga (una línea por celda) y basta para volver a generar el resto.
"""
from __future__ import annotations

from pathlib import Path
from typing import Any, Sequence

import numpy as np
import pandas as pd

from bssoundboard.learning.evaluation import BSCellResult
from bssoundboard.utils.logger import get_logger
from bssoundboard.utils.persistence import write_json, write_jsonl

logger = get_logger(__name__)

POLICY_LABELS = {"svm": {"max": "Max C", "min": "Min C"}, "tree": {"min": "min Depth", "max": "max Depth"}}
VARIANT_LABELS = {"linear": "Lin", "rbf": "RBF", "gini": "Gini", "entropy": "Entropy"}
HIGHLIGHT_THRESHOLD = 0.9
ERROR_MARK = "ERR"
MISSING_MARK = "-"
FLOAT_FORMAT = "%.10g"

LONG_COLUMNS = (
    "table",
    "row",
    "column",
    "row_order",
    "column_order",
    "cell_id",
    "source_id",
    "family",
    "variant",
    "tie_break",
    "normalize",
    "balanced_accuracy",
    "tpr",
    "tnr",
    "tp",
    "tn",
    "fp",
    "fn",
    "n_trainings",
    "skipped_inner",
    "error",
)


def column_label(cell: BSCellResult) -> str:
    parts = [POLICY_LABELS[cell.model.family][cell.tie_break]]
    if cell.source.kind != "profile":
        parts.append("Norm" if cell.source.normalize else "No norm")
    parts.append(VARIANT_LABELS[cell.model.variant])
    return " | ".join(parts)


def format_score(value: float | None, error: Any = None) -> str:
    """Porcentaje con un decimal; ``*`` marca los valores ≥ 90 %."""
    if (isinstance(error, str) and error) or value is None or (isinstance(value, float) and np.isnan(value)):
        return ERROR_MARK
    text = f"{100.0 * value:.1f}"
    return text + "*" if value >= HIGHLIGHT_THRESHOLD - 1e-12 else text


# ========== Forma larga ==========

def cells_to_frame(cells: Sequence[BSCellResult]) -> pd.DataFrame:
    records = []
    for cell in cells:
        record: dict[str, Any] = {
            "table": cell.table_id,
            "row": cell.source.row_label,
            "column": column_label(cell),
            "row_order": cell.row_order,
            "column_order": cell.column_order,
            "cell_id": cell.cell_id,
            "source_id": cell.source.source_id,
            "family": cell.model.family,
            "variant": cell.model.variant,
            "tie_break": cell.tie_break,
            "normalize": cell.source.normalize,
            "error": cell.error or "",
        }
        if cell.report is not None:
            tp, tn, fp, fn = cell.report.confusion
            record.update(
                balanced_accuracy=cell.report.balanced_accuracy,
                tpr=cell.report.tpr,
                tnr=cell.report.tnr,
                tp=tp,
                tn=tn,
                fp=fp,
                fn=fn,
                n_trainings=cell.report.n_trainings,
                skipped_inner=cell.report.skipped_inner,
            )
        records.append(record)
    frame = pd.DataFrame.from_records(records, columns=list(LONG_COLUMNS))
    return frame


def load_report_frame(path: str | Path) -> pd.DataFrame:
    frame = pd.read_csv(path, keep_default_na=False, na_values=[""])
    frame["error"] = frame["error"].fillna("")
    return frame


# ========== Tablas anchas ==========

def pivot_tables(frame: pd.DataFrame, formatted: bool = True) -> dict[str, pd.DataFrame]:
    """
    Una tabla por ``table`` en orden de aparición. Las filas siguen el orden del experimento y las
    columnas ``column_order``. Sin ``formatted`` no se añade la marca ``*``; las combinaciones que el
    experimento no contiene quedan como ``-``.
    """
    tables: dict[str, pd.DataFrame] = {}
    for table_id in pd.unique(frame["table"]):
        part = frame[frame["table"] == table_id]
        rows = part.groupby("row", sort=False)["row_order"].min().sort_values(kind="stable").index.tolist()
        columns = part.groupby("column", sort=False)["column_order"].min().sort_values(kind="stable").index.tolist()
        wide = pd.DataFrame(MISSING_MARK, index=rows, columns=columns, dtype=object)
        for record in part.itertuples(index=False):
            value = record.balanced_accuracy
            if formatted:
                wide.loc[record.row, record.column] = format_score(value, record.error)
            elif record.error or np.isnan(value):
                wide.loc[record.row, record.column] = ERROR_MARK
            else:
                wide.loc[record.row, record.column] = f"{100.0 * value:.1f}"
        wide.index.name = "features"
        tables[str(table_id)] = wide
    return tables


def render_text(tables: dict[str, pd.DataFrame], header: Sequence[str] = ()) -> str:
    blocks = [f"# {line}" for line in header]
    for table_id, wide in tables.items():
        blocks.append("")
        blocks.append(f"== {table_id} ==")
        blocks.append(wide.to_string())
    return "\n".join(blocks).lstrip("\n") + "\n"


def write_tables(frame: pd.DataFrame, out_dir: str | Path, header: Sequence[str] = ()) -> dict[str, Path]:
    """``report.txt`` y un ``report_<tabla>.csv`` por tabla a partir de la forma larga."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths: dict[str, Path] = {}
    for table_id, wide in pivot_tables(frame, formatted=False).items():
        path = out_dir / f"report_{table_id}.csv"
        wide.to_csv(path, lineterminator="\n")
        paths[table_id] = path
    text_path = out_dir / "report.txt"
    text_path.write_text(render_text(pivot_tables(frame), header), encoding="utf-8")
    paths["text"] = text_path
    return paths


def report_header(config_dict: dict[str, Any]) -> list[str]:
    """Líneas de cabecera con las decisiones que fijan los resultados."""
    return [
        "bssoundboard: precisión equilibrada (%) por validación cruzada anidada leave-one-out",
        f"rejilla C: {', '.join(f'{c:g}' for c in config_dict.get('c_grid', []))}",
        f"gamma RBF: {config_dict.get('gamma')} · ponderación SVM: {config_dict.get('class_weighting')}",
        "ajustes polinómicos de β en niveles centrados en su media",
        "* = precisión equilibrada ≥ 90 %",
    ]


def write_report(cells: Sequence[BSCellResult], out_dir: str | Path, config_dict: dict[str, Any]) -> dict[str, Path]:
    """Escribe report.csv, las tablas, audit.jsonl, reports.json y, si hay curvas, sweep.csv."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    frame = cells_to_frame(cells)
    long_path = out_dir / "report.csv"
    frame.to_csv(long_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")

    paths = write_tables(frame, out_dir, report_header(config_dict))
    paths["long"] = long_path
    paths["audit"] = write_jsonl(
        ({"cell": cell.cell_id, **record} for cell in cells if cell.report for record in cell.report.audit),
        out_dir / "audit.jsonl",
    )
    paths["reports"] = write_json(
        {cell.cell_id: (cell.report.to_dict() if cell.report else {"error": cell.error}) for cell in cells},
        out_dir / "reports.json",
    )

    sweeps = [
        {"cell_id": cell.cell_id, "value": value, "balanced_accuracy": score}
        for cell in cells
        if cell.sweep
        for value, score in cell.sweep
    ]
    if sweeps:
        sweep_path = out_dir / "sweep.csv"
        pd.DataFrame.from_records(sweeps).to_csv(
            sweep_path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n"
        )
        paths["sweep"] = sweep_path
    logger.info(f"informe de {len(cells)} celdas en {out_dir}")
    return paths
