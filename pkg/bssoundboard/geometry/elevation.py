"""
Mapas de elevación: rasterizado de la malla, recorte de la zona de interés, remuestreo y normalización.

Convenciones:
  - el nodo (i, j) está en (x0 + j·dx, y0 + i·dy); las filas crecen con y, la fila 0 es la parte
    inferior de la tapa;
  - los nodos sin superficie encima quedan indefinidos y valen 0 en ``heights`` en todas las etapas;
  - las rejillas de remuestreo se nombran "<celdas a lo ancho>x<celdas a lo largo>", así que el
    "5x10" de las tablas es una matriz de 10 filas (a lo largo, y) por 5 columnas (a lo ancho, x):
    una tapa de 100 mm × 250 mm da celdas de 20 mm × 25 mm. ``RESAMPLE_PRESETS`` guarda (filas, columnas).
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, Sequence

import numpy as np

from bssoundboard.exceptions import BSElevationError, BSValidationError, BSZeroVarianceError
from bssoundboard.geometry.mesh_io import BSTriangleMesh, mesh_bbox
from bssoundboard.learning.matrix import BSFeatureVector
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_SPACING = 0.25
RAY_EPSILON = 1e-9
RESAMPLE_MODES = ("relative", "absolute")

# "<celdas a lo ancho>x<celdas a lo largo>" → (filas, columnas)
RESAMPLE_PRESETS: dict[str, tuple[int, int]] = {
    "5x10": (10, 5),
    "10x25": (25, 10),
    "20x50": (50, 20),
    "25x65": (65, 25),
    "50x125": (125, 50),
    "75x190": (190, 75),
    "100x250": (250, 100),
}

_RASTER_BUDGET = 2_000_000


@dataclass(frozen=True)
class BSBox2D:
    xmin: float
    xmax: float
    ymin: float
    ymax: float

    def __post_init__(self):
        if not (self.xmax >= self.xmin and self.ymax >= self.ymin):
            raise BSValidationError(f"caja 2D inválida: {self}")

    @property
    def width(self) -> float:
        return self.xmax - self.xmin

    @property
    def height(self) -> float:
        return self.ymax - self.ymin

    def union(self, other: "BSBox2D") -> "BSBox2D":
        return BSBox2D(
            min(self.xmin, other.xmin),
            max(self.xmax, other.xmax),
            min(self.ymin, other.ymin),
            max(self.ymax, other.ymax),
        )

    def padded(self, fraction: float) -> "BSBox2D":
        """Amplía la caja un ``fraction`` de su extensión (repartido a ambos lados)."""
        px = self.width * fraction / 2.0
        py = self.height * fraction / 2.0
        return BSBox2D(self.xmin - px, self.xmax + px, self.ymin - py, self.ymax + py)

    def contains_box(self, other: "BSBox2D", tol: float = 1e-9) -> bool:
        return (
            other.xmin >= self.xmin - tol
            and other.xmax <= self.xmax + tol
            and other.ymin >= self.ymin - tol
            and other.ymax <= self.ymax + tol
        )

    def to_list(self) -> list[float]:
        return [self.xmin, self.xmax, self.ymin, self.ymax]


@dataclass(frozen=True, eq=False)
class BSElevationMap:
    origin: tuple[float, float]
    spacing: tuple[float, float]
    heights: np.ndarray
    defined: np.ndarray
    instrument_id: str = ""
    resample_mode: str | None = None

    def __post_init__(self):
        heights = np.array(self.heights, dtype=np.float64, copy=True)
        defined = np.array(self.defined, dtype=bool, copy=True)
        if heights.ndim != 2 or heights.shape != defined.shape:
            raise BSValidationError(f"alturas {heights.shape} y máscara {defined.shape} incompatibles")
        if heights.size == 0:
            raise BSElevationError("mapa de elevación vacío")
        if not (self.spacing[0] > 0 and self.spacing[1] > 0):
            raise BSValidationError(f"el paso de rejilla debe ser positivo: {self.spacing}")
        if np.any(heights[~defined] != 0.0):
            raise BSValidationError("hay celdas indefinidas con altura distinta de 0")
        if self.resample_mode is not None and self.resample_mode not in RESAMPLE_MODES:
            raise BSValidationError(f"modo de remuestreo desconocido: {self.resample_mode!r}")
        heights.setflags(write=False)
        defined.setflags(write=False)
        object.__setattr__(self, "origin", (float(self.origin[0]), float(self.origin[1])))
        object.__setattr__(self, "spacing", (float(self.spacing[0]), float(self.spacing[1])))
        object.__setattr__(self, "heights", heights)
        object.__setattr__(self, "defined", defined)

    @property
    def shape(self) -> tuple[int, int]:
        return self.heights.shape  # type: ignore[return-value]

    @property
    def rows(self) -> int:
        return int(self.heights.shape[0])

    @property
    def cols(self) -> int:
        return int(self.heights.shape[1])

    @property
    def n_defined(self) -> int:
        return int(self.defined.sum())

    @property
    def x_coords(self) -> np.ndarray:
        return self.origin[0] + self.spacing[0] * np.arange(self.cols)

    @property
    def y_coords(self) -> np.ndarray:
        return self.origin[1] + self.spacing[1] * np.arange(self.rows)

    @property
    def max_height(self) -> float:
        return float(self.heights[self.defined].max()) if self.n_defined else 0.0

    def footprint(self) -> BSBox2D:
        """Extensión de las celdas definidas (cada nodo ocupa ± medio paso)."""
        if self.n_defined == 0:
            raise BSElevationError(f"{self.instrument_id}: el mapa no tiene celdas definidas")
        rows = np.flatnonzero(self.defined.any(axis=1))
        cols = np.flatnonzero(self.defined.any(axis=0))
        hx, hy = self.spacing[0] / 2.0, self.spacing[1] / 2.0
        x = self.x_coords
        y = self.y_coords
        return BSBox2D(x[cols[0]] - hx, x[cols[-1]] + hx, y[rows[0]] - hy, y[rows[-1]] + hy)

    def with_values(self, heights: np.ndarray, defined: np.ndarray | None = None) -> "BSElevationMap":
        defined = self.defined if defined is None else defined
        return replace(self, heights=np.where(defined, heights, 0.0), defined=defined)


@dataclass(frozen=True)
class BSResampleSpec:
    mode: str
    rows: int
    cols: int
    global_box: BSBox2D | None = None

    def __post_init__(self):
        if self.mode not in RESAMPLE_MODES:
            raise BSValidationError(f"modo de remuestreo desconocido: {self.mode!r}")
        if self.rows < 1 or self.cols < 1:
            raise BSValidationError(f"rejilla de remuestreo sin celdas: {self.cols}x{self.rows}")
        if self.mode == "absolute" and self.global_box is None:
            raise BSValidationError("el remuestreo absoluto requiere global_box")
        if self.mode == "relative" and self.global_box is not None:
            raise BSValidationError("el remuestreo relativo no usa global_box")

    @property
    def label(self) -> str:
        return f"{self.cols}x{self.rows}"

    @property
    def n_cells(self) -> int:
        return self.rows * self.cols

    @staticmethod
    def from_preset(label: str, mode: str = "relative", global_box: BSBox2D | None = None) -> "BSResampleSpec":
        if label not in RESAMPLE_PRESETS:
            raise BSValidationError(f"rejilla desconocida: {label!r} (disponibles: {', '.join(RESAMPLE_PRESETS)})")
        rows, cols = RESAMPLE_PRESETS[label]
        return BSResampleSpec(mode=mode, rows=rows, cols=cols, global_box=global_box)


# ========== Construcción ==========

def compute_elevation_map(mesh: BSTriangleMesh, spacing: float = DEFAULT_SPACING) -> BSElevationMap:
    """
    Altura de la superficie sobre cada nodo de una rejilla que cubre la caja xy de la malla.

    Cada nodo lanza un rayo vertical; con varias intersecciones se queda la de mayor z. Los triángulos
    con proyección xy degenerada se ignoran.
    """
    if spacing <= 0:
        raise BSValidationError(f"el paso de rejilla debe ser positivo: {spacing}")

    box = mesh_bbox(mesh)
    x0, y0 = box.minimum[0], box.minimum[1]
    cols = int(np.ceil((box.maximum[0] - x0) / spacing - 1e-9)) + 1
    rows = int(np.ceil((box.maximum[1] - y0) / spacing - 1e-9)) + 1

    best = _rasterize(mesh.vertices, mesh.triangles, x0, y0, spacing, spacing, rows, cols)
    defined = np.isfinite(best)
    if not defined.any():
        raise BSElevationError(f"{mesh.instrument_id}: ningún nodo intersecta la malla (¿alineación degenerada?)")

    heights = np.where(defined, best, 0.0)
    logger.debug(f"{mesh.instrument_id}: mapa {rows}x{cols}, {int(defined.sum())} nodos definidos")
    return BSElevationMap((x0, y0), (spacing, spacing), heights, defined, mesh.instrument_id)


def _rasterize(
    vertices: np.ndarray, triangles: np.ndarray, x0: float, y0: float, dx: float, dy: float, rows: int, cols: int
) -> np.ndarray:
    """Máximo z por nodo (−inf sin intersección), por lotes de triángulos de tamaño parecido."""
    pts = vertices[triangles]
    xa, ya, za = pts[:, 0, 0], pts[:, 0, 1], pts[:, 0, 2]
    xb, yb, zb = pts[:, 1, 0], pts[:, 1, 1], pts[:, 1, 2]
    xc, yc, zc = pts[:, 2, 0], pts[:, 2, 1], pts[:, 2, 2]
    det = (xb - xa) * (yc - ya) - (xc - xa) * (yb - ya)

    j0 = np.clip(np.ceil((np.minimum(np.minimum(xa, xb), xc) - x0) / dx - RAY_EPSILON), 0, cols - 1).astype(np.int64)
    j1 = np.clip(np.floor((np.maximum(np.maximum(xa, xb), xc) - x0) / dx + RAY_EPSILON), -1, cols - 1).astype(np.int64)
    i0 = np.clip(np.ceil((np.minimum(np.minimum(ya, yb), yc) - y0) / dy - RAY_EPSILON), 0, rows - 1).astype(np.int64)
    i1 = np.clip(np.floor((np.maximum(np.maximum(ya, yb), yc) - y0) / dy + RAY_EPSILON), -1, rows - 1).astype(np.int64)

    usable = (np.abs(det) > 1e-14) & (j1 >= j0) & (i1 >= i0)
    span_x = j1 - j0 + 1
    span_y = i1 - i0 + 1
    candidates = np.flatnonzero(usable)
    order = candidates[np.argsort((span_x * span_y)[candidates], kind="stable")]
    area = (span_x * span_y)[order]

    best = np.full(rows * cols, -np.inf)
    start = 0
    while start < order.size:
        stop = min(order.size, start + max(1, _RASTER_BUDGET // int(area[start])))
        while stop - start > 1 and int(area[stop - 1]) * (stop - start) > _RASTER_BUDGET:
            stop = start + (stop - start) // 2
        idx = order[start:stop]
        start = stop

        sx = int(span_x[idx].max())
        sy = int(span_y[idx].max())
        jj = j0[idx, None, None] + np.arange(sx)[None, None, :]
        ii = i0[idx, None, None] + np.arange(sy)[None, :, None]
        valid = (jj <= j1[idx, None, None]) & (ii <= i1[idx, None, None])

        px = x0 + jj * dx
        py = y0 + ii * dy
        ax, ay = xa[idx, None, None], ya[idx, None, None]
        d = det[idx, None, None]
        l1 = ((px - ax) * (yc[idx, None, None] - ay) - (xc[idx, None, None] - ax) * (py - ay)) / d
        l2 = ((xb[idx, None, None] - ax) * (py - ay) - (px - ax) * (yb[idx, None, None] - ay)) / d
        l0 = 1.0 - l1 - l2
        hit = valid & (l0 >= -RAY_EPSILON) & (l1 >= -RAY_EPSILON) & (l2 >= -RAY_EPSILON)
        if not hit.any():
            continue

        z = l0 * za[idx, None, None] + l1 * zb[idx, None, None] + l2 * zc[idx, None, None]
        flat = np.broadcast_to(ii * cols + jj, hit.shape)
        np.maximum.at(best, flat[hit], z[hit])

    return best.reshape(rows, cols)


def crop_zone_of_interest(elevation_map: BSElevationMap) -> BSElevationMap:
    """
    Recorta desde la parte inferior de la tapa hasta la fila más ancha (incluida).

    La anchura de una fila es su número de celdas definidas; en caso de empate gana la fila más
    cercana a la parte inferior. Las columnas se ajustan a la extensión definida del recorte.
    """
    widths = elevation_map.defined.sum(axis=1)
    if widths.max(initial=0) == 0:
        raise BSElevationError(f"{elevation_map.instrument_id}: recorte vacío, no hay celdas definidas")

    widest = int(np.argmax(widths))
    first = int(np.flatnonzero(widths > 0)[0])
    defined = elevation_map.defined[first : widest + 1]
    cols = np.flatnonzero(defined.any(axis=0))
    c0, c1 = int(cols[0]), int(cols[-1])

    dx, dy = elevation_map.spacing
    origin = (elevation_map.origin[0] + c0 * dx, elevation_map.origin[1] + first * dy)
    return replace(
        elevation_map,
        origin=origin,
        heights=elevation_map.heights[first : widest + 1, c0 : c1 + 1],
        defined=defined[:, c0 : c1 + 1],
    )


def resample(elevation_map: BSElevationMap, spec: BSResampleSpec) -> BSElevationMap:
    """
    Media de los nodos finos definidos que caen en cada celda de una rejilla rows × cols.

    En modo relativo la rejilla cubre la huella del propio mapa; en modo absoluto, la caja común
    ``spec.global_box``. Una celda queda definida si contiene al menos un nodo fino definido.
    """
    if elevation_map.n_defined == 0:
        raise BSElevationError(f"{elevation_map.instrument_id}: no se puede remuestrear un mapa vacío")

    if spec.mode == "relative":
        box = elevation_map.footprint()
    else:
        box = spec.global_box  # type: ignore[assignment]
        inside_x = (elevation_map.x_coords >= box.xmin - 1e-9) & (elevation_map.x_coords <= box.xmax + 1e-9)
        inside_y = (elevation_map.y_coords >= box.ymin - 1e-9) & (elevation_map.y_coords <= box.ymax + 1e-9)
        inside = elevation_map.defined & inside_y[:, None] & inside_x[None, :]
        if not inside.any():
            raise BSElevationError(f"{elevation_map.instrument_id}: el mapa no solapa con la caja global {box}")
        if inside.sum() != elevation_map.n_defined:
            raise BSElevationError(
                f"{elevation_map.instrument_id}: la caja global {box} no contiene la huella del mapa"
            )

    cell_w = box.width / spec.cols
    cell_h = box.height / spec.rows
    if cell_w <= 0 or cell_h <= 0:
        raise BSElevationError(f"{elevation_map.instrument_id}: caja de remuestreo degenerada {box}")

    col_of = np.clip(np.floor((elevation_map.x_coords - box.xmin) / cell_w), 0, spec.cols - 1).astype(np.int64)
    row_of = np.clip(np.floor((elevation_map.y_coords - box.ymin) / cell_h), 0, spec.rows - 1).astype(np.int64)
    cell = (row_of[:, None] * spec.cols + col_of[None, :])[elevation_map.defined]
    values = elevation_map.heights[elevation_map.defined]

    n_cells = spec.rows * spec.cols
    sums = np.bincount(cell, weights=values, minlength=n_cells)
    counts = np.bincount(cell, minlength=n_cells)
    defined = counts > 0
    heights = np.zeros(n_cells)
    heights[defined] = sums[defined] / counts[defined]

    return BSElevationMap(
        origin=(box.xmin + cell_w / 2.0, box.ymin + cell_h / 2.0),
        spacing=(cell_w, cell_h),
        heights=heights.reshape(spec.rows, spec.cols),
        defined=defined.reshape(spec.rows, spec.cols),
        instrument_id=elevation_map.instrument_id,
        resample_mode=spec.mode,
    )


def normalize_heights(elevation_map: BSElevationMap) -> BSElevationMap:
    """Resta la media y divide por la desviación típica poblacional, solo sobre celdas definidas."""
    values = elevation_map.heights[elevation_map.defined]
    if values.size < 2:
        raise BSZeroVarianceError(f"{elevation_map.instrument_id}: menos de 2 celdas definidas")
    mean = values.mean()
    std = values.std()
    if not std > 1e-12 * max(1.0, abs(mean)):
        raise BSZeroVarianceError(f"{elevation_map.instrument_id}: varianza nula, no se puede normalizar")
    heights = np.zeros(elevation_map.shape)
    heights[elevation_map.defined] = (values - mean) / std
    return elevation_map.with_values(heights)


def flatten(elevation_map: BSElevationMap) -> BSFeatureVector:
    """Vector fila a fila con nombres ``cell_r_c`` (0 en las celdas indefinidas)."""
    names = tuple(f"cell_{r}_{c}" for r in range(elevation_map.rows) for c in range(elevation_map.cols))
    return BSFeatureVector(names, elevation_map.heights.reshape(-1), elevation_map.instrument_id)


def global_box(maps: Iterable[BSElevationMap], pad: float = 0.01) -> BSBox2D:
    """Unión de las huellas recortadas de un conjunto de instrumentos, ampliada un ``pad``."""
    box: BSBox2D | None = None
    for elevation_map in maps:
        fp = elevation_map.footprint()
        box = fp if box is None else box.union(fp)
    if box is None:
        raise BSValidationError("global_box necesita al menos un mapa")
    return box.padded(pad)


def map_stack(maps: Sequence[BSElevationMap]) -> tuple[np.ndarray, np.ndarray]:
    """(valores, máscaras) n × rows·cols de mapas remuestreados con la misma forma."""
    shapes = {m.shape for m in maps}
    if len(shapes) != 1:
        raise BSValidationError(f"mapas con formas distintas: {sorted(shapes)}")
    values = np.vstack([m.heights.reshape(-1) for m in maps])
    masks = np.vstack([m.defined.reshape(-1) for m in maps])
    return values, masks
