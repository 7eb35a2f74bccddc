"""
Lectura y validación de mallas triangulares (OBJ y PLY ASCII).

Las coordenadas se interpretan siempre según ``ALIGNMENT_FRAME``: plano de simetría x = 0, plano de
referencia z = 0, eje largo y (la parte inferior de la tapa en el extremo de y mínima), alturas en z.
Todo en milímetros.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np

from bssoundboard.exceptions import BSEmptyMeshError, BSMeshIndexError, BSMeshParseError
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

SUPPORTED_FORMATS = ("obj", "ply")


@dataclass(frozen=True)
class BSAlignmentFrame:
    """Convención de ejes asumida por todos los módulos (la alineación en sí queda fuera)."""

    symmetry_axis: str = "x"
    long_axis: str = "y"
    height_axis: str = "z"
    symmetry_plane: float = 0.0
    reference_plane: float = 0.0
    bottom_at_min_long: bool = True
    units: str = "mm"


ALIGNMENT_FRAME = BSAlignmentFrame()


@dataclass(frozen=True)
class BSBoundingBox:
    minimum: tuple[float, float, float]
    maximum: tuple[float, float, float]

    @property
    def extent(self) -> tuple[float, float, float]:
        return (
            self.maximum[0] - self.minimum[0],
            self.maximum[1] - self.minimum[1],
            self.maximum[2] - self.minimum[2],
        )

    def translated(self, offset: Iterable[float]) -> "BSBoundingBox":
        t = tuple(float(v) for v in offset)
        return BSBoundingBox(
            minimum=(self.minimum[0] + t[0], self.minimum[1] + t[1], self.minimum[2] + t[2]),
            maximum=(self.maximum[0] + t[0], self.maximum[1] + t[1], self.maximum[2] + t[2]),
        )

    def contains(self, points: np.ndarray) -> bool:
        pts = np.asarray(points, dtype=float).reshape(-1, 3)
        return bool(np.all(pts >= np.asarray(self.minimum)) and np.all(pts <= np.asarray(self.maximum)))


@dataclass(frozen=True, eq=False)
class BSTriangleMesh:
    """
    Superficie triangulada de una tapa.

    Los arrays se congelan (``writeable = False``) al construir: la malla es inmutable y se puede
    compartir entre hilos sin copias.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    instrument_id: str = ""

    def __post_init__(self):
        vertices = np.array(self.vertices, dtype=np.float64, copy=True).reshape(-1, 3)
        triangles = np.array(self.triangles, dtype=np.int64, copy=True).reshape(-1, 3)

        if vertices.shape[0] < 3:
            raise BSEmptyMeshError(f"la malla necesita al menos 3 vértices (tiene {vertices.shape[0]})")
        if triangles.shape[0] < 1:
            raise BSEmptyMeshError("la malla no tiene triángulos")
        if not np.all(np.isfinite(vertices)):
            raise BSMeshParseError("la malla contiene coordenadas no finitas")
        if triangles.min() < 0 or triangles.max() >= vertices.shape[0]:
            raise BSMeshIndexError(
                f"índice fuera de rango: los índices deben estar en [0, {vertices.shape[0] - 1}]"
            )
        repeated = (
            (triangles[:, 0] == triangles[:, 1])
            | (triangles[:, 1] == triangles[:, 2])
            | (triangles[:, 0] == triangles[:, 2])
        )
        if repeated.any():
            bad = int(np.flatnonzero(repeated)[0])
            raise BSMeshIndexError(f"el triángulo {bad} repite un índice de vértice: {triangles[bad].tolist()}")

        vertices.setflags(write=False)
        triangles.setflags(write=False)
        object.__setattr__(self, "vertices", vertices)
        object.__setattr__(self, "triangles", triangles)

    @property
    def n_vertices(self) -> int:
        return int(self.vertices.shape[0])

    @property
    def n_triangles(self) -> int:
        return int(self.triangles.shape[0])

    def translated(self, offset: Iterable[float]) -> "BSTriangleMesh":
        t = np.asarray(list(offset), dtype=np.float64).reshape(3)
        return BSTriangleMesh(self.vertices + t, self.triangles, self.instrument_id)

    def same_geometry(self, other: "BSTriangleMesh") -> bool:
        """Igualdad exacta de vértices e índices (el identificador no cuenta)."""
        return bool(
            np.array_equal(self.vertices, other.vertices) and np.array_equal(self.triangles, other.triangles)
        )


# ========== Operaciones públicas ==========

def mesh_bbox(mesh: BSTriangleMesh) -> BSBoundingBox:
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    return BSBoundingBox(
        minimum=(float(lo[0]), float(lo[1]), float(lo[2])),
        maximum=(float(hi[0]), float(hi[1]), float(hi[2])),
    )


def load_mesh(path: str | Path, fmt: str | None = None, instrument_id: str | None = None) -> BSTriangleMesh:
    """
    Lee una malla OBJ o PLY ASCII.

    Si ``fmt`` es None se deduce de la extensión. El identificador por defecto es el nombre del
    fichero sin extensión. Los polígonos de más de tres vértices se triangulan en abanico.
    """
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt not in SUPPORTED_FORMATS:
        raise BSMeshParseError(f"formato de malla no soportado: {fmt!r} (usa obj o ply)", str(path))
    if not path.is_file():
        raise FileNotFoundError(f"no existe el fichero de malla: {path}")

    if fmt == "obj":
        with path.open("r", encoding="utf-8", errors="replace") as handle:
            vertices, triangles = _parse_obj(handle, str(path))
    else:
        with path.open("rb") as raw:
            head = raw.read(4)
        if head != b"ply\n" and head[:3] != b"ply":
            raise BSMeshParseError("falta la cabecera 'ply'", str(path), 1)
        with path.open("r", encoding="ascii", errors="replace") as handle:
            vertices, triangles = _parse_ply(handle, str(path))

    if len(vertices) < 3 or len(triangles) < 1:
        raise BSEmptyMeshError(
            f"malla vacía: {len(vertices)} vértices y {len(triangles)} triángulos", str(path)
        )

    mesh = BSTriangleMesh(
        vertices=np.asarray(vertices, dtype=np.float64),
        triangles=np.asarray(triangles, dtype=np.int64),
        instrument_id=instrument_id if instrument_id is not None else path.stem,
    )
    logger.debug(f"{path.name}: {mesh.n_vertices} vértices, {mesh.n_triangles} triángulos")
    return mesh


# ========== Parsers ==========

def _fan(polygon: list[int]) -> Iterator[tuple[int, int, int]]:
    for k in range(1, len(polygon) - 1):
        yield polygon[0], polygon[k], polygon[k + 1]


def _check_triangle(tri: tuple[int, int, int], n_vertices: int, path: str, line: int) -> None:
    for idx in tri:
        if idx < 0 or idx >= n_vertices:
            raise BSMeshIndexError(f"índice fuera de rango: {idx} (hay {n_vertices} vértices)", path, line)
    if tri[0] == tri[1] or tri[1] == tri[2] or tri[0] == tri[2]:
        raise BSMeshIndexError(f"triángulo con índices repetidos: {list(tri)}", path, line)


def _parse_obj(lines: Iterable[str], path: str) -> tuple[list[tuple[float, float, float]], list[tuple[int, int, int]]]:
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []

    for number, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        tag = tokens[0]

        if tag == "v":
            if len(tokens) < 4:
                raise BSMeshParseError("registro 'v' con menos de 3 coordenadas", path, number)
            try:
                vertices.append((float(tokens[1]), float(tokens[2]), float(tokens[3])))
            except ValueError as e:
                raise BSMeshParseError(f"coordenada no numérica: {line!r}", path, number) from e

        elif tag == "f":
            if len(tokens) < 4:
                raise BSMeshParseError("registro 'f' con menos de 3 vértices", path, number)
            polygon: list[int] = []
            for token in tokens[1:]:
                head = token.split("/", 1)[0]
                try:
                    idx = int(head)
                except ValueError as e:
                    raise BSMeshParseError(f"índice de cara no entero: {token!r}", path, number) from e
                if idx == 0:
                    raise BSMeshIndexError("índice fuera de rango: 0 (OBJ usa índices desde 1)", path, number)
                # Índices negativos: relativos al último vértice leído
                polygon.append(idx - 1 if idx > 0 else len(vertices) + idx)
            for tri in _fan(polygon):
                _check_triangle(tri, len(vertices), path, number)
                triangles.append(tri)

        # vt, vn, o, g, s, usemtl, mtllib... se ignoran

    return vertices, triangles


def _parse_ply(lines: Iterable[str], path: str) -> tuple[list[tuple[float, float, float]], list[tuple[int, int, int]]]:
    iterator = iter(enumerate(lines, start=1))

    # ---- cabecera ----
    elements: list[dict] = []
    saw_format = False
    for number, raw in iterator:
        line = raw.strip()
        if number == 1:
            if line != "ply":
                raise BSMeshParseError("falta la cabecera 'ply'", path, number)
            continue
        if not line or line.startswith("comment") or line.startswith("obj_info"):
            continue
        tokens = line.split()
        if tokens[0] == "format":
            if len(tokens) < 2 or tokens[1] != "ascii":
                raise BSMeshParseError(f"PLY binario no soportado ({line!r}); convierte a ascii 1.0", path, number)
            saw_format = True
        elif tokens[0] == "element":
            if len(tokens) != 3:
                raise BSMeshParseError(f"declaración 'element' mal formada: {line!r}", path, number)
            try:
                count = int(tokens[2])
            except ValueError as e:
                raise BSMeshParseError(f"número de elementos no entero: {line!r}", path, number) from e
            elements.append({"name": tokens[1], "count": count, "properties": []})
        elif tokens[0] == "property":
            if not elements:
                raise BSMeshParseError("'property' antes de cualquier 'element'", path, number)
            if tokens[1] == "list":
                if len(tokens) != 5:
                    raise BSMeshParseError(f"propiedad lista mal formada: {line!r}", path, number)
                elements[-1]["properties"].append((tokens[4], True))
            else:
                if len(tokens) != 3:
                    raise BSMeshParseError(f"propiedad mal formada: {line!r}", path, number)
                elements[-1]["properties"].append((tokens[2], False))
        elif tokens[0] == "end_header":
            break
        else:
            raise BSMeshParseError(f"línea de cabecera desconocida: {line!r}", path, number)
    else:
        raise BSMeshParseError("cabecera PLY sin 'end_header'", path)

    if not saw_format:
        raise BSMeshParseError("cabecera PLY sin línea 'format'", path)

    # ---- cuerpo ----
    vertices: list[tuple[float, float, float]] = []
    triangles: list[tuple[int, int, int]] = []
    for element in elements:
        names = [name for name, _ in element["properties"]]
        for _ in range(element["count"]):
            try:
                number, raw = next(iterator)
            except StopIteration:
                raise BSMeshParseError(
                    f"fin de fichero: se esperaban {element['count']} elementos '{element['name']}'", path
                ) from None
            tokens = raw.split()
            if element["name"] == "vertex":
                vertices.append(_ply_vertex(tokens, names, element["properties"], path, number))
            elif element["name"] == "face":
                for tri in _fan(_ply_face(tokens, element["properties"], path, number)):
                    triangles.append(tri)

    n = len(vertices)
    for k, tri in enumerate(triangles):
        for idx in tri:
            if idx < 0 or idx >= n:
                raise BSMeshIndexError(f"índice fuera de rango en la cara {k}: {idx} (hay {n} vértices)", path)
        if tri[0] == tri[1] or tri[1] == tri[2] or tri[0] == tri[2]:
            raise BSMeshIndexError(f"la cara {k} repite un índice de vértice: {list(tri)}", path)

    return vertices, triangles


def _ply_vertex(tokens: list[str], names: list[str], properties: list, path: str, number: int):
    if any(is_list for _, is_list in properties):
        raise BSMeshParseError("propiedades lista en 'vertex' no soportadas", path, number)
    if len(tokens) < len(names):
        raise BSMeshParseError(f"vértice con {len(tokens)} valores, se esperaban {len(names)}", path, number)
    try:
        values = dict(zip(names, (float(t) for t in tokens)))
        return values["x"], values["y"], values["z"]
    except KeyError as e:
        raise BSMeshParseError(f"el elemento 'vertex' no declara la propiedad {e.args[0]}", path, number) from e
    except ValueError as e:
        raise BSMeshParseError(f"valor de vértice no numérico: {' '.join(tokens)!r}", path, number) from e


def _ply_face(tokens: list[str], properties: list, path: str, number: int) -> list[int]:
    position = 0
    polygon: list[int] | None = None
    try:
        for name, is_list in properties:
            if is_list:
                count = int(tokens[position])
                values = [int(t) for t in tokens[position + 1 : position + 1 + count]]
                if len(values) != count:
                    raise BSMeshParseError("lista de índices incompleta", path, number)
                if name in ("vertex_indices", "vertex_index"):
                    polygon = values
                position += 1 + count
            else:
                position += 1
    except (ValueError, IndexError) as e:
        raise BSMeshParseError(f"cara mal formada: {' '.join(tokens)!r}", path, number) from e
    if polygon is None:
        raise BSMeshParseError("el elemento 'face' no declara 'vertex_indices'", path, number)
    if len(polygon) < 3:
        raise BSMeshParseError("cara con menos de 3 vértices", path, number)
    return polygon
