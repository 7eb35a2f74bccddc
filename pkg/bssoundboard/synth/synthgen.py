"""
Generador de tapas armónicas sintéticas con etiqueta conocida.

Una tapa sin reducir es el campo de alturas

    z(x, y) = H · plan(y) · (1 − (|x| / halfwidth(y))^p)

sobre su contorno. Una tapa reducida se construye a partir de una tapa de anchura ``width + s``
quitando la franja central |x| < s/2 y desplazando las dos mitades hasta juntarlas en x = 0, lo que
equivale a evaluar la tapa ancha en |x| + s/2. El pliegue resultante en x = 0 convierte las curvas de
nivel en "V".

Ejes según ``ALIGNMENT_FRAME``: x lateral, y longitudinal con la parte inferior en y = 0, z altura.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from joblib import Parallel, delayed

from bssoundboard.exceptions import BSValidationError
from bssoundboard.geometry.mesh_io import BSTriangleMesh
from bssoundboard.learning.matrix import LABEL_REDUCED, LABEL_UNREDUCED
from bssoundboard.utils.logger import get_logger
from bssoundboard.utils.persistence import write_json

logger = get_logger(__name__)

RATIO_RANGE = (2.266, 2.765)
LENGTH_RANGE = (240.0, 260.0)
ARCH_HEIGHT_RANGE = (14.0, 17.0)
WIDEST_FRACTION_RANGE = (0.36, 0.40)
REDUCTION_SLICE_RANGE = (16.0, 20.0)
DEFAULT_ARCH_EXPONENT = 2.6

# Forma en planta: subida racional hasta la zona más ancha y caída parabólica suave por encima
_PLAN_CROWN = 0.5
_PLAN_UPPER_DROP = 0.35
_INSIDE_TOL = 1e-9


@dataclass(frozen=True)
class BSBoardSpec:
    instrument_id: str = "board"
    length: float = 250.0
    width: float = 100.0
    arch_height: float = 15.0
    arch_exponent: float = DEFAULT_ARCH_EXPONENT
    widest_fraction: float = 0.38
    reduction_slice: float = 0.0
    noise_mm: float = 0.0
    seed: int = 0
    mesh_step: float = 1.0

    def __post_init__(self):
        if self.length <= 0 or self.width <= 0 or self.arch_height <= 0:
            raise BSValidationError(
                f"longitud, anchura y altura deben ser positivas: "
                f"({self.length}, {self.width}, {self.arch_height})"
            )
        if self.arch_exponent <= 0:
            raise BSValidationError(f"arch_exponent debe ser positivo: {self.arch_exponent}")
        if not 0.2 < self.widest_fraction < 0.8:
            raise BSValidationError(f"widest_fraction fuera de (0.2, 0.8): {self.widest_fraction}")
        if not 0.0 <= self.reduction_slice < self.width / 2:
            raise BSValidationError(
                f"reduction_slice debe estar en [0, width/2): {self.reduction_slice} (width {self.width})"
            )
        if self.noise_mm < 0:
            raise BSValidationError(f"noise_mm no puede ser negativo: {self.noise_mm}")
        if not 0 < self.mesh_step <= self.width / 4:
            raise BSValidationError(f"mesh_step fuera de rango: {self.mesh_step}")

    @property
    def label(self) -> str:
        return LABEL_REDUCED if self.reduction_slice > 0 else LABEL_UNREDUCED

    @property
    def ratio(self) -> float:
        return self.length / self.width

    @property
    def widest_y(self) -> float:
        return self.widest_fraction * self.length


@dataclass(frozen=True)
class BSCorpusEntry:
    spec: BSBoardSpec
    mesh: BSTriangleMesh
    ratio: float

    @property
    def label(self) -> str:
        return self.spec.label

    @property
    def instrument_id(self) -> str:
        return self.spec.instrument_id


@dataclass(frozen=True)
class BSSyntheticCorpus:
    entries: tuple[BSCorpusEntry, ...]
    seed: int
    fmt: str = "obj"

    def __post_init__(self):
        ids = [e.instrument_id for e in self.entries]
        if len(set(ids)) != len(ids):
            raise BSValidationError("identificadores de instrumento repetidos en el corpus")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def labels(self) -> list[str]:
        return [e.label for e in self.entries]

    @property
    def meshes(self) -> list[BSTriangleMesh]:
        return [e.mesh for e in self.entries]

    def manifest(self, fmt: str | None = None) -> list[dict]:
        fmt = fmt or self.fmt
        return [
            {
                "instrument_id": e.instrument_id,
                "label": e.label,
                "path": f"{e.instrument_id}.{fmt}",
                "ratio": e.ratio,
                "spec": asdict(e.spec),
            }
            for e in self.entries
        ]


# ========== Campo de alturas ==========

def twin_spec(spec: BSBoardSpec) -> BSBoardSpec:
    """La misma tapa sin reducir (misma anchura final, sin pliegue)."""
    return replace(spec, instrument_id=f"{spec.instrument_id}_twin", reduction_slice=0.0)


def board_height(spec: BSBoardSpec, x, y) -> tuple[np.ndarray, np.ndarray]:
    """
    Evalúa el campo analítico (sin ruido) en puntos (x, y).

    Devuelve (z, inside); fuera del contorno z vale 0.
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    p = spec.arch_exponent
    full_half = (spec.width + spec.reduction_slice) / 2.0
    shift = spec.reduction_slice / 2.0
    yw = spec.widest_y

    y_low = np.clip(y, 0.0, yw)
    t = np.clip((y - yw) / (spec.length - yw), 0.0, 1.0)
    bottom = y <= yw

    half = np.where(bottom, full_half * (y_low / yw) ** (1.0 / p), full_half * np.sqrt(np.clip(1.0 - t**2, 0.0, 1.0)))
    plan = np.where(
        bottom,
        y_low / (_PLAN_CROWN * yw + (1.0 - _PLAN_CROWN) * y_low),
        1.0 - _PLAN_UPPER_DROP * t**2,
    )

    ax = np.abs(x) + shift
    inside = (y >= 0.0) & (y <= spec.length) & (ax <= half + _INSIDE_TOL)
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(half > 0, ax / np.where(half > 0, half, 1.0), 1.0)
    z = spec.arch_height * plan * (1.0 - np.clip(ratio, 0.0, 1.0) ** p)
    z = np.where(inside, z, 0.0)
    return z, inside


def generate_board(spec: BSBoardSpec) -> BSTriangleMesh:
    """
    Triangula el campo de alturas sobre una rejilla regular de paso ``mesh_step``.

    La rejilla tiene una columna en x = 0 y filas en y = 0, en la zona más ancha y en y = length.
    Cada celda con sus cuatro vértices dentro del contorno aporta dos triángulos, con diagonales
    simétricas respecto a x = 0.
    """
    step = spec.mesh_step
    nx = int(np.floor(spec.width / 2.0 / step + 1e-9))
    xs = step * np.arange(-nx, nx + 1, dtype=np.float64)
    rows = np.arange(0.0, spec.length, step)
    rows = rows[(np.abs(rows - spec.widest_y) > 1e-6) & (np.abs(rows - spec.length) > 1e-6)]
    ys = np.unique(np.concatenate([rows, [spec.widest_y, spec.length]]))

    grid_x, grid_y = np.meshgrid(xs, ys)
    z, inside = board_height(spec, grid_x, grid_y)
    if spec.noise_mm > 0:
        rng = np.random.default_rng(spec.seed)
        z = z + rng.uniform(-spec.noise_mm, spec.noise_mm, size=z.shape)

    index = np.full(z.shape, -1, dtype=np.int64)
    index[inside] = np.arange(int(inside.sum()))

    a = index[:-1, :-1]
    b = index[:-1, 1:]
    c = index[1:, :-1]
    d = index[1:, 1:]
    right = np.broadcast_to(xs[:-1] >= 0, a.shape)

    # x ≥ 0: diagonal a-d; x < 0: diagonal b-c (espejo)
    t1 = np.where(right[..., None], np.stack([a, b, d], axis=-1), np.stack([a, b, c], axis=-1)).reshape(-1, 3)
    t2 = np.where(right[..., None], np.stack([a, d, c], axis=-1), np.stack([b, d, c], axis=-1)).reshape(-1, 3)
    triangles = np.concatenate([t1, t2])
    triangles = triangles[(triangles >= 0).all(axis=1)]
    if triangles.shape[0] == 0:
        raise BSValidationError(f"especificación degenerada, la tapa no tiene triángulos: {spec}")

    used = np.unique(triangles)
    remap = np.full(int(inside.sum()), -1, dtype=np.int64)
    remap[used] = np.arange(used.size)
    vertices = np.column_stack([grid_x[inside], grid_y[inside], z[inside]])[used]

    mesh = BSTriangleMesh(vertices=vertices, triangles=remap[triangles], instrument_id=spec.instrument_id)
    logger.debug(f"{spec.instrument_id}: {mesh.n_vertices} vértices, {mesh.n_triangles} triángulos")
    return mesh


# ========== Corpus ==========

def sample_spec(
    rng: np.random.Generator, instrument_id: str, reduced: bool, noise_mm: float = 0.05
) -> tuple[BSBoardSpec, float]:
    """Sortea una tapa con la dispersión de proporciones observada en violines reales."""
    length = float(rng.uniform(*LENGTH_RANGE))
    ratio = float(rng.uniform(*RATIO_RANGE))
    arch_height = float(rng.uniform(*ARCH_HEIGHT_RANGE))
    widest_fraction = float(rng.uniform(*WIDEST_FRACTION_RANGE))
    reduction = float(rng.uniform(*REDUCTION_SLICE_RANGE))
    seed = int(rng.integers(0, 2**31 - 1))
    spec = BSBoardSpec(
        instrument_id=instrument_id,
        length=length,
        width=length / ratio,
        arch_height=arch_height,
        arch_exponent=DEFAULT_ARCH_EXPONENT,
        widest_fraction=widest_fraction,
        reduction_slice=reduction if reduced else 0.0,
        noise_mm=noise_mm,
        seed=seed,
    )
    return spec, ratio


def generate_corpus(
    n_reduced: int, n_unreduced: int, seed: int, noise_mm: float = 0.05, n_jobs: int = 1, fmt: str = "obj"
) -> BSSyntheticCorpus:
    """
    Genera ``n_reduced + n_unreduced`` tapas; es función pura de (recuentos, semilla, ruido).

    Las especificaciones se sortean en serie y las mallas se construyen en paralelo.
    """
    if n_reduced < 1 or n_unreduced < 1:
        raise BSValidationError(f"se necesita al menos una tapa por clase: ({n_reduced}, {n_unreduced})")

    rng = np.random.default_rng(seed)
    sampled: list[tuple[BSBoardSpec, float]] = []
    for k in range(n_reduced + n_unreduced):
        sampled.append(sample_spec(rng, f"board_{k:03d}", reduced=k < n_reduced, noise_mm=noise_mm))

    meshes = Parallel(n_jobs=n_jobs)(delayed(generate_board)(spec) for spec, _ in sampled)
    entries = tuple(BSCorpusEntry(spec=spec, mesh=mesh, ratio=ratio) for (spec, ratio), mesh in zip(sampled, meshes))
    logger.info(f"corpus sintético: {n_reduced} reducidas, {n_unreduced} sin reducir (semilla {seed})")
    return BSSyntheticCorpus(entries=entries, seed=seed, fmt=fmt)


# ========== Escritura ==========

def write_mesh(mesh: BSTriangleMesh, path: str | Path, fmt: str | None = None) -> None:
    """Escribe la malla en OBJ (caras con índices desde 1) o PLY ASCII; la relectura es exacta."""
    path = Path(path)
    fmt = (fmt or path.suffix.lstrip(".")).lower()
    if fmt == "obj":
        lines = [f"# bssoundboard {mesh.instrument_id}"]
        lines += [f"v {x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"f {i + 1} {j + 1} {k + 1}" for i, j, k in mesh.triangles.tolist()]
    elif fmt == "ply":
        lines = [
            "ply",
            "format ascii 1.0",
            f"comment bssoundboard {mesh.instrument_id}",
            f"element vertex {mesh.n_vertices}",
            "property double x",
            "property double y",
            "property double z",
            f"element face {mesh.n_triangles}",
            "property list uchar int vertex_indices",
            "end_header",
        ]
        lines += [f"{x!r} {y!r} {z!r}" for x, y, z in mesh.vertices.tolist()]
        lines += [f"3 {i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    else:
        raise BSValidationError(f"formato de malla no soportado: {fmt!r}")
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def write_corpus(corpus: BSSyntheticCorpus, out_dir: str | Path, fmt: str | None = None) -> Path:
    """Escribe una malla por instrumento y ``manifest.json``; devuelve la ruta del manifiesto."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    fmt = fmt or corpus.fmt
    manifest = corpus.manifest(fmt)
    for entry, item in zip(corpus.entries, manifest):
        write_mesh(entry.mesh, out_dir / item["path"], fmt)
    manifest_path = write_json(manifest, out_dir / "manifest.json")
    logger.info(f"{len(manifest)} mallas escritas en {out_dir}")
    return manifest_path
