"""
Curvas de nivel de la tapa y su ajuste con la curva "parabólica" de cuatro parámetros

    y = α · |(x − δ) / (λ/2)|^β + γ

donde λ es la anchura medida de la curva (no se optimiza). β cerca de 1 indica una curva en "V";
valores mayores, una curva en "U".
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import least_squares

from bssoundboard.exceptions import BSContourFitError, BSProfileError, BSValidationError
from bssoundboard.geometry.elevation import BSElevationMap
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

DEFAULT_LEVEL_STEP = 1.0
MIN_ARC_POINTS = 5
MIN_PROFILE_LEVELS = 3

BETA_STARTS = (1.0, 1.5, 2.0, 3.0, 4.0)
BETA_MIN = 1e-6
BETA_MAX = 10.0
STEP_TOLERANCE = 1e-10
MAX_EVALUATIONS = 200


@dataclass(frozen=True, eq=False)
class BSContourLine:
    """Arco inferior de una curva de nivel, ordenado por x. ``width`` es λ."""

    level: float
    points: np.ndarray
    width: float

    def __post_init__(self):
        points = np.array(self.points, dtype=np.float64, copy=True).reshape(-1, 2)
        if points.shape[0] < MIN_ARC_POINTS:
            raise BSValidationError(f"nivel {self.level}: {points.shape[0]} puntos (mínimo {MIN_ARC_POINTS})")
        if not self.width > 0:
            raise BSValidationError(f"nivel {self.level}: anchura no positiva {self.width}")
        points.setflags(write=False)
        object.__setattr__(self, "points", points)

    @property
    def x(self) -> np.ndarray:
        return self.points[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.points[:, 1]


@dataclass(frozen=True)
class BSSkippedLevel:
    level: float
    reason: str


@dataclass
class BSContourSet:
    """Resultado de la extracción: curvas válidas, niveles candidatos y registro de niveles omitidos."""

    lines: list[BSContourLine]
    candidate_levels: list[float]
    skipped: list[BSSkippedLevel] = field(default_factory=list)

    def __iter__(self) -> Iterator[BSContourLine]:
        return iter(self.lines)

    def __len__(self) -> int:
        return len(self.lines)

    def __getitem__(self, index: int) -> BSContourLine:
        return self.lines[index]


@dataclass(frozen=True)
class BSContourFit:
    level: float
    alpha: float
    beta: float
    gamma: float
    delta: float
    width: float
    rss: float
    n_points: int = 0
    converged: bool = True

    def predict(self, x: np.ndarray) -> np.ndarray:
        u = np.abs((np.asarray(x, dtype=np.float64) - self.delta) / (self.width / 2.0))
        return self.alpha * u**self.beta + self.gamma


@dataclass(frozen=True, eq=False)
class BSParameterProfile:
    """Parámetros ajustados nivel a nivel; ``gaps`` son los niveles intermedios que faltan."""

    levels: np.ndarray
    alpha: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    width: np.ndarray
    rss: np.ndarray
    gaps: tuple[float, ...] = ()
    instrument_id: str = ""

    def __post_init__(self):
        arrays = {}
        for name in ("levels", "alpha", "beta", "gamma", "delta", "width", "rss"):
            values = np.array(getattr(self, name), dtype=np.float64, copy=True).reshape(-1)
            values.setflags(write=False)
            arrays[name] = values
        n = arrays["levels"].size
        if n == 0:
            raise BSProfileError("perfil vacío")
        if any(v.size != n for v in arrays.values()):
            raise BSProfileError("las columnas del perfil tienen longitudes distintas")
        if np.any(np.diff(arrays["levels"]) <= 0):
            raise BSProfileError("los niveles del perfil deben ser estrictamente crecientes")
        for name, values in arrays.items():
            object.__setattr__(self, name, values)
        object.__setattr__(self, "gaps", tuple(float(g) for g in self.gaps))

    def __len__(self) -> int:
        return int(self.levels.size)

    @staticmethod
    def from_beta(levels: Sequence[float], beta: Sequence[float], instrument_id: str = "") -> "BSParameterProfile":
        """Perfil solo con β (el resto de columnas a NaN); útil para características y pruebas."""
        n = len(levels)
        nan = np.full(n, np.nan)
        return BSParameterProfile(
            levels=np.asarray(levels, dtype=np.float64),
            alpha=nan,
            beta=np.asarray(beta, dtype=np.float64),
            gamma=nan,
            delta=nan,
            width=nan,
            rss=nan,
            instrument_id=instrument_id,
        )


# ========== Extracción ==========

def _main_region(elevation_map: BSElevationMap, level: float) -> np.ndarray:
    """
    Nodos encerrados por la curva principal del nivel: la componente 4-conexa de ``altura ≥ nivel``
    que contiene el máximo del mapa, con sus huecos rellenos. Las islas sueltas quedan fuera.
    """
    heights, defined = elevation_map.heights, elevation_map.defined
    above = defined & (heights >= level)
    labels, n_components = ndimage.label(above)
    if n_components == 0:
        return above
    apex = np.unravel_index(np.argmax(np.where(defined, heights, -np.inf)), heights.shape)
    if labels[apex] == 0:
        return np.zeros_like(above)
    return ndimage.binary_fill_holes(labels == labels[apex])


def _iso_points(elevation_map: BSElevationMap, level: float) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Cruces del nivel sobre las aristas de la rejilla que salen de la región principal hacia un nodo
    definido por debajo del nivel.

    Devuelve (x, y, fila) donde fila es el índice de fila para los cruces sobre aristas
    horizontales y −1 para los de aristas verticales.
    """
    heights, defined = elevation_map.heights, elevation_map.defined
    xs, ys = elevation_map.x_coords, elevation_map.y_coords
    dx, dy = elevation_map.spacing
    above = heights >= level
    inside = _main_region(elevation_map, level)

    a, b = heights[:, :-1], heights[:, 1:]
    cross = defined[:, :-1] & defined[:, 1:] & (inside[:, :-1] != inside[:, 1:]) & (above[:, :-1] != above[:, 1:])
    r, c = np.nonzero(cross)
    t = (level - a[r, c]) / (b[r, c] - a[r, c])
    hx, hy = xs[c] + t * dx, ys[r]

    a, b = heights[:-1, :], heights[1:, :]
    cross = defined[:-1, :] & defined[1:, :] & (inside[:-1, :] != inside[1:, :]) & (above[:-1, :] != above[1:, :])
    vr, vc = np.nonzero(cross)
    t = (level - a[vr, vc]) / (b[vr, vc] - a[vr, vc])
    vx, vy = xs[vc], ys[vr] + t * dy

    return (
        np.concatenate([hx, vx]),
        np.concatenate([hy, vy]),
        np.concatenate([r, np.full(vr.size, -1)]),
    )


def _contour_at(elevation_map: BSElevationMap, level: float) -> BSContourLine | BSSkippedLevel:
    x, y, row = _iso_points(elevation_map, level)
    if x.size == 0:
        return BSSkippedLevel(level, "sin cruces")

    width = float(x.max() - x.min())
    on_rows = row >= 0
    widest_y = None
    best_extent = -1.0
    for r in np.unique(row[on_rows]):
        xr = x[row == r]
        extent = float(xr.max() - xr.min())
        # Empates: se queda la fila más baja (np.unique devuelve orden creciente)
        if extent > best_extent:
            best_extent = extent
            widest_y = float(elevation_map.y_coords[r])
    if widest_y is None or best_extent <= 0:
        return BSSkippedLevel(level, "sin fila de anchura máxima")

    keep = y < widest_y
    order = np.lexsort((y[keep], x[keep]))
    points = np.column_stack([x[keep][order], y[keep][order]])
    if points.shape[0] < MIN_ARC_POINTS:
        return BSSkippedLevel(level, f"arco inferior con {points.shape[0]} puntos")
    if width <= 0:
        return BSSkippedLevel(level, "anchura nula")
    return BSContourLine(level=level, points=points, width=width)


def extract_contours(elevation_map: BSElevationMap, level_step: float = DEFAULT_LEVEL_STEP) -> BSContourSet:
    """
    Curvas de nivel cada ``level_step`` mm desde ``level_step`` hasta la altura máxima del mapa.

    Solo cuenta la curva principal de cada nivel (la que encierra el máximo del mapa); las islas
    sueltas se descartan. Se conserva el arco inferior (puntos por debajo de la fila donde la curva es
    más ancha); λ se mide sobre la curva principal completa. Los niveles con menos de 5 puntos de arco
    se anotan en ``skipped``.
    """
    if level_step <= 0:
        raise BSValidationError(f"level_step debe ser positivo: {level_step}")

    top = elevation_map.max_height
    n_levels = int(np.floor(top / level_step + 1e-9)) if top > 0 else 0
    levels = [level_step * k for k in range(1, n_levels + 1)]

    result = BSContourSet(lines=[], candidate_levels=levels)
    for level in levels:
        item = _contour_at(elevation_map, level)
        if isinstance(item, BSSkippedLevel):
            result.skipped.append(item)
            logger.info(f"{elevation_map.instrument_id}: nivel {level:g} omitido ({item.reason})")
        else:
            result.lines.append(item)
    return result


# ========== Ajuste ==========

def _powers(x: np.ndarray, beta: float, delta: float, half: float) -> np.ndarray:
    return np.abs((x - delta) / half) ** beta


def _closed_form(x: np.ndarray, y: np.ndarray, beta: float, delta: float, half: float) -> tuple[float, float]:
    """(α, γ) de mínimos cuadrados lineales para β y δ fijos."""
    design = np.column_stack([_powers(x, beta, delta, half), np.ones_like(x)])
    (alpha, gamma), *_ = np.linalg.lstsq(design, y, rcond=None)
    return float(alpha), float(gamma)


def _residuals(params: np.ndarray, x: np.ndarray, y: np.ndarray, half: float) -> np.ndarray:
    alpha, beta, gamma, delta = params
    return alpha * _powers(x, beta, delta, half) + gamma - y


def _jacobian(params: np.ndarray, x: np.ndarray, y: np.ndarray, half: float) -> np.ndarray:
    alpha, beta, gamma, delta = params
    u = (x - delta) / half
    au = np.abs(u)
    nonzero = au > 0
    safe = np.where(nonzero, au, 1.0)
    power = np.where(nonzero, safe**beta, 0.0)

    jac = np.empty((x.size, 4))
    jac[:, 0] = power
    # Subgradiente 0 en u = 0
    jac[:, 1] = np.where(nonzero, alpha * power * np.log(safe), 0.0)
    jac[:, 2] = 1.0
    jac[:, 3] = np.where(nonzero, -alpha * beta * safe ** (beta - 1.0) * np.sign(u) / half, 0.0)
    return jac


def fit_contour(contour: BSContourLine) -> BSContourFit:
    """
    Ajuste multiarranque de (α, β, γ, δ) con β ∈ (0, 10] y |δ| ≤ λ/2.

    Cada arranque fija β ∈ {1, 1.5, 2, 3, 4} y δ ∈ {0, ±λ/8}, inicializa (α, γ) por mínimos
    cuadrados lineales y refina con ``least_squares`` (región de confianza con cotas y jacobiano
    analítico). Se devuelve el mejor resultado, nunca peor que el mejor punto inicial.
    """
    x, y = contour.x, contour.y
    lam = contour.width
    half = lam / 2.0
    if np.ptp(x) < lam / 4.0:
        raise BSContourFitError(
            f"nivel {contour.level}: extensión en x {np.ptp(x):.4g} menor que λ/4 = {lam / 4.0:.4g}"
        )

    lower = np.array([-np.inf, BETA_MIN, -np.inf, -half])
    upper = np.array([np.inf, BETA_MAX, np.inf, half])

    best: BSContourFit | None = None
    any_converged = False
    for beta0 in BETA_STARTS:
        for delta0 in (0.0, lam / 8.0, -lam / 8.0):
            alpha0, gamma0 = _closed_form(x, y, beta0, delta0, half)
            start = np.array([alpha0, beta0, gamma0, delta0])
            start_rss = float(np.sum(_residuals(start, x, y, half) ** 2))
            candidates = [(start_rss, start, False)]

            try:
                result = least_squares(
                    _residuals,
                    start,
                    jac=_jacobian,
                    bounds=(lower, upper),
                    method="trf",
                    x_scale="jac",
                    xtol=STEP_TOLERANCE,
                    ftol=1e-15,
                    gtol=1e-15,
                    max_nfev=MAX_EVALUATIONS,
                    args=(x, y, half),
                )
                converged = bool(result.status > 0)
                any_converged = any_converged or converged
                candidates.append((2.0 * float(result.cost), result.x, converged))
            except (ValueError, np.linalg.LinAlgError) as e:
                logger.debug(f"nivel {contour.level}: arranque β={beta0}, δ={delta0:g} fallido ({e})")

            rss, params, converged = min(candidates, key=lambda item: item[0])
            if best is None or rss < best.rss:
                best = BSContourFit(
                    level=contour.level,
                    alpha=float(params[0]),
                    beta=float(params[1]),
                    gamma=float(params[2]),
                    delta=float(np.clip(params[3], -half, half)),
                    width=lam,
                    rss=rss,
                    n_points=int(x.size),
                    converged=converged,
                )

    if not any_converged:
        raise BSContourFitError(f"nivel {contour.level}: ningún arranque converge", best_fit=best)
    assert best is not None
    return best


# ========== Perfiles ==========

def build_profile(
    fits: Sequence[BSContourFit], level_step: float = DEFAULT_LEVEL_STEP, instrument_id: str = ""
) -> BSParameterProfile:
    """Apila los ajustes por nivel; los niveles ausentes entre el primero y el último se anotan."""
    if len(fits) < MIN_PROFILE_LEVELS:
        raise BSProfileError(
            f"{instrument_id}: se necesitan al menos {MIN_PROFILE_LEVELS} ajustes para un perfil ({len(fits)})"
        )
    ordered = sorted(fits, key=lambda f: f.level)
    levels = np.array([f.level for f in ordered])

    expected = np.arange(levels[0], levels[-1] + level_step / 2.0, level_step)
    gaps = tuple(float(v) for v in expected if not np.any(np.isclose(levels, v)))
    if gaps:
        logger.info(f"{instrument_id}: niveles sin ajuste {', '.join(f'{g:g}' for g in gaps)}")

    return BSParameterProfile(
        levels=levels,
        alpha=[f.alpha for f in ordered],
        beta=[f.beta for f in ordered],
        gamma=[f.gamma for f in ordered],
        delta=[f.delta for f in ordered],
        width=[f.width for f in ordered],
        rss=[f.rss for f in ordered],
        gaps=gaps,
        instrument_id=instrument_id,
    )


def profile_from_map(
    elevation_map: BSElevationMap, level_step: float = DEFAULT_LEVEL_STEP
) -> tuple[BSParameterProfile, list[BSSkippedLevel]]:
    """Mapa recortado → curvas → ajustes → perfil; los ajustes fallidos se omiten y se anotan."""
    contours = extract_contours(elevation_map, level_step)
    skipped = list(contours.skipped)
    fits: list[BSContourFit] = []
    for line in contours:
        try:
            fits.append(fit_contour(line))
        except BSContourFitError as e:
            skipped.append(BSSkippedLevel(line.level, f"ajuste fallido: {e}"))
            logger.warning(f"{elevation_map.instrument_id}: {e}")
    profile = build_profile(fits, level_step, elevation_map.instrument_id)
    return profile, sorted(skipped, key=lambda s: s.level)
