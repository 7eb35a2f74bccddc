"""
Características construidas a partir del perfil β de cada instrumento.

Los ajustes polinómicos se hacen sobre niveles centrados en su media y los coeficientes se
devuelven en esas coordenadas centradas. Los umbrales de β son cerrados por arriba (β ≤ 2, β ≤ 3)
y los dos primeros intervalos se solapan a propósito: así se definen los tres recuentos.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from bssoundboard.exceptions import BSFeatureError, BSRankDeficiencyError, BSValidationError
from bssoundboard.geometry.contours import BSParameterProfile
from bssoundboard.learning.matrix import BSFeatureVector
from bssoundboard.utils.logger import get_logger

logger = get_logger(__name__)

BETA_THRESHOLDS = (2.0, 3.0)
DEFAULT_PROFILE_SAMPLES = 50
PIECEWISE_MIN_SIDE = 3
_TIE_TOLERANCE = 1e-12


@dataclass(frozen=True)
class BSPolyFit:
    coefficients: np.ndarray  # grado descendente, en niveles centrados
    rss: float
    center: float


@dataclass(frozen=True)
class BSPiecewiseFit:
    slope1: float
    intercept1: float
    slope2: float
    intercept2: float
    breakpoint: float
    split: int
    rss: float
    center: float


# ========== Ajustes básicos ==========

def _check_profile(profile: BSParameterProfile, minimum: int, what: str) -> tuple[np.ndarray, np.ndarray]:
    if len(profile) < minimum:
        raise BSFeatureError(f"{profile.instrument_id}: {what} necesita al menos {minimum} niveles ({len(profile)})")
    return profile.levels, profile.beta


def polyfit(levels: np.ndarray, values: np.ndarray, degree: int, center: float | None = None) -> BSPolyFit:
    """Mínimos cuadrados ordinarios de ``values`` frente a ``levels − center``."""
    levels = np.asarray(levels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    center = float(levels.mean()) if center is None else center
    design = np.vander(levels - center, degree + 1)
    coefficients, _, rank, _ = np.linalg.lstsq(design, values, rcond=None)
    if rank < degree + 1:
        raise BSRankDeficiencyError(f"ajuste de grado {degree} sin rango completo ({rank} < {degree + 1})")
    rss = float(np.sum((design @ coefficients - values) ** 2))
    return BSPolyFit(coefficients=coefficients, rss=rss, center=center)


def piecewise_fit(levels: np.ndarray, values: np.ndarray) -> BSPiecewiseFit:
    """
    Dos rectas independientes a ambos lados de un corte con al menos 3 niveles por lado.

    El corte ``k`` separa los niveles [0, k) de [k, n); la ruptura que se devuelve es el primer
    nivel del tramo superior. Con rss empatados gana el menor ``k``. Ambos tramos usan el mismo
    centrado (media de todos los niveles).
    """
    levels = np.asarray(levels, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    n = levels.size
    if n < 2 * PIECEWISE_MIN_SIDE:
        raise BSFeatureError(f"el ajuste a trozos necesita al menos {2 * PIECEWISE_MIN_SIDE} niveles ({n})")
    center = float(levels.mean())

    best: BSPiecewiseFit | None = None
    for k in range(PIECEWISE_MIN_SIDE, n - PIECEWISE_MIN_SIDE + 1):
        low = polyfit(levels[:k], values[:k], 1, center)
        high = polyfit(levels[k:], values[k:], 1, center)
        rss = low.rss + high.rss
        if best is None or rss < best.rss - _TIE_TOLERANCE * max(1.0, best.rss):
            best = BSPiecewiseFit(
                slope1=float(low.coefficients[0]),
                intercept1=float(low.coefficients[1]),
                slope2=float(high.coefficients[0]),
                intercept2=float(high.coefficients[1]),
                breakpoint=float(levels[k]),
                split=k,
                rss=rss,
                center=center,
            )
    assert best is not None
    return best


# ========== Operaciones públicas ==========

def beta_threshold_features(profile: BSParameterProfile, mode: str = "count") -> BSFeatureVector:
    """#{β ≤ 2}, #{β ≤ 3}, #{β > 3}; en modo ``proportion`` divididos por la longitud del perfil."""
    if mode not in ("count", "proportion"):
        raise BSValidationError(f"modo desconocido: {mode!r} (usa count o proportion)")
    _, beta = _check_profile(profile, 1, "beta_threshold_features")
    low, high = BETA_THRESHOLDS
    counts = np.array([np.sum(beta <= low), np.sum(beta <= high), np.sum(beta > high)], dtype=np.float64)
    prefix = "count" if mode == "count" else "prop"
    values = counts if mode == "count" else counts / beta.size
    names = (f"{prefix}_beta_le2", f"{prefix}_beta_le3", f"{prefix}_beta_gt3")
    return BSFeatureVector(names, values, profile.instrument_id)


def polyfit_features(profile: BSParameterProfile, kind: str = "linear") -> BSFeatureVector:
    """(pendiente, ordenada) o (cuadrático, pendiente, ordenada) de β frente al nivel centrado."""
    if kind == "linear":
        degree, names = 1, ("lin_slope", "lin_intercept")
    elif kind == "quadratic":
        degree, names = 2, ("quad_a2", "quad_slope", "quad_intercept")
    else:
        raise BSValidationError(f"tipo de ajuste desconocido: {kind!r} (usa linear o quadratic)")
    levels, beta = _check_profile(profile, degree + 2, f"el ajuste {kind}")
    fit = polyfit(levels, beta, degree)
    return BSFeatureVector(names, fit.coefficients, profile.instrument_id)


def piecewise_features(profile: BSParameterProfile) -> BSFeatureVector:
    levels, beta = _check_profile(profile, 2 * PIECEWISE_MIN_SIDE, "el ajuste a trozos")
    fit = piecewise_fit(levels, beta)
    return BSFeatureVector(
        ("pw_slope1", "pw_intercept1", "pw_slope2", "pw_intercept2", "pw_breakpoint"),
        (fit.slope1, fit.intercept1, fit.slope2, fit.intercept2, fit.breakpoint),
        profile.instrument_id,
    )


def resample_profile(profile: BSParameterProfile, n: int = DEFAULT_PROFILE_SAMPLES) -> BSFeatureVector:
    """β interpolado linealmente en ``n`` posiciones equiespaciadas entre el primer y el último nivel."""
    if n < 1:
        raise BSValidationError(f"n debe ser ≥ 1: {n}")
    levels, beta = _check_profile(profile, 2, "resample_profile")
    positions = np.linspace(levels[0], levels[-1], n)
    return BSFeatureVector(
        tuple(f"beta_{k:03d}" for k in range(n)), np.interp(positions, levels, beta), profile.instrument_id
    )


# ========== Conjuntos predefinidos ==========

def _slope2(profile: BSParameterProfile) -> BSFeatureVector:
    pw = piecewise_features(profile)
    return BSFeatureVector(("pw_slope2",), (pw.values[2],), profile.instrument_id)


def _threshold_subset(mode: str, size: int) -> Callable[[BSParameterProfile], BSFeatureVector]:
    def part(profile: BSParameterProfile) -> BSFeatureVector:
        full = beta_threshold_features(profile, mode)
        return BSFeatureVector(full.names[:size], full.values[:size], profile.instrument_id)

    return part


FEATURE_PARTS: dict[str, Callable[[BSParameterProfile], BSFeatureVector]] = {
    "lin": lambda p: polyfit_features(p, "linear"),
    "quad": lambda p: polyfit_features(p, "quadratic"),
    "pw": piecewise_features,
    "slope2": _slope2,
    "count_le2": _threshold_subset("count", 1),
    "prop_le2": _threshold_subset("proportion", 1),
    "count_le2_le3": _threshold_subset("count", 2),
    "prop_le2_le3": _threshold_subset("proportion", 2),
    "count3": _threshold_subset("count", 3),
    "prop3": _threshold_subset("proportion", 3),
    "beta50": lambda p: resample_profile(p, DEFAULT_PROFILE_SAMPLES),
}


@dataclass(frozen=True)
class BSFeatureSet:
    set_id: str
    parts: tuple[str, ...]
    size: int
    label: str

    @property
    def row_label(self) -> str:
        return f"{self.size} ({self.label})"


_B2 = "β ≤ 2"
_B3 = "β ≤ 2, β ≤ 3 and β > 3"

FEATURE_SETS: dict[str, BSFeatureSet] = {
    fs.set_id: fs
    for fs in (
        BSFeatureSet("lin2", ("lin",), 2, "linear fit."),
        BSFeatureSet("slope2+count_le2", ("slope2", "count_le2"), 2, f"second slope + number of {_B2}"),
        BSFeatureSet("slope2+prop_le2", ("slope2", "prop_le2"), 2, f"second slope + proportion of {_B2}"),
        BSFeatureSet("quad3", ("quad",), 3, "quadratic fit."),
        BSFeatureSet("count3", ("count3",), 3, f"number of {_B3}"),
        BSFeatureSet("prop3", ("prop3",), 3, f"proportion of {_B3}"),
        BSFeatureSet(
            "slope2+count_le2_le3", ("slope2", "count_le2_le3"), 3, "second slope + number of β ≤ 2 and β ≤ 3"
        ),
        BSFeatureSet(
            "slope2+prop_le2_le3", ("slope2", "prop_le2_le3"), 3, "second slope + proportion of β ≤ 2 and β ≤ 3"
        ),
        BSFeatureSet("slope2+count3", ("slope2", "count3"), 4, f"second slope + number of {_B3}"),
        BSFeatureSet("slope2+prop3", ("slope2", "prop3"), 4, f"second slope + proportion of {_B3}"),
        BSFeatureSet("lin2+count3", ("lin", "count3"), 5, f"linear fit. + number of {_B3}"),
        BSFeatureSet("lin2+prop3", ("lin", "prop3"), 5, f"linear fit. + proportion of {_B3}"),
        BSFeatureSet("quad3+count3", ("quad", "count3"), 6, f"quadratic fit. + number of {_B3}"),
        BSFeatureSet("quad3+prop3", ("quad", "prop3"), 6, f"quadratic fit. + proportion of {_B3}"),
        BSFeatureSet("pw5", ("pw",), 5, "piecewise linear fit."),
        BSFeatureSet("pw5+count3", ("pw", "count3"), 8, f"piecewise linear fit. + number of {_B3}"),
        BSFeatureSet("pw5+prop3", ("pw", "prop3"), 8, f"piecewise linear fit. + proportion of {_B3}"),
        BSFeatureSet("pw5+quad3", ("pw", "quad"), 8, "piecewise lin. + quadratic fit."),
        BSFeatureSet(
            "all13_count",
            ("lin", "pw", "quad", "count3"),
            13,
            "lin. fit. + piecewise lin. fit. + quad. fit. + number of β",
        ),
        BSFeatureSet(
            "all13_prop",
            ("lin", "pw", "quad", "prop3"),
            13,
            "lin. fit. + piecewise lin. fit. + quad. fit. + proportion of β",
        ),
        BSFeatureSet("beta50", ("beta50",), 50, "resampled β profile"),
    )
}


def compose_feature_set(profile: BSParameterProfile, set_id: str) -> BSFeatureVector:
    """Concatena las partes del conjunto ``set_id`` en el orden en que se enumeran."""
    if set_id not in FEATURE_SETS:
        raise BSValidationError(f"conjunto de características desconocido: {set_id!r}")
    feature_set = FEATURE_SETS[set_id]
    vector: BSFeatureVector | None = None
    for part in feature_set.parts:
        piece = FEATURE_PARTS[part](profile)
        vector = piece if vector is None else vector.concat(piece)
    assert vector is not None
    if len(vector) != feature_set.size:
        raise BSFeatureError(f"{set_id}: {len(vector)} características, se esperaban {feature_set.size}")
    return vector


def describe_feature_sets() -> str:
    """Tabla de texto con los conjuntos disponibles (la usa ``--list-feature-sets``)."""
    width = max(len(k) for k in FEATURE_SETS)
    return "\n".join(f"{fs.set_id:<{width}}  {fs.row_label}" for fs in FEATURE_SETS.values())
