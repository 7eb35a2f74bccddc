"""
Tests para la extracción de curvas de nivel y el ajuste de la curva de cuatro parámetros.

Estructura:
  - TestContourUnit     → validación de BSContourLine / BSParameterProfile
  - TestExtract         → extract_contours sobre un paraboloide analítico, con islas y hoyos
  - TestFitRecovery     → recuperación exacta de parámetros sin ruido
  - TestFitOracle       → ajuste con ruido frente a una búsqueda densa en rejilla
  - TestProfiles        → build_profile y profile_from_map sobre tapas sintéticas
"""
from dataclasses import replace

import numpy as np
import pytest

from bssoundboard.exceptions import BSContourFitError, BSProfileError, BSValidationError
from bssoundboard.geometry.contours import (
    BSContourFit,
    BSContourLine,
    BSParameterProfile,
    build_profile,
    extract_contours,
    fit_contour,
    profile_from_map,
)
from bssoundboard.geometry.elevation import BSElevationMap, compute_elevation_map, crop_zone_of_interest
from bssoundboard.synth.synthgen import generate_board

# ---------------------------------------------------------------------------
# Constantes
# ---------------------------------------------------------------------------

LAMBDA = 100.0
N_POINTS = 41


def _line(alpha, beta, gamma, delta, lam=LAMBDA, n=N_POINTS, noise=0.0, rng=None, level=1.0):
    x = np.linspace(-lam / 2, lam / 2, n)
    y = alpha * np.abs((x - delta) / (lam / 2)) ** beta + gamma
    if noise:
        y = y + rng.uniform(-noise, noise, size=n)
    return BSContourLine(level=level, points=np.column_stack([x, y]), width=lam)


def _grid_oracle_rss(line, betas, deltas):
    """Mínimo rss sobre una rejilla (β, δ) con (α, γ) en forma cerrada por celda."""
    x, y = line.x, line.y
    half = line.width / 2
    y_mean = y.mean()
    best = np.inf
    for beta in betas:
        p = np.abs((x[None, :] - deltas[:, None]) / half) ** beta
        pc = p - p.mean(axis=1, keepdims=True)
        var_p = np.sum(pc**2, axis=1)
        cov = pc @ (y - y_mean)
        with np.errstate(divide="ignore", invalid="ignore"):
            rss = np.sum((y - y_mean) ** 2) - np.where(var_p > 0, cov**2 / var_p, 0.0)
        best = min(best, float(rss.min()))
    return best


def _bowl_map(island=False, dip=False):
    """Paraboloide del fixture sobre todo el rectángulo, con una isla suelta o un hoyo interior opcionales."""
    xs = np.arange(-16.0, 16.0 + 0.125, 0.25)
    ys = np.arange(0.0, 40.0 + 0.125, 0.25)
    gx, gy = np.meshgrid(xs, ys)
    heights = np.maximum(10.0 - (gx**2 + (gy - 20.0) ** 2) / 20.0, 0.0)
    if island:
        # meseta de 3 mm en x ∈ [14.5, 15.5], y ∈ [1, 2], fuera de la bóveda
        heights[4:9, 122:127] = 3.0
    if dip:
        # hoyo de 0.5 mm en x ∈ [-0.5, 0.25], y ∈ [11.5, 12.25], dentro de la curva de nivel 6
        heights[46:50, 62:66] = 0.5
    return BSElevationMap((xs[0], ys[0]), (0.25, 0.25), heights, np.ones_like(heights, dtype=bool), "bowl")


def _fit(level, alpha=1.0, beta=2.0):
    return BSContourFit(level=level, alpha=alpha, beta=beta, gamma=0.0, delta=0.0, width=10.0, rss=0.0)


# ===========================================================================
# Tests unitarios
# ===========================================================================

class TestContourUnit:
    """Estructuras de datos de curvas y perfiles."""

    def test_line_needs_five_points(self):
        """Un arco de menos de 5 puntos no es una curva válida."""
        with pytest.raises(BSValidationError):
            BSContourLine(level=1.0, points=np.zeros((4, 2)), width=1.0)

    def test_profile_levels_strictly_increasing(self):
        """Los niveles del perfil deben crecer estrictamente."""
        with pytest.raises(BSProfileError):
            BSParameterProfile.from_beta([1.0, 1.0, 2.0], [2.0, 2.0, 2.0])

    def test_fit_predict(self):
        """predict evalúa α·|(x − δ)/(λ/2)|^β + γ."""
        fit = BSContourFit(level=1.0, alpha=2.0, beta=2.0, gamma=1.0, delta=5.0, width=10.0, rss=0.0)
        assert fit.predict(np.array([5.0, 10.0, 0.0])).tolist() == [1.0, 3.0, 3.0]


# ===========================================================================
# Tests de extracción
# ===========================================================================

class TestExtract:
    """Curvas de nivel de z = h0 − (x² + (y − y0)²)/r: circunferencias de anchura conocida."""

    def test_candidate_levels(self, paraboloid_map):
        """Niveles cada milímetro desde 1 hasta la altura máxima (10)."""
        contours = extract_contours(paraboloid_map)
        assert contours.candidate_levels == [float(k) for k in range(1, 11)]
        assert len(contours) + len(contours.skipped) == 10

    def test_width_matches_circle(self, paraboloid_map):
        """λ = 2·√(r·(h0 − ℓ)) dentro de la tolerancia de rejilla."""
        contours = extract_contours(paraboloid_map)
        by_level = {line.level: line for line in contours}
        for level in (2.0, 5.0, 8.0):
            assert by_level[level].width == pytest.approx(2 * np.sqrt(20.0 * (10.0 - level)), abs=0.5)

    def test_points_lie_on_level(self, paraboloid_map):
        """Cada punto del arco está a la altura de su nivel."""
        for line in extract_contours(paraboloid_map):
            z = 10.0 - (line.x**2 + (line.y - 20.0) ** 2) / 20.0
            assert np.all(np.abs(z - line.level) < 0.01)

    def test_keeps_lower_arc_sorted(self, paraboloid_map):
        """Solo se conserva el arco por debajo de la fila más ancha, ordenado por x."""
        for line in extract_contours(paraboloid_map):
            assert np.all(line.y < 20.0)
            assert np.all(np.diff(line.x) >= 0)

    def test_apex_level_is_skipped(self, paraboloid_map):
        """El nivel de la cúspide no tiene arco suficiente y queda anotado."""
        skipped = {s.level for s in extract_contours(paraboloid_map).skipped}
        assert 10.0 in skipped

    def test_invalid_step_raises(self, paraboloid_map):
        """El paso entre niveles debe ser positivo."""
        with pytest.raises(BSValidationError):
            extract_contours(paraboloid_map, level_step=0.0)

    def test_detached_island_is_ignored(self):
        """Una meseta suelta junto al borde no cambia λ ni añade puntos al arco."""
        clean = {line.level: line for line in extract_contours(_bowl_map())}
        with_island = {line.level: line for line in extract_contours(_bowl_map(island=True))}
        for level in (1.0, 2.0, 3.0):
            assert with_island[level].width == clean[level].width
            assert np.array_equal(with_island[level].points, clean[level].points)
        assert clean[1.0].width == pytest.approx(2 * np.sqrt(20.0 * 9.0), abs=0.5)

    def test_inner_dip_is_ignored(self):
        """Un hoyo dentro de la curva principal no aporta cruces."""
        clean = {line.level: line for line in extract_contours(_bowl_map())}
        with_dip = {line.level: line for line in extract_contours(_bowl_map(dip=True))}
        for level in (1.0, 3.0, 5.0):
            assert with_dip[level].width == clean[level].width
            assert np.array_equal(with_dip[level].points, clean[level].points)


# ===========================================================================
# Tests de recuperación sin ruido
# ===========================================================================

class TestFitRecovery:
    """Sin ruido el modelo es exacto y el ajuste recupera los parámetros."""

    def test_known_parabola(self):
        """(α, β, γ, δ) = (30, 2, 5, 0) con λ = 100."""
        fit = fit_contour(_line(30.0, 2.0, 5.0, 0.0))
        assert fit.alpha == pytest.approx(30.0, rel=1e-6)
        assert fit.beta == pytest.approx(2.0, rel=1e-6)
        assert fit.gamma == pytest.approx(5.0, rel=1e-6)
        assert fit.delta == pytest.approx(0.0, abs=1e-6)
        assert fit.rss <= 1e-10
        assert fit.width == LAMBDA

    def test_v_shape(self):
        """Una curva en V (β = 1) desplazada se recupera con β ≈ 1."""
        fit = fit_contour(_line(20.0, 1.0, -2.0, 7.0))
        assert fit.beta == pytest.approx(1.0, abs=1e-4)
        assert fit.delta == pytest.approx(7.0, abs=1e-4)

    def test_random_draws(self):
        """100 sorteos sin ruido: los cuatro parámetros con error relativo ≤ 1e-4."""
        rng = np.random.default_rng(101)
        for _ in range(100):
            truth = (
                rng.uniform(5.0, 50.0),
                rng.uniform(0.8, 5.0),
                rng.uniform(-10.0, 10.0),
                rng.uniform(-LAMBDA / 4, LAMBDA / 4),
            )
            fit = fit_contour(_line(*truth))
            got = (fit.alpha, fit.beta, fit.gamma, fit.delta)
            for value, expected in zip(got, truth):
                assert value == pytest.approx(expected, rel=1e-4, abs=1e-4)

    def test_scale_equivariance(self):
        """Escalar y por s escala α y γ y deja β y δ igual."""
        base = _line(12.0, 2.6, 3.0, 4.0)
        scaled = BSContourLine(base.level, np.column_stack([base.x, 3.0 * base.y]), base.width)
        a, b = fit_contour(base), fit_contour(scaled)
        assert b.alpha == pytest.approx(3.0 * a.alpha, rel=1e-6)
        assert b.gamma == pytest.approx(3.0 * a.gamma, rel=1e-6)
        assert b.beta == pytest.approx(a.beta, rel=1e-6)
        assert b.delta == pytest.approx(a.delta, abs=1e-6)

    def test_reflection(self):
        """Reflejar x → −x cambia el signo de δ y conserva el resto."""
        base = _line(12.0, 2.6, 3.0, 4.0)
        mirrored = BSContourLine(base.level, np.column_stack([-base.x[::-1], base.y[::-1]]), base.width)
        a, b = fit_contour(base), fit_contour(mirrored)
        assert b.delta == pytest.approx(-a.delta, abs=1e-6)
        assert b.alpha == pytest.approx(a.alpha, rel=1e-6)
        assert b.beta == pytest.approx(a.beta, rel=1e-6)
        assert b.gamma == pytest.approx(a.gamma, rel=1e-6)

    def test_narrow_extent_raises(self):
        """Si los puntos abarcan menos de λ/4 el ajuste no está determinado."""
        x = np.linspace(0.0, 10.0, 8)
        line = BSContourLine(level=1.0, points=np.column_stack([x, x**2]), width=LAMBDA)
        with pytest.raises(BSContourFitError):
            fit_contour(line)


# ===========================================================================
# Tests frente al oráculo
# ===========================================================================

class TestFitOracle:
    """Con ruido, el rss del ajuste no es peor que el de una búsqueda densa en rejilla."""

    def test_noisy_contours_against_grid_search(self):
        """20 curvas con ruido ±0.05: rss ≤ 1.001 · rss del oráculo (β cada 0.005, δ cada λ/400)."""
        rng = np.random.default_rng(7)
        betas = np.arange(1.5, 4.0 + 1e-9, 0.005)
        deltas = np.linspace(-LAMBDA / 2, LAMBDA / 2, 401)
        for _ in range(20):
            truth = (rng.uniform(20.0, 30.0), rng.uniform(2.2, 3.0), rng.uniform(0.0, 5.0), rng.uniform(-8.0, 8.0))
            line = _line(*truth, noise=0.05, rng=rng)
            fit = fit_contour(line)
            assert fit.rss <= 1.001 * _grid_oracle_rss(line, betas, deltas)

    def test_reference_noisy_parameters(self):
        """(25, 2.6, 3, 4) con ruido ±0.05: α y β a menos de un 2 %, γ y δ cerca de los verdaderos."""
        rng = np.random.default_rng(11)
        fit = fit_contour(_line(25.0, 2.6, 3.0, 4.0, noise=0.05, rng=rng))
        assert fit.alpha == pytest.approx(25.0, rel=0.02)
        assert fit.beta == pytest.approx(2.6, rel=0.02)
        assert fit.gamma == pytest.approx(3.0, abs=0.1)
        assert fit.delta == pytest.approx(4.0, abs=0.5)


# ===========================================================================
# Tests de perfiles
# ===========================================================================

class TestProfiles:
    """Perfiles de parámetros nivel a nivel."""

    def test_too_few_fits_raise(self):
        """Menos de 3 niveles ajustados no forman un perfil."""
        with pytest.raises(BSProfileError):
            build_profile([_fit(1.0), _fit(2.0)])

    def test_gaps_are_recorded(self):
        """Los niveles que faltan entre el primero y el último se anotan."""
        profile = build_profile([_fit(level) for level in (4.0, 1.0, 2.0, 5.0)])
        assert profile.levels.tolist() == [1.0, 2.0, 4.0, 5.0]
        assert profile.gaps == (3.0,)

    def test_unreduced_board_beta_near_exponent(self, small_spec, small_mesh):
        """En la mitad central de la bóveda, β ajustado a menos de un 10 % de arch_exponent."""
        cropped = crop_zone_of_interest(compute_elevation_map(small_mesh, spacing=0.25))
        profile, _ = profile_from_map(cropped)
        n = len(profile)
        middle = profile.beta[n // 4 : n - n // 4]
        assert middle.size >= 3
        assert np.all(np.abs(middle - small_spec.arch_exponent) <= 0.1 * small_spec.arch_exponent)

    def test_reduced_board_has_lower_beta(self, small_spec, small_mesh):
        """La tapa reducida tiene β menor que su gemela sin reducir en los niveles bajos."""
        reduced = generate_board(replace(small_spec, instrument_id="cut", reduction_slice=8.0))
        profiles = []
        for mesh in (reduced, small_mesh):
            cropped = crop_zone_of_interest(compute_elevation_map(mesh, spacing=0.25))
            profiles.append(profile_from_map(cropped)[0])
        low_reduced = profiles[0].beta[:3].mean()
        low_unreduced = profiles[1].beta[:3].mean()
        assert low_reduced < low_unreduced
