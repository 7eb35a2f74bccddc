"""
Tests para la PCA con máscara común.

Estructura:
  - TestPcaMask     → máscara común y rechazo de mapas absolutos
  - TestPcaAlgebra  → ortonormalidad, varianzas y casos exactos
  - TestPcaOracle   → comparación con la diagonalización de la covarianza
  - TestPcaProject  → pca_project sobre vectores de características
"""
import numpy as np
import pytest

from bssoundboard.exceptions import BSConfigError, BSDimensionError, BSPcaError
from bssoundboard.geometry.elevation import BSElevationMap
from bssoundboard.learning.matrix import LABEL_REDUCED, BSFeatureVector
from bssoundboard.learning.pca import PCA_SWEEP, pca_fit, pca_fit_arrays, pca_project

# ---------------------------------------------------------------------------
# Constantes
# ---------------------------------------------------------------------------

GRID = (4, 5)


def _relative_map(heights, defined, instrument_id, mode="relative"):
    defined = np.asarray(defined, dtype=bool)
    return BSElevationMap(
        origin=(0.0, 0.0),
        spacing=(1.0, 1.0),
        heights=np.where(defined, heights, 0.0),
        defined=defined,
        instrument_id=instrument_id,
        resample_mode=mode,
    )


def _oracle(values, k):
    """Autovectores de la covarianza ordenados por autovalor decreciente."""
    mean = values.mean(axis=0)
    centered = values - mean
    cov = centered.T @ centered / (values.shape[0] - 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1][:k]
    return mean, eigvecs[:, order], eigvals[order]


def _assert_equal_up_to_sign(actual, expected, atol):
    for j in range(expected.shape[1]):
        sign = 1.0 if np.dot(actual[:, j], expected[:, j]) >= 0 else -1.0
        assert np.allclose(actual[:, j], sign * expected[:, j], atol=atol, rtol=0.0)


# ===========================================================================
# Tests de máscara
# ===========================================================================

class TestPcaMask:
    """Máscara común entre instrumentos."""

    def test_mask_is_intersection(self, rng):
        """La máscara es el AND de las máscaras de todos los instrumentos."""
        masks = rng.random((4, *GRID)) > 0.2
        maps = [_relative_map(rng.normal(size=GRID), masks[i], f"m{i}") for i in range(4)]
        model = pca_fit(maps, 1)
        assert np.array_equal(model.mask, masks.all(axis=0).reshape(-1))
        assert model.grid_shape == GRID

    def test_order_does_not_matter(self, rng):
        """Cambiar el orden de los instrumentos no cambia máscara ni componentes."""
        masks = rng.random((6, *GRID)) > 0.15
        maps = [_relative_map(rng.normal(size=GRID), masks[i], f"m{i}") for i in range(6)]
        a = pca_fit(maps, 3)
        b = pca_fit(maps[::-1], 3)
        assert np.array_equal(a.mask, b.mask)
        assert np.allclose(a.components, b.components, atol=1e-10)

    def test_absolute_maps_rejected(self, rng):
        """La PCA solo acepta mapas con remuestreo relativo."""
        maps = [_relative_map(rng.normal(size=GRID), np.ones(GRID), f"m{i}", "absolute") for i in range(3)]
        with pytest.raises(BSConfigError, match="relative"):
            pca_fit(maps, 1)

    def test_empty_mask_raises(self):
        """Si ninguna celda está definida en todos, no hay PCA."""
        left = np.zeros(GRID, dtype=bool)
        left[:, :2] = True
        maps = [_relative_map(np.ones(GRID), left, "a"), _relative_map(np.ones(GRID), ~left, "b")]
        with pytest.raises(BSPcaError):
            pca_fit(maps, 1)


# ===========================================================================
# Tests algebraicos
# ===========================================================================

class TestPcaAlgebra:
    """Propiedades de las componentes y las varianzas."""

    def test_orthonormal_components(self, rng):
        """Las componentes son ortonormales."""
        values = rng.normal(size=(12, 30))
        model = pca_fit_arrays(values, np.ones_like(values, dtype=bool), 8)
        assert np.allclose(model.components @ model.components.T, np.eye(8), atol=1e-8)

    def test_variance_non_increasing(self, rng):
        """Varianzas explicadas no negativas y no crecientes."""
        values = rng.normal(size=(12, 30))
        model = pca_fit_arrays(values, np.ones_like(values, dtype=bool), 5)
        assert np.all(model.explained_variance >= 0)
        assert np.all(np.diff(model.explained_variance) <= 1e-12)

    def test_sign_convention(self, rng):
        """La entrada de mayor magnitud de cada componente es positiva."""
        values = rng.normal(size=(10, 20))
        model = pca_fit_arrays(values, np.ones_like(values, dtype=bool), 4)
        for row in model.components:
            assert row[np.argmax(np.abs(row))] > 0

    def test_two_points(self):
        """Dos puntos con k = 1: la componente es paralela a su diferencia y las proyecciones son ±s."""
        a = np.array([1.0, 2.0, 0.0, -1.0])
        b = np.array([3.0, -2.0, 1.0, 1.0])
        model = pca_fit_arrays(np.vstack([a, b]), np.ones((2, 4), dtype=bool), 1)
        direction = (b - a) / np.linalg.norm(b - a)
        assert abs(float(model.components[0] @ direction)) == pytest.approx(1.0, abs=1e-12)
        projections = model.project_values(np.vstack([a, b]))[:, 0]
        s = np.linalg.norm(b - a) / 2
        assert sorted(projections) == pytest.approx([-s, s], abs=1e-12)

    def test_single_direction_explains_everything(self, rng):
        """Datos en una sola recta: la primera componente explica el 100 % y k = 2 supera el rango."""
        mean = rng.normal(size=15)
        direction = rng.normal(size=15)
        values = mean + np.outer(rng.normal(size=8), direction)
        mask = np.ones_like(values, dtype=bool)
        model = pca_fit_arrays(values, mask, 1)
        assert model.explained_variance_ratio[0] == pytest.approx(1.0, abs=1e-12)
        with pytest.raises(BSPcaError):
            pca_fit_arrays(values, mask, 2)

    def test_reconstruction_error_non_increasing(self, rng):
        """El error de reconstrucción total no crece con k y es 0 con k = rango."""
        values = rng.normal(size=(10, 25))
        mask = np.ones_like(values, dtype=bool)
        errors = []
        for k in range(1, 10):
            model = pca_fit_arrays(values, mask, k)
            rebuilt = model.reconstruct(model.project_values(values))
            errors.append(float(np.sum((rebuilt - values) ** 2)))
        assert all(later <= earlier + 1e-9 for earlier, later in zip(errors, errors[1:]))
        assert errors[-1] == pytest.approx(0.0, abs=1e-8)

    def test_k_above_rank_raises(self, rng):
        """Con 5 instrumentos el rango centrado es 4."""
        values = rng.normal(size=(5, 20))
        with pytest.raises(BSPcaError, match="rango"):
            pca_fit_arrays(values, np.ones_like(values, dtype=bool), 5)

    def test_sweep_values(self):
        """Barrido de k habitual."""
        assert PCA_SWEEP == (2, 3, 5, 8, 10, 12)


# ===========================================================================
# Tests contra el oráculo
# ===========================================================================

class TestPcaOracle:
    """SVD frente a la diagonalización densa de la covarianza."""

    def test_projections_match_oracle(self, rng):
        """Matriz aleatoria 25 × 50: proyecciones iguales salvo signo."""
        values = rng.normal(size=(25, 50))
        model = pca_fit_arrays(values, np.ones_like(values, dtype=bool), 5)
        mean, vectors, eigvals = _oracle(values, 5)
        assert np.allclose(model.explained_variance[:5], eigvals, rtol=1e-9)
        _assert_equal_up_to_sign(model.project_values(values), (values - mean) @ vectors, atol=1e-6)

    def test_held_out_projection(self, rng):
        """Un vector fuera del ajuste se proyecta igual que con el oráculo."""
        values = rng.normal(size=(25, 50))
        train, held_out = values[:24], values[24:]
        model = pca_fit_arrays(train, np.ones_like(train, dtype=bool), 5)
        mean, vectors, _ = _oracle(train, 5)
        signs = np.sign(np.sum(model.components.T * vectors, axis=0))
        expected = ((held_out - mean) @ vectors) * signs
        assert np.allclose(model.project_values(held_out), expected, atol=1e-6)


# ===========================================================================
# Tests de proyección
# ===========================================================================

class TestPcaProject:
    """pca_project sobre BSFeatureVector."""

    def _model(self, rng):
        values = rng.normal(size=(8, 12))
        defined = np.ones_like(values, dtype=bool)
        defined[:, 3] = False
        values[:, 3] = 0.0
        return values, pca_fit_arrays(values, defined, 3)

    def test_mean_projects_to_zero(self, rng):
        """La media del conjunto se proyecta en el origen."""
        _, model = self._model(rng)
        raw = np.zeros(model.raw_dimension)
        raw[model.mask] = model.mean
        vector = BSFeatureVector(tuple(f"c{i}" for i in range(raw.size)), raw, "mean")
        assert np.allclose(pca_project(model, vector).values, 0.0, atol=1e-12)

    def test_names_and_label(self, rng):
        """Las coordenadas se llaman pc_1 … pc_k y la etiqueta se conserva."""
        values, model = self._model(rng)
        vector = BSFeatureVector(tuple(f"c{i}" for i in range(12)), values[0], "i0", LABEL_REDUCED)
        projected = pca_project(model, vector)
        assert projected.names == ("pc_1", "pc_2", "pc_3")
        assert projected.label == LABEL_REDUCED
        assert projected.instrument_id == "i0"

    def test_masked_cell_is_ignored(self, rng):
        """Lo que haya en una celda fuera de la máscara no afecta a la proyección."""
        values, model = self._model(rng)
        altered = values[0].copy()
        altered[3] = 99.0
        assert np.allclose(model.project_values(values[0]), model.project_values(altered))

    def test_wrong_dimension_raises(self, rng):
        """Un vector con otra dimensión cruda se rechaza."""
        _, model = self._model(rng)
        with pytest.raises(BSDimensionError):
            pca_project(model, BSFeatureVector(("a", "b"), (1.0, 2.0)))
