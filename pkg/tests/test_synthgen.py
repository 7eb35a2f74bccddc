"""
Tests para el generador de tapas sintéticas.

Estructura:
  - TestBoardSpec     → validación de BSBoardSpec
  - TestBoardHeight   → campo analítico de alturas
  - TestGenerateBoard → triangulación y determinismo
  - TestCorpus        → corpus, manifiesto y escritura
"""
import json
from dataclasses import replace

import numpy as np
import pytest

from bssoundboard.exceptions import BSValidationError
from bssoundboard.geometry.mesh_io import load_mesh, mesh_bbox
from bssoundboard.learning.matrix import LABEL_REDUCED, LABEL_UNREDUCED
from bssoundboard.synth.synthgen import (
    RATIO_RANGE,
    BSBoardSpec,
    board_height,
    generate_board,
    generate_corpus,
    twin_spec,
)
from bssoundboard.utils.persistence import read_manifest, write_json

# ---------------------------------------------------------------------------
# Constantes
# ---------------------------------------------------------------------------

REDUCED_SPEC = BSBoardSpec(
    instrument_id="cut", length=120.0, width=50.0, arch_height=12.0, reduction_slice=8.0, mesh_step=1.0
)


# ===========================================================================
# Tests de especificación
# ===========================================================================

class TestBoardSpec:
    """Rangos válidos de los parámetros de una tapa."""

    @pytest.mark.parametrize(
        "changes",
        [
            {"length": 0.0},
            {"width": -1.0},
            {"arch_height": 0.0},
            {"widest_fraction": 0.1},
            {"widest_fraction": 0.9},
            {"reduction_slice": 25.0},
            {"noise_mm": -0.1},
        ],
    )
    def test_invalid_specs_raise(self, changes):
        """Cada parámetro fuera de rango lanza BSValidationError."""
        base = {"length": 120.0, "width": 50.0, "arch_height": 12.0}
        with pytest.raises(BSValidationError):
            BSBoardSpec(**(base | changes))

    def test_label_follows_reduction(self):
        """La etiqueta depende solo de reduction_slice > 0."""
        assert REDUCED_SPEC.label == LABEL_REDUCED
        assert twin_spec(REDUCED_SPEC).label == LABEL_UNREDUCED


# ===========================================================================
# Tests del campo de alturas
# ===========================================================================

class TestBoardHeight:
    """board_height frente a la fórmula analítica."""

    def test_apex_on_axis_at_widest_row(self, small_spec):
        """En x = 0 y a la altura de la zona más ancha, z = arch_height."""
        z, inside = board_height(small_spec, 0.0, small_spec.widest_y)
        assert bool(inside)
        assert float(z) == pytest.approx(small_spec.arch_height)

    def test_symmetric_in_x(self, small_spec):
        """El campo es simétrico respecto a x = 0."""
        xs = np.linspace(-20.0, 20.0, 41)
        ys = np.full_like(xs, 30.0)
        z, _ = board_height(small_spec, xs, ys)
        assert np.allclose(z, z[::-1])

    def test_outside_is_zero(self, small_spec):
        """Fuera del contorno z vale 0."""
        z, inside = board_height(small_spec, [100.0, 0.0], [30.0, -5.0])
        assert not inside.any()
        assert np.all(z == 0.0)

    def test_reduced_board_has_same_width_as_twin(self):
        """Tras quitar la franja y juntar las mitades, la anchura final coincide con la del gemelo."""
        ys = np.array([REDUCED_SPEC.widest_y])
        xs = np.linspace(-30.0, 30.0, 6001)
        _, inside_cut = board_height(REDUCED_SPEC, xs, np.repeat(ys, xs.size))
        _, inside_twin = board_height(twin_spec(REDUCED_SPEC), xs, np.repeat(ys, xs.size))
        width_cut = np.ptp(xs[inside_cut])
        width_twin = np.ptp(xs[inside_twin])
        assert width_cut == pytest.approx(REDUCED_SPEC.width, abs=0.05)
        assert width_twin == pytest.approx(REDUCED_SPEC.width, abs=0.05)

    def test_reduction_creates_crease(self):
        """Con reducción la pendiente lateral no se anula en x = 0 (pliegue en V)."""
        y = REDUCED_SPEC.widest_y
        h = 0.01
        z_cut, _ = board_height(REDUCED_SPEC, [0.0, h], [y, y])
        z_twin, _ = board_height(twin_spec(REDUCED_SPEC), [0.0, h], [y, y])
        slope_cut = abs(z_cut[1] - z_cut[0]) / h
        slope_twin = abs(z_twin[1] - z_twin[0]) / h
        assert slope_cut > 10 * slope_twin


# ===========================================================================
# Tests de triangulación
# ===========================================================================

class TestGenerateBoard:
    """generate_board: malla válida, simétrica y determinista."""

    def test_bbox_matches_spec(self, small_spec, small_mesh):
        """La caja mide width × length salvo las celdas del borde y la altura máxima es arch_height."""
        box = mesh_bbox(small_mesh)
        width, length, _ = box.extent
        step = small_spec.mesh_step
        assert small_spec.width - 2 * step <= width <= small_spec.width
        assert small_spec.length - 3 * step <= length <= small_spec.length
        assert box.maximum[2] == pytest.approx(small_spec.arch_height, rel=1e-9)
        assert 0.0 <= box.minimum[1] <= 2 * step
        assert box.minimum[0] == pytest.approx(-box.maximum[0])

    def test_same_spec_same_mesh(self, small_spec, small_mesh):
        """Misma especificación, misma malla."""
        assert generate_board(small_spec).same_geometry(small_mesh)

    def test_noise_is_seeded(self, small_spec):
        """El ruido depende solo de la semilla."""
        a = generate_board(replace(small_spec, noise_mm=0.05, seed=3))
        b = generate_board(replace(small_spec, noise_mm=0.05, seed=3))
        c = generate_board(replace(small_spec, noise_mm=0.05, seed=4))
        assert a.same_geometry(b)
        assert not a.same_geometry(c)

    def test_noise_is_bounded(self, small_spec, small_mesh):
        """El ruido uniforme no supera noise_mm en ningún vértice."""
        noisy = generate_board(replace(small_spec, noise_mm=0.05, seed=3))
        assert np.max(np.abs(noisy.vertices[:, 2] - small_mesh.vertices[:, 2])) <= 0.05 + 1e-12


# ===========================================================================
# Tests del corpus
# ===========================================================================

class TestCorpus:
    """generate_corpus y write_corpus."""

    def test_counts_and_labels(self):
        """(3, 2) da 5 tapas, 3 reducidas y 2 sin reducir."""
        corpus = generate_corpus(3, 2, seed=11)
        assert len(corpus) == 5
        assert corpus.labels.count(LABEL_REDUCED) == 3
        assert corpus.labels.count(LABEL_UNREDUCED) == 2

    def test_ratios_in_observed_range(self):
        """Las proporciones largo/ancho caen en el rango observado."""
        corpus = generate_corpus(6, 6, seed=5)
        for item in corpus.manifest():
            assert RATIO_RANGE[0] <= item["ratio"] <= RATIO_RANGE[1]

    def test_same_seed_same_manifest(self):
        """Dos corpus con la misma semilla tienen el mismo manifiesto."""
        assert generate_corpus(1, 1, seed=42).manifest() == generate_corpus(1, 1, seed=42).manifest()

    def test_zero_count_raises(self):
        """Cada clase necesita al menos una tapa."""
        with pytest.raises(BSValidationError):
            generate_corpus(0, 3, seed=1)

    def test_write_corpus(self, corpus_dir):
        """El manifiesto apunta a mallas que se pueden leer y las etiquetas cuadran con la reducción."""
        manifest = json.loads((corpus_dir / "manifest.json").read_text())
        assert len(manifest) == 7
        for item in manifest:
            mesh = load_mesh(corpus_dir / item["path"])
            assert mesh.instrument_id == item["instrument_id"]
            assert (item["spec"]["reduction_slice"] > 0) == (item["label"] == LABEL_REDUCED)

    def test_manifest_format_and_labels(self, corpus_dir, tmp_path):
        """El manifiesto sale con el mismo formato que write_json y read_manifest lo valida."""
        path = corpus_dir / "manifest.json"
        manifest = json.loads(path.read_text())
        assert path.read_text() == write_json(manifest, tmp_path / "again.json").read_text()
        entries = read_manifest(path)
        assert [e["label"] for e in entries].count(LABEL_REDUCED) == 4
        assert [e["label"] for e in entries].count(LABEL_UNREDUCED) == 3
