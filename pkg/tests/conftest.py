import numpy as np
import pytest

from bssoundboard.geometry.elevation import BSElevationMap
from bssoundboard.learning.matrix import LABEL_REDUCED, LABEL_UNREDUCED, BSFeatureMatrix
from bssoundboard.synth.synthgen import BSBoardSpec, generate_board, generate_corpus, write_corpus


@pytest.fixture
def rng():
    """Generador con semilla fija para que cada test sea reproducible."""
    return np.random.default_rng(20240917)


@pytest.fixture(scope="session")
def small_spec():
    """Tapa pequeña y sin ruido: rápida de rasterizar y con curvas de nivel limpias."""
    return BSBoardSpec(
        instrument_id="small",
        length=120.0,
        width=50.0,
        arch_height=12.0,
        widest_fraction=0.38,
        mesh_step=1.0,
    )


@pytest.fixture(scope="session")
def small_mesh(small_spec):
    return generate_board(small_spec)


@pytest.fixture
def paraboloid_map():
    """
    Mapa analítico z = h0 − (x² + (y − y0)²) / r sobre un disco, definido donde z ≥ 0.

    Sus curvas de nivel son circunferencias de diámetro 2·√(r·(h0 − z)).
    """
    h0, r, y0, step = 10.0, 20.0, 20.0, 0.25
    xs = np.arange(-16.0, 16.0 + step / 2, step)
    ys = np.arange(0.0, 40.0 + step / 2, step)
    gx, gy = np.meshgrid(xs, ys)
    z = h0 - (gx**2 + (gy - y0) ** 2) / r
    defined = z >= 0
    return BSElevationMap(
        origin=(xs[0], ys[0]),
        spacing=(step, step),
        heights=np.where(defined, z, 0.0),
        defined=defined,
        instrument_id="paraboloid",
    )


@pytest.fixture
def separable_matrix(rng):
    """20 reduced y 5 unreduced en 2D, separables por una franja ancha."""
    reduced = rng.normal(loc=(2.0, 2.0), scale=0.3, size=(20, 2))
    unreduced = rng.normal(loc=(-2.0, -2.0), scale=0.3, size=(5, 2))
    X = np.vstack([reduced, unreduced])
    labels = [LABEL_REDUCED] * 20 + [LABEL_UNREDUCED] * 5
    return BSFeatureMatrix.from_arrays(X, labels, names=("a", "b"))


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """Corpus sintético pequeño (4 reducidas, 3 sin reducir) escrito en disco con su manifiesto."""
    out = tmp_path_factory.mktemp("corpus")
    write_corpus(generate_corpus(4, 3, seed=7, noise_mm=0.0), out)
    return out
