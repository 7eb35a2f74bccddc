"""
Tests para la lectura de mallas OBJ / PLY y su escritura.

Estructura:
  - TestMeshUnit       → construcción y validación de BSTriangleMesh en memoria
  - TestMeshObj        → lectura de OBJ
  - TestMeshPly        → lectura de PLY ASCII
  - TestMeshRoundTrip  → write_mesh + load_mesh
"""
import numpy as np
import pytest

from bssoundboard.exceptions import BSEmptyMeshError, BSMeshIndexError, BSMeshParseError, BSValidationError
from bssoundboard.geometry.mesh_io import BSTriangleMesh, load_mesh, mesh_bbox
from bssoundboard.synth.synthgen import write_mesh

# ---------------------------------------------------------------------------
# Constantes
# ---------------------------------------------------------------------------

SQUARE_OBJ = """# cuadrado unidad
v 0 0 0
v 1 0 0
v 1 1 1
v 0 1 1
vt 0 0
vn 0 0 1
f 1 2 3
f 1/1/1 3/1/1 4/1/1
"""

QUAD_OBJ = """v 0 0 0
v 2 0 0
v 2 3 0
v 0 3 0
f 1 2 3 4
"""

SQUARE_PLY = """ply
format ascii 1.0
comment dos triángulos
element vertex 4
property float x
property float y
property float z
property uchar red
element face 2
property list uchar int vertex_indices
end_header
0 0 0 255
1 0 0 255
1 1 1 255
0 1 1 255
3 0 1 2
3 0 2 3
"""


def _write(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


# ===========================================================================
# Tests unitarios
# ===========================================================================

class TestMeshUnit:
    """Invariantes de BSTriangleMesh sin pasar por disco."""

    def test_arrays_are_frozen(self):
        """Los arrays de la malla no se pueden modificar."""
        mesh = BSTriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]])
        with pytest.raises(ValueError):
            mesh.vertices[0, 0] = 5.0

    def test_index_out_of_range_raises(self):
        """Un índice mayor que el número de vértices lanza BSMeshIndexError."""
        with pytest.raises(BSMeshIndexError):
            BSTriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 3]])

    def test_repeated_index_raises(self):
        """Un triángulo con un índice repetido es degenerado."""
        with pytest.raises(BSMeshIndexError):
            BSTriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 1]])

    def test_too_few_vertices_raises(self):
        """Menos de tres vértices es una malla vacía."""
        with pytest.raises(BSEmptyMeshError):
            BSTriangleMesh([[0, 0, 0], [1, 0, 0]], [[0, 1, 0]])

    def test_bbox_of_translated_mesh_is_translated(self):
        """Trasladar la malla traslada su caja en la misma cantidad."""
        mesh = BSTriangleMesh([[0, 0, 0], [1, 0, 0], [0, 2, 3]], [[0, 1, 2]])
        offset = (5.0, -1.0, 0.5)
        moved = mesh_bbox(mesh.translated(offset))
        expected = mesh_bbox(mesh).translated(offset)
        assert np.allclose(moved.minimum, expected.minimum)
        assert np.allclose(moved.maximum, expected.maximum)

    def test_errors_are_value_errors(self):
        """Los errores de malla son errores de validación (y ValueError)."""
        assert issubclass(BSMeshParseError, BSValidationError)
        assert issubclass(BSMeshIndexError, ValueError)


# ===========================================================================
# Tests de OBJ
# ===========================================================================

class TestMeshObj:
    """Lectura de ficheros Wavefront OBJ."""

    def test_load_two_triangles(self, tmp_path):
        """Un cuadrado con dos triángulos da 4 vértices y 2 caras; vt/vn se ignoran."""
        mesh = load_mesh(_write(tmp_path, "square.obj", SQUARE_OBJ))
        assert mesh.n_vertices == 4
        assert mesh.n_triangles == 2
        assert mesh.instrument_id == "square"
        assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_bbox_extents(self, tmp_path):
        """La caja del cuadrado va de (0,0,0) a (1,1,1)."""
        box = mesh_bbox(load_mesh(_write(tmp_path, "square.obj", SQUARE_OBJ)))
        assert box.minimum == (0.0, 0.0, 0.0)
        assert box.maximum == (1.0, 1.0, 1.0)
        assert box.contains(np.array([[0.5, 0.5, 0.5]]))

    def test_polygon_is_fan_triangulated(self, tmp_path):
        """Un cuadrilátero se parte en abanico desde su primer vértice."""
        mesh = load_mesh(_write(tmp_path, "quad.obj", QUAD_OBJ))
        assert mesh.triangles.tolist() == [[0, 1, 2], [0, 2, 3]]

    def test_negative_indices_are_relative(self, tmp_path):
        """Los índices negativos cuentan desde el último vértice leído."""
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf -3 -2 -1\n"
        mesh = load_mesh(_write(tmp_path, "neg.obj", text))
        assert mesh.triangles.tolist() == [[0, 1, 2]]

    def test_zero_index_reports_line(self, tmp_path):
        """El índice 0 no existe en OBJ y el error lleva el número de línea."""
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 0 1 2\n"
        with pytest.raises(BSMeshIndexError) as excinfo:
            load_mesh(_write(tmp_path, "zero.obj", text))
        assert excinfo.value.line == 4

    def test_out_of_range_index_raises(self, tmp_path):
        """Una cara que apunta a un vértice inexistente se rechaza."""
        text = "v 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 2 9\n"
        with pytest.raises(BSMeshIndexError, match="fuera de rango"):
            load_mesh(_write(tmp_path, "bad.obj", text))

    def test_non_numeric_vertex_raises(self, tmp_path):
        """Una coordenada no numérica es un error sintáctico con su línea."""
        text = "v 0 0 0\nv 1 x 0\n"
        with pytest.raises(BSMeshParseError) as excinfo:
            load_mesh(_write(tmp_path, "nan.obj", text))
        assert excinfo.value.line == 2

    def test_empty_file_raises(self, tmp_path):
        """Un fichero sin caras es una malla vacía."""
        with pytest.raises(BSEmptyMeshError):
            load_mesh(_write(tmp_path, "empty.obj", "# nada\n"))

    def test_unknown_format_raises(self, tmp_path):
        """Una extensión no soportada se rechaza antes de leer."""
        with pytest.raises(BSMeshParseError, match="no soportado"):
            load_mesh(_write(tmp_path, "mesh.stl", "solid\n"))

    def test_missing_file_raises(self, tmp_path):
        """Un fichero inexistente lanza FileNotFoundError."""
        with pytest.raises(FileNotFoundError):
            load_mesh(tmp_path / "missing.obj")

    def test_duplicate_vertices_are_accepted(self, tmp_path):
        """Las mallas con vértices repetidos son válidas: solo se valida la indexación."""
        text = "v 0 0 0\nv 0 0 0\nv 1 0 0\nv 0 1 0\nf 1 3 4\nf 2 3 4\n"
        mesh = load_mesh(_write(tmp_path, "dup.obj", text))
        assert mesh.n_vertices == 4


# ===========================================================================
# Tests de PLY
# ===========================================================================

class TestMeshPly:
    """Lectura de PLY ASCII."""

    def test_load_with_extra_properties(self, tmp_path):
        """Las propiedades extra de vértice se ignoran."""
        mesh = load_mesh(_write(tmp_path, "square.ply", SQUARE_PLY))
        assert mesh.n_vertices == 4
        assert mesh.n_triangles == 2
        assert mesh.vertices[2].tolist() == [1.0, 1.0, 1.0]

    def test_same_geometry_as_obj(self, tmp_path):
        """El mismo cuadrado en OBJ y en PLY da la misma geometría."""
        obj = load_mesh(_write(tmp_path, "a.obj", SQUARE_OBJ))
        ply = load_mesh(_write(tmp_path, "b.ply", SQUARE_PLY))
        assert obj.same_geometry(ply)

    def test_binary_ply_rejected(self, tmp_path):
        """El PLY binario no está soportado."""
        text = SQUARE_PLY.replace("format ascii 1.0", "format binary_little_endian 1.0")
        with pytest.raises(BSMeshParseError, match="binario"):
            load_mesh(_write(tmp_path, "bin.ply", text))

    def test_truncated_body_raises(self, tmp_path):
        """Faltan caras declaradas en la cabecera."""
        text = SQUARE_PLY.rsplit("3 0 2 3", 1)[0]
        with pytest.raises(BSMeshParseError, match="fin de fichero"):
            load_mesh(_write(tmp_path, "short.ply", text))

    def test_missing_header_raises(self, tmp_path):
        """Sin la palabra 'ply' en la primera línea no es un PLY."""
        with pytest.raises(BSMeshParseError):
            load_mesh(_write(tmp_path, "noply.ply", SQUARE_PLY.replace("ply\n", "xyz\n", 1)))

    def test_face_index_out_of_range(self, tmp_path):
        """Un índice de cara mayor que el número de vértices se rechaza."""
        text = SQUARE_PLY.replace("3 0 2 3", "3 0 2 7")
        with pytest.raises(BSMeshIndexError):
            load_mesh(_write(tmp_path, "idx.ply", text))


# ===========================================================================
# Tests de ida y vuelta
# ===========================================================================

class TestMeshRoundTrip:
    """write_mesh seguido de load_mesh conserva la geometría exacta."""

    @pytest.mark.parametrize("fmt", ["obj", "ply"])
    def test_round_trip_is_exact(self, tmp_path, small_mesh, fmt):
        """Vértices e índices se releen sin pérdida."""
        path = tmp_path / f"board.{fmt}"
        write_mesh(small_mesh, path)
        again = load_mesh(path)
        assert again.same_geometry(small_mesh)

    def test_obj_faces_are_one_based(self, tmp_path):
        """Las caras OBJ escritas empiezan en 1."""
        mesh = BSTriangleMesh([[0, 0, 0], [1, 0, 0], [0, 1, 0]], [[0, 1, 2]], "tri")
        path = tmp_path / "tri.obj"
        write_mesh(mesh, path)
        assert "f 1 2 3" in path.read_text().splitlines()

    def test_ply_declares_counts(self, tmp_path, small_mesh):
        """La cabecera PLY declara los recuentos correctos."""
        path = tmp_path / "board.ply"
        write_mesh(small_mesh, path)
        lines = path.read_text().splitlines()
        assert f"element vertex {small_mesh.n_vertices}" in lines
        assert f"element face {small_mesh.n_triangles}" in lines
