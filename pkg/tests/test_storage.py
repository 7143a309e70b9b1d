import numpy as np
import pytest

from typodist import storage
from typodist.errors import FormatError
from typodist.kb import LanguageRecord

from conftest import make_matrix, make_tensor
from typodist.aggregate import AggregationMode


def test_tensor_round_trip(tmp_path, tiny_tensor):
    storage.save_tensor(tiny_tensor, tmp_path)
    loaded = storage.load_tensor(tmp_path)
    assert loaded.languages == tiny_tensor.languages
    assert loaded.features == tiny_tensor.features
    assert loaded.sources == tiny_tensor.sources
    assert sorted(loaded.iter_cells()) == sorted(tiny_tensor.iter_cells())


def test_round_trip_random_values(tmp_path):
    rng = np.random.default_rng(3)
    cells = [
        (f"l{i:03d}1234", f"S_F{j}", src, float(v))
        for i in range(4)
        for j in range(3)
        for src, v in [("SRC_A", rng.random()), ("SRC_B", rng.integers(0, 2))]
        if rng.random() < 0.7
    ]
    tensor = make_tensor(
        [f"l{i:03d}1234" for i in range(4)], [f"S_F{j}" for j in range(3)], cells
    )
    storage.save_tensor(tensor, tmp_path)
    loaded = storage.load_tensor(tmp_path)
    assert sorted(loaded.iter_cells()) == sorted(tensor.iter_cells())


def test_dialect_parent_survives_round_trip(tmp_path):
    tensor = make_tensor(
        [LanguageRecord("pare1234"), LanguageRecord("dial1234", parent="pare1234")],
        ["S_F1"],
        [("pare1234", "S_F1", "SRC_A", 1.0)],
    )
    storage.save_tensor(tensor, tmp_path)
    loaded = storage.load_tensor(tmp_path)
    assert loaded.language("dial1234").parent == "pare1234"


def test_missing_registry_errors(tmp_path):
    with pytest.raises(FormatError):
        storage.load_tensor(tmp_path / "nope")


def test_bad_rows_report_row_number(tmp_path, tiny_tensor):
    storage.save_tensor(tiny_tensor, tmp_path)
    victim = tmp_path / "SRC_A.csv"
    victim.write_text("language,feature,value\npare1234,S_F1,1\npare1234,S_F2\n")
    with pytest.raises(FormatError, match="row 3"):
        storage.load_tensor(tmp_path)
    victim.write_text("language,feature,value\npare1234,S_F1,maybe\n")
    with pytest.raises(FormatError, match="row 2"):
        storage.load_tensor(tmp_path)
    victim.write_text("language,feature,value\npare1234,S_F1,1.5\n")
    with pytest.raises(FormatError, match="outside"):
        storage.load_tensor(tmp_path)
    victim.write_text("lang,feat,val\n")
    with pytest.raises(FormatError, match="header"):
        storage.load_tensor(tmp_path)


def test_explicit_missing_rows_are_skipped(tmp_path, tiny_tensor):
    storage.save_tensor(tiny_tensor, tmp_path)
    with open(tmp_path / "SRC_B.csv", "a", encoding="utf-8") as fh:
        fh.write("othe1234,P_F1,--\n")
    loaded = storage.load_tensor(tmp_path)
    assert loaded.get_cell("othe1234", "P_F1", "SRC_B") is None


def test_unsafe_source_name_rejected(tmp_path):
    tensor = make_tensor(["abcd1234"], ["S_F1"], [("abcd1234", "S_F1", "../evil", 1.0)])
    with pytest.raises(FormatError):
        storage.save_tensor(tensor, tmp_path)


def test_matrix_export_round_trip(tmp_path):
    values = np.array([[1.0, np.nan, 0.25], [0.0, 1.0, np.nan]])
    matrix = make_matrix(
        AggregationMode.AVERAGE, ["aaaa1234", "bbbb1234"], ["S_F1", "S_F2", "S_F3"], values
    )
    path = tmp_path / "matrix.csv"
    storage.export_matrix_csv(matrix.languages, matrix.features, matrix.values, path)
    loaded = storage.load_matrix_values(path, matrix.languages, [f.name for f in matrix.features])
    assert np.array_equal(np.isnan(loaded), np.isnan(values))
    assert np.array_equal(loaded[~np.isnan(values)], values[~np.isnan(values)])


def test_matrix_load_validates_grid(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("language,S_F1\naaaa1234,1\n")
    with pytest.raises(FormatError, match="columns do not match"):
        storage.load_matrix_values(path, ["aaaa1234"], ["S_F1", "S_F2"])
    with pytest.raises(FormatError, match="missing rows"):
        storage.load_matrix_values(path, ["aaaa1234", "bbbb1234"], ["S_F1"])
    path.write_text("language,S_F1\naaaa1234,1\naaaa1234,0\n")
    with pytest.raises(FormatError, match="duplicate"):
        storage.load_matrix_values(path, ["aaaa1234"], ["S_F1"])


def test_format_value_round_trips():
    rng = np.random.default_rng(5)
    for v in [0.0, 1.0, 0.5, 2 / 3, *rng.random(50)]:
        assert float(storage.format_value(v)) == v
