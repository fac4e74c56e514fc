import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from layerquant.errors import FormatError, NamingError, ShapeError
from layerquant.metrics import kurtosis
from layerquant.tensor_io import (MetricRow, ModelBundle, Entry, load_model, read_metrics_csv, save_model,
                                  synth_model, write_metrics_csv)
from safetensors.numpy import save_file


def test_load_two_layers(tmp_path):
    path = tmp_path / "m.st"
    save_file({"0.q_proj": np.eye(4, dtype=np.float32), "1.q_proj": np.ones((4, 4), np.float32)}, str(path))
    b = load_model(path)
    assert b.num_layers == 2
    assert len(b) == 2
    assert [e.element_count for e in b] == [16, 16]
    assert b.keys() == [(0, "q_proj"), (1, "q_proj")]


def test_unprefixed_name_is_naming_error(tmp_path):
    path = tmp_path / "m.st"
    save_file({"q_proj": np.eye(4, dtype=np.float32)}, str(path))
    with pytest.raises(NamingError):
        load_model(path)


def test_non_2d_is_shape_error(tmp_path):
    path = tmp_path / "m.st"
    save_file({"0.q_proj": np.zeros((2, 2, 2), np.float32)}, str(path))
    with pytest.raises(ShapeError):
        load_model(path)


@pytest.mark.parametrize("blob", [b"", b"\x05\x00", struct.pack("<Q", 1000) + b"{}",
                                  struct.pack("<Q", 3) + b"{x}"])
def test_malformed_header_is_format_error(tmp_path, blob):
    path = tmp_path / "bad.st"
    path.write_bytes(blob)
    with pytest.raises(FormatError):
        load_model(path)


def test_truncated_data_is_format_error(tmp_path):
    header = json.dumps({"0.q_proj": {"dtype": "F32", "shape": [2, 2], "data_offsets": [0, 16]}}).encode()
    path = tmp_path / "short.st"
    path.write_bytes(struct.pack("<Q", len(header)) + header + b"\0" * 4)
    with pytest.raises(FormatError):
        load_model(path)


def test_synth_roundtrip_bitwise(tmp_path):
    b = synth_model(16, rows=16, cols=32, planted={(3, "v_proj")}, seed=11)
    path = tmp_path / "s.st"
    save_model(b, path)
    back = load_model(path)
    assert back.keys() == b.keys()
    for x, y in zip(b, back):
        assert x.matrix.dtype == y.matrix.dtype == np.float32
        assert x.matrix.tobytes() == y.matrix.tobytes()


def test_synth_deterministic():
    a = synth_model(3, rows=8, cols=8, planted={(1, "q_proj")}, seed=5)
    b = synth_model(3, rows=8, cols=8, planted={(1, "q_proj")}, seed=5)
    for x, y in zip(a, b):
        np.testing.assert_array_equal(x.matrix, y.matrix)


def test_synth_planting_leaves_other_entries_untouched():
    a = synth_model(3, rows=8, cols=8, seed=5)
    b = synth_model(3, rows=8, cols=8, planted={(1, "q_proj")}, seed=5)
    diff = [x.key for x, y in zip(a, b) if not np.array_equal(x.matrix, y.matrix)]
    assert diff == [(1, "q_proj")]


def test_synth_gaussian_kurtosis_near_three():
    b = synth_model(2, rows=256, cols=256, seed=1)
    for e in b:
        assert 2.8 <= kurtosis(e.matrix) <= 3.2


def test_synth_planted_is_leptokurtic():
    b = synth_model(16, rows=256, cols=256, planted={(14, "o_proj")}, tail_scale=50, seed=2)
    assert kurtosis(b.get(14, "o_proj").matrix) > 10


@pytest.mark.parametrize("kw", [dict(layers=1), dict(layers=2, tail_scale=1.0),
                                dict(layers=2, planted={(5, "q_proj")}),
                                dict(layers=2, planted={(0, "mlp")})])
def test_synth_argument_errors(kw):
    with pytest.raises(ValueError):
        synth_model(rows=4, cols=4, **kw)


def test_bundle_rejects_gaps_and_duplicates():
    m = np.zeros((2, 2), np.float32)
    with pytest.raises(ValueError):
        ModelBundle("x", (Entry(0, "a", m, 4), Entry(2, "a", m, 4)))
    with pytest.raises(ValueError):
        ModelBundle("x", (Entry(0, "a", m, 4), Entry(0, "a", m, 4)))
    with pytest.raises(ValueError):
        ModelBundle("x", (Entry(0, "a", np.full((2, 2), np.nan), 4),))


def test_metrics_csv_single_row(tmp_path):
    path = tmp_path / "m.csv"
    write_metrics_csv([MetricRow(0, "q_proj", "kurtosis", 3.0)], path)
    lines = path.read_text().splitlines()
    assert lines == ["layer_index,module_name,metric_name,value,context", "0,q_proj,kurtosis,3,"]


def test_metrics_csv_missing_column(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("layer_index,metric_name,value,context\n0,kurtosis,3.0,\n")
    with pytest.raises(FormatError):
        read_metrics_csv(path)


def test_metrics_csv_roundtrip_1000(tmp_path):
    rng = np.random.default_rng(0)
    rows = [MetricRow(int(rng.integers(0, 80)), f"m{int(rng.integers(0, 7))}",
                      ["sensitivity", "kurtosis"][i % 2], float(rng.standard_normal() * 10.0 ** rng.integers(-300, 300)),
                      None if i % 3 else f"ctx/{i}") for i in range(1000)]
    path = tmp_path / "m.csv"
    write_metrics_csv(rows, path)
    assert read_metrics_csv(path) == rows


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(allow_nan=False, allow_infinity=False), min_size=1, max_size=20))
def test_metrics_csv_preserves_every_digit(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("csv") / "m.csv"
    rows = [MetricRow(i, "o_proj", "kurtosis", v) for i, v in enumerate(values)]
    write_metrics_csv(rows, path)
    assert [r.value for r in read_metrics_csv(path)] == values


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 3), st.integers(1, 6), st.integers(1, 6), st.integers(0, 2 ** 31))
def test_save_load_inverse(tmp_path_factory, layers, rows, cols, seed):
    rng = np.random.default_rng(seed)
    entries = tuple(Entry(l, m, rng.standard_normal((rows, cols)).astype(np.float32), rows * cols)
                    for l in range(layers) for m in ("q_proj", "o_proj"))
    b = ModelBundle("rt", entries)
    path = tmp_path_factory.mktemp("st") / "b.st"
    save_model(b, path)
    back = load_model(path)
    assert back.keys() == b.keys()
    assert all(x.matrix.tobytes() == y.matrix.tobytes() for x, y in zip(b, back))
