import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fdnml.errors import ConfigError, DataError
from fdnml.ingest import (COGBEACON_MAPPING, EegRecording, WindowSpec, load_recording, window,
                          window_count, write_diagnostics, write_recording)

CHANNELS = ["TP9", "AF7", "AF8", "TP10"]
MAPPING = {"channels": {ch: i for i, ch in enumerate(CHANNELS)}, "label": {"value": 0},
           "sample_rate_hz": 256.0, "header": False, "delimiter": "auto"}


def _write_plain(path, data, delimiter=","):
    path.write_text("\n".join(delimiter.join(repr(float(v)) for v in row) for row in data) + "\n")
    return path


def test_four_column_csv_loads(tmp_path, rng):
    data = rng.standard_normal((1000, 4))
    rec = load_recording(_write_plain(tmp_path / "t.csv", data), MAPPING)
    assert rec.n_channels == 4
    assert rec.n_samples == 1000
    assert rec.fatigue_level == 0
    assert rec.channels == CHANNELS
    np.testing.assert_array_equal(rec.samples, data.T)


def test_tab_delimited_is_detected(tmp_path, rng):
    data = rng.standard_normal((100, 4))
    rec = load_recording(_write_plain(tmp_path / "t.tsv", data, "\t"), MAPPING)
    np.testing.assert_array_equal(rec.samples, data.T)


def test_non_finite_rows_are_dropped_and_counted(tmp_path, rng):
    data = rng.standard_normal((1000, 4))
    data[[5, 300, 999], [0, 2, 3]] = np.nan
    rec = load_recording(_write_plain(tmp_path / "t.csv", data), MAPPING)
    assert rec.n_samples == 997
    assert rec.diagnostics == {"rows_read": 1000, "rows_dropped": 3, "channels": 4}
    out = write_diagnostics(rec, tmp_path / "diag.json")
    assert '"rows_dropped": 3' in out.read_text()


def test_cogbeacon_layout_maps_four_channels(tmp_path, rng):
    data = rng.standard_normal((300, 4))
    lines = ["timestamps,TP9,AF7,AF8,TP10,fatigue_level"]
    lines += [f"{i},{','.join(repr(float(v)) for v in row)},2" for i, row in enumerate(data)]
    path = tmp_path / "trial.csv"
    path.write_text("\n".join(lines) + "\n")
    mapping = dict(COGBEACON_MAPPING)
    mapping["label"] = {"column": "fatigue_level"}
    rec = load_recording(path, mapping)
    assert rec.channels == CHANNELS
    assert rec.fatigue_level == 2
    np.testing.assert_array_equal(rec.samples, data.T)


def test_missing_file_and_column(tmp_path, rng):
    with pytest.raises(DataError):
        load_recording(tmp_path / "absent.csv", MAPPING)
    path = _write_plain(tmp_path / "t.csv", rng.standard_normal((10, 2)))
    with pytest.raises((DataError, ConfigError)):
        load_recording(path, MAPPING)


def test_label_outside_levels_is_rejected(tmp_path, rng):
    path = _write_plain(tmp_path / "t.csv", rng.standard_normal((10, 4)))
    bad = dict(MAPPING, label={"value": 3})
    with pytest.raises(DataError):
        load_recording(path, bad)


def test_empty_after_cleaning(tmp_path):
    path = _write_plain(tmp_path / "t.csv", np.full((5, 4), np.nan))
    with pytest.raises(DataError):
        load_recording(path, MAPPING)


def test_recording_invariants():
    with pytest.raises(DataError):
        EegRecording(["a"], np.zeros((2, 10)), 256.0, "t", 0)
    with pytest.raises(DataError):
        EegRecording(["a"], np.zeros((1, 10)), 0.0, "t", 0)
    with pytest.raises(DataError):
        EegRecording(["a"], np.full((1, 10), np.nan), 256.0, "t", 0)


def test_round_trip_is_bit_exact(tmp_path, rng):
    samples = rng.standard_normal((4, 777)) * 10.0 ** rng.integers(-8, 8, size=(4, 777))
    rec = EegRecording(CHANNELS, samples, 220.5, "trial-7", 1)
    back = load_recording(write_recording(rec, tmp_path / "r.csv"))
    assert np.array_equal(back.samples, rec.samples)
    assert back.sample_rate_hz == 220.5
    assert back.trial_id == "trial-7"


@pytest.mark.parametrize("n,length,stride,starts", [
    (1000, 500, 250, [0, 250, 500]),
    (500, 500, 1, [0]),
])
def test_window_examples(n, length, stride, starts):
    rec = EegRecording(["a"], np.arange(n, dtype=float)[None], 256.0, "t", 1)
    ws = window(rec, WindowSpec(length, stride))
    assert list(ws.window_times) == starts
    assert ws.label == 1
    for s, w in zip(starts, ws.windows):
        np.testing.assert_array_equal(w[0], np.arange(s, s + length))


def test_window_shorter_than_one_window():
    rec = EegRecording(["a"], np.zeros((1, 499)), 256.0, "t", 0)
    with pytest.raises(DataError):
        window(rec, WindowSpec(500, 1))


def test_window_channel_subset():
    rec = EegRecording(CHANNELS, np.arange(4 * 128, dtype=float).reshape(4, 128), 256.0, "t", 0)
    ws = window(rec, WindowSpec(64, 64, ["AF8", "TP9"]))
    assert ws.channels == ["AF8", "TP9"]
    np.testing.assert_array_equal(ws.windows[0, 0], rec.samples[2, :64])
    with pytest.raises(DataError):
        window(rec, WindowSpec(64, 64, ["Cz"]))


def test_window_spec_bounds():
    with pytest.raises(ConfigError):
        WindowSpec(63, 1)
    with pytest.raises(ConfigError):
        WindowSpec(64, 0)


@settings(max_examples=60, deadline=None)
@given(length=st.integers(64, 300), stride=st.integers(1, 300), extra=st.integers(0, 700))
def test_window_count_formula(length, stride, extra):
    n = length + extra
    rec = EegRecording(["a"], np.zeros((1, n)), 256.0, "t", 0)
    ws = window(rec, WindowSpec(length, stride))
    assert len(ws) == window_count(n, length, stride) == (n - length) // stride + 1
    assert ws.window_times[-1] + length <= n


def test_label_from_sidecar(tmp_path, rng):
    path = _write_plain(tmp_path / "s01.csv", rng.standard_normal((20, 4)))
    (tmp_path / "labels.yaml").write_text("s01: 1\n")
    rec = load_recording(path, dict(MAPPING, label={"sidecar": "labels.yaml"}))
    assert rec.fatigue_level == 1
