import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import mixed_dataset
from synthtrial.dataset import (
    CATEGORICAL,
    POSITIVE,
    REAL,
    DatasetError,
    Schema,
    TrialDataset,
    concat,
    load_csv,
    read_manifest,
    save_csv,
    split_arms,
    subsample,
    write_manifest,
)


def _write(tmp_path, header, rows, manifest):
    csv = tmp_path / "d.csv"
    csv.write_text("\n".join([",".join(header)] + [",".join(map(str, r)) for r in rows]) + "\n")
    man = tmp_path / "m.json"
    man.write_text(json.dumps(manifest))
    return csv, man


SMALL_MANIFEST = {
    "columns": [
        {"name": "x", "role": "covariate", "kind": "real"},
        {"name": "g", "role": "covariate", "kind": "categorical", "levels": ["A", "B"]},
        {"name": "arm", "role": "treatment"},
        {"name": "t", "role": "time"},
        {"name": "d", "role": "event"},
    ]
}


def test_three_row_csv_loads(tmp_path):
    csv, man = _write(tmp_path, ["x", "g", "arm", "t", "d"], [(0.5, "A", 0, 1.0, 1), (-1.5, "B", 1, 2.5, 0), (2.0, "A", 0, 0.3, 1)], SMALL_MANIFEST)
    data = load_csv(csv, man)
    assert data.n == 3
    assert data.covariates["g"].tolist() == [0, 1, 0]
    assert data.time.tolist() == [1.0, 2.5, 0.3]
    assert data.schema.treatment_column == "arm"


def test_nonpositive_time_reports_row(tmp_path):
    csv, man = _write(tmp_path, ["x", "g", "arm", "t", "d"], [(0.5, "A", 0, 1.0, 1), (0.1, "B", 0, -1.0, 1)], SMALL_MANIFEST)
    with pytest.raises(DatasetError, match="nonpositive time at row 2") as err:
        load_csv(csv, man)
    assert err.value.row == 2 and err.value.column == "t"


@pytest.mark.parametrize(
    "row, message, column",
    [
        ((0.5, "Z", 0, 1.0, 1), "unknown categorical level", "g"),
        ((0.5, "A", 0, 1.0, 2), "not in", "d"),
        ((0.5, "A", 0, "abc", 1), "non-numeric time", "t"),
        (("", "A", 0, 1.0, 1), "missing value", "x"),
    ],
)
def test_bad_rows_are_located(tmp_path, row, message, column):
    csv, man = _write(tmp_path, ["x", "g", "arm", "t", "d"], [(1.0, "A", 0, 1.0, 1), row], SMALL_MANIFEST)
    with pytest.raises(DatasetError, match=message) as err:
        load_csv(csv, man)
    assert err.value.row == 2
    assert err.value.column == column


def test_missing_column(tmp_path):
    csv, man = _write(tmp_path, ["x", "arm", "t", "d"], [(1.0, 0, 1.0, 1)], SMALL_MANIFEST)
    with pytest.raises(DatasetError, match="missing column 'g'"):
        load_csv(csv, man)


def test_actg_shaped_manifest_kind_counts():
    cols = [{"name": f"c{i}", "kind": "categorical", "levels": ["0", "1"]} for i in range(5)]
    cols += [{"name": "cd4", "kind": "positive"}, {"name": "karnof", "kind": "positive"}, {"name": "age", "kind": "real"}]
    cols += [{"name": "tx", "role": "treatment"}, {"name": "time", "role": "time"}, {"name": "censor", "role": "event"}]
    schema = Schema.from_manifest({"columns": cols})
    counts = schema.kind_counts()
    assert (counts[CATEGORICAL], counts[POSITIVE], counts[REAL]) == (5, 2, 1)


def test_manifest_round_trip(tmp_path):
    schema = mixed_dataset().schema
    write_manifest(schema, tmp_path / "m.json")
    assert read_manifest(tmp_path / "m.json") == schema


def test_manifest_errors():
    with pytest.raises(DatasetError, match="no time column"):
        Schema.from_manifest({"columns": [{"name": "a", "role": "treatment"}, {"name": "b", "role": "event"}]})
    with pytest.raises(DatasetError, match="duplicate"):
        Schema.from_manifest({"columns": [{"name": "a", "kind": "real"}, {"name": "a", "kind": "real"}, {"name": "e", "role": "treatment"}, {"name": "t", "role": "time"}, {"name": "d", "role": "event"}]})


def test_split_arms_small():
    data = mixed_dataset(3)
    data = TrialDataset(data.schema, data.covariates, [0, 1, 0], data.time, data.event)
    control, treated = split_arms(data)
    assert (control.n, treated.n) == (2, 1)
    control, treated = split_arms(data.with_treatment(0))
    assert (control.n, treated.n) == (3, 0)


def test_split_arms_on_simulated_default(sim_default):
    control, treated = split_arms(sim_default)
    assert control.n == int((sim_default.treatment == 0).sum())
    assert treated.n == int((sim_default.treatment == 1).sum())
    assert control.n + treated.n == 600
    assert abs(control.n - 300) < 4 * np.sqrt(150)


def test_subsample_examples():
    data = mixed_dataset(300)
    assert subsample(data, 1.0, 3).equals(data)
    assert subsample(data, 1 / 3, 3).n == 100
    small = mixed_dataset(10)
    assert subsample(small, 2 / 3, 5).equals(subsample(small, 2 / 3, 5))
    with pytest.raises(DatasetError):
        subsample(small, 0.01, 0)


def test_concat_rejects_other_schema(sim_default):
    with pytest.raises(DatasetError):
        concat([mixed_dataset(4), sim_default])


@given(st.integers(1, 60), st.integers(0, 2**31), st.floats(0.0, 1.0))
def test_csv_round_trip_is_identity(tmp_path_factory, n, seed, frac):
    data = mixed_dataset(n, seed, frac)
    d = tmp_path_factory.mktemp("rt")
    save_csv(data, d / "x.csv", d / "x.json")
    back = load_csv(d / "x.csv", d / "x.json")
    assert back.equals(data)


@given(st.integers(2, 80), st.integers(0, 2**31), st.floats(0.05, 1.0))
def test_split_and_subsample_partition(n, seed, frac):
    data = mixed_dataset(n, seed, 0.5)
    control, treated = split_arms(data)
    assert control.n + treated.n == n
    assert np.all(control.treatment == 0) and np.all(treated.treatment == 1)
    # row identity: times are continuous draws, hence distinct
    assert sorted(np.concatenate([control.time, treated.time]).tolist()) == sorted(data.time.tolist())
    if round(frac * n) >= 1:
        sub = subsample(data, frac, seed)
        assert sub.n == int(np.floor(frac * n + 0.5))
        pos = np.searchsorted(np.sort(data.time), sub.time)
        assert len(set(sub.time.tolist())) == sub.n
        assert np.all(np.isin(sub.time, data.time)) and pos.size == sub.n


def test_dataset_is_immutable(mixed):
    with pytest.raises(ValueError):
        mixed.time[0] = 3.0
