import datetime as dt
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from anyvariate import checkpoint as ckpt
from anyvariate.archive import (
    Archive,
    SubDataset,
    export,
    ingest,
    load_archive,
    load_subdataset,
    read_csv,
    save_archive,
    timestamps,
    write_csv,
)
from anyvariate.patching import ConfigError, DataError, Frequency, Role
from anyvariate.synthetic import desk_archive, peaky_archive

from conftest import make_series


def write(path, text):
    path.write_text(text)
    return path


def test_month_arithmetic():
    ts = timestamps(dt.datetime(2000, 11, 30), 3, "monthly") if False else timestamps(dt.datetime(2000, 11, 1), 3, "monthly")
    assert [t.month for t in ts] == [11, 12, 1] and ts[2].year == 2001
    q = timestamps(dt.datetime(2000, 1, 1), 3, "quarterly")
    assert [t.month for t in q] == [1, 4, 7]
    h = timestamps(dt.datetime(2000, 1, 1), 2, "hourly", multiplier=6)
    assert h[1] - h[0] == dt.timedelta(hours=6)


def test_csv_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(0)
    vals = rng.normal(size=(2, 20)) * 1e7
    vals[1, 3] = np.nan
    stamps = timestamps(dt.datetime(2020, 1, 1), 20, "daily")
    write_csv(tmp_path / "a.csv", ["x", "y"], stamps, vals)
    names, st_, back = read_csv(tmp_path / "a.csv", "daily")
    assert names == ["x", "y"] and st_ == stamps
    assert np.array_equal(back, vals, equal_nan=True)


@pytest.mark.parametrize("body,match", [
    ("", "empty"),
    ("timestamp,x\n", "no data"),
    ("time,x\n2020-01-01,1\n", "header"),
    ("timestamp,x\n2020-01-01,1\n2020-01-01,2\n", "duplicate timestamp"),
    ("timestamp,x\n2020-01-02,1\n2020-01-01,2\n", "not increasing"),
    ("timestamp,x\n2020-01-01,1\n2020-01-03,2\n", "irregular"),
    ("timestamp,x\n2020-01-01,abc\n", ":2: bad value"),
    ("timestamp,x\nyesterday,1\n", ":2: bad timestamp"),
    ("timestamp,x\n2020-01-01,1,2\n", ":2: expected"),
    ("timestamp,x,x\n2020-01-01,1,2\n", "duplicate variate"),
])
def test_csv_errors(tmp_path, body, match):
    with pytest.raises(DataError, match=match):
        read_csv(write(tmp_path / "bad.csv", body), "daily")


def test_ingest_validates_before_writing(tmp_path):
    good = write(tmp_path / "good.csv", "timestamp,x\n2020-01-01,1\n2020-01-02,2\n")
    bad = write(tmp_path / "bad.csv", "timestamp,x\n2020-01-01,1\n2020-01-01,2\n")
    with pytest.raises(DataError):
        ingest([good, bad], tmp_path / "arch", "d", "daily")
    assert not (tmp_path / "arch").exists()


def test_ingest_export_round_trip(tmp_path):
    src = write(tmp_path / "s.csv",
                "timestamp,load,temp\n2000-01-01T00:00:00,1.5,0.1\n2000-01-01T01:00:00,,0.30000000000000004\n")
    sd = ingest([src], tmp_path / "arch", "energy", "hourly", roles={"temp": "past_covariate"})
    assert sd.series[0].roles == [Role.TARGET, Role.PAST_COVARIATE]
    loaded = load_subdataset(tmp_path / "arch" / "energy")
    (out,) = export(loaded, tmp_path / "out")
    assert out.read_bytes() == src.read_bytes()


def test_ingest_unknown_role_column(tmp_path):
    src = write(tmp_path / "s.csv", "timestamp,x\n2000-01-01,1\n2000-01-02,2\n")
    with pytest.raises(ConfigError):
        ingest([src], tmp_path / "a", "d", "daily", roles={"nope": "target"})


def test_archive_save_load_and_audit(tmp_path):
    ar = desk_archive(0, scale=0.2)
    save_archive(tmp_path, ar)
    back = load_archive(tmp_path)
    assert [sd.id for sd in back.sub_datasets] == sorted(sd.id for sd in ar.sub_datasets)
    for sd in back.sub_datasets:
        orig = next(o for o in ar.sub_datasets if o.id == sd.id)
        for a, b in zip(orig.series, sd.series):
            assert np.array_equal(a.values, b.values) and a.roles == b.roles
    # tamper with the recorded count
    m = tmp_path / "daily_ar" / "manifest.json"
    d = json.loads(m.read_text())
    d["total_obs"] += 1
    m.write_text(json.dumps(d))
    with pytest.raises(DataError, match="total_obs"):
        load_archive(tmp_path)


def test_load_archive_missing(tmp_path):
    with pytest.raises(ConfigError):
        load_archive(tmp_path / "nowhere")
    with pytest.raises(ConfigError):
        load_archive(tmp_path)


def test_series_in_two_subdatasets_rejected():
    s = make_series()
    with pytest.raises(DataError):
        Archive([SubDataset("a", [s]), SubDataset("b", [s])]).audit()


def test_synthetic_archives_are_deterministic():
    a, b = desk_archive(3, scale=0.3), desk_archive(3, scale=0.3)
    for x, y in zip(a.sub_datasets, b.sub_datasets):
        for s, t in zip(x.series, y.series):
            assert np.array_equal(s.values, t.values)
    peaky = peaky_archive(0, num_series=2, length=200)
    assert all((s.values > 0).all() for s in peaky.sub_datasets[0].series)


@settings(max_examples=20, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=4))
def test_checkpoint_round_trip(tmp_path_factory, dims):
    path = tmp_path_factory.mktemp("ck") / "x.ckpt"
    rng = np.random.default_rng(len(dims))
    arrays = {"a": rng.normal(size=dims), "b.c": np.arange(3.0)}
    ckpt.save(path, {"k": [1, 2]}, arrays, {"step": 7})
    cfg, back, extras = ckpt.load(path)
    assert cfg == {"k": [1, 2]} and extras == {"step": 7}
    for k in arrays:
        assert np.array_equal(back[k], arrays[k]) and back[k].shape == arrays[k].shape


def test_checkpoint_errors(tmp_path):
    with pytest.raises(ConfigError):
        ckpt.load(tmp_path / "missing.ckpt")
    (tmp_path / "junk.ckpt").write_bytes(b"not a checkpoint")
    with pytest.raises(ConfigError, match="magic"):
        ckpt.load(tmp_path / "junk.ckpt")
