import numpy as np
import pandas as pd
import pytest

from core.errors import IncompatibleInterval, InvariantViolation, MissingColumn, SeriesTooShort, UnparseableRow
from core.market_data import export_csv, parse_csv, resample, synthetic_bars
from core.models import OhlcvSeries


def _five_minute(rows):
    """rows: (minute offset from 09:00, o, h, l, c, v)"""
    index = pd.DatetimeIndex([pd.Timestamp("2015-01-01 09:00") + pd.Timedelta(minutes=m) for m, *_ in rows], name="timestamp")
    frame = pd.DataFrame([r[1:] for r in rows], columns=["open", "high", "low", "close", "volume"], index=index)
    frame["volume"] = frame["volume"].astype("int64")
    return OhlcvSeries(frame, pd.Timedelta("5min"))


# parse_csv -----------------------------------------------------------------

def test_parse_maps_fields(write_csv):
    path = write_csv("2015-01-01T09:15, 100, 101, 99, 100.5, 2000\n2015-01-01T10:15, 100.5, 102, 100, 101, 1500\n")
    series = parse_csv(path)
    bar = next(series.bars())
    assert (bar.open, bar.high, bar.low, bar.close, bar.volume) == (100.0, 101.0, 99.0, 100.5, 2000)
    assert bar.timestamp == pd.Timestamp("2015-01-01 09:15").to_pydatetime()
    assert len(series) == 2
    assert series.interval == pd.Timedelta("1h")


def test_parse_uses_schema_mapping(write_csv):
    path = write_csv(
        "2015-01-01 09:15,100,101,99,100.5,2000\n",
        header="Datetime,Open,High,Low,Close,Volume\n",
    )
    schema = {"timestamp": "Datetime", "open": "Open", "high": "High", "low": "Low", "close": "Close", "volume": "Volume"}
    series = parse_csv(path, schema)
    assert series.frame["close"].iloc[0] == 100.5


def test_missing_column(write_csv):
    path = write_csv("2015-01-01T09:15,100,101,99,100.5\n", header="timestamp,open,high,low,close\n")
    with pytest.raises(MissingColumn, match="volume"):
        parse_csv(path)


def test_unparseable_row_reports_line(write_csv):
    path = write_csv("2015-01-01T09:00,100,101,99,100,10\n2015-01-01T10:00,100,101,99,abc,10\n")
    with pytest.raises(UnparseableRow) as info:
        parse_csv(path)
    assert info.value.line == 3


def test_fractional_volume_is_unparseable(write_csv):
    path = write_csv("2015-01-01T09:00,100,101,99,100,10.5\n")
    with pytest.raises(UnparseableRow):
        parse_csv(path)


def test_high_below_low_is_rejected(write_csv):
    path = write_csv("2015-01-01T09:00,100,99,101,100,10\n")
    with pytest.raises(InvariantViolation) as info:
        parse_csv(path)
    assert info.value.line == 2
    assert info.value.rule == "low <= high"


def test_first_offending_row_wins(write_csv):
    path = write_csv(
        "2015-01-01T09:00,100,101,99,100,10\n"
        "2015-01-01T10:00,100,101,99,100,-1\n"
        "2015-01-01T11:00,100,101,99,bad,10\n"
    )
    with pytest.raises(InvariantViolation) as info:
        parse_csv(path)
    assert info.value.line == 3
    assert info.value.rule == "volume >= 0"


def test_timestamps_must_increase(write_csv):
    path = write_csv("2015-01-01T10:00,100,101,99,100,10\n2015-01-01T09:00,100,101,99,100,10\n")
    with pytest.raises(InvariantViolation, match="strictly increasing"):
        parse_csv(path)


def test_empty_file_gives_empty_series(tmp_path, write_csv):
    blank = tmp_path / "blank.csv"
    blank.write_text("", encoding="utf-8")
    assert len(parse_csv(blank)) == 0
    assert len(parse_csv(write_csv(""))) == 0


# resample ------------------------------------------------------------------

def test_two_bars_aggregate_into_one_hour():
    series = _five_minute([(0, 10, 12, 9, 11, 5), (5, 11, 13, 10, 12, 7)])
    hourly = resample(series, "1h")
    assert len(hourly) == 1
    row = hourly.frame.iloc[0]
    assert (row.open, row.high, row.low, row.close, row.volume) == (10, 13, 9, 12, 12)
    assert hourly.frame.index[0] == pd.Timestamp("2015-01-01 09:00")


def test_single_bar_bucket_is_identity():
    series = _five_minute([(20, 10, 12, 9, 11, 5)])
    hourly = resample(series, "1h")
    row = hourly.frame.iloc[0]
    assert (row.open, row.high, row.low, row.close, row.volume) == (10, 12, 9, 11, 5)
    assert hourly.frame.index[0] == pd.Timestamp("2015-01-01 09:00")


def test_twelve_five_minute_bars_make_one_hour():
    series = _five_minute([(5 * k, 10, 12, 9, 11, 1) for k in range(12)])
    assert len(resample(series, "1h")) == 1


def test_session_open_at_quarter_past_aligns_to_hour():
    series = _five_minute([(15 + 5 * k, 10, 12, 9, 11, 1) for k in range(12)])
    hourly = resample(series, "1h")
    assert list(hourly.frame.index) == [pd.Timestamp("2015-01-01 09:00"), pd.Timestamp("2015-01-01 10:00")]
    assert list(hourly.frame["volume"]) == [9, 3]


def test_empty_buckets_are_dropped():
    series = _five_minute([(0, 10, 12, 9, 11, 1), (185, 10, 12, 9, 11, 1)])
    hourly = resample(series, "1h")
    assert list(hourly.frame.index.hour) == [9, 12]


def test_incompatible_interval():
    series = _five_minute([(0, 10, 12, 9, 11, 1)])
    with pytest.raises(IncompatibleInterval):
        resample(series, "7min")


def test_resample_empty_series():
    with pytest.raises(SeriesTooShort):
        resample(_five_minute([]), "1h")


def test_resample_properties_on_random_bars():
    minute = synthetic_bars(2000, seed=11, interval="5min", periods=(300.0, 900.0))
    hourly = resample(minute, "1h")
    frame = hourly.frame
    assert frame["volume"].sum() == minute.frame["volume"].sum()
    assert len(hourly) <= int(np.ceil(len(minute) / 12))
    assert (frame["low"] <= frame["high"]).all()
    assert ((frame["low"] <= frame["open"]) & (frame["open"] <= frame["high"])).all()
    assert ((frame["low"] <= frame["close"]) & (frame["close"] <= frame["high"])).all()


def test_resample_at_equal_interval_is_identity(hourly_bars):
    same = resample(hourly_bars, hourly_bars.interval)
    pd.testing.assert_frame_equal(same.frame, hourly_bars.frame)


# export / synthetic --------------------------------------------------------

def test_export_is_readable_by_parse(tmp_path):
    series = synthetic_bars(50, seed=2)
    path = export_csv(series, tmp_path / "out.csv")
    again = parse_csv(path)
    assert len(again) == 50
    np.testing.assert_allclose(again.frame["close"].to_numpy(), series.frame["close"].to_numpy(), rtol=1e-12)
    assert list(again.frame.index) == list(series.frame.index)


def test_synthetic_bars_are_valid_and_seeded():
    a = synthetic_bars(500, seed=9)
    b = synthetic_bars(500, seed=9)
    pd.testing.assert_frame_equal(a.frame, b.frame)
    frame = a.frame
    assert ((frame["low"] <= frame[["open", "close"]].min(axis=1)) & (frame[["open", "close"]].max(axis=1) <= frame["high"])).all()
    assert (frame["volume"] >= 0).all()
    assert frame.index.is_monotonic_increasing
