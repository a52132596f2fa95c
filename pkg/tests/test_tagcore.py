import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vqn import tagcore
from vqn.tagcore import (
    InvalidChannelError,
    ItuChannel,
    MalformedHeaderError,
    TagRecord,
    TagStream,
    TruncatedFileError,
    UnsortedRecordsError,
    UnsupportedChannelError,
    energy_conservation_check,
    itu_wavelength_nm,
    merge_streams,
    partner_channel,
    read_stream,
    write_stream,
)

# wavelengths printed for the hardware channel plan, nm
PLAN_WAVELENGTHS = {
    16: 1564.68,
    17: 1563.86,
    18: 1563.05,
    19: 1562.23,
    23: 1558.98,
    24: 1558.17,
    25: 1557.36,
    26: 1556.55,
}


@pytest.mark.parametrize("index,expected", sorted(PLAN_WAVELENGTHS.items()))
def test_itu_wavelength_matches_plan(index, expected):
    assert itu_wavelength_nm(index) == pytest.approx(expected, abs=0.01)


@pytest.mark.parametrize("index", [0, -3, 101, 1000])
def test_itu_wavelength_rejects_out_of_range(index):
    with pytest.raises(InvalidChannelError):
        itu_wavelength_nm(index)


def test_itu_channel_invariants():
    ch = ItuChannel.from_index(26)
    assert ch.frequency_thz == pytest.approx(192.6)
    assert ch.wavelength_nm * ch.frequency_thz == pytest.approx(tagcore.SPEED_OF_LIGHT_NM_THZ, rel=1e-9)
    with pytest.raises(InvalidChannelError):
        ItuChannel(26, 192.6, 1500.0)


def test_partner_channel_examples():
    assert partner_channel(26) == 16
    assert partner_channel(23) == 19
    assert partner_channel(partner_channel(24)) == 24


@pytest.mark.parametrize("channel", sorted(tagcore.SUPPORTED_CHANNELS))
def test_partner_channel_involution_and_sum(channel):
    partner = partner_channel(channel)
    assert channel + partner == tagcore.PAIR_INDEX_SUM
    assert partner_channel(partner) == channel


@pytest.mark.parametrize("channel", [15, 20, 22, 27, 1])
def test_partner_channel_rejects_unplanned(channel):
    with pytest.raises(UnsupportedChannelError):
        partner_channel(channel)


def test_energy_conservation_at_pump_wavelength():
    ok, residual = energy_conservation_check(23, 780.0)
    assert ok
    assert residual == pytest.approx(0.1493, abs=0.001)
    # every valid pair shares the same index sum, hence the same residual
    ok26, residual26 = energy_conservation_check(26, 780.0)
    assert ok26 and residual26 == pytest.approx(residual)


def test_energy_conservation_fails_at_half_energy():
    ok, residual = energy_conservation_check(23, 1560.0)
    assert not ok
    assert residual > 100


def test_energy_conservation_propagates_unsupported_channel():
    with pytest.raises(UnsupportedChannelError):
        energy_conservation_check(21, 780.0)


# -- streams ---------------------------------------------------------------


def make_stream(records, duration_ps=1000, metadata=None):
    return TagStream.from_records([TagRecord(c, t) for c, t in records], duration_ps, metadata)


def test_stream_requires_sorted_records():
    with pytest.raises(UnsortedRecordsError):
        make_stream([(16, 50), (16, 10)])


def test_stream_tie_break_by_channel():
    make_stream([(16, 10), (26, 10)])  # ascending channel on tie: fine
    with pytest.raises(UnsortedRecordsError):
        make_stream([(26, 10), (16, 10)])


def test_stream_rejects_out_of_bounds_timestamps():
    with pytest.raises(ValueError):
        make_stream([(16, 2000)], duration_ps=1000)
    with pytest.raises(ValueError):
        TagStream([16], [-5], 1000)


def test_stream_is_immutable():
    s = make_stream([(16, 10)])
    with pytest.raises(AttributeError):
        s.duration_ps = 5
    with pytest.raises(ValueError):
        s.timestamps_ps[0] = 3


def test_empty_stream_file_is_header_only(tmp_path):
    s = TagStream([], [], 0)
    path = tmp_path / "empty.vqtt"
    write_stream(s, path)
    assert path.stat().st_size == 12
    assert read_stream(path) == s


def test_three_record_round_trip(tmp_path):
    s = make_stream([(16, 1), (26, 1), (16, 502)], duration_ps=777, metadata={"seed": 3, "config_hash": "abc"})
    path = tmp_path / "three.vqtt"
    write_stream(s, path)
    back = read_stream(path)
    assert back == s
    assert back.timestamps_ps.dtype == np.int64
    assert back.channels.dtype == np.uint16


def test_unsorted_file_rejected(tmp_path):
    path = tmp_path / "bad.vqtt"
    header = tagcore.MAGIC + (1).to_bytes(2, "little") + (2).to_bytes(6, "little")
    rec = np.array([(16, 50), (16, 10)], dtype=tagcore.RECORD_DTYPE)
    path.write_bytes(header + rec.tobytes())
    with pytest.raises(UnsortedRecordsError):
        read_stream(path)


def test_truncated_file_rejected(tmp_path):
    path = tmp_path / "short.vqtt"
    header = tagcore.MAGIC + (1).to_bytes(2, "little") + (3).to_bytes(6, "little")
    path.write_bytes(header + b"\x00" * 10)  # one record where three declared
    with pytest.raises(TruncatedFileError):
        read_stream(path)


def test_bad_magic_and_version_rejected(tmp_path):
    path = tmp_path / "junk.bin"
    path.write_bytes(b"\x00\x01\x02\x03\x04\x05\x06\x07\x08\x09\x0a\x0b")
    with pytest.raises(MalformedHeaderError):
        read_stream(path)
    path.write_bytes(tagcore.MAGIC + (9).to_bytes(2, "little") + (0).to_bytes(6, "little"))
    with pytest.raises(MalformedHeaderError):
        read_stream(path)


def test_csv_read(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("channel,timestamp_ps\n16,10\n26,10\n16,400\n")
    s = read_stream(path)
    assert len(s) == 3
    assert s.duration_ps == 400  # no sidecar: duration defaults to last tag
    assert list(s.channels) == [16, 26, 16]


def test_csv_bad_header(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("chan,ts\n1,2\n")
    with pytest.raises(MalformedHeaderError):
        read_stream(path)


def test_csv_read_with_sidecar_metadata(tmp_path):
    path = tmp_path / "tags.csv"
    path.write_text("channel,timestamp_ps\n16,10\n")
    (tmp_path / "tags.meta.json").write_text(
        '{"duration_ps": 5000, "seed": 9, "config_hash": "h"}'
    )
    s = read_stream(path)
    assert s.duration_ps == 5000
    assert s.metadata == {"seed": 9, "config_hash": "h"}


records_strategy = st.lists(
    st.tuples(st.integers(0, 200), st.integers(0, 10_000)), max_size=200
)


@given(records_strategy, st.integers(0, 2**40))
@settings(max_examples=60, deadline=None)
def test_round_trip_property(tmp_path_factory, pairs, seed):
    tmp = tmp_path_factory.mktemp("rt")
    ch = np.array([c for c, _ in pairs], dtype=np.uint16)
    ts = np.array([t for _, t in pairs], dtype=np.int64)
    s = TagStream.from_unsorted(ch, ts, 10_000, {"seed": seed, "config_hash": "h"})
    path = tmp / "s.vqtt"
    write_stream(s, path)
    assert read_stream(path) == s


@given(st.lists(records_strategy, min_size=1, max_size=4))
@settings(max_examples=60, deadline=None)
def test_merge_sorted_permutation(parts):
    streams = [
        TagStream.from_unsorted(
            np.array([c for c, _ in part], dtype=np.uint16),
            np.array([t for _, t in part], dtype=np.int64),
            10_000,
        )
        for part in parts
    ]
    merged = tagcore.merge_streams(streams)
    assert len(merged) == sum(len(s) for s in streams)
    tagcore._validate_order(merged.channels, merged.timestamps_ps)
    want = sorted((t, c) for s in streams for c, t in zip(s.channels, s.timestamps_ps))
    got = sorted(zip(merged.timestamps_ps.tolist(), merged.channels.tolist()))
    assert got == want


def test_merge_identity_and_commutativity():
    a = make_stream([(16, 5), (16, 80)], duration_ps=100)
    b = make_stream([(26, 30)], duration_ps=100)
    empty = TagStream([], [], 100)
    assert np.array_equal(merge_streams([a, empty]).timestamps_ps, a.timestamps_ps)
    ab = merge_streams([a, b])
    ba = merge_streams([b, a])
    assert np.array_equal(ab.timestamps_ps, ba.timestamps_ps)
    assert np.array_equal(ab.channels, ba.channels)
    assert len(ab) == 3


def test_merge_rejects_mismatched_durations():
    a = make_stream([(16, 5)], duration_ps=100)
    b = make_stream([(26, 5)], duration_ps=200)
    with pytest.raises(ValueError):
        merge_streams([a, b])
