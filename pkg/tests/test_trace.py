"""Trace record formatting and the running-thread reconstruction."""

import pytest

from rtksim.errors import ConsistencyError
from rtksim.trace import (
    CSV_HEADER,
    CsvFileSink,
    ListSink,
    TraceRecord,
    format_mj,
    parse_mj,
    records_to_csv,
    running_vector,
)


def work(start, end, tid, label="crunch", uj=0, event="CONTINUE_RUN"):
    return TraceRecord(start, end, tid, f"T{tid}", "TASK", label,
                       end - start, uj, event)


def ctl(tick, tid, label):
    return TraceRecord(tick, tick, tid, f"T{tid}", "TASK", label, 0, 0, "")


class TestEnergyFormatting:
    # microjoules in, millijoule strings out, trailing zeros trimmed
    @pytest.mark.parametrize("uj,text", [
        (0, "0"),
        (1, "0.001"),
        (50, "0.05"),
        (1000, "1"),
        (12345, "12.345"),
        (2000000, "2000"),
    ])
    def test_format(self, uj, text):
        assert format_mj(uj) == text

    @pytest.mark.parametrize("uj", [0, 1, 7, 999, 1000, 123456789])
    def test_round_trip(self, uj):
        assert parse_mj(format_mj(uj)) == uj


def test_csv_row_shape():
    r = work(3, 7, 1, uj=2500, event="STARTUP")
    assert r.csv_row() == "3,7,1,T1,TASK,crunch,4,2.5,STARTUP"
    assert CSV_HEADER == ("tick_start,tick_end,thread_id,thread_name,"
                          "context_kind,label,etm_ticks,eem_mJ,event_kind")


def test_control_rows_are_zero_width():
    r = ctl(5, 2, "DISPATCH")
    assert r.is_control
    assert r.tick_start == r.tick_end
    assert not work(0, 1, 1).is_control


def test_records_to_csv_deterministic():
    rows = [work(0, 2, 1), ctl(2, 1, "BLOCK"), work(2, 3, 2)]
    text = records_to_csv(rows)
    assert text.startswith(CSV_HEADER + "\n")
    assert text == records_to_csv(rows)
    assert text.endswith("\n")


def test_running_vector_reconstruction():
    rows = [work(0, 2, 1), work(2, 5, 2), work(6, 7, 1)]
    assert running_vector(rows, 7) == [1, 1, 2, 2, 2, None, 1]


def test_running_vector_ignores_control_rows():
    rows = [ctl(0, 1, "DISPATCH"), work(0, 1, 1), ctl(1, 1, "EXIT")]
    assert running_vector(rows, 1) == [1]


def test_running_vector_rejects_overlap():
    rows = [work(0, 3, 1), work(2, 4, 2)]
    with pytest.raises(ConsistencyError):
        running_vector(rows, 4)


def test_list_sink_collects_in_order():
    sink = ListSink()
    rows = [work(0, 1, 1), work(1, 2, 2)]
    for r in rows:
        sink.record(r)
    sink.close()
    assert sink.records == rows


def test_csv_file_sink(tmp_path):
    path = tmp_path / "out.csv"
    sink = CsvFileSink(path)
    sink.record(work(0, 1, 1, uj=1))
    sink.close()
    data = path.read_text()
    assert data == CSV_HEADER + "\n" + "0,1,1,T1,TASK,crunch,1,0.001,CONTINUE_RUN\n"
