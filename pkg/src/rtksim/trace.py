"""Trace records and sinks.

A run produces a flat stream of TraceRecord rows.  Segment rows cover a
half-open tick interval [tick_start, tick_end) during which exactly one
activity held the CPU; control rows are zero-width and mark scheduling
boundaries (dispatch, preemption, handler entry/return, critical
sections, blocking, exit).

Energy is carried internally as integer micro-joules so accounting is
exact; the CSV renders milli-joules with trailing zeros trimmed.
"""

from __future__ import annotations

import io
from dataclasses import dataclass

CSV_HEADER = "tick_start,tick_end,thread_id,thread_name,context_kind,label,etm_ticks,eem_mJ,event_kind"

# labels used by zero-width control rows
CTL_DISPATCH = "DISPATCH"
CTL_PREEMPT = "PREEMPT"
CTL_BLOCK = "BLOCK"
CTL_EXIT = "EXIT"
CTL_INT_ENTER = "INT_ENTER"
CTL_INT_RETURN = "INT_RETURN"
CTL_CRIT_ENTER = "CRIT_ENTER"
CTL_CRIT_EXIT = "CRIT_EXIT"

CONTROL_LABELS = frozenset({
    CTL_DISPATCH, CTL_PREEMPT, CTL_BLOCK, CTL_EXIT,
    CTL_INT_ENTER, CTL_INT_RETURN, CTL_CRIT_ENTER, CTL_CRIT_EXIT,
})


def format_mj(uj: int) -> str:
    """Render integer micro-joules as a milli-joule decimal string."""
    sign = "-" if uj < 0 else ""
    uj = abs(uj)
    whole, frac = divmod(uj, 1000)
    if frac == 0:
        return f"{sign}{whole}"
    return f"{sign}{whole}.{frac:03d}".rstrip("0")


def parse_mj(text) -> int:
    """Parse a milli-joule value (int, float or string) to micro-joules.

    Rejects anything finer than micro-joule resolution.
    """
    from decimal import Decimal, InvalidOperation

    try:
        d = Decimal(str(text))
    except InvalidOperation:
        raise ValueError(f"bad energy value: {text!r}") from None
    scaled = d * 1000
    if scaled != scaled.to_integral_value():
        raise ValueError(f"energy {text!r} finer than micro-joule resolution")
    return int(scaled)


@dataclass(frozen=True)
class TraceRecord:
    tick_start: int
    tick_end: int
    thread_id: int
    thread_name: str
    context_kind: str
    label: str
    etm_ticks: int
    eem_uj: int
    event_kind: str

    @property
    def is_control(self) -> bool:
        return self.label in CONTROL_LABELS and self.etm_ticks == 0

    def csv_row(self) -> str:
        return (
            f"{self.tick_start},{self.tick_end},{self.thread_id},{self.thread_name},"
            f"{self.context_kind},{self.label},{self.etm_ticks},{format_mj(self.eem_uj)},"
            f"{self.event_kind}"
        )


class NullSink:
    def record(self, rec: TraceRecord) -> None:
        pass

    def close(self) -> None:
        pass


class ListSink:
    def __init__(self):
        self.records: list[TraceRecord] = []

    def record(self, rec: TraceRecord) -> None:
        self.records.append(rec)

    def close(self) -> None:
        pass


class CsvFileSink:
    """Streams records to a CSV file as they are emitted."""

    def __init__(self, path):
        self._fh: io.TextIOBase = open(path, "w", newline="\n")
        self._fh.write(CSV_HEADER + "\n")

    def record(self, rec: TraceRecord) -> None:
        self._fh.write(rec.csv_row() + "\n")

    def close(self) -> None:
        if not self._fh.closed:
            self._fh.close()


def records_to_csv(records) -> str:
    out = [CSV_HEADER]
    out.extend(r.csv_row() for r in records)
    return "\n".join(out) + "\n"


def running_vector(records, length: int) -> list[int | None]:
    """Per-tick thread assignment derived purely from segment records.

    Raises ConsistencyError if two segments claim the same tick; ticks
    nobody claims stay None.
    """
    from .errors import ConsistencyError

    vec: list[int | None] = [None] * length
    for r in records:
        if r.tick_end <= r.tick_start:
            continue
        for t in range(r.tick_start, min(r.tick_end, length)):
            if vec[t] is not None and vec[t] != r.thread_id:
                raise ConsistencyError(
                    f"tick {t} claimed by threads {vec[t]} and {r.thread_id}"
                )
            vec[t] = r.thread_id
    return vec
