"""Scratch: handler nesting, busy-drop, critical-section deferral."""
import sys
sys.path.insert(0, "src")

from rtksim.engine import (
    Annotation, ContextKind, Engine, EventKind, SimThread, ThreadKind,
)
from rtksim.trace import ListSink, records_to_csv


def t1_body(api):
    yield from api.wait_run()
    yield from api.wait(Annotation("warm", 2, 0))
    api.begin_critical()
    yield from api.wait(Annotation("locked", 3, 0))
    api.end_critical()
    yield from api.wait(Annotation("tail", 6, 0))


def h1_body(api):
    while True:
        ev = yield from api.await_activation()
        yield from api.wait(Annotation("h1_work", 2, 20))
        yield from api.return_from_handler()


def h2_body(api):
    while True:
        ev = yield from api.await_activation()
        yield from api.wait(Annotation("h2_work", 1, 5))
        yield from api.return_from_handler()


def idle_body(api):
    yield from api.wait_run()
    while True:
        yield from api.wait(Annotation("idle", 1, 0), ContextKind.IDLE)


eng = Engine(expected_count=4)
t1 = SimThread(1, "T1", ThreadKind.TASK, 5, t1_body)
h1 = SimThread(2, "H1", ThreadKind.ISR, 1, h1_body)
h2 = SimThread(3, "H2", ThreadKind.ISR, 1, h2_body)
idl = SimThread(4, "IDLE", ThreadKind.TASK, Engine.IDLE_PRIORITY, idle_body, is_idle=True)
for th in (t1, h1, h2, idl):
    eng.register(th)
eng.all_created()
sink = ListSink()
eng.attach_sinks(trace_sink=sink)
eng.start_thread(1)
eng.start_thread(4)
eng.arm_handler(2)
eng.arm_handler(3)


def hook(now):
    if now == 1:
        # both raised at the same boundary: entry order 2 then 3,
        # so H2 (last entered) runs first, nested above H1
        eng.raise_interrupt(2)
        eng.raise_interrupt(3)
        assert eng.raise_interrupt(2) is False  # already queued -> dropped
    if now == 7:
        # T1 is mid-"locked" [6,9) holding the critical section:
        # the activation must defer until right after CRIT_EXIT at 9
        eng.raise_interrupt(3)


eng.on_tick = hook
eng.run_ticks(16)
eng.finish()
print(records_to_csv(sink.records))
print("crit depth at end:", eng.critical_depth())
for th in (t1, h1, h2, idl):
    print(th.name, "cet", th.token.cet, "cee", th.token.cee_uj, th.token.firing_counts)
