"""Scratch: drive the raw engine by hand, check the trace by eye."""
import sys
sys.path.insert(0, "src")

from rtksim.engine import (
    Annotation, ContextKind, Engine, EventKind, SimThread, ThreadKind,
)
from rtksim.trace import ListSink, records_to_csv


def t1_body(api):
    ev = yield from api.wait_run()
    assert ev is EventKind.STARTUP, ev
    ev = yield from api.wait(Annotation("chunk_a", 6, 600))
    print("T1 chunk_a finished by", ev)
    ev = yield from api.wait(Annotation("chunk_b", 2, 0))
    print("T1 chunk_b finished by", ev)


def t2_body(api):
    ev = yield from api.wait_run()
    assert ev is EventKind.STARTUP
    ev = yield from api.wait(Annotation("burst", 3, 299))
    print("T2 burst finished by", ev)


def idle_body(api):
    yield from api.wait_run()
    while True:
        yield from api.wait(Annotation("idle", 1, 0), ContextKind.IDLE)


eng = Engine(expected_count=3)
t1 = SimThread(1, "T1", ThreadKind.TASK, 5, t1_body)
t2 = SimThread(2, "T2", ThreadKind.TASK, 3, t2_body)
idl = SimThread(3, "IDLE", ThreadKind.TASK, Engine.IDLE_PRIORITY, idle_body, is_idle=True)
for th in (t1, t2, idl):
    eng.register(th)
eng.all_created()
sink = ListSink()
eng.attach_sinks(trace_sink=sink)
eng.start_thread(1)
eng.start_thread(3)


def hook(now):
    if now == 4:
        eng.start_thread(2)   # outranks T1 -> preempts mid-segment


eng.on_tick = hook
eng.run_ticks(15)
eng.finish()
print(records_to_csv(sink.records))
print("T1 token:", t1.token.cet, t1.token.cee_uj, t1.token.firing_counts)
print("T2 token:", t2.token.cet, t2.token.cee_uj, t2.token.firing_counts)
print("IDLE cet:", idl.token.cet)
