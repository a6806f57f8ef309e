"""Engine-level scheduling semantics, driven with hand-built thread bodies.

These tests bypass the kernel entirely: bodies are raw generators over
ThreadApi, so each scheduling rule can be pinned in isolation.  Expected
traces were worked out by hand on a tick grid before being frozen here.
"""

import pytest

from rtksim.engine import (
    Annotation,
    ContextKind,
    Engine,
    EventKind,
    SimThread,
    ThreadKind,
    ThreadState,
)
from rtksim.errors import (
    ConsistencyError,
    ProtocolError,
    SchedulerEmptyError,
    StateError,
)
from rtksim.trace import ListSink


def make_engine(threads, expected=None):
    eng = Engine(expected if expected is not None else len(threads))
    sink = ListSink()
    eng.attach_sinks(trace_sink=sink, report_sink=None)
    for th in threads:
        eng.register(th)
    eng.all_created()
    return eng, sink


def task(tid, name, prio, body, **kw):
    return SimThread(tid, name, ThreadKind.TASK, prio, body, **kw)


def isr(tid, name, body):
    return SimThread(tid, name, ThreadKind.ISR, 0, body)


def forever_idle(api):
    yield from api.wait_run()
    ann = Annotation("idle", 1, 0)
    while True:
        yield from api.wait(ann, ContextKind.IDLE)


def work_rows(sink):
    return [(r.tick_start, r.tick_end, r.thread_name, r.label)
            for r in sink.records if not r.is_control]


def control_rows(sink, label):
    return [(r.tick_start, r.thread_name)
            for r in sink.records if r.label == label]


def test_single_task_consumes_annotation():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("step", 3, 10))
        yield from api.exit()

    t = task(1, "A", 5, body)
    eng, sink = make_engine([t, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.run_ticks(5)
    eng.finish()
    # A takes ticks 0..2, idle picks up 3..4
    assert work_rows(sink) == [
        (0, 3, "A", "step"),
        (3, 4, "IDLE", "idle"),
        (4, 5, "IDLE", "idle"),
    ]
    assert t.token.cet == 3
    assert t.token.cee_uj == 10
    assert t.state is ThreadState.DORMANT


def test_energy_split_per_tick_with_remainder_on_last():
    # 10 uJ over 3 ticks: 3 + 3 + 4
    charges = []

    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("step", 3, 10))
        yield from api.exit()

    t = task(1, "A", 5, body)
    eng, _ = make_engine([t, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    for _ in range(3):
        eng.run_one_tick()
        charges.append(t.token.cee_uj)
    assert charges == [3, 6, 10]


def test_priority_preemption_and_resume():
    def low(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("lo", 6, 0))
        yield from api.exit()

    def high(api):
        yield from api.wait_run()
        ev = yield from api.wait_event()
        assert ev is EventKind.SLEEP_ARRIVAL
        yield from api.wait(Annotation("hi", 2, 0))
        yield from api.exit()

    lo_t = task(1, "LO", 8, low)
    hi_t = task(2, "HI", 2, high)
    eng, sink = make_engine(
        [lo_t, hi_t, task(3, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(2)
    eng.start_thread(1)
    eng.start_thread(3)
    eng.run_ticks(2)          # HI blocks at once, LO consumes [0,2)
    eng.release(2, EventKind.SLEEP_ARRIVAL)
    eng.run_ticks(6)
    eng.finish()
    assert work_rows(sink) == [
        (0, 2, "LO", "lo"),   # partial record closed by the preemption
        (2, 4, "HI", "hi"),
        (4, 8, "LO", "lo"),
    ]
    assert control_rows(sink, "PREEMPT") == [(2, "LO")]
    assert lo_t.token.cet == 6


def test_equal_priority_never_preempts():
    def sleeper(api):
        yield from api.wait_run()
        yield from api.wait_event()
        yield from api.wait(Annotation("b", 2, 0))
        yield from api.exit()

    def runner(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("a", 5, 0))
        yield from api.exit()

    b = task(1, "B", 5, sleeper)    # lower id: blocks before A gets the CPU
    a = task(2, "A", 5, runner)
    eng, sink = make_engine(
        [a, b, task(3, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.start_thread(3)
    eng.run_ticks(1)
    eng.release(1, EventKind.SLEEP_ARRIVAL)   # same priority: must wait
    eng.run_ticks(7)
    eng.finish()
    # A keeps the CPU through tick 5; B only then runs
    assert work_rows(sink)[0] == (0, 5, "A", "a")
    assert work_rows(sink)[1] == (5, 7, "B", "b")
    assert control_rows(sink, "PREEMPT") == []


def test_ready_tie_breaks_by_id_then_fifo_by_stamp():
    order = []

    def body(name):
        def gen(api):
            yield from api.wait_run()
            order.append(name)
            yield from api.wait(Annotation("w", 1, 0))
            yield from api.exit()
        return gen

    a = task(1, "A", 5, body("A"))
    b = task(2, "B", 5, body("B"))
    eng, _ = make_engine([a, b, task(3, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(2)       # same tick: id breaks the tie, not start order
    eng.start_thread(1)
    eng.start_thread(3)
    eng.run_ticks(2)
    assert order == ["A", "B"]


def test_interrupt_enters_at_gate_and_task_resumes_after():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("main", 4, 0))
        yield from api.exit()

    def handler_factory(api):
        while True:
            yield from api.await_activation()
            yield from api.wait(Annotation("isr", 2, 0), ContextKind.ISR)
            api.mark_cycle()
            yield from api.return_from_handler()

    t = task(1, "T", 5, body)
    h = isr(2, "H", handler_factory)
    eng, sink = make_engine(
        [t, h, task(3, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(3)
    eng.arm_handler(2)
    eng.run_ticks(1)
    eng.raise_interrupt(2)
    eng.run_ticks(6)
    eng.finish()
    assert work_rows(sink) == [
        (0, 1, "T", "main"),
        (1, 3, "H", "isr"),
        (3, 6, "T", "main"),
        (6, 7, "IDLE", "idle"),
    ]
    assert control_rows(sink, "INT_ENTER") == [(1, "H")]
    assert control_rows(sink, "INT_RETURN") == [(3, "H")]
    assert h.token.cycles == 1


def test_busy_handler_drops_activation():
    def handler_factory(api):
        while True:
            yield from api.await_activation()
            yield from api.wait(Annotation("isr", 3, 0), ContextKind.ISR)
            api.mark_cycle()
            yield from api.return_from_handler()

    h = isr(1, "H", handler_factory)
    eng, _ = make_engine([h, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(2)
    eng.arm_handler(1)
    assert eng.raise_interrupt(1) is True
    assert eng.raise_interrupt(1) is False    # already queued
    eng.run_ticks(1)
    assert eng.raise_interrupt(1) is False    # mid-activation
    eng.run_ticks(4)
    assert h.token.cycles == 1
    assert eng.raise_interrupt(1) is True     # parked again


def test_nested_interrupts_unwind_lifo():
    def handler(label, ticks):
        def factory(api):
            while True:
                yield from api.await_activation()
                yield from api.wait(Annotation(label, ticks, 0), ContextKind.ISR)
                api.mark_cycle()
                yield from api.return_from_handler()
        return factory

    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("main", 8, 0))
        yield from api.exit()

    t = task(1, "T", 5, body)
    h1 = isr(2, "H1", handler("one", 3))
    h2 = isr(3, "H2", handler("two", 1))
    eng, sink = make_engine(
        [t, h1, h2, task(4, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(4)
    eng.arm_handler(2)
    eng.arm_handler(3)
    eng.run_ticks(1)
    eng.raise_interrupt(2)
    eng.run_ticks(1)          # H1 runs [1,2)
    eng.raise_interrupt(3)    # interrupts H1
    eng.run_ticks(10)
    eng.finish()
    assert work_rows(sink) == [
        (0, 1, "T", "main"),
        (1, 2, "H1", "one"),
        (2, 3, "H2", "two"),   # nested: H2 runs to completion first
        (3, 5, "H1", "one"),   # H1 resumes directly, no dispatch
        (5, 12, "T", "main"),
    ]
    returns = control_rows(sink, "INT_RETURN")
    assert returns == [(3, "H2"), (5, "H1")]


def test_preempted_thread_keeps_ready_stamp():
    # C (stamp 0) is preempted at tick 2.  B (id 2 < C's id 3) was woken
    # at tick 1.  If the preemption re-stamped C to 2, B would win the
    # next dispatch (1 < 2).  With the original stamp kept, C wins.
    def sleeper(label):
        def gen(api):
            yield from api.wait_run()
            yield from api.wait_event()
            yield from api.wait(Annotation(label, 2, 0))
            yield from api.exit()
        return gen

    def spin(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("c", 4, 0))
        yield from api.exit()

    a = task(1, "A", 1, sleeper("a"))
    b = task(2, "B", 5, sleeper("b"))
    c = task(3, "C", 5, spin)
    eng, sink = make_engine(
        [a, b, c, task(4, "IDLE", 99, forever_idle, is_idle=True)])
    for tid in (1, 2, 3, 4):
        eng.start_thread(tid)
    eng.run_ticks(1)                            # A and B block; C runs [0,1)
    eng.release(2, EventKind.SLEEP_ARRIVAL)     # B ready, stamp 1, no preempt
    eng.run_ticks(1)                            # C runs [1,2)
    eng.release(1, EventKind.SLEEP_ARRIVAL)     # A outranks: preempts C
    eng.run_ticks(8)
    eng.finish()
    assert work_rows(sink) == [
        (0, 2, "C", "c"),
        (2, 4, "A", "a"),
        (4, 6, "C", "c"),      # original stamp 0 beats B's stamp 1
        (6, 8, "B", "b"),
        (8, 9, "IDLE", "idle"),
        (9, 10, "IDLE", "idle"),
    ]


def test_task_must_open_with_entry_gate():
    def body(api):
        yield from api.wait(Annotation("x", 1, 0))

    eng, _ = make_engine([task(1, "BAD", 5, body)])
    eng.start_thread(1)
    with pytest.raises(ProtocolError, match="entry gate"):
        eng.run_one_tick()


def test_empty_scheduler_is_an_error():
    def body(api):
        yield from api.wait_run()
        yield from api.exit()

    eng, _ = make_engine([task(1, "A", 5, body)])
    eng.start_thread(1)
    with pytest.raises(SchedulerEmptyError):
        eng.run_one_tick()


def test_zero_time_livelock_guard():
    def body(api):
        yield from api.wait_run()
        while True:
            yield from api.wait(Annotation("nop", 0, 0))

    # no sink attached: the default NullSink absorbs the record churn
    eng = Engine(1)
    eng.register(task(1, "SPIN", 5, body))
    eng.all_created()
    eng.start_thread(1)
    with pytest.raises(ConsistencyError, match="livelock"):
        eng.run_one_tick()


def test_zero_etm_segment_charges_full_energy_at_close():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("blip", 0, 77))
        yield from api.wait(Annotation("work", 1, 0))
        yield from api.exit()

    t = task(1, "A", 5, body)
    eng, sink = make_engine([t, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.run_ticks(2)
    eng.finish()
    blips = [r for r in sink.records if r.label == "blip"]
    assert len(blips) == 1
    assert (blips[0].tick_start, blips[0].tick_end) == (0, 0)
    assert blips[0].eem_uj == 77
    assert t.token.cet == 1
    assert t.token.cee_uj == 77


def test_finish_flushes_partial_record():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("long", 10, 40))
        yield from api.exit()

    t = task(1, "A", 5, body)
    eng, sink = make_engine([t, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.run_ticks(3)
    eng.finish()
    rows = work_rows(sink)
    assert rows == [(0, 3, "A", "long")]
    # 40 uJ over 10 ticks: 4 per tick, remainder only at completion
    assert t.token.cee_uj == 12


def test_illegal_state_transition_rejected():
    def body(api):
        yield from api.wait_run()
        yield from api.exit()

    eng, _ = make_engine([task(1, "A", 5, body)])
    eng.start_thread(1)
    with pytest.raises(StateError):
        eng.start_thread(1)


def test_finish_is_idempotent():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("w", 1, 0))
        yield from api.exit()

    eng, sink = make_engine(
        [task(1, "A", 5, body), task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.run_ticks(3)
    eng.finish()
    n = len(sink.records)
    eng.finish()   # second call must not emit anything
    assert len(sink.records) == n


def test_restart_preserves_accumulators():
    def body(api):
        yield from api.wait_run()
        yield from api.wait(Annotation("w", 2, 6))
        yield from api.exit()

    t = task(1, "A", 5, body)
    eng, _ = make_engine([t, task(2, "IDLE", 99, forever_idle, is_idle=True)])
    eng.start_thread(1)
    eng.start_thread(2)
    eng.run_ticks(3)
    assert t.state is ThreadState.DORMANT
    eng.start_thread(1)        # fresh generator, same token
    eng.run_ticks(3)
    assert t.token.cet == 4
    assert t.token.cee_uj == 12
