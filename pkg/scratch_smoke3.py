"""Scratch: end-to-end kernel run with services, cyclic handler, sleep."""
import sys
sys.path.insert(0, "src")

from rtksim.engine import Annotation
from rtksim.kernel import Kernel
from rtksim.trace import ListSink, records_to_csv


def producer(tc):
    # signals the consumer every 4 ticks of work
    for _ in range(3):
        yield from tc.api.wait(Annotation("produce", 4, 400))
        yield from tc.kernel.sem_signal(tc.api, 1)
        tc.api.mark_cycle()


def consumer(tc):
    while True:
        res = yield from tc.kernel.sem_wait(tc.api, 1)
        assert res.ok
        yield from tc.api.wait(Annotation("consume", 2, 100))
        tc.api.mark_cycle()


def napper(tc):
    res = yield from tc.kernel.sleep(tc.api, timeout=8)
    print("napper first sleep:", res.code)
    res = yield from tc.kernel.sleep(tc.api, timeout=50)
    print("napper second sleep:", res.code)


def blinker(tc):
    yield from tc.api.wait(Annotation("blink", 1, 10))


k = Kernel(abort_on_deadlock=False)
k.declare_task(1, "PRODUCER", 6, producer)
k.declare_task(2, "CONSUMER", 4, consumer)
k.declare_task(3, "NAPPER", 2, napper)
k.declare_cyclic(5, "BLINK", 10, blinker, phase=5)
k.declare_semaphore(1, 0)
sink = ListSink()
k.attach_sinks(trace_sink=sink)
k.boot()
k.run(40)
k.finish()
print(records_to_csv(sink.records))
for th in k.engine.threads():
    print(th.name, th.state.value, "cet", th.token.cet, "cee", th.token.cee_uj,
          "cycles", th.token.cycles, th.token.firing_counts)
print("deadlock report:", k.deadlock_report)
total = sum(th.token.cet for th in k.engine.threads())
print("sum cet:", total)
