"""Scenario pipeline smoke: demo.yaml end to end."""
import sys
sys.path.insert(0, "src")

from rtksim.scenario import (
    load_scenario, parse_scenario_text, scenario_to_yaml, build_kernel,
)
from rtksim.trace import ListSink, running_vector

scn = load_scenario("src/rtksim/scenarios/demo.yaml")
print("tasks:", [(t.task_id, t.name, t.priority, t.idle) for t in scn.tasks])
print("handlers:", [(h.thread_id, h.name, h.kind) for h in scn.handlers])
print("objects:", [(o.kind, o.obj_id, o.params) for o in scn.objects])
print("devices:", [(d.name, d.kind, len(d.accesses), d.options) for d in scn.devices])
print("stimuli:", len(scn.stimuli), "battery_uj:", scn.battery_uj)

# round trip
text2 = scenario_to_yaml(scn)
scn2 = parse_scenario_text(text2, "<roundtrip>")
print("round-trip equal:", scn2 == scn)

kern = build_kernel(scn)
sink = ListSink()
kern.attach_sinks(trace_sink=sink)
kern.boot()
kern.run(scn.run_ticks)
kern.finish()

eng = kern.engine
h1 = eng.thread(5)
h2 = eng.thread(6)
print("H1 cycles:", h1.token.cycles, "cet:", h1.token.cet)
print("H2 cycles:", h2.token.cycles, "cet:", h2.token.cet)

int_enters_h1 = sum(1 for r in sink.records
                    if r.label == "INT_ENTER" and r.thread_id == 5)
int_enters_h2 = [r.tick_start for r in sink.records
                 if r.label == "INT_ENTER" and r.thread_id == 6]
print("H1 INT_ENTER count:", int_enters_h1)
print("H2 INT_ENTER ticks:", int_enters_h2)

total_cet = sum(eng.thread(t).token.cet for t in (1, 2, 3, 4, 5, 6))
print("sum cet:", total_cet)
vec = running_vector(sink.records, scn.run_ticks)
print("vector covered:", all(v is not None for v in vec))

for tid in (1, 2, 3, 4):
    th = eng.thread(tid)
    print(f"{th.name}: cet={th.token.cet} cee_uj={th.token.cee_uj} "
          f"cycles={th.token.cycles} state={th.state.name}")

print("device log rows:", len(kern.devices.log))
print("first log rows:", [r.csv_row() for r in kern.devices.log[:3]])
print("lcd fifo depth:", len(kern.devices.get("lcd").out_fifo))
print("keypad latch:", kern.devices.get("keypad").in_latch)
print("deadlock:", kern.deadlock_report)

# energy cross-check: every record's uj sums to total cee
total_cee = sum(eng.thread(t).token.cee_uj for t in (1, 2, 3, 4, 5, 6))
print("total cee_uj:", total_cee)
