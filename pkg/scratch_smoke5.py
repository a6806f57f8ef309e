"""DS listing smoke: dump, round-trip, byte anchors."""
import sys
sys.path.insert(0, "src")

from rtksim.scenario import load_scenario, build_kernel
from rtksim.debugds import take_snapshot, dump_listing, parse_listing, ref_task, ref_object

scn = load_scenario("src/rtksim/scenarios/demo.yaml")
kern = build_kernel(scn)
kern.boot()
kern.run(1000)

snap = take_snapshot(kern)
text = dump_listing(snap)
print(text)
back = parse_listing(text)
print("round-trip equal:", back == snap)

# anchors
for line in text.splitlines():
    if "Cumulative System Level Run Time" in line:
        print(repr(line))
        break

rt = ref_task(kern, 2)
print("ref_task(2):", rt.state, rt.sys_run, rt.user_run, rt.max_run)
ro = ref_object(kern, "flag", 1)
print("ref_object(flag,1):", ro.stats)
try:
    ref_task(kern, 99)
except Exception as e:
    print("ref_task(99):", type(e).__name__, e)
kern.finish()
