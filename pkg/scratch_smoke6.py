import sys
sys.path.insert(0, "src")
from rtksim.scenario import load_scenario, build_kernel
from rtksim.trace import ListSink
from rtksim.gantt import render_text_gantt, render_svg_gantt

scn = load_scenario("src/rtksim/scenarios/demo.yaml")
k = build_kernel(scn)
sink = ListSink()
k.attach_sinks(trace_sink=sink, report_sink=None)
k.boot()
k.run(60)
k.finish()

txt = render_text_gantt(sink.records, 60)
print(txt)
svg = render_svg_gantt(sink.records, 60)
print("svg bytes:", len(svg))
print(svg[:400])
# determinism
txt2 = render_text_gantt(sink.records, 60)
assert txt == txt2
with open("/tmp/demo_gantt.svg", "w") as f:
    f.write(svg)
import xml.dom.minidom
xml.dom.minidom.parseString(svg)
print("svg parses OK")
