import sys
sys.path.insert(0, "src")
sys.path.insert(0, "tests")

import yaml
from oracle import RefSim, generate_spec
from rtksim.scenario import parse_scenario_text, build_kernel
from rtksim.trace import ListSink, running_vector


def stmt_to_yaml(op):
    k = op[0]
    if k == "compute":
        return {"compute": op[1]}
    if k == "sleep":
        raw = {"call": "sleep"}
        if op[1] is not None:
            raw["timeout"] = op[1]
        return raw
    if k == "delay":
        return {"call": "delay", "ticks": op[1]}
    if k == "wakeup":
        return {"call": "wakeup", "task": op[1]}
    if k == "sem_wait":
        raw = {"call": "sem_wait", "sem": op[1], "count": op[2]}
        if op[3] is not None:
            raw["timeout"] = op[3]
        return raw
    if k == "sem_signal":
        return {"call": "sem_signal", "sem": op[1], "count": op[2]}
    if k == "loop":
        return {"loop": "forever" if op[1] is None else True,
                **({} if op[1] is None else {"count": op[1]}),
                "body": [stmt_to_yaml(s) for s in op[2]]}
    raise AssertionError(op)


def spec_to_yaml(spec):
    raw = {
        "name": f"rnd{spec['seed']}",
        "run_ticks": spec["run_ticks"],
        "on_deadlock": "report",
        "svc_cost": {"etm": spec["svc_etm"], "eem": spec["svc_eem"] / 1000},
        "annotations": {
            lbl: {"etm": etm, "eem": eem / 1000}
            for lbl, (etm, eem) in spec["annotations"].items()
        },
        "tasks": [
            {"id": t["id"], "name": t["name"], "priority": t["priority"],
             "behavior": [stmt_to_yaml(s) for s in t["program"]]}
            for t in spec["tasks"]
        ],
    }
    handlers = []
    lines = set()
    for h in spec["handlers"]:
        entry = {"id": h["id"], "name": h["name"], "kind": h["kind"]}
        if h["kind"] == "isr":
            entry["device"] = "ctl"
            entry["line"] = h["line"]
            lines.add(h["line"])
        elif h["kind"] == "cyclic":
            entry["period"] = h["period"]
            entry["phase"] = h["phase"]
        else:
            entry["offset"] = h["offset"]
        entry["behavior"] = [stmt_to_yaml(s) for s in h["program"]]
        handlers.append(entry)
    if handlers:
        raw["handlers"] = handlers
    if lines:
        raw["devices"] = [{"name": "ctl", "kind": "intc",
                           "lines": max(lines) + 1}]
    if spec["semaphores"]:
        raw["objects"] = {"semaphores": [dict(s) for s in spec["semaphores"]]}
    if spec["stimuli"]:
        raw["stimuli"] = [{"tick": t, "kind": "irq", "device": "ctl",
                           "line": line} for t, line in spec["stimuli"]]
    return yaml.safe_dump(raw, sort_keys=False)


def run_engine(spec):
    text = spec_to_yaml(spec)
    scn = parse_scenario_text(text, filename=f"rnd{spec['seed']}")
    k = build_kernel(scn)
    sink = ListSink()
    k.attach_sinks(trace_sink=sink, report_sink=None)
    k.boot()
    k.run(spec["run_ticks"])
    k.finish()
    vec = running_vector(sink.records, spec["run_ticks"])
    totals = {th.id: (th.token.cet, th.token.cee_uj)
              for th in k.engine.threads()}
    return vec, totals


def main(n):
    bad = 0
    for seed in range(n):
        spec = generate_spec(seed)
        evec, etot = run_engine(spec)
        rvec, rtot = RefSim(spec).run()
        if evec != rvec or etot != rtot:
            bad += 1
            print(f"seed {seed}: MISMATCH")
            if evec != rvec:
                for i, (a, b) in enumerate(zip(evec, rvec)):
                    if a != b:
                        print(f"  first vector diff at tick {i}: engine={a} oracle={b}")
                        lo = max(0, i - 4)
                        print(f"  engine[{lo}:{i+4}] = {evec[lo:i+4]}")
                        print(f"  oracle[{lo}:{i+4}] = {rvec[lo:i+4]}")
                        break
            if etot != rtot:
                for tid in sorted(etot):
                    if etot.get(tid) != rtot.get(tid):
                        print(f"  totals thread {tid}: engine={etot.get(tid)} oracle={rtot.get(tid)}")
            if bad >= 3:
                return
    print(f"{n} seeds, {bad} mismatches")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 100)
