"""Per-criterion PASS/FAIL summary for the acceptance suite.

Acceptance tests tag themselves with ``record_property("criterion", label)``
and a human-readable ``detail``; the terminal summary groups them so each
criterion gets exactly one line.
"""

from collections import OrderedDict


def pytest_terminal_summary(terminalreporter):
    stats = terminalreporter.stats
    groups = OrderedDict()
    for outcome in ("passed", "failed", "skipped", "error"):
        for rep in stats.get(outcome, []):
            props = dict(getattr(rep, "user_properties", []))
            if "criterion" not in props:
                continue
            if rep.when != "call" and not (outcome == "skipped" or outcome == "error"):
                continue
            groups.setdefault(props["criterion"], []).append((outcome, props.get("detail", rep.nodeid)))
    if not groups:
        return
    terminalreporter.section("acceptance criteria")

    def key(label):
        head = label.split()[0].lstrip("C")
        return (int(head) if head.isdigit() else 99, label)

    for label in sorted(groups, key=key):
        outcomes = [o for o, _ in groups[label]]
        if any(o in ("failed", "error") for o in outcomes):
            verdict = "FAIL"
        elif all(o == "skipped" for o in outcomes):
            verdict = "SKIP"
        else:
            verdict = "PASS"
        details = "; ".join(f"{d}{'' if o == 'passed' else ' [' + o + ']'}" for o, d in groups[label])
        terminalreporter.write_line(f"{verdict:4}  {label}: {details}")
