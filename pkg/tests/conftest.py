import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE_FILE = "test_acceptance.py"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One pass/fail line per acceptance criterion at the end of the run."""
    lines = []
    for outcome, flag in (("passed", "PASS"), ("failed", "FAIL"), ("error", "FAIL")):
        for rep in terminalreporter.stats.get(outcome, []):
            if getattr(rep, "when", "call") != "call" and outcome == "passed":
                continue
            if ACCEPTANCE_FILE not in rep.nodeid:
                continue
            name = rep.nodeid.split("::")[-1].removeprefix("test_").replace("_", " ")
            lines.append((name, flag))
    if lines:
        terminalreporter.section("acceptance criteria")
        for name, flag in sorted(set(lines)):
            terminalreporter.write_line(f"[{flag}] {name}")
