import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

# Acceptance verdicts, filled by tests/test_acceptance.py and printed after the run.
VERDICTS: list[tuple[int, str, str]] = []


def pytest_terminal_summary(terminalreporter):
    if not VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, status, text in sorted(VERDICTS):
        terminalreporter.write_line(f"[{status}] criterion {n}: {text}")
