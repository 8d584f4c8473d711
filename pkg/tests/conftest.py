import re

_CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_LABEL = {"passed": "PASS", "failed": "FAIL", "error": "FAIL", "skipped": "SKIP"}


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    """One printed verdict line per numbered acceptance criterion."""
    verdicts = {}
    for status, label in _LABEL.items():
        for report in terminalreporter.stats.get(status, []):
            m = _CRITERION.search(getattr(report, "nodeid", ""))
            if m is None:
                continue
            num, slug = int(m.group(1)), m.group(2)
            if label == "FAIL" or num not in verdicts:
                verdicts[num] = (slug, label)
    if not verdicts:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(verdicts):
        slug, label = verdicts[num]
        terminalreporter.write_line(
            f"criterion {num} ({slug.replace('_', ' ')}): {label}")
