import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

_ACCEPTANCE: dict[int, dict] = {}


@pytest.fixture
def acceptance_detail(request):
    """Let an acceptance test attach a short measured value to its summary line."""
    details = []
    request.node.user_properties.append(("acceptance_detail", details))
    return details.append


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None:
        return
    number, title = marker.args
    entry = _ACCEPTANCE.setdefault(number, {"title": title, "status": "PASS", "detail": []})
    if report.skipped and call.when in ("setup", "call"):
        entry["status"] = "SKIP"
        entry["detail"].append(str(report.longrepr[-1]) if isinstance(report.longrepr, tuple) else "")
    elif report.failed:
        entry["status"] = "FAIL"
    if call.when == "call":
        for key, vals in item.user_properties:
            if key == "acceptance_detail":
                entry["detail"].extend(vals)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        e = _ACCEPTANCE[number]
        detail = "; ".join(d for d in e["detail"] if d)
        line = f"criterion {number:2d} {e['status']:4s} {e['title']}"
        terminalreporter.write_line(line + (f" ({detail})" if detail else ""))
