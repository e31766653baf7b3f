import pytest

_RESULTS: list[tuple[str, bool, str]] = []


class CriterionRecorder:
    def __init__(self, label):
        self.label = label

    def check(self, ok, detail=""):
        _RESULTS.append((self.label, bool(ok), detail))
        line = f"{self.label}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        assert ok, line


@pytest.fixture
def criterion(request):
    marker = request.node.get_closest_marker("criterion")
    return CriterionRecorder(marker.args[0] if marker else request.node.name)


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(label): acceptance criterion reported in the summary")


def pytest_terminal_summary(terminalreporter):
    if not _RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in sorted(_RESULTS, key=lambda r: r[0]):
        terminalreporter.write_line(f"{label}: {'PASS' if ok else 'FAIL'}  {detail}")
