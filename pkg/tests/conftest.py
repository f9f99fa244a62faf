import pytest

CRITERIA = {
    1: "equilibrium gap closed form vs numerical argmax",
    2: "backprop vs finite differences on the shipped architectures",
    3: "homography suite",
    4: "baseline grid reproduction",
    5: "trained policy headline and smoke profile",
    6: "untrained policy control",
    7: "edge-case matrix",
    8: "perception calibration",
    9: "determinism of train, eval and calibrate",
    10: "module property suites",
}

_outcomes: dict[int, list[tuple[str, str, str]]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(n): acceptance criterion number exercised by the test")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    if rep.when == "call" or (rep.when == "setup" and not rep.passed):
        if hasattr(rep, "wasxfail"):
            status = "FAIL"
        elif rep.passed:
            status = "PASS"
        elif rep.skipped:
            status = "SKIP"
        else:
            status = "FAIL"
        detail = "; ".join(str(v) for k, v in rep.user_properties if k == "detail")
        _outcomes.setdefault(marker.args[0], []).append((item.name, status, detail))


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for n in sorted(_outcomes):
        rows = _outcomes[n]
        status = "PASS" if all(s == "PASS" for _, s, _ in rows) else "FAIL"
        details = " | ".join(d for _, _, d in rows if d)
        tr.write_line(f"criterion {n:2d} {status}: {CRITERIA.get(n, '')}" + (f" [{details}]" if details else ""))
        for name, s, _ in rows:
            if s != "PASS":
                tr.write_line(f"    {s} {name}")
