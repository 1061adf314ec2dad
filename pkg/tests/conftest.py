"""Shared pytest configuration: acceptance pass/fail announcements."""


def pytest_runtest_logreport(report):
    """Emit one visible PASS/FAIL line per acceptance criterion."""
    if report.when != "call":
        return
    test = report.nodeid.split("::")[-1]
    if not test.startswith("test_criterion_"):
        return
    tag = test.removeprefix("test_criterion_").replace("_", "-")
    outcome = "PASS" if report.passed else "FAIL"
    print(f"\nACCEPTANCE {tag}: {outcome} ({report.duration:.1f}s)")
