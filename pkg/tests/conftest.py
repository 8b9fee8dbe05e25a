import os

from hypothesis import settings, HealthCheck

settings.register_profile("default", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: _key(s)):
            terminalreporter.write_line(line)


def _key(line):
    tag = line.split("]")[0].strip("[").split()[-1]
    num = "".join(ch for ch in tag if ch.isdigit())
    return (int(num or 0), tag)
