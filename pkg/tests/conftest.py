import pytest

from flagifs.cli import read_config
from flagifs.ifs import ifs_from_dict


def bundled(name):
    doc, text, fmt, _ = read_config(name)
    return ifs_from_dict(doc, text, fmt)


@pytest.fixture(scope="session")
def linear_d2():
    return bundled("linear_d2")


@pytest.fixture(scope="session")
def bimaneuver_d2():
    return bundled("bimaneuver_d2")


@pytest.fixture(scope="session")
def linear_cert(linear_d2):
    from flagifs.maneuver import certify_maneuverability

    return certify_maneuverability(linear_d2)


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
