import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_cfg():
    from qrestore.config import ModelConfig, TNetConfig

    return ModelConfig(tnet=TNetConfig(widths=(2, 4, 4, 8), heads=(1, 1, 2, 2)), dnet_width=2, fnet_width=2)


# one summary line per acceptance criterion, printed after the run
_ACCEPTANCE: dict[str, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.split("::")[-1]
    if not name.startswith("test_A") or report.when != "call" and not (report.when == "setup" and report.failed):
        return
    crit = name[5:].split("_")[0]
    detail = dict(report.user_properties).get("detail", "")
    _ACCEPTANCE[crit] = ("PASS" if report.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for crit in sorted(_ACCEPTANCE, key=lambda c: int(c[1:])):
        status, detail = _ACCEPTANCE[crit]
        terminalreporter.write_line(f"{crit} {status}  {detail}")
