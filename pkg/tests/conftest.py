import math

import pytest

from wmlmc.level_stats import LevelMoments


def moments_from(sigmas, rhos, etas, sigma_coarse=None):
    """Level moments from plain lists; ``sigma_coarse[l]`` defaults to ``sigmas[l-1]``."""
    out = []
    for l, (s, e) in enumerate(zip(sigmas, etas)):
        if l == 0:
            out.append(LevelMoments(s, None, None, e, 0.0, 100, level=0))
        else:
            sc = sigmas[l - 1] if sigma_coarse is None else sigma_coarse[l]
            out.append(LevelMoments(s, sc, rhos[l], e, 0.0, 100, level=l))
    return out


@pytest.fixture
def two_level():
    mu = 1 / math.sqrt(2)
    return lambda rho: moments_from([1.0, 1.0], [None, rho], [1.0, 1.0 / mu])


# -- acceptance summary: one line per criterion --------------------------------

_ACCEPTANCE = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is None or rep.when not in ("setup", "call"):
        return
    if rep.when == "setup" and rep.passed:
        return
    detail = "; ".join(f"{k}={v}" for k, v in item.user_properties)
    _ACCEPTANCE[marker.args[0]] = ("PASS" if rep.passed else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_ACCEPTANCE):
        status, detail = _ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {status}  {detail}")
