import re

import numpy as np
import pytest

from tabletop.layout import TableSpec, make_scene
from tabletop.physics import GeometryLibrary, SceneInstance


@pytest.fixture(scope="session")
def sdf_cache(request):
    # persists across runs in .pytest_cache so grids are built once
    return request.config.cache.mkdir("tabletop_sdf")


@pytest.fixture(scope="session")
def library(sdf_cache):
    return GeometryLibrary(cache_dir=sdf_cache)


@pytest.fixture(scope="session")
def dense_library(sdf_cache):
    """Dense collision sampling so minima sit close to the true surface."""
    return GeometryLibrary(n_collision=6000, n_bottom=512, cache_dir=sdf_cache)


def box(oid, size, position, yaw=0.0, description="box", asset="box_small", role="task"):
    return {"id": oid, "description": description, "asset_id": asset, "size": list(size),
            "position": list(position), "yaw": yaw, "role": role}


def scene_of(*objects, table=None, instruction=""):
    return make_scene(list(objects), table or TableSpec(1.0, 0.6), instruction)


def instance(lib, *objects, table=None):
    return SceneInstance.build(scene_of(*objects, table=table), lib)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one pass/fail line per acceptance criterion at the end of the run
_CRITERIA: dict[int, tuple[str, str]] = {}
_CRITERION = re.compile(r"test_criterion_(\d+)")


def pytest_runtest_logreport(report):
    m = _CRITERION.search(report.nodeid)
    if not m or report.when == "teardown" or (report.when == "setup" and report.passed):
        return
    detail = "; ".join(str(v) for k, v in report.user_properties if k == "detail")
    if report.skipped:
        status = "SKIP"
    else:
        status = "PASS" if report.passed else "FAIL"
    _CRITERIA[int(m.group(1))] = (status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_CRITERIA):
        status, detail = _CRITERIA[k]
        terminalreporter.write_line(f"criterion {k}: {status}  {detail}".rstrip())
