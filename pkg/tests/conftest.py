import sys
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

sys.path.insert(0, str(Path(__file__).parent))

settings.register_profile(
    "repo",
    max_examples=40,
    deadline=None,
    derandomize=True,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("repo")


@pytest.fixture(scope="session")
def shaft_part():
    from softjig.shapes import TARGET_OBJECTS, shaft
    from softjig.stability import Part

    return Part(shaft(), TARGET_OBJECTS["g"].mass_g / 1000.0)


@pytest.fixture(scope="session")
def cube_part():
    from softjig.shapes import cube
    from softjig.stability import Part

    return Part(cube(40.0), 0.1)


def _sweep(part, cfg):
    from softjig.cavity import JigSpec
    from softjig.grasps import GripperSpec, generate_grasps
    from softjig.planner import sweep_depths

    gripper = GripperSpec()
    grasps = generate_grasps(part.mesh, gripper, cfg.mu_finger, cfg.grasp_samples, 0)
    return sweep_depths(part, cfg, gripper, JigSpec(), grasps)


@pytest.fixture(scope="session")
def shaft_sweep(shaft_part):
    """Default-config sweep (1..40 mm, 1 mm step) of the reference shaft."""
    from softjig.planner import PlannerConfig

    cfg = PlannerConfig()
    return cfg, _sweep(shaft_part, cfg)


@pytest.fixture(scope="session")
def cube_sweep(cube_part):
    from softjig.planner import PlannerConfig

    cfg = PlannerConfig()
    return cfg, _sweep(cube_part, cfg)


# -- acceptance summary --------------------------------------------------------

_ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("acceptance")
    if mark is None or rep.when == "teardown":
        return
    number, title = mark.args
    if rep.failed or (rep.when == "call"):
        status = "PASS" if rep.passed else "FAIL"
        if _ACCEPTANCE.get(number, ("", "PASS"))[1] == "PASS":
            _ACCEPTANCE[number] = (title, status)


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_ACCEPTANCE):
        title, status = _ACCEPTANCE[number]
        terminalreporter.write_line(f"{status} criterion {number:2d}: {title}")
