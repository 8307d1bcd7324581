import numpy as np
import pytest

from latefuse.geometry import BEVBox
from latefuse.noise import Detection, GTObject


def make_det(x=0.0, y=0.0, w=2.0, d=4.0, theta=0.0, *, source="s0", t=0, t_recv=None,
             gt_id=0, cls="car", sigma=(0.5, 0.5, 0.05, 0.2, 0.4)):
    return Detection(BEVBox(x, y, w, d, theta), source, t, t if t_recv is None else t_recv,
                     gt_id, cls, sigma)


def make_gt(gt_id=0, x=0.0, y=0.0, w=2.0, d=4.0, theta=0.0, cls="car"):
    return GTObject(gt_id, cls, BEVBox(x, y, w, d, theta), (0.0, 0.0))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
