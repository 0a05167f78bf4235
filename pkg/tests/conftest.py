import numpy as np
import pytest

from rafm.datasets import PIV_NX, PIV_NY, write_davis_frame
from rafm.numerics import Prng


def _smooth_field(seed):
    # low-order polynomial velocity so vorticity has a closed form
    c = Prng(seed).normal(6)
    y, x = np.mgrid[0:PIV_NY, 0:PIV_NX].astype(float)
    vx = c[0] + c[1] * y / PIV_NY + c[2] * (x / PIV_NX) ** 2
    vy = c[3] + c[4] * x / PIV_NX + c[5] * (y / PIV_NY) ** 2
    return vx, vy


@pytest.fixture(scope="session")
def piv_dir(tmp_path_factory):
    """Three valid DaVis frames plus one frame per rejection rule."""
    root = tmp_path_factory.mktemp("piv")
    for i in range(3):
        write_davis_frame(root / f"Serie_{i:05d}.txt", *_smooth_field(i))
    vx, vy = _smooth_field(10)
    write_davis_frame(root / "Serie_00003.txt", vx, vy, nan_at=(5, 7))
    write_davis_frame(root / "Serie_00004.txt", vx, vy, drop_last=True)
    (root / "Serie_00005.txt").write_text("x;y;Vx;Vy\nnot;a;number;here\n")
    return root


_CRITERIA = pytest.StashKey[dict]()


@pytest.fixture
def criterion(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        request.config.stash.setdefault(_CRITERIA, {})[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_CRITERIA, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for number in sorted(lines):
            terminalreporter.write_line(lines[number])
