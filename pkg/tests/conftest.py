import numpy as np
import pytest
import torch

from playact.datamodel import ClipTags, VideoClip


def make_clip(seconds=60.0, fps=31.25, size=(16, 12), clip_id="c0", tags=(1, 0)):
    """Clip whose frame i is a constant image of value i % 256."""
    n = int(round(seconds * fps))
    h, w = size
    frames = [np.full((h, w, 3), i % 256, np.uint8) for i in range(n)]
    audio = np.zeros(int(round(n / fps * 16000)), np.float32)
    return VideoClip(clip_id, frames, fps, audio, ClipTags(tags))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(autouse=True)
def _torch_seed():
    torch.manual_seed(0)


# one PASS/FAIL line per acceptance criterion, printed after the run
_criteria = {}


def pytest_runtest_logreport(report):
    name = report.nodeid.rsplit("::", 1)[-1]
    if "test_acceptance.py" not in report.nodeid or not name.startswith("test_criterion_"):
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        detail = dict(report.user_properties).get("detail", "")
        _criteria[name] = ("PASS" if report.outcome == "passed" else "FAIL", detail)


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_criteria, key=lambda n: int(n.split("_")[2])):
        status, detail = _criteria[name]
        number = name.split("_")[2]
        title = " ".join(name.split("_")[3:])
        line = f"criterion {number} ({title}): {status}"
        terminalreporter.write_line(line + (f"  [{detail}]" if detail else ""))
