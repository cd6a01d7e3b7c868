import re

import numpy as np
import pytest

from tempmeta.dataio import Frame, GroundTruthFrame, GTInstance, Instance, Sequence
from tempmeta.geometry import FrameDims, PixelMask


def rect(dims, r0, c0, h, w):
    a = np.zeros(dims.shape, bool)
    a[max(r0, 0) : r0 + h, max(c0, 0) : c0 + w] = True
    return PixelMask.from_dense(a)


def make_sequence(dims, frames, gt=None, seq_id="seq"):
    """``frames``: list (per frame) of lists of (class, mask[, score])."""
    out = []
    for t, items in enumerate(frames, start=1):
        insts = []
        for k, item in enumerate(items, start=1):
            cls, mask = item[0], item[1]
            score = item[2] if len(item) > 2 else 0.9
            insts.append(Instance(k, cls, score, mask))
        out.append(Frame(t, dims, insts))
    gtf = None
    if gt is not None:
        gtf = [
            GroundTruthFrame(t, [GTInstance(tid, cls, m) for tid, cls, m in items])
            for t, items in enumerate(gt, start=1)
        ]
    return Sequence(seq_id, out, gtf)


@pytest.fixture
def dims():
    return FrameDims(60, 80)


# --- acceptance summary -------------------------------------------------------

_ACCEPTANCE: list[tuple[str, str, str]] = []


def pytest_runtest_logreport(report):
    if "test_acceptance" not in report.nodeid:
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        props = dict(report.user_properties)
        name = props.get("criterion", report.nodeid.split("::")[-1])
        _ACCEPTANCE.append((name, "PASS" if report.passed else "FAIL", props.get("detail", "")))


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")

    def order(row):
        m = re.search(r"\d+", row[0])
        return int(m.group()) if m else 0

    for name, outcome, detail in sorted(_ACCEPTANCE, key=order):
        terminalreporter.write_line(f"{outcome}  {name}" + (f"  [{detail}]" if detail else ""))
