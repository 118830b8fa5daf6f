"""Shared fixtures and the acceptance summary printed at the end of a run."""
from __future__ import annotations

import numpy as np
import pytest

from dover.video import SynthSpec, Video, synth_video

ACCEPTANCE_LINES: dict[int, str] = {}


def record_acceptance(number: int, passed: bool, detail: str) -> None:
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} {detail}"
    ACCEPTANCE_LINES[number] = line
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def small_video():
    return synth_video(SynthSpec("thirds_composition", aesthetic_level=0.7, blur_sigma=0.5,
                                 noise_sigma=0.02, T=6, H=48, W=40, seed=3, id="small"))


def constant_video(value=0.4, T=4, H=32, W=32, C=3) -> Video:
    return Video(np.full((T, H, W, C), value), id="const")
