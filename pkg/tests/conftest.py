import json

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def make_kp(points=None, n=17, conf=1.0):
    """17x3 keypoints; ``points`` maps joint index to (x, y) or (x, y, c)."""
    kp = np.zeros((n, 3))
    for j, p in (points or {}).items():
        kp[j] = (p[0], p[1], p[2] if len(p) > 2 else conf)
    return kp


def jsonl(frames, width=640, height=480, fps=15.0):
    """Skeleton JSONL text from ``[(frame_index, [kp, ...]), ...]``."""
    lines = [json.dumps({"meta": {"width": width, "height": height, "fps": fps}})]
    for idx, persons in frames:
        lines.append(json.dumps({"frame": idx,
                                 "persons": [{"kp": np.asarray(k).tolist()} for k in persons]}))
    return "\n".join(lines) + "\n"


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# one line per acceptance criterion, printed at the end of the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
