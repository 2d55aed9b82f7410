import os
import sys

sys.path.insert(0, os.path.dirname(__file__))

from hypothesis import settings  # noqa: E402

settings.register_profile("ci", max_examples=60, deadline=None)
settings.load_profile("ci")

CRITERIA = {
    1: "alpha-expansion vs exhaustive optimum",
    2: "expansion move energy exactness",
    3: "QPBO persistence",
    4: "occlusion arithmetic on one pixel",
    5: "walking object duplication end-to-end",
    6: "no-object reversion to the two-term energy",
    7: "homography recovery",
    8: "mesh warp sanity",
    9: "Poisson blending",
    10: "MS-SSIM",
    11: "evaluation count deltas",
    12: "determinism of the stitch command",
}

RESULTS = {}


def record(n, ok, detail=""):
    """Store and print the outcome of one acceptance criterion."""
    RESULTS[n] = (bool(ok), detail)
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {CRITERIA[n]}: {detail}"
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n, name in CRITERIA.items():
        if n in RESULTS:
            ok, detail = RESULTS[n]
            terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] criterion {n:2d} {name}: {detail}")
        else:
            terminalreporter.write_line(f"[----] criterion {n:2d} {name}: not run or errored before reporting")
