"""Shared pytest configuration.

Collects the outcome of each acceptance test and prints a one-line PASS/FAIL
verdict per criterion at the end of the run.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).parent))

ACCEPTANCE = {
    "test_accept_1_pool_partition": "1. pool partition arithmetic (16 boxes -> one 4x4, two 3x3 with 2 black, four 2x2)",
    "test_accept_2_online_offline_identical": "2. online and offline mosaics are pixel-identical with identical labels",
    "test_accept_3_mosaic_conservation": "3. 100 mosaic fixtures: label conservation, exact cell rectangles, bit-identical round trip",
    "test_accept_4_restricted_gradients": "4. 20 models: finite-difference check <= 1e-4, exact zeros at lambda_hn=0, exact lambda linearity",
    "test_accept_5_update_mode_lr_identity": "5. update-mode scaling matches learning-rate scaling to 1e-12 over 100 steps",
    "test_accept_6_evaluator_oracle": "6. 200 evaluation fixtures match a brute-force oracle exactly; perfect detector scores 100.0",
    "test_accept_7_mask_battery": "7. 200 random masks: boxes and review flags match an exhaustive scan",
    "test_accept_8_training_convergence": "8. 500 optimizer steps halve the toy loss, bit-reproducibly",
    "test_accept_9_defaults_audit": "9. documented defaults appear in --help and the config schema",
}

_verdicts = {}


def pytest_runtest_logreport(report):
    base = report.nodeid.split("::")[-1].split("[")[0]
    if base not in ACCEPTANCE:
        return
    if report.when == "call":
        _verdicts[base] = _verdicts.get(base, True) and report.passed
    elif report.failed:
        _verdicts[base] = False


def pytest_terminal_summary(terminalreporter):
    if not _verdicts:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for name, title in ACCEPTANCE.items():
        if name in _verdicts:
            status = "PASS" if _verdicts[name] else "FAIL"
            terminalreporter.write_line(f"[{status}] {title}")
