import torch

import _acceptance

torch.set_num_threads(1)


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: runs longer than a minute on one CPU core")
    config.addinivalue_line("markers", "long: opt-in, enabled with UNREALNAS_LONG=1")


def pytest_terminal_summary(terminalreporter):
    if not _acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_acceptance.RESULTS):
        verdict, detail = _acceptance.RESULTS[n]
        terminalreporter.write_line(f"criterion {n:2d}: {verdict}  {detail}")
