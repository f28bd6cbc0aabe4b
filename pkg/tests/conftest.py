from pathlib import Path

import pytest
import torch

# acceptance criteria register their verdicts here; printed once per session
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture(autouse=True, scope="session")
def _single_thread():
    # single-threaded math keeps seeded runs bit-reproducible
    torch.set_num_threads(1)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    lines = [f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
             for n, (ok, detail) in sorted(ACCEPTANCE.items())]
    terminalreporter.section("acceptance criteria")
    for line in lines:
        terminalreporter.write_line(line)
    Path(__file__).resolve().parent.parent.joinpath("acceptance_summary.txt").write_text("\n".join(lines) + "\n")
