"""Shared fixtures and the acceptance summary printed after the run."""

from __future__ import annotations

import pytest

from zngsim import platform_config
from zngsim.trace import READ, WRITE, MemoryRequest, Trace

# A device small enough that logs fill and merges happen within a few
# thousand writes: 2 channels x 1 package x 1 die x 2 planes, 16-page blocks.
SMALL_GEOMETRY = {"geometry.channels": 2, "geometry.packages": 1, "geometry.dies": 1, "geometry.planes": 2,
                  "geometry.blocks": 64, "geometry.pages": 16, "geometry.group_size": 2}

ACCEPTANCE: dict[int, str] = {}


def small_config(platform: str = "zng", **overrides):
    return platform_config(platform, {**SMALL_GEOMETRY, **overrides})


def make_trace(ops) -> Trace:
    """Trace from ``(op, vaddr)`` pairs, or ``(op, vaddr, warp)`` triples, issued one per cycle."""
    reqs = []
    for i, item in enumerate(ops):
        op, vaddr, *rest = item
        warp = rest[0] if rest else 0
        reqs.append(MemoryRequest(i, warp, 0x400 + 4 * op, op, vaddr, 0))
    return Trace.from_requests(reqs)


@pytest.fixture
def small():
    return small_config


def record_acceptance(n: int, passed: bool, detail: str) -> str:
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE[n] = line
    print(line)
    return line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])


__all__ = ["READ", "WRITE", "SMALL_GEOMETRY", "small_config", "make_trace", "record_acceptance"]
