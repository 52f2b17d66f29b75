from __future__ import annotations

import functools

import pytest

from batchsim.scene import GeneratorSpec, generate_scene


@functools.lru_cache(maxsize=None)
def scene(seed: int, grid: tuple = (4, 4)):
    """Generated scenes are pure functions of their inputs, so tests share them."""
    return generate_scene(seed, GeneratorSpec(grid=grid))


@pytest.fixture(scope="session")
def maze():
    return scene(3)


@pytest.fixture(scope="session")
def small_maze():
    return scene(11, (3, 3))


# -- acceptance report ---------------------------------------------------------------
ACCEPTANCE: dict[int, tuple[str, str, str]] = {}


def record(number: int, title: str, status: str, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, status, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, status, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"[{status:>7}] {n:2d}. {title}" + (f"  ({detail})" if detail else ""))
