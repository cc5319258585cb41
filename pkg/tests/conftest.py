from __future__ import annotations

import io

import pytest
from PIL import Image

from acgen.corpus import AcceptanceCriterion, UserStory, VisualDoc, load_dataset
from acgen.pipeline import bundled_dataset
from acgen.prompts import load_prompts


def png_bytes(color=(200, 30, 30), size=(8, 8)) -> bytes:
    buf = io.BytesIO()
    Image.new("RGB", size, color).save(buf, format="PNG")
    return buf.getvalue()


def ac(given: str, when: str, *then: str) -> AcceptanceCriterion:
    return AcceptanceCriterion((given,), (when,), tuple(then))


@pytest.fixture(scope="session")
def toy():
    return load_dataset(bundled_dataset())


@pytest.fixture(scope="session")
def prompts():
    return load_prompts()


@pytest.fixture
def story() -> UserStory:
    return UserStory("S1", "Reset password", "As a student, I want to reset my password, so that I can log in.")


@pytest.fixture
def image() -> VisualDoc:
    return VisualDoc("V1", png_bytes(), "image/png", caption="Login page")


CRITERIA: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if CRITERIA:
        terminalreporter.section("acceptance criteria")
        for n in sorted(CRITERIA):
            terminalreporter.write_line(CRITERIA[n])
