from __future__ import annotations

import json
import os
import random
from datetime import datetime, timezone
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default",
    deadline=None,
    max_examples=60,
    suppress_health_check=[HealthCheck.too_slow, HealthCheck.data_too_large],
)
settings.register_profile("thorough", deadline=None, max_examples=500)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

DATA = Path(__file__).parent / "data"

# a Wednesday and a Saturday, both UTC
WEEKDAY = datetime(2024, 5, 15, 10, 30, tzinfo=timezone.utc)
SATURDAY = datetime(2024, 5, 18, 10, 30, tzinfo=timezone.utc)


@pytest.fixture(scope="session")
def employee_policy_text() -> str:
    return (DATA / "employee_policy.json").read_text()


@pytest.fixture(scope="session")
def hom_keys():
    from objguard.crypto import hom_keygen

    rng = random.Random(1234)
    return {name: hom_keygen(rng) for name in ("Alice", "treasurer", "Bob", "Carol")}


@pytest.fixture(scope="session")
def peks_keys():
    from objguard.crypto import peks_keygen

    rng = random.Random(4321)
    return {name: peks_keygen(rng) for name in ("A", "B", "C")}


@pytest.fixture
def store():
    from objguard.engine import MetadataStore

    return MetadataStore()


@pytest.fixture
def backend(tmp_path):
    from objguard.backend import FileBackend

    return FileBackend(str(tmp_path / "objects"))


def canonical(doc) -> bytes:
    return json.dumps(doc, separators=(",", ":"), ensure_ascii=False).encode()


def pairs_json(text: bytes):
    """Parse JSON keeping duplicate keys as ordered (key, value) lists."""
    return json.loads(text, object_pairs_hook=lambda kv: [list(p) for p in kv])


# acceptance verdict lines, repeated after the run
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
