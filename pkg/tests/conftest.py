from __future__ import annotations

import json
from pathlib import Path

import pytest

from litmine.corpus import ReviewTopic
from litmine.offline import offline_gateway
from litmine.registry import FixtureRegistryClient, FixtureStore

FIXTURES_DIR = Path(__file__).parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES_DIR


@pytest.fixture(scope="session")
def store() -> FixtureStore:
    return FixtureStore.load(FIXTURES_DIR)


@pytest.fixture(scope="session")
def client(store) -> FixtureRegistryClient:
    return FixtureRegistryClient(store)


@pytest.fixture(scope="session")
def reviews() -> list[ReviewTopic]:
    raw = json.loads((FIXTURES_DIR / "reviews.json").read_text(encoding="utf-8"))
    return [ReviewTopic.from_json(r) for r in raw]


@pytest.fixture()
def gateway():
    return offline_gateway()
