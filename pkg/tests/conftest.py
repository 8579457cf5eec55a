from importlib import resources
from pathlib import Path

import pytest

from miscible.scenario import parse_scenario


def shipped(name: str) -> Path:
    return Path(str(resources.files("miscible") / "data" / name))


@pytest.fixture(scope="session")
def qfs_path() -> Path:
    return shipped("quarter_five_spot.toml")


@pytest.fixture(scope="session")
def qfs(qfs_path):
    return parse_scenario(qfs_path)


@pytest.fixture(scope="session")
def dipole_path() -> Path:
    return shipped("dipole.toml")
