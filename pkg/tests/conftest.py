"""Shared fixtures: cached eigenvalue pools and common objects.

Pools are materialized lazily through the disk cache, so the first full
run pays the sampling cost once and every later run loads memory-mapped
arrays.
"""

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))
sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

import pytest

import _samplecache as cache
from ginfield.gmc import RadialMollifier


@pytest.fixture(scope="session")
def mollifier():
    return RadialMollifier(0.25)


@pytest.fixture(scope="session")
def pool64():
    return cache.eig_pool(64, 1000)


@pytest.fixture(scope="session")
def dpp64():
    return cache.eig_pool(64, 1000, kind="dpp")


@pytest.fixture(scope="session")
def pool512():
    return cache.eig_pool(512, 500)


@pytest.fixture(scope="session")
def pool1024():
    return cache.eig_pool(1024, 2000)


@pytest.fixture(scope="session")
def pool2048():
    return cache.eig_pool(2048, 200)


@pytest.fixture(scope="session")
def pool4096():
    return cache.eig_pool(4096, 200)
