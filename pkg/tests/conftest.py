from __future__ import annotations

import os
import sys

import pytest

from sra.pipeline import PipelineConfig
from sra.session import Role, SessionKeys, issue, make_root, run_handshake


@pytest.fixture(scope="session")
def root():
    return make_root("manufacturer-root-test")


@pytest.fixture(scope="session")
def host(root):
    return issue(root, "host-test", Role.host)


@pytest.fixture(scope="session")
def sensor(root):
    return issue(root, "sensor-test", Role.sensor)


@pytest.fixture(scope="session")
def trust_root(root):
    return root.certificate


@pytest.fixture(scope="session")
def session_keys(host, sensor, trust_root):
    host_keys, _ = run_handshake(host, sensor, trust_root)
    return host_keys


@pytest.fixture
def random_keys():
    return SessionKeys(os.urandom(16), os.urandom(16), int.from_bytes(os.urandom(4), "big"),
                       int.from_bytes(os.urandom(8), "big"))


@pytest.fixture
def small_config():
    return PipelineConfig(width=64, height=48, frames=3, deterministic_test_mode=True)


_FIRST = ("test_crypto_vectors.py", "test_c7_crypto_and_oracles")


def pytest_collection_modifyitems(items):
    # engine vectors and codec oracles gate everything else
    items.sort(key=lambda item: not (item.nodeid.split("::")[0].endswith(_FIRST[0])
                                     or item.name == _FIRST[1]))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if not mod or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.result_line(n))
