import pytest


def pytest_configure(config):
    config.addinivalue_line(
        "markers", "slow: long-running statistical or full-size simulation test")
