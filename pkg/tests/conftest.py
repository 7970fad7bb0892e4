import pytest

from bodyfix.backends import mock_suite
from bodyfix.core import PipelineConfig


@pytest.fixture
def suite():
    return mock_suite()


@pytest.fixture
def config():
    return PipelineConfig()
