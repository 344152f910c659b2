import pytest
from fastapi.testclient import TestClient

from modelserver.app import create_app
from modelserver.config import ServerConfig


@pytest.fixture(scope="session")
def client():
    with TestClient(create_app(ServerConfig())) as client:
        yield client
