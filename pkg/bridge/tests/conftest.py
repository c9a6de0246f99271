import threading

import pytest

from saliency_forge_bridge.model import train_model
from saliency_forge_bridge.service import BridgeServer


@pytest.fixture(scope="session")
def trained_model():
    model, accuracy = train_model(epochs=8, seed=0)
    assert accuracy > 0.9
    return model


@pytest.fixture(scope="session")
def server(trained_model):
    srv = BridgeServer(trained_model)
    thread = threading.Thread(target=srv.serve_forever, daemon=True)
    thread.start()
    yield srv
    srv.shutdown()
