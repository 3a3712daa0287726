"""Fixtures: a fast throwaway server and a session-scoped trained server."""

from __future__ import annotations

import pytest
from fastapi.testclient import TestClient

import wiredata
from promptserve import ServerConfig, create_app


@pytest.fixture()
def fast_app():
    """Untrained app with training dialed down to a few steps."""
    cfg = ServerConfig(pretrain_steps=5, prompt_steps=4, ner_steps=4)
    return create_app(cfg)


@pytest.fixture()
def fast_client(fast_app):
    with TestClient(fast_app) as client:
        yield client


class TrainedServer:
    def __init__(self, app, client, generator_response, ner_response):
        self.app = app
        self.client = client
        self.generator_response = generator_response
        self.ner_response = ner_response


@pytest.fixture(scope="session")
def trained():
    """App + client with both models trained at quality scale.

    Tests must not mutate the services; anything that trains further works
    on a copy.
    """
    cfg = ServerConfig(pretrain_steps=400, prompt_steps=120)
    app = create_app(cfg)
    client = TestClient(app)
    gen = client.post("/v1/generator/train", json=wiredata.generator_train_payload())
    assert gen.status_code == 200, gen.text
    ner = client.post("/v1/ner/train", json=wiredata.ner_train_payload())
    assert ner.status_code == 200, ner.text
    return TrainedServer(app, client, gen.json(), ner.json())


@pytest.fixture(scope="session")
def trained_client(trained):
    return trained.client


@pytest.fixture(scope="session")
def trained_app(trained):
    return trained.app
