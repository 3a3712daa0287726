"""HTTP surface: JSON endpoints over the generator and tagger services.

Routes (all JSON):

    POST /v1/fill             fill a masked template
    POST /v1/score-types      rank type names for each slot of a query
    POST /v1/generator/train  (re)train the generator
    POST /v1/ner/train        (re)train the tagger
    POST /v1/ner/annotate     tag sentences with spans + confidence
    GET  /v1/health           liveness and trained flags
    GET  /v1/hash             current model digests (null until trained)

Errors use a flat ``{"code", "message"}`` body. The two training routes
share one non-blocking lock: a training request that arrives while either
model is training gets 409 ``training_in_progress`` instead of queueing,
since training rebuilds service state and concurrent runs would interleave.
Handlers are plain sync functions, so the framework runs them on worker
threads and inference stays available while a training call is in flight.
"""

from __future__ import annotations

import logging
import threading
from collections.abc import Callable

from fastapi import Body, FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .config import ServerConfig
from .generator import GeneratorService
from .tagging import TaggerService
from .wire import WireError

log = logging.getLogger(__name__)

_CLIENT_ERRORS = (KeyError, TypeError, ValueError, IndexError, AttributeError)


def _run(operation: Callable[[], dict]) -> dict:
    """Translate malformed-input crashes into 400s; let WireError through."""
    try:
        return operation()
    except WireError:
        raise
    except _CLIENT_ERRORS as e:
        raise WireError("bad_request", str(e) or type(e).__name__) from e


def create_app(cfg: ServerConfig | None = None) -> FastAPI:
    cfg = cfg or ServerConfig()
    app = FastAPI(title="promptserve", docs_url=None, redoc_url=None)
    app.state.cfg = cfg
    app.state.generator = GeneratorService(cfg)
    app.state.tagger = TaggerService(cfg)
    app.state.train_lock = threading.Lock()

    def train_guarded(operation: Callable[[], dict]) -> dict:
        if not app.state.train_lock.acquire(blocking=False):
            raise WireError(
                "training_in_progress", "another training run is in progress", 409
            )
        try:
            return _run(operation)
        finally:
            app.state.train_lock.release()

    @app.exception_handler(WireError)
    async def wire_error(request: Request, exc: WireError) -> JSONResponse:
        return JSONResponse(
            status_code=exc.status, content={"code": exc.code, "message": exc.message}
        )

    @app.exception_handler(RequestValidationError)
    async def invalid_request(request: Request, exc: RequestValidationError) -> JSONResponse:
        return JSONResponse(
            status_code=400,
            content={"code": "bad_request", "message": "request body must be a JSON object"},
        )

    @app.exception_handler(Exception)
    async def internal_error(request: Request, exc: Exception) -> JSONResponse:
        log.exception("unhandled error on %s", request.url.path)
        return JSONResponse(
            status_code=500, content={"code": "internal", "message": str(exc)}
        )

    @app.post("/v1/fill")
    def fill(body: dict = Body(...)) -> dict:
        return _run(lambda: app.state.generator.fill(body))

    @app.post("/v1/score-types")
    def score_types(body: dict = Body(...)) -> dict:
        return _run(lambda: app.state.generator.score_types(body))

    @app.post("/v1/generator/train")
    def train_generator(body: dict = Body(...)) -> dict:
        return train_guarded(lambda: app.state.generator.train(body))

    @app.post("/v1/ner/train")
    def train_ner(body: dict = Body(...)) -> dict:
        return train_guarded(lambda: app.state.tagger.train(body))

    @app.post("/v1/ner/annotate")
    def annotate(body: dict = Body(...)) -> dict:
        return _run(lambda: app.state.tagger.annotate(body))

    @app.get("/v1/health")
    def health() -> dict:
        return {
            "status": "ok",
            "generator_trained": app.state.generator.trained,
            "tagger_trained": app.state.tagger.trained,
        }

    @app.get("/v1/hash")
    def hashes() -> dict:
        return {
            "generator_backbone": app.state.generator.backbone_hash,
            "tagger_model": app.state.tagger.model_hash,
        }

    return app
