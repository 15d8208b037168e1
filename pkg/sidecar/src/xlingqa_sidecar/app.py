"""FastAPI application implementing the engine wire protocol.

POST /encode   {"mode": "question"|"passage", "texts": [str...]}
               -> {"dim": int, "vectors": [[float...]...]}
POST /generate {"prompts": [str...], "max_tokens": int}
               -> {"outputs": [{"text": str, "token_logprobs": [float...]}...]}
GET  /health   -> {"status": "ok", "dim": int}

Malformed requests return 400, oversized batches 413, model errors 500.
"""

from __future__ import annotations

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse

from .backends import BackendError, make_encoder_backend, make_generator_backend
from .config import SidecarConfig


def create_app(config: SidecarConfig | None = None) -> FastAPI:
    config = config or SidecarConfig.from_env()
    app = FastAPI(title="xlingqa-sidecar")
    state = {"encoder": None, "generator": None}

    def encoder():
        if state["encoder"] is None:
            state["encoder"] = make_encoder_backend(config.encoder_model)
        return state["encoder"]

    def generator():
        if state["generator"] is None:
            state["generator"] = make_generator_backend(config.generator_model)
        return state["generator"]

    @app.exception_handler(RequestValidationError)
    async def malformed_request(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"error": "malformed request"})

    @app.exception_handler(BackendError)
    async def backend_error(request: Request, exc: BackendError):
        return JSONResponse(status_code=500, content={"error": str(exc)})

    def bad_request(message: str) -> JSONResponse:
        return JSONResponse(status_code=400, content={"error": message})

    @app.get("/health")
    async def health():
        backend = encoder()
        dim = getattr(backend, "dim", None)
        return {"status": "ok", "dim": dim}

    @app.post("/encode")
    async def encode(request: Request):
        try:
            body = await request.json()
        except Exception:
            return bad_request("body is not valid JSON")
        if not isinstance(body, dict):
            return bad_request("body must be a JSON object")
        mode = body.get("mode")
        texts = body.get("texts")
        if mode not in ("question", "passage"):
            return bad_request(f"mode must be 'question' or 'passage', got {mode!r}")
        if not isinstance(texts, list) or not all(isinstance(t, str) for t in texts):
            return bad_request("texts must be a list of strings")
        if len(texts) > config.max_batch_size:
            return JSONResponse(
                status_code=413,
                content={"error": f"batch of {len(texts)} exceeds "
                                  f"max {config.max_batch_size}"})
        backend = encoder()
        vectors = backend.encode(texts, mode)
        dim = getattr(backend, "dim", None) or (len(vectors[0]) if vectors else 0)
        return {"dim": dim, "vectors": vectors}

    @app.post("/generate")
    async def generate(request: Request):
        try:
            body = await request.json()
        except Exception:
            return bad_request("body is not valid JSON")
        if not isinstance(body, dict):
            return bad_request("body must be a JSON object")
        prompts = body.get("prompts")
        max_tokens = body.get("max_tokens", config.max_answer_tokens)
        if not isinstance(prompts, list) or not all(isinstance(p, str) for p in prompts):
            return bad_request("prompts must be a list of strings")
        if not isinstance(max_tokens, int) or max_tokens < 1:
            return bad_request("max_tokens must be a positive integer")
        if len(prompts) > config.max_batch_size:
            return JSONResponse(
                status_code=413,
                content={"error": f"batch of {len(prompts)} exceeds "
                                  f"max {config.max_batch_size}"})
        outputs = generator().generate(prompts, min(max_tokens, config.max_answer_tokens))
        return {"outputs": outputs}

    return app
