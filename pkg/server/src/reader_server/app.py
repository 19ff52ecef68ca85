"""FastAPI application exposing the reader wire protocol.

POST /score
    request:  { query_id, question, query_payload_ref,
                candidate: { record_id, payload_ref, caption },
                class_labels: [..] }
    response: { log_probs: [..] }   aligned to class_labels

GET /healthz -> 200 when ready.

Malformed requests get a 400 with an error body; a valid request never
produces a 500. Responses are deterministic given (params, request): the
only randomness is the per-request hash noise keyed by
(seed, query_id, record_id).
"""

from __future__ import annotations

import json
import threading
from pathlib import Path

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, Field, field_validator

from .scorer import ScorerParams, score_request


class CandidatePayload(BaseModel):
    record_id: int
    payload_ref: str = ""
    caption: str = ""


class ScoreRequest(BaseModel):
    query_id: str
    question: str = ""
    query_payload_ref: str = ""
    candidate: CandidatePayload
    class_labels: list[str] = Field(min_length=1)

    @field_validator("class_labels")
    @classmethod
    def labels_distinct(cls, v):
        if len(set(v)) != len(v):
            raise ValueError("class labels must be pairwise distinct")
        return v


def create_app(params: ScorerParams, request_log: str | None = None) -> FastAPI:
    app = FastAPI(title="reader-server", docs_url=None, redoc_url=None)
    log_lock = threading.Lock()
    log_path = Path(request_log) if request_log else None

    @app.exception_handler(RequestValidationError)
    async def validation_to_400(request: Request, exc: RequestValidationError):
        detail = [
            {"loc": [str(p) for p in err.get("loc", ())], "msg": str(err.get("msg", ""))}
            for err in exc.errors()
        ]
        return JSONResponse(status_code=400, content={"error": "bad_request", "detail": detail})

    @app.exception_handler(json.JSONDecodeError)
    async def decode_to_400(request: Request, exc: json.JSONDecodeError):
        return JSONResponse(status_code=400, content={"error": "bad_request", "detail": str(exc)})

    @app.get("/healthz")
    async def healthz():
        return JSONResponse(status_code=200, content={"status": "ok"})

    @app.post("/score")
    def score(req: ScoreRequest):
        body = req.model_dump()
        log_probs = score_request(params, body)
        if log_path is not None:
            line = json.dumps({"query_id": req.query_id, "record_id": req.candidate.record_id})
            with log_lock:
                with open(log_path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
        return {"log_probs": log_probs}

    return app
