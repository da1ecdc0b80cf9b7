"""HTTP labeling service: exposes pending queries to human annotators.

Endpoints (JSON bodies):

* ``GET /queries/next``        -- oldest unanswered query payload, or
                                  ``{"query": null, "retry_after_ms": ...}``.
* ``POST /queries/{id}/label`` -- body ``{"prefer": "first|second|equal|skip"}``;
                                  409 on duplicate, 404 on unknown id.
* ``GET /status``              -- session progress counters.

The experiment loop runs in a worker thread and blocks on the shared
:class:`LabelingSession` until labels arrive.  A built frontend can be
mounted as static files on ``/``.
"""
from __future__ import annotations

import threading
from dataclasses import dataclass

from fastapi import FastAPI, HTTPException
from pydantic import BaseModel

from ..errors import ConfigurationError
from .config import ExperimentConfig
from .labeling import CHOICES, DuplicateLabel, LabelingSession, UnknownQuery
from .loop import ExperimentResult, run_experiment

RETRY_AFTER_MS = 500


class LabelBody(BaseModel):
    prefer: str


def build_app(session: LabelingSession, static_dir=None):
    app = FastAPI(title="preflab labeling service")

    @app.get("/queries/next")
    def next_query():
        job = session.next_pending()
        if job is None:
            return {"query": None, "retry_after_ms": RETRY_AFTER_MS,
                    "status": session.status()}
        return {"query": job.payload, "retry_after_ms": None,
                "status": session.status()}

    @app.post("/queries/{qid}/label")
    def label_query(qid: str, body: LabelBody):
        if body.prefer not in CHOICES:
            raise HTTPException(status_code=422,
                                detail=f"prefer must be one of {CHOICES}")
        try:
            session.submit(qid, body.prefer)
        except UnknownQuery:
            raise HTTPException(status_code=404, detail=f"unknown query {qid!r}")
        except DuplicateLabel:
            raise HTTPException(status_code=409, detail=f"query {qid!r} already labeled")
        return {"ok": True, "id": qid, "prefer": body.prefer}

    @app.get("/status")
    def status():
        return session.status()

    if static_dir is not None:
        from fastapi.staticfiles import StaticFiles
        app.mount("/", StaticFiles(directory=static_dir, html=True), name="ui")
    return app


@dataclass
class ServiceHandle:
    """A running labeling service plus its background experiment."""

    session: LabelingSession
    server: object
    server_thread: threading.Thread
    worker: threading.Thread
    host: str
    port: int
    _result: dict

    @property
    def result(self) -> ExperimentResult | None:
        return self._result.get("value")

    @property
    def error(self) -> BaseException | None:
        return self._result.get("error")

    def join(self, timeout: float | None = None) -> None:
        self.worker.join(timeout=timeout)

    def stop(self) -> None:
        self.server.should_exit = True
        self.server_thread.join(timeout=10)


def serve_labeling(cfg: ExperimentConfig, bind_address: str = "127.0.0.1:8400",
                   static_dir=None, out_dir=None) -> ServiceHandle:
    """Start the service and the human-in-the-loop experiment behind it."""
    import uvicorn

    if cfg.annotator.mode != "human":
        raise ConfigurationError("serve_labeling requires annotator.mode == 'human'")
    cfg.validate()
    host, _, port_text = bind_address.partition(":")
    if not host or not port_text.isdigit():
        raise ConfigurationError(f"bind address must be host:port, got {bind_address!r}")
    port = int(port_text)

    session = LabelingSession(budget_total=cfg.schedule.total_budget)
    app = build_app(session, static_dir)
    server = uvicorn.Server(uvicorn.Config(app, host=host, port=port, log_level="warning"))
    server_thread = threading.Thread(target=server.run, name="preflab-http", daemon=True)
    server_thread.start()

    result: dict = {}

    def work():
        try:
            result["value"] = run_experiment(cfg, out_dir=out_dir, labeling_session=session)
        except BaseException as e:  # surfaced via handle.error
            result["error"] = e

    worker = threading.Thread(target=work, name="preflab-experiment", daemon=True)
    worker.start()
    return ServiceHandle(session, server, server_thread, worker, host, port, result)
