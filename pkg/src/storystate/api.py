"""HTTP JSON API over the engine, one endpoint per engine operation.

The service is stateless above the project layout: every request loads from
disk, so a restart loses nothing. Mutating endpoints return the new head
revision id and honor an ``If-Match`` revision precondition (412 on mismatch).
Concurrent edits on one story either queue or get 409, per config.
"""

from __future__ import annotations

import threading
import uuid
from pathlib import Path

from fastapi import FastAPI, Header, Request, Response
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel

from . import metrics as metrics_mod
from .agents import ground_ops
from .backends import (
    BackendConfig,
    GenerationBackends,
    HttpEmbeddingBackend,
    MockEmbeddingBackend,
    http_backends,
    mock_backends,
)
from .config import ServiceConfig
from .edits import EditBatch
from .errors import (
    EditRejected,
    LoadError,
    NoEdits,
    ProjectLocked,
    StoryStateError,
    TooFewPages,
    UnknownPage,
    UnknownStory,
)
from .orchestrator import Engine, EngineMode
from .persistence import ProjectStore
from .prompts import compile as compile_prompts
from .prompts import export_interchange

STATUS_BY_CODE = {
    "edit_rejected": 400,
    "ungrounded_reference": 400,
    "ambiguous_alias": 400,
    "empty_story": 400,
    "parse_error": 400,
    "too_few_pages": 400,
    "no_edits": 400,
    "degenerate_embedding": 400,
    "missing_asset": 404,
    "unknown_character": 404,
    "unknown_page": 404,
    "unknown_revision": 404,
    "unknown_story": 404,
    "load_error": 404,
    "project_locked": 409,
    "backend_error": 502,
    "malformed_agent_output": 502,
}


class CreateStoryRequest(BaseModel):
    prompt: str
    n_pages: int = 10
    seed: int = 0


class EditRequest(BaseModel):
    text: str | None = None
    ops: list[dict] | None = None
    note: str = ""
    mode: str = "full"
    seed: int = 0


class RevertRequest(BaseModel):
    revision: str


class AcceptRequest(BaseModel):
    seed: int = 0


class RetryRequest(BaseModel):
    seed: int = 0


class _StoryLocks:
    def __init__(self):
        self._locks: dict[str, threading.Lock] = {}
        self._guard = threading.Lock()

    def get(self, story_id: str) -> threading.Lock:
        with self._guard:
            return self._locks.setdefault(story_id, threading.Lock())


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.load()
    app = FastAPI(title="storystate", version="0.1.0")
    backends: GenerationBackends = (
        http_backends() if config.backend == "http" else mock_backends()
    )
    embedding = (
        HttpEmbeddingBackend(BackendConfig.from_env("STORYSTATE_EMBED"))
        if config.embedding == "http"
        else MockEmbeddingBackend()
    )
    locks = _StoryLocks()
    jobs: dict[str, dict] = {}
    root = Path(config.project_root)

    if config.cors_origins:
        from fastapi.middleware.cors import CORSMiddleware

        app.add_middleware(
            CORSMiddleware,
            allow_origins=config.cors_origins,
            allow_methods=["*"],
            allow_headers=["*"],
        )

    def store_for(story_id: str) -> ProjectStore:
        store = ProjectStore(root / story_id)
        if not store.exists():
            raise UnknownStory(story_id)
        return store

    def engine_for(story_id: str) -> Engine:
        return Engine(backends, store_for(story_id))

    def head_of(store: ProjectStore):
        _, history = store.load()
        return history.head

    def check_if_match(store: ProjectStore, if_match: str | None):
        if if_match is None:
            return
        head = head_of(store)
        if head is None or head.id != if_match.strip('"'):
            raise _PreconditionFailed()

    class _PreconditionFailed(Exception):
        pass

    @app.exception_handler(StoryStateError)
    async def engine_error_handler(request: Request, exc: StoryStateError):
        return JSONResponse(
            status_code=STATUS_BY_CODE.get(exc.code, 500), content={"error": exc.payload()}
        )

    @app.exception_handler(_PreconditionFailed)
    async def precondition_handler(request: Request, exc: _PreconditionFailed):
        return JSONResponse(
            status_code=412,
            content={"error": {"code": "revision_mismatch", "message": "head revision moved"}},
        )

    def story_payload(store: ProjectStore) -> dict:
        state, history = store.load()
        return {
            "state": state.to_dict(),
            "head_revision": history.head.id if history.head else None,
        }

    @app.get("/healthz")
    def healthz():
        return {"ok": True, "backend": config.backend}

    @app.get("/stories")
    def list_stories():
        out = []
        if root.is_dir():
            for path in sorted(root.iterdir()):
                store = ProjectStore(path)
                if store.exists():
                    try:
                        state, history = store.load()
                    except LoadError:
                        continue
                    out.append(
                        {
                            "id": state.id,
                            "dir": path.name,
                            "title": state.title,
                            "n_pages": len(state.pages),
                            "head_revision": history.head.id if history.head else None,
                        }
                    )
        return {"stories": out}

    def _run_create(body: CreateStoryRequest) -> dict:
        engine = Engine(backends, ProjectStore(root / _new_story_dir(body)))
        state, revision, _ = engine.create_story(body.prompt, body.n_pages, seed=body.seed)
        return {"story_id": state.id, "revision": revision.id}

    def _new_story_dir(body: CreateStoryRequest) -> str:
        from .orchestrator import derive_story_id

        return derive_story_id(body.prompt, body.seed)

    @app.post("/stories", status_code=201)
    def create_story(body: CreateStoryRequest, response: Response):
        if config.async_jobs:
            job_id = uuid.uuid4().hex[:12]
            jobs[job_id] = {"status": "running", "result": None, "error": None}

            def work():
                try:
                    jobs[job_id].update(status="done", result=_run_create(body))
                except StoryStateError as exc:
                    jobs[job_id].update(status="failed", error=exc.payload())

            threading.Thread(target=work, daemon=True).start()
            response.status_code = 202
            return {"job": job_id}
        return _run_create(body)

    @app.get("/jobs/{job_id}")
    def job_status(job_id: str):
        if job_id not in jobs:
            raise UnknownStory(job_id)
        return {"job": job_id, **jobs[job_id]}

    @app.get("/stories/{story_id}")
    def get_story(story_id: str):
        return story_payload(store_for(story_id))

    @app.get("/stories/{story_id}/pages/{page_id}/assets/{kind}")
    def get_asset(story_id: str, page_id: str, kind: str):
        store = store_for(story_id)
        state, _ = store.load()
        page = state.page_by_id(page_id)
        ref = {"narration_text": page.narration_asset, "page_image": page.image_asset}.get(kind)
        if ref is None:
            raise UnknownPage(f"{page_id}/{kind}")
        data = store.assets.read(ref.content_hash)
        media = "image/png" if kind == "page_image" else "text/plain; charset=utf-8"
        return Response(
            content=data,
            media_type=media,
            headers={"X-Content-Hash": ref.content_hash, "ETag": f'"{ref.content_hash}"'},
        )

    @app.post("/stories/{story_id}/edits")
    def post_edit(story_id: str, body: EditRequest, if_match: str | None = Header(default=None)):
        store = store_for(story_id)
        lock = locks.get(story_id)
        acquired = lock.acquire(blocking=config.busy_mode == "queue")
        if not acquired:
            raise ProjectLocked(story_id, holder="another edit in flight")
        try:
            check_if_match(store, if_match)
            engine = Engine(backends, store)
            mode = EngineMode.named(body.mode)
            if body.ops:
                state, _ = store.load()
                batch = EditBatch(ops=ground_ops(state, body.ops), origin="user", note=body.note)
                request: str | EditBatch = batch
            elif body.text:
                request = body.text
            else:
                raise EditRejected(None, "edit request needs text or ops")
            result = engine.run_edit_cycle(request, mode, seed=body.seed)
            return {"result": result.to_dict(), "head_revision": result.revision}
        finally:
            lock.release()

    @app.post("/stories/{story_id}/revert")
    def post_revert(story_id: str, body: RevertRequest, if_match: str | None = Header(default=None)):
        store = store_for(story_id)
        with locks.get(story_id):
            check_if_match(store, if_match)
            engine = Engine(backends, store)
            _, head = engine.revert(body.revision)
            return {"head_revision": head.id, "reverted_to": body.revision}

    @app.get("/stories/{story_id}/history")
    def get_history(story_id: str):
        _, history = store_for(story_id).load()
        return {
            "revisions": [
                {
                    "id": rev.id,
                    "parent": rev.parent,
                    "origin": rev.origin,
                    "note": rev.note,
                    "timestamp": rev.timestamp,
                    "elapsed_seconds": rev.elapsed_seconds,
                    "dirty": rev.dirty.to_dict(),
                    "diff": rev.diff.to_dict(),
                }
                for rev in history.revisions
            ]
        }

    @app.get("/stories/{story_id}/metrics")
    def get_metrics(story_id: str):
        store = store_for(story_id)
        state, history = store.load()
        out: dict = {"consistency": None, "edit_efficiency": None}
        try:
            out["consistency"] = metrics_mod.story_consistency(state, store, embedding).to_dict()
        except (TooFewPages, StoryStateError) as exc:
            out["consistency_error"] = exc.payload() if isinstance(exc, StoryStateError) else str(exc)
        try:
            out["edit_efficiency"] = metrics_mod.edit_efficiency(history).to_dict()
        except NoEdits as exc:
            out["edit_efficiency_error"] = exc.payload()
        return out

    @app.get("/stories/{story_id}/prompts")
    def get_prompts(story_id: str, format: str = "json"):
        state, _ = store_for(story_id).load()
        bundle = compile_prompts(state)
        if format == "interchange":
            return PlainTextResponse(export_interchange(bundle))
        return bundle.to_dict()

    @app.post("/stories/{story_id}/critic/{finding_id}/accept")
    def accept_finding(
        story_id: str,
        finding_id: str,
        body: AcceptRequest | None = None,
        if_match: str | None = Header(default=None),
    ):
        store = store_for(story_id)
        with locks.get(story_id):
            check_if_match(store, if_match)
            engine = Engine(backends, store)
            result = engine.accept_finding(finding_id, seed=body.seed if body else 0)
            return {"result": result.to_dict(), "head_revision": result.revision}

    @app.post("/stories/{story_id}/pages/{page_id}/retry")
    def retry_page(story_id: str, page_id: str, body: RetryRequest | None = None):
        engine = engine_for(story_id)
        result = engine.retry_page(page_id, seed=body.seed if body else 0)
        return {"result": result.to_dict(), "head_revision": result.revision}

    ui_dir = config.ui_dir
    if ui_dir and Path(ui_dir).is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
