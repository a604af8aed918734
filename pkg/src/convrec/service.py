"""JSON-over-HTTP serving of a trained recommender plus blender.

Sessions live in memory with a TTL; every mutation is serialized per session
while the model and blender stay shared and read-only. Any live ranking is
reconstructible offline by replaying (z0, critique history) through the same
session code path.
"""

from __future__ import annotations

import secrets
import threading
import time
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .artifacts import file_sha256
from .critiquing import (BLENDERS, GRU, apply_critique, embed_all_critiques,
                         load_blender, start_session)
from .data import Dataset
from .errors import ConfigError, SessionError
from .model import MmsVae

DEFAULT_TTL = 3600.0


@dataclass
class ServiceConfig:
    dataset_path: str
    model_path: str
    blender_path: str | None = None
    blender: str = GRU
    host: str = "127.0.0.1"
    port: int = 8080
    top_n: int = 10
    max_turns: int = 10
    session_ttl: float = DEFAULT_TTL

    def __post_init__(self):
        if self.blender not in BLENDERS:
            raise ConfigError(f"unknown blender {self.blender!r}")
        if self.blender == GRU and not self.blender_path:
            raise ConfigError("gru blender requires a blender checkpoint")
        if self.top_n < 1 or self.max_turns < 1 or self.session_ttl <= 0:
            raise ConfigError("top_n, max_turns and session_ttl must be "
                              "positive")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class _StoredSession:
    session: object
    created_at: float
    lock: threading.Lock = field(default_factory=threading.Lock)
    user_id: str | None = None
    keyphrases: list[int] | None = None
    top_n: int = 10


class SessionStore:
    """id -> session with creation timestamps; expired entries are purged
    lazily on every access or insert."""

    def __init__(self, ttl: float):
        self.ttl = ttl
        self._lock = threading.Lock()
        self._entries: dict[str, _StoredSession] = {}

    def _purge(self, now: float) -> None:
        dead = [sid for sid, e in self._entries.items()
                if now - e.created_at > self.ttl]
        for sid in dead:
            del self._entries[sid]

    def put(self, entry: _StoredSession) -> str:
        with self._lock:
            self._purge(time.monotonic())
            sid = secrets.token_hex(16)
            while sid in self._entries:
                sid = secrets.token_hex(16)
            self._entries[sid] = entry
            return sid

    def get(self, sid: str) -> _StoredSession:
        with self._lock:
            self._purge(time.monotonic())
            entry = self._entries.get(sid)
        if entry is None:
            raise ApiError(404, "unknown_session",
                           f"session {sid!r} does not exist or expired")
        return entry

    def __len__(self) -> int:
        with self._lock:
            self._purge(time.monotonic())
            return len(self._entries)


class CreateSessionRequest(BaseModel):
    user_id: str | None = None
    keyphrases: list[int] | None = None
    top_n: int | None = None


class CritiqueRequest(BaseModel):
    keyphrase_id: int


def build_app(model: MmsVae, dataset: Dataset, cfg: ServiceConfig,
              blender_params=None, checkpoint_hashes=None) -> FastAPI:
    app = FastAPI(title="convrec", openapi_url=None, docs_url=None)
    # the browser UI is served from a different origin than the API
    app.add_middleware(CORSMiddleware, allow_origins=["*"],
                       allow_methods=["*"], allow_headers=["*"])
    store = SessionStore(cfg.session_ttl)
    emb = embed_all_critiques(model)
    user_index = {uid: j for j, uid in enumerate(dataset.user_ids)}
    item_kp_ids = [np.flatnonzero(dataset.ki_binary[i]).tolist()
                   for i in range(dataset.n_items)]
    hashes = checkpoint_hashes or {}

    @app.exception_handler(ApiError)
    async def _api_error(request: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status,
                            content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def _validation_error(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422,
                            content={"code": "validation_error",
                                     "message": str(exc.errors())})

    def initial_latent(req: CreateSessionRequest):
        """z0 from the encoder matching what the caller supplied."""
        r_row = None
        k_row = None
        user_idx = None
        if req.user_id is not None:
            user_idx = user_index.get(req.user_id)
            if user_idx is None:
                raise ApiError(400, "unknown_user",
                               f"user {req.user_id!r} is not in the catalog")
            r_row = dataset.r_train[user_idx].toarray()
        if req.keyphrases:
            bad = [c for c in req.keyphrases
                   if not 0 <= c < dataset.n_keyphrases]
            if bad:
                raise ApiError(400, "unknown_keyphrase",
                               f"keyphrase ids out of range: {bad}")
            k_row = np.zeros((1, dataset.n_keyphrases))
            k_row[0, req.keyphrases] = 1.0
        if r_row is None and k_row is None:
            raise ApiError(400, "bad_request",
                           "provide user_id and/or a non-empty keyphrases list")
        post = model.encode_joint(r_rows=r_row, k_rows=k_row)
        z0 = np.asarray(post.mu)[0]
        exclude = dataset.r_train[user_idx].indices if user_idx is not None \
            else None
        return z0, user_idx, exclude

    def ranking_payload(session, top_n: int, previous=None):
        items = []
        for rank, (idx, score) in enumerate(
                zip(session.ranking[:top_n], session.scores[:top_n]), start=1):
            row = {"item_id": dataset.item_ids[int(idx)],
                   "item_index": int(idx),
                   "rank": rank,
                   "score": float(score),
                   "keyphrase_ids": item_kp_ids[int(idx)]}
            if previous is not None:
                row["previous_rank"] = int(previous[int(idx)])
            items.append(row)
        return items

    def explanation_payload(session):
        kp_ids, kp_scores = model.explain_topk(session.blended, cfg.top_n)
        return [{"keyphrase_id": int(c), "name": dataset.vocab[int(c)],
                 "score": float(s)} for c, s in zip(kp_ids, kp_scores)]

    def session_payload(sid: str, entry: _StoredSession, previous=None):
        session = entry.session
        return {"session_id": sid,
                "turn": session.turn,
                "remaining_turns": session.remaining_turns,
                "blender": session.blender,
                "user_id": entry.user_id,
                "critiques": list(session.critiques),
                "recommendations": ranking_payload(session, entry.top_n,
                                                   previous),
                "explanation": explanation_payload(session)}

    @app.post("/v1/sessions", status_code=201)
    def create_session(req: CreateSessionRequest):
        z0, user_idx, exclude = initial_latent(req)
        top_n = req.top_n if req.top_n else cfg.top_n
        if top_n < 1:
            raise ApiError(400, "bad_request", "top_n must be >= 1")
        session = start_session(
            "pending", model, z0, cfg.blender, blender_params,
            user_index=user_idx, exclude_items=exclude,
            max_turns=cfg.max_turns)
        entry = _StoredSession(session=session, created_at=time.monotonic(),
                               user_id=req.user_id,
                               keyphrases=list(req.keyphrases or []),
                               top_n=top_n)
        sid = store.put(entry)
        session.session_id = sid
        return session_payload(sid, entry)

    @app.get("/v1/sessions/{sid}")
    def get_session(sid: str):
        entry = store.get(sid)
        with entry.lock:
            return session_payload(sid, entry)

    @app.post("/v1/sessions/{sid}/critiques")
    def post_critique(sid: str, req: CritiqueRequest):
        entry = store.get(sid)
        with entry.lock:
            session = entry.session
            if session.remaining_turns <= 0:
                raise ApiError(409, "turn_budget_exhausted",
                               f"session already used its "
                               f"{session.max_turns} critiques")
            if not 0 <= req.keyphrase_id < dataset.n_keyphrases:
                raise ApiError(400, "unknown_keyphrase",
                               f"keyphrase id {req.keyphrase_id} out of range")
            previous = {int(idx): rank for rank, idx in
                        enumerate(session.ranking, start=1)}
            try:
                apply_critique(session, req.keyphrase_id, model,
                               blender_params, critique_embeddings=emb)
            except SessionError as exc:
                raise ApiError(409, "turn_budget_exhausted", str(exc))
            return session_payload(sid, entry, previous=previous)

    @app.post("/v1/sessions/{sid}/reset")
    def reset_session(sid: str):
        entry = store.get(sid)
        with entry.lock:
            old = entry.session
            entry.session = start_session(
                sid, model, old.z0, old.blender, blender_params,
                user_index=old.user_index, exclude_items=old.exclude_items,
                candidate_items=old.candidate_items, max_turns=old.max_turns)
            return session_payload(sid, entry)

    @app.get("/v1/catalog")
    def get_catalog():
        return {"items": [{"item_id": dataset.item_ids[i], "item_index": i,
                           "keyphrase_ids": item_kp_ids[i]}
                          for i in range(dataset.n_items)],
                "keyphrases": [{"keyphrase_id": c, "name": dataset.vocab[c]}
                               for c in range(dataset.n_keyphrases)],
                "n_users": dataset.n_users,
                "default_top_n": cfg.top_n,
                "max_turns": cfg.max_turns}

    @app.get("/v1/health")
    def health():
        from . import optim
        return {"status": "ok",
                "n_items": dataset.n_items,
                "n_keyphrases": dataset.n_keyphrases,
                "n_users": dataset.n_users,
                "blender": cfg.blender,
                "active_sessions": len(store),
                "optimizer_steps": optim.step_count(),
                "checkpoints": hashes}

    return app


def load_service(cfg: ServiceConfig):
    """Load artifacts, verify they agree, and build the app."""
    dataset = Dataset.load(cfg.dataset_path)
    model = MmsVae.load(cfg.model_path)
    if model.n_items != dataset.n_items or \
            model.n_keyphrases != dataset.n_keyphrases:
        raise ConfigError("model and dataset disagree on catalog sizes")
    hashes = {"dataset": file_sha256(cfg.dataset_path),
              "model": file_sha256(cfg.model_path)}
    blender_params = None
    if cfg.blender_path:
        blender_params, _, latent = load_blender(cfg.blender_path)
        if latent != model.cfg.latent_dim:
            raise ConfigError("blender latent dimension does not match model")
        hashes["blender"] = file_sha256(cfg.blender_path)
    return build_app(model, dataset, cfg, blender_params, hashes)


def run_service(cfg: ServiceConfig) -> None:
    import uvicorn

    app = load_service(cfg)
    uvicorn.run(app, host=cfg.host, port=cfg.port, log_level="info")
