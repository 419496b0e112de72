"""Pluggable generation backends: chat, narration, image, embedding.

Every interface ships two implementations: a deterministic offline mock (the
test suite and `--backend mock` run entirely on these) and a thin HTTP client
speaking a generic chat-completions/JSON shape, configured via environment
variables or a config file. The engine never depends on a specific vendor.
"""

from __future__ import annotations

import base64
import hashlib
import json
import os
import re
import struct
import threading
import time
import zlib
from dataclasses import dataclass, field

import requests

from .errors import BackendError

DEFAULT_TIMEOUT = 60.0
DEFAULT_MAX_RETRIES = 2


# --- chat -----------------------------------------------------------------


@dataclass
class Attachment:
    kind: str
    content_hash: str
    data: bytes


@dataclass
class ChatRequest:
    system_text: str
    user_text: str
    response_schema_id: str
    attachments: list[Attachment] = field(default_factory=list)


@dataclass
class ChatResponse:
    text: str


class ChatBackend:
    """Interface: send a (system, user, schema hint) request, get text back."""

    supports_images = False

    def send(self, request: ChatRequest) -> ChatResponse:
        raise NotImplementedError


@dataclass
class BackendConfig:
    endpoint: str = ""
    model: str = ""
    api_key: str = ""
    timeout: float = DEFAULT_TIMEOUT
    max_retries: int = DEFAULT_MAX_RETRIES
    max_parallel_requests: int = 4
    supports_images: bool = True

    @classmethod
    def from_env(cls, prefix: str = "STORYSTATE_LLM") -> "BackendConfig":
        return cls(
            endpoint=os.environ.get(f"{prefix}_ENDPOINT", ""),
            model=os.environ.get(f"{prefix}_MODEL", ""),
            api_key=os.environ.get(f"{prefix}_KEY", ""),
            timeout=float(os.environ.get(f"{prefix}_TIMEOUT", DEFAULT_TIMEOUT)),
        )


class HttpChatBackend(ChatBackend):
    """Generic chat-completions client: system + user messages, optional
    base64 image parts, first choice's message content returned."""

    def __init__(self, config: BackendConfig):
        if not config.endpoint:
            raise BackendError("chat backend endpoint is not configured")
        self.config = config
        self.supports_images = config.supports_images
        self._slots = threading.Semaphore(config.max_parallel_requests)

    def _payload(self, request: ChatRequest) -> dict:
        if request.attachments and self.supports_images:
            content: list[dict] = [{"type": "text", "text": request.user_text}]
            for att in request.attachments:
                b64 = base64.b64encode(att.data).decode("ascii")
                content.append(
                    {"type": "image_url", "image_url": {"url": f"data:image/png;base64,{b64}"}}
                )
        else:
            content = request.user_text
        return {
            "model": self.config.model,
            "messages": [
                {"role": "system", "content": request.system_text},
                {"role": "user", "content": content},
            ],
        }

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        last_error: Exception | None = None
        with self._slots:
            for attempt in range(self.config.max_retries + 1):
                try:
                    resp = requests.post(
                        self.config.endpoint,
                        json=self._payload(request),
                        headers=headers,
                        timeout=self.config.timeout,
                    )
                    resp.raise_for_status()
                    body = resp.json()
                    return ChatResponse(text=body["choices"][0]["message"]["content"])
                except Exception as exc:
                    last_error = exc
                    time.sleep(min(2**attempt * 0.2, 2.0))
        raise BackendError(f"chat backend unreachable: {last_error}")


# --- deterministic mock chat -------------------------------------------------

MOCK_ACTIONS = [
    "setting out at first light",
    "finding an unexpected clue",
    "asking a friend for help",
    "facing a sudden setback",
    "trying a bold new plan",
    "pausing to look back",
    "mending what was broken",
    "heading home at dusk",
]

_WEAR_RE = re.compile(r"^(?P<subj>.+?) should wear (?:the )?(?P<desc>.+)$", re.IGNORECASE)
_PLACE_RE = re.compile(r"^(?:the )?(?P<thing>.+?) should be (?P<where>.+)$", re.IGNORECASE)
_GLOBAL_ATTR_RE = re.compile(
    r"^(?P<subj>.+?) has (?P<phrase>.+?) throughout the story$", re.IGNORECASE
)
_PAGE_SCOPE_RE = re.compile(r"^on page (?P<n>\d+),\s*(?P<rest>.+)$", re.IGNORECASE | re.DOTALL)


def _constraint_key(desc: str) -> str:
    head = re.split(r" as on page | on | in | at ", desc)[0].strip()
    words = [w for w in re.findall(r"[\w-]+", head.lower()) if w]
    return words[-1] if words else "detail"


def _split_clauses(text: str) -> list[str]:
    parts = re.split(r",\s+and\s+|;\s*", text.strip().rstrip("."))
    return [p.strip() for p in parts if p.strip()]


class MockChatBackend(ChatBackend):
    """Offline stand-in with deterministic behavior per response schema.

    Tests can override any schema with ``script``: a canned dict, a list of
    dicts consumed in call order, or a callable taking the ChatRequest.
    """

    supports_images = True

    def __init__(self, script: dict | None = None):
        self.script = dict(script or {})
        self.calls: list[ChatRequest] = []
        self.call_counts: dict[str, int] = {}

    def send(self, request: ChatRequest) -> ChatResponse:
        self.calls.append(request)
        sid = request.response_schema_id
        self.call_counts[sid] = self.call_counts.get(sid, 0) + 1
        scripted = self.script.get(sid)
        if scripted is not None:
            if callable(scripted):
                return ChatResponse(text=json.dumps(scripted(request)))
            if isinstance(scripted, list):
                entry = scripted.pop(0) if scripted else None
                if entry is not None:
                    return ChatResponse(text=json.dumps(entry))
            else:
                return ChatResponse(text=json.dumps(scripted))
        handler = getattr(self, f"_default_{sid}", None)
        if handler is None:
            raise BackendError(f"mock has no handler for schema {sid!r}")
        return ChatResponse(text=json.dumps(handler(json.loads(request.user_text))))

    # Default behaviors, all pure functions of the request payload.

    def _default_planner_output(self, payload: dict) -> dict:
        n = payload["n_pages"]
        phases = payload["phases"]
        pages = [
            {
                "scene_description": f"the hero {MOCK_ACTIONS[i % len(MOCK_ACTIONS)]}",
                "character_surfaces": ["Hero"],
                "narrative_phase": phases[i],
            }
            for i in range(n)
        ]
        return {
            "title": payload["prompt"][:60],
            "world": {"style": "storybook illustration", "tone": "gentle"},
            "pages": pages,
            "character_candidates": [
                {
                    "surface": "Hero",
                    "role": "protagonist",
                    "attribute_hints": {"appearance": "bright-eyed and hopeful"},
                }
            ],
        }

    def _default_coref_clusters(self, payload: dict) -> dict:
        # Exact-string fallback: no merging, each surface is its own entry.
        return {
            "clusters": [
                {"canonical": s, "members": [s]} for s in payload["surfaces"]
            ]
        }

    def _default_edit_ops(self, payload: dict) -> dict:
        request = payload["request"].strip()
        ops: list[dict] = []
        scope = _PAGE_SCOPE_RE.match(request)
        page_ordinal = int(scope.group("n")) if scope else None
        body = scope.group("rest") if scope else request
        for clause in _split_clauses(body):
            m = _GLOBAL_ATTR_RE.match(clause)
            if m:
                words = m.group("phrase").split()
                ops.append(
                    {
                        "op": "set_character_attribute",
                        "character": m.group("subj"),
                        "key": words[-1],
                        "value": " ".join(words[:-1]) or words[-1],
                    }
                )
                continue
            m = _WEAR_RE.match(clause)
            if m and page_ordinal is not None:
                desc = m.group("desc")
                ops.append(
                    {
                        "op": "set_page_constraint",
                        "page": page_ordinal,
                        "key": _constraint_key(desc),
                        "description": desc,
                    }
                )
                continue
            m = _PLACE_RE.match(clause)
            if m and page_ordinal is not None:
                thing, where = m.group("thing"), m.group("where")
                ops.append(
                    {
                        "op": "set_page_constraint",
                        "page": page_ordinal,
                        "key": thing.lower().replace(" ", "_") + "_position",
                        "description": f"{thing} {where}",
                    }
                )
                continue
        return {"ops": ops}

    def _default_critic_report(self, payload: dict) -> dict:
        return {"pass": True, "findings": []}


# --- narration ---------------------------------------------------------------


@dataclass
class NarrationRequest:
    """Context the text backend sees for one page: page state plus global identity."""

    identity_context: str
    scene: str
    phase: str
    character_names: list[str]
    tone: str = ""


class TextBackend:
    def generate_narration(self, request: NarrationRequest) -> str:
        raise NotImplementedError


class MockTextBackend(TextBackend):
    """Deterministic narration: a pure function of the narration context.

    Regenerating an unchanged context reproduces identical bytes, which keeps
    narration stable when only visual state moved.
    """

    _PHASE_LINES = {
        "introduce": "And so the story begins.",
        "develop": "The story gathers pace.",
        "resolve": "And slowly, everything finds its place.",
    }

    def generate_narration(self, request: NarrationRequest) -> str:
        cast = ", ".join(request.character_names) if request.character_names else "No one"
        tone = f" A {request.tone} hush settles over everything." if request.tone else ""
        return (
            f"{request.scene[:1].upper()}{request.scene[1:]}. "
            f"{cast} in view. {self._PHASE_LINES.get(request.phase, '')}{tone}"
        )


class HttpTextBackend(TextBackend):
    """Narration through any chat backend; the reply text is the narration."""

    def __init__(self, chat: ChatBackend, system_text: str = ""):
        self.chat = chat
        self.system_text = system_text or "Write one short storybook narration paragraph for the page context given as JSON."

    def generate_narration(self, request: NarrationRequest) -> str:
        payload = {
            "identity_context": request.identity_context,
            "scene": request.scene,
            "phase": request.phase,
            "characters": request.character_names,
            "tone": request.tone,
        }
        resp = self.chat.send(
            ChatRequest(
                system_text=self.system_text,
                user_text=json.dumps(payload, ensure_ascii=False),
                response_schema_id="narration_text",
            )
        )
        return resp.text.strip()


# --- images -------------------------------------------------------------------


@dataclass
class ImagePageSpec:
    page_id: str
    prompt_text: str


@dataclass
class ImageRequest:
    """One batched request: shared identity prompt, per-page prompts, a seed.

    ``nonce`` marks the generation pass (the engine passes the revision id) so
    deterministic backends can make every regeneration observable in bytes
    while staying reproducible across identical runs.
    """

    identity_text: str
    pages: list[ImagePageSpec]
    seed: int
    reference_images: list[Attachment] = field(default_factory=list)
    nonce: str = ""


class ImageBackend:
    def generate_images(self, request: ImageRequest) -> list[bytes]:
        """One image per requested page, in request order."""
        raise NotImplementedError


def _png_chunk(tag: bytes, data: bytes) -> bytes:
    return (
        struct.pack(">I", len(data))
        + tag
        + data
        + struct.pack(">I", zlib.crc32(tag + data) & 0xFFFFFFFF)
    )


def render_placeholder_png(label: str, size: int = 48) -> bytes:
    """Tiny single-color PNG embedding ``label`` in a text chunk.

    Pure stdlib and bit-deterministic: same label, same bytes, everywhere.
    """
    digest = hashlib.sha256(label.encode("utf-8")).digest()
    rgb = digest[:3]
    ihdr = struct.pack(">IIBBBBB", size, size, 8, 2, 0, 0, 0)
    row = b"\x00" + bytes(rgb) * size
    idat = zlib.compress(row * size, 9)
    text = b"comment\x00" + label.encode("utf-8")
    return (
        b"\x89PNG\r\n\x1a\n"
        + _png_chunk(b"IHDR", ihdr)
        + _png_chunk(b"tEXt", text)
        + _png_chunk(b"IDAT", idat)
        + _png_chunk(b"IEND", b"")
    )


class MockImageBackend(ImageBackend):
    """Placeholder renderer keyed on the prompt digest, seed, and pass nonce."""

    def __init__(self, fail_pages: set[str] | None = None):
        self.fail_pages = fail_pages or set()
        self.requests: list[ImageRequest] = []

    def generate_images(self, request: ImageRequest) -> list[bytes]:
        self.requests.append(request)
        out = []
        for page in request.pages:
            if page.page_id in self.fail_pages:
                raise BackendError(f"image generation failed for {page.page_id}")
            payload = "\n".join(
                [request.identity_text, page.prompt_text, f"seed={request.seed}", f"pass={request.nonce}"]
            )
            digest = hashlib.sha256(payload.encode("utf-8")).hexdigest()
            out.append(render_placeholder_png(digest))
        return out


class HttpImageBackend(ImageBackend):
    """POSTs the prompt set; expects {"images": ["<base64>", ...]} back."""

    def __init__(self, config: BackendConfig):
        if not config.endpoint:
            raise BackendError("image backend endpoint is not configured")
        self.config = config

    def generate_images(self, request: ImageRequest) -> list[bytes]:
        payload = {
            "id_prompt": request.identity_text,
            "frame_prompts": [p.prompt_text for p in request.pages],
            "seed": request.seed,
        }
        headers = {"Content-Type": "application/json"}
        if self.config.api_key:
            headers["Authorization"] = f"Bearer {self.config.api_key}"
        try:
            resp = requests.post(
                self.config.endpoint, json=payload, headers=headers, timeout=self.config.timeout
            )
            resp.raise_for_status()
            images = resp.json()["images"]
        except Exception as exc:
            raise BackendError(f"image backend unreachable: {exc}") from exc
        if len(images) != len(request.pages):
            raise BackendError(
                f"image backend returned {len(images)} images for {len(request.pages)} pages"
            )
        return [base64.b64decode(i) for i in images]


# --- embeddings -----------------------------------------------------------------


class EmbeddingBackend:
    dimension = 0

    def embed(self, data: bytes) -> list[float]:
        raise NotImplementedError


class MockEmbeddingBackend(EmbeddingBackend):
    """Hash-seeded pseudo-random unit vector; stable, nonzero, model-free."""

    dimension = 16

    def embed(self, data: bytes) -> list[float]:
        import numpy as np

        seed = int.from_bytes(hashlib.sha256(data).digest()[:8], "big")
        rng = np.random.default_rng(seed)
        vec = rng.standard_normal(self.dimension)
        vec /= np.linalg.norm(vec)
        return [float(x) for x in vec]


class HttpEmbeddingBackend(EmbeddingBackend):
    def __init__(self, config: BackendConfig, dimension: int = 512):
        if not config.endpoint:
            raise BackendError("embedding backend endpoint is not configured")
        self.config = config
        self.dimension = dimension

    def embed(self, data: bytes) -> list[float]:
        try:
            resp = requests.post(
                self.config.endpoint,
                json={"image_base64": base64.b64encode(data).decode("ascii")},
                timeout=self.config.timeout,
            )
            resp.raise_for_status()
            return [float(x) for x in resp.json()["embedding"]]
        except Exception as exc:
            raise BackendError(f"embedding backend unreachable: {exc}") from exc


# --- bundles ---------------------------------------------------------------------


@dataclass
class GenerationBackends:
    chat: ChatBackend
    text: TextBackend
    image: ImageBackend


def mock_backends(script: dict | None = None) -> GenerationBackends:
    return GenerationBackends(
        chat=MockChatBackend(script=script),
        text=MockTextBackend(),
        image=MockImageBackend(),
    )


def http_backends() -> GenerationBackends:
    chat = HttpChatBackend(BackendConfig.from_env("STORYSTATE_LLM"))
    return GenerationBackends(
        chat=chat,
        text=HttpTextBackend(chat),
        image=HttpImageBackend(BackendConfig.from_env("STORYSTATE_T2I")),
    )
