"""Backend-driven agents with strict structured-output contracts.

Every agent sends a versioned system template plus a JSON payload, demands a
JSON reply matching a schema, and re-prompts with the violation message up to
``max_retries`` times before raising MalformedAgentOutput. No raw backend text
ever reaches the story state: outputs are validated, grounded against the
current state, and dry-run through the edit engine first.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from importlib import resources

import jsonschema

from .backends import Attachment, ChatBackend, ChatRequest
from .edits import EditBatch, EditOp, OpError, apply_batch
from .errors import (
    EditRejected,
    MalformedAgentOutput,
    UngroundedReference,
)
from .model import (
    PHASE_RANK,
    PHASES,
    CharacterEntry,
    StoryState,
    WorldSettings,
    resolve_alias,
    validate,
)

DEFAULT_MAX_RETRIES = 2

_PHASE_ENUM = {"enum": list(PHASES)}

PLANNER_SCHEMA = {
    "type": "object",
    "required": ["pages", "character_candidates"],
    "properties": {
        "title": {"type": "string"},
        "world": {
            "type": "object",
            "properties": {"style": {"type": "string"}, "tone": {"type": "string"}},
        },
        "pages": {
            "type": "array",
            "minItems": 1,
            "items": {
                "type": "object",
                "required": ["scene_description", "character_surfaces", "narrative_phase"],
                "properties": {
                    "scene_description": {"type": "string", "minLength": 1},
                    "character_surfaces": {"type": "array", "items": {"type": "string"}},
                    "narrative_phase": _PHASE_ENUM,
                },
            },
        },
        "character_candidates": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["surface"],
                "properties": {
                    "surface": {"type": "string", "minLength": 1},
                    "role": {"type": "string"},
                    "attribute_hints": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        },
    },
}

COREF_SCHEMA = {
    "type": "object",
    "required": ["clusters"],
    "properties": {
        "clusters": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["canonical", "members"],
                "properties": {
                    "canonical": {"type": "string", "minLength": 1},
                    "members": {"type": "array", "minItems": 1, "items": {"type": "string"}},
                    "role": {"type": "string"},
                    "attributes": {"type": "object", "additionalProperties": {"type": "string"}},
                },
            },
        }
    },
}

EDIT_OPS_SCHEMA = {
    "type": "object",
    "required": ["ops"],
    "properties": {
        "ops": {
            "type": "array",
            "items": {"type": "object", "required": ["op"]},
        }
    },
}

CRITIC_SCHEMA = {
    "type": "object",
    "required": ["pass", "findings"],
    "properties": {
        "pass": {"type": "boolean"},
        "findings": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["kind", "detail", "fix_ops"],
                "properties": {
                    "kind": {
                        "enum": [
                            "attribute_mismatch",
                            "missing_element",
                            "mislocated_element",
                            "layout_violation",
                        ]
                    },
                    "detail": {"type": "string"},
                    "fix_ops": {"type": "array", "minItems": 1, "items": {"type": "object"}},
                },
            },
        },
    },
}

_SCHEMAS = {
    "planner_output": PLANNER_SCHEMA,
    "coref_clusters": COREF_SCHEMA,
    "edit_ops": EDIT_OPS_SCHEMA,
    "critic_report": CRITIC_SCHEMA,
}


def load_template(name: str) -> str:
    return resources.files("storystate.templates").joinpath(f"{name}.txt").read_text("utf-8")


def _ask(
    backend: ChatBackend,
    schema_id: str,
    system_text: str,
    payload: dict,
    *,
    attachments: list[Attachment] | None = None,
    extra_check=None,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> dict:
    """Send, validate against the schema (plus an optional semantic check),
    and re-prompt with the violation message on failure."""
    user_text = json.dumps(payload, ensure_ascii=False)
    raw = ""
    for _ in range(max_retries + 1):
        resp = backend.send(
            ChatRequest(
                system_text=system_text,
                user_text=user_text,
                response_schema_id=schema_id,
                attachments=list(attachments or []),
            )
        )
        raw = resp.text
        try:
            doc = json.loads(raw)
            jsonschema.validate(doc, _SCHEMAS[schema_id])
            if extra_check is not None:
                extra_check(doc)
            return doc
        except (json.JSONDecodeError, jsonschema.ValidationError, ValueError) as exc:
            user_text = json.dumps(
                {**payload, "previous_reply_problem": str(exc)}, ensure_ascii=False
            )
    raise MalformedAgentOutput(f"{schema_id} still invalid after retries", raw_text=raw)


# --- planner -----------------------------------------------------------------


@dataclass
class PlannedPage:
    scene_description: str
    character_surfaces: list[str]
    narrative_phase: str


@dataclass
class CandidateCharacter:
    surface: str
    role: str = ""
    attribute_hints: dict[str, str] = field(default_factory=dict)


@dataclass
class PlannerOutput:
    pages: list[PlannedPage]
    character_candidates: list[CandidateCharacter]
    title: str = ""
    world: dict = field(default_factory=dict)


def default_phase_split(n_pages: int, intro_frac: float = 0.2, resolve_frac: float = 0.4) -> list[str]:
    """Phase per page: leading introduce block, trailing resolve block, develop between."""
    n_intro = min(math.ceil(intro_frac * n_pages), n_pages)
    n_resolve = min(math.ceil(resolve_frac * n_pages), n_pages - n_intro)
    n_dev = n_pages - n_intro - n_resolve
    return ["introduce"] * n_intro + ["develop"] * n_dev + ["resolve"] * n_resolve


def plan(
    backend: ChatBackend,
    user_prompt: str,
    n_pages: int,
    *,
    phase_split: list[str] | None = None,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> PlannerOutput:
    """Decompose a story request into a page-level outline with exactly n_pages pages."""
    if n_pages < 1:
        raise ValueError("n_pages must be >= 1")
    if not user_prompt.strip():
        raise ValueError("user_prompt must be non-empty")
    phases = phase_split or default_phase_split(n_pages)

    def check(doc: dict) -> None:
        if len(doc["pages"]) != n_pages:
            raise ValueError(f"expected exactly {n_pages} pages, got {len(doc['pages'])}")
        ranks = [PHASE_RANK[p["narrative_phase"]] for p in doc["pages"]]
        if ranks != sorted(ranks):
            raise ValueError("narrative phases must be monotone across pages")

    doc = _ask(
        backend,
        "planner_output",
        load_template("planner"),
        {"prompt": user_prompt, "n_pages": n_pages, "phases": phases},
        extra_check=check,
        max_retries=max_retries,
    )
    return PlannerOutput(
        pages=[
            PlannedPage(
                scene_description=p["scene_description"],
                character_surfaces=list(p.get("character_surfaces", [])),
                narrative_phase=p["narrative_phase"],
            )
            for p in doc["pages"]
        ],
        character_candidates=[
            CandidateCharacter(
                surface=c["surface"],
                role=c.get("role", ""),
                attribute_hints=dict(c.get("attribute_hints", {})),
            )
            for c in doc["character_candidates"]
        ],
        title=doc.get("title", ""),
        world=dict(doc.get("world", {})),
    )


# --- state manager ------------------------------------------------------------


def build_state(
    planner_output: PlannerOutput,
    backend: ChatBackend,
    *,
    story_id: str,
    title: str = "",
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> StoryState:
    """Turn a plan into a valid story state with a unified character sheet.

    Surface forms are clustered into one entry per entity; the coreference
    call is skipped when there is nothing to disambiguate (a single distinct
    surface). Every page surface must land on exactly one entry.
    """
    surfaces: list[str] = []
    for cand in planner_output.character_candidates:
        if cand.surface not in surfaces:
            surfaces.append(cand.surface)
    for page in planner_output.pages:
        for s in page.character_surfaces:
            if s not in surfaces:
                surfaces.append(s)

    if len(surfaces) > 1:
        def check(doc: dict) -> None:
            covered = {m for c in doc["clusters"] for m in c["members"]}
            missing = [s for s in surfaces if s not in covered]
            if missing:
                raise ValueError(f"surfaces not covered by any cluster: {missing}")

        doc = _ask(
            backend,
            "coref_clusters",
            load_template("coref"),
            {"surfaces": surfaces},
            extra_check=check,
            max_retries=max_retries,
        )
        clusters = doc["clusters"]
    else:
        clusters = [{"canonical": s, "members": [s]} for s in surfaces]

    hints = {c.surface: c for c in planner_output.character_candidates}
    state = StoryState(
        id=story_id,
        title=title or planner_output.title or "Untitled story",
        world=WorldSettings(
            style=planner_output.world.get("style") or "storybook illustration",
            tone=planner_output.world.get("tone", ""),
        ),
    )
    surface_to_id: dict[str, str] = {}
    for cluster in clusters:
        canonical = cluster["canonical"]
        members = list(cluster["members"])
        attributes: dict[str, str] = dict(cluster.get("attributes", {}))
        role = cluster.get("role", "")
        for member in members:
            cand = hints.get(member)
            if cand is not None:
                for k, v in cand.attribute_hints.items():
                    attributes.setdefault(k, v)
                role = role or cand.role
        entry = CharacterEntry(
            id=state.allocate_id("character"),
            name=canonical,
            role=role,
            attributes=attributes,
            aliases=[m for m in members if m.casefold() != canonical.casefold()],
        )
        state.characters.append(entry)
        for member in members:
            surface_to_id[member.casefold()] = entry.id

    for i, planned in enumerate(planner_output.pages, start=1):
        page_chars: list[str] = []
        for surface in planned.character_surfaces:
            cid = surface_to_id.get(surface.casefold())
            if cid is None:
                raise MalformedAgentOutput(
                    f"page {i} uses surface {surface!r} outside every cluster"
                )
            if cid not in page_chars:
                page_chars.append(cid)
        from .model import PageState

        state.pages.append(
            PageState(
                id=state.allocate_id("page"),
                ordinal=i,
                scene_description=planned.scene_description,
                characters=page_chars,
                narrative_phase=planned.narrative_phase,
            )
        )

    violations = validate(state)
    if violations:
        raise MalformedAgentOutput(
            "state built from plan is invalid: "
            + "; ".join(f"{v.code}({v.subject})" for v in violations)
        )
    return state


# --- free-text edit parsing ------------------------------------------------------


def _ground_character(state: StoryState, ref: str) -> str:
    if state.has_character(ref):
        return ref
    resolved = resolve_alias(state, ref)
    if resolved is None:
        raise UngroundedReference(ref)
    return resolved


def _ground_page(state: StoryState, ref) -> str:
    if isinstance(ref, int):
        for page in state.pages:
            if page.ordinal == ref:
                return page.id
        raise UngroundedReference(f"page {ref}")
    if isinstance(ref, str) and state.has_page(ref):
        return ref
    raise UngroundedReference(f"page {ref!r}")


def ground_ops(state: StoryState, raw_ops: list[dict]) -> list[EditOp]:
    """Resolve page ordinals and character surfaces in raw op dicts to stable ids."""
    grounded: list[EditOp] = []
    for raw in raw_ops:
        op = dict(raw)
        if "page" in op:
            op["page"] = _ground_page(state, op["page"])
        if "character" in op:
            op["character"] = _ground_character(state, op["character"])
        if "invariant" in op and isinstance(op["invariant"], dict):
            inv = dict(op["invariant"])
            inv["character"] = _ground_character(state, inv["character"])
            inv.setdefault("active", True)
            op["invariant"] = inv
        try:
            grounded.append(EditOp.from_dict(op))
        except OpError as exc:
            raise MalformedAgentOutput(str(exc), raw_text=json.dumps(raw)) from exc
    return grounded


def parse_edit_request(
    backend: ChatBackend,
    state: StoryState,
    request: str,
    *,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> EditBatch:
    """Natural-language request to a grounded, dry-run-validated edit batch."""
    if not request.strip():
        raise ValueError("request must be non-empty")
    payload = {
        "request": request,
        "pages": [
            {"ordinal": p.ordinal, "id": p.id, "scene": p.scene_description}
            for p in state.pages_in_order()
        ],
        "characters": [
            {"id": c.id, "name": c.name, "aliases": c.aliases} for c in state.characters
        ],
    }
    doc = _ask(
        backend,
        "edit_ops",
        load_template("edit_parser"),
        payload,
        max_retries=max_retries,
    )
    if not doc["ops"]:
        raise MalformedAgentOutput(
            f"backend produced no ops for request {request!r}", raw_text=json.dumps(doc)
        )
    batch = EditBatch(ops=ground_ops(state, doc["ops"]), origin="user", note=request)
    try:
        apply_batch(state, batch)
    except EditRejected as exc:
        raise MalformedAgentOutput(
            f"parsed ops rejected by the edit engine: {exc}", raw_text=json.dumps(doc)
        ) from exc
    return batch


# --- consistency critic ------------------------------------------------------------


@dataclass
class PageAssets:
    narration_text: str = ""
    image_bytes: bytes = b""
    image_hash: str = ""


@dataclass
class CriticFinding:
    kind: str
    page: str
    detail: str
    proposed_fix: EditBatch

    @property
    def finding_id(self) -> str:
        blob = json.dumps(
            {"kind": self.kind, "page": self.page, "detail": self.detail,
             "fix": self.proposed_fix.to_dict()},
            sort_keys=True,
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]

    def to_dict(self) -> dict:
        return {
            "id": self.finding_id,
            "kind": self.kind,
            "page": self.page,
            "detail": self.detail,
            "proposed_fix": self.proposed_fix.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CriticFinding":
        return cls(
            kind=d["kind"],
            page=d["page"],
            detail=d["detail"],
            proposed_fix=EditBatch.from_dict(d["proposed_fix"]),
        )


@dataclass
class CriticReport:
    page: str
    findings: list[CriticFinding]
    passed: bool
    degraded: bool = False

    def to_dict(self) -> dict:
        return {
            "page": self.page,
            "findings": [f.to_dict() for f in self.findings],
            "pass": self.passed,
            "degraded": self.degraded,
        }


_SHEET_OPS = {"set_character_attribute", "add_identity_invariant", "remove_identity_invariant"}


def critique(
    backend: ChatBackend,
    state: StoryState,
    page_id: str,
    assets: PageAssets,
    *,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> CriticReport:
    """Verify one page's assets against the state; findings carry minimal fixes.

    Fix ops must stay on the critiqued page or the character sheet, ground
    against the current state, and survive a dry run; anything else is treated
    as malformed output.
    """
    page = state.page_by_id(page_id)
    payload = {
        "characters": [c.to_dict() for c in state.characters],
        "identity_invariants": [i.to_dict() for i in state.invariants_list],
        "world": state.world.to_dict(),
        "page": {
            "id": page.id,
            "ordinal": page.ordinal,
            "scene_description": page.scene_description,
            "characters": page.characters,
            "constraints": [c.to_dict() for c in page.constraints],
            "narrative_phase": page.narrative_phase,
        },
        "narration": assets.narration_text,
    }
    attachments: list[Attachment] = []
    degraded = False
    if assets.image_bytes and backend.supports_images:
        attachments.append(Attachment("page_image", assets.image_hash, assets.image_bytes))
    else:
        degraded = True
        payload["image_description"] = (
            f"(image attachment unavailable; content hash {assets.image_hash or 'missing'})"
        )

    def check(doc: dict) -> None:
        if doc["pass"] != (len(doc["findings"]) == 0):
            raise ValueError("pass flag must be true exactly when findings is empty")
        for f in doc["findings"]:
            for raw in f["fix_ops"]:
                kind = raw.get("op")
                if kind not in _SHEET_OPS and raw.get("page") not in (page.id, page.ordinal):
                    raise ValueError(
                        f"fix op {kind!r} must target page {page.id} or the character sheet"
                    )

    doc = _ask(
        backend,
        "critic_report",
        load_template("critic"),
        payload,
        attachments=attachments,
        extra_check=check,
        max_retries=max_retries,
    )
    findings: list[CriticFinding] = []
    for f in doc["findings"]:
        try:
            ops = ground_ops(state, f["fix_ops"])
            fix = EditBatch(ops=ops, origin="critic", note=f["detail"])
            apply_batch(state, fix)
        except (UngroundedReference, EditRejected, MalformedAgentOutput) as exc:
            raise MalformedAgentOutput(
                f"critic fix for page {page.id} not applicable: {exc}",
                raw_text=json.dumps(f),
            ) from exc
        findings.append(
            CriticFinding(kind=f["kind"], page=page.id, detail=f["detail"], proposed_fix=fix)
        )
    return CriticReport(page=page.id, findings=findings, passed=doc["pass"], degraded=degraded)
