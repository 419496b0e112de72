"""Story state: the explicit, persisted object every other component reads and writes.

A story is a character sheet, global world settings, and an ordered list of
page states. Values are treated as immutable once constructed: the edit engine
produces new states rather than mutating in place, so snapshots can be shared
freely between readers.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from .errors import AmbiguousAlias, UnknownCharacter, UnknownPage

PHASE_INTRODUCE = "introduce"
PHASE_DEVELOP = "develop"
PHASE_RESOLVE = "resolve"
PHASES = (PHASE_INTRODUCE, PHASE_DEVELOP, PHASE_RESOLVE)
PHASE_RANK = {name: i for i, name in enumerate(PHASES)}

ASSET_KINDS = ("narration_text", "page_image", "reference_image")
CONSTRAINT_SOURCES = ("user_edit", "planner", "critic")


@dataclass
class AssetRef:
    """Pointer to an opaque asset stored in the project's content-addressed store."""

    kind: str
    uri: str
    content_hash: str
    revision: str

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "uri": self.uri,
            "content_hash": self.content_hash,
            "revision": self.revision,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AssetRef":
        return cls(
            kind=d["kind"],
            uri=d["uri"],
            content_hash=d["content_hash"],
            revision=d["revision"],
        )


@dataclass
class CharacterEntry:
    """One character: name, narrative role, ordered visual attributes, aliases.

    Attribute order is preserved because it feeds deterministic prompt
    rendering.
    """

    id: str
    name: str
    role: str = ""
    attributes: dict[str, str] = field(default_factory=dict)
    reference_assets: list[AssetRef] = field(default_factory=list)
    aliases: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "name": self.name,
            "role": self.role,
            "attributes": dict(self.attributes),
            "reference_assets": [a.to_dict() for a in self.reference_assets],
            "aliases": list(self.aliases),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CharacterEntry":
        return cls(
            id=d["id"],
            name=d["name"],
            role=d.get("role", ""),
            attributes=dict(d.get("attributes", {})),
            reference_assets=[AssetRef.from_dict(a) for a in d.get("reference_assets", [])],
            aliases=list(d.get("aliases", [])),
        )


@dataclass
class IdentityInvariant:
    """Persistent per-character constraint injected into the identity prompt while active."""

    character: str
    constraint_text: str
    active: bool = True

    def to_dict(self) -> dict:
        return {
            "character": self.character,
            "constraint_text": self.constraint_text,
            "active": self.active,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "IdentityInvariant":
        return cls(
            character=d["character"],
            constraint_text=d["constraint_text"],
            active=d.get("active", True),
        )


@dataclass
class WorldSettings:
    """Global elements shared across pages: style, tone, recurring locations and props."""

    style: str
    tone: str = ""
    recurring_locations: list[str] = field(default_factory=list)
    recurring_props: list[str] = field(default_factory=list)

    WORLD_FIELDS = ("style", "tone", "recurring_locations", "recurring_props")

    def to_dict(self) -> dict:
        return {
            "style": self.style,
            "tone": self.tone,
            "recurring_locations": list(self.recurring_locations),
            "recurring_props": list(self.recurring_props),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "WorldSettings":
        return cls(
            style=d["style"],
            tone=d.get("tone", ""),
            recurring_locations=list(d.get("recurring_locations", [])),
            recurring_props=list(d.get("recurring_props", [])),
        )


@dataclass
class VisualConstraint:
    """Named visual slot on a page, e.g. key "tv_position" -> "TV on the left"."""

    key: str
    description: str
    source: str = "user_edit"

    def to_dict(self) -> dict:
        return {"key": self.key, "description": self.description, "source": self.source}

    @classmethod
    def from_dict(cls, d: dict) -> "VisualConstraint":
        return cls(key=d["key"], description=d["description"], source=d.get("source", "user_edit"))


@dataclass
class PageState:
    """Per-page state: scene text, characters present, constraints, phase, asset pointers.

    ``id`` is stable across reordering; ``ordinal`` is the 1-based position and
    may change. ``failures`` records per-kind generation failures awaiting retry.
    """

    id: str
    ordinal: int
    scene_description: str
    characters: list[str] = field(default_factory=list)
    constraints: list[VisualConstraint] = field(default_factory=list)
    narrative_phase: str = PHASE_INTRODUCE
    narration_asset: AssetRef | None = None
    image_asset: AssetRef | None = None
    failures: dict[str, str] = field(default_factory=dict)

    # Fields that feed prompt/narration content, as opposed to bookkeeping
    # (assets, failures) which must never mark a page dirty.
    CONTENT_FIELDS = ("scene_description", "characters", "constraints", "narrative_phase")

    def constraint_map(self) -> dict[str, VisualConstraint]:
        return {c.key: c for c in self.constraints}

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "ordinal": self.ordinal,
            "scene_description": self.scene_description,
            "characters": list(self.characters),
            "constraints": [c.to_dict() for c in self.constraints],
            "narrative_phase": self.narrative_phase,
            "narration_asset": self.narration_asset.to_dict() if self.narration_asset else None,
            "image_asset": self.image_asset.to_dict() if self.image_asset else None,
            "failures": dict(self.failures),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PageState":
        return cls(
            id=d["id"],
            ordinal=d["ordinal"],
            scene_description=d["scene_description"],
            characters=list(d.get("characters", [])),
            constraints=[VisualConstraint.from_dict(c) for c in d.get("constraints", [])],
            narrative_phase=d.get("narrative_phase", PHASE_INTRODUCE),
            narration_asset=AssetRef.from_dict(d["narration_asset"]) if d.get("narration_asset") else None,
            image_asset=AssetRef.from_dict(d["image_asset"]) if d.get("image_asset") else None,
            failures=dict(d.get("failures", {})),
        )


@dataclass
class StoryState:
    """The whole story: character sheet, identity invariants, world, ordered pages.

    ``prompt_suffix`` is an optional clause appended to every compiled page
    prompt (used by dataset-shaped stories, empty for interactive ones).
    ``id_seq`` holds allocation counters so page/character ids are never reused
    within a story, even after deletions.
    """

    id: str
    title: str
    characters: list[CharacterEntry] = field(default_factory=list)
    invariants_list: list[IdentityInvariant] = field(default_factory=list)
    world: WorldSettings = field(default_factory=lambda: WorldSettings(style="storybook illustration"))
    pages: list[PageState] = field(default_factory=list)
    prompt_suffix: str = ""
    id_seq: dict[str, int] = field(default_factory=lambda: {"page": 0, "character": 0})

    # --- lookups ---------------------------------------------------------

    def character_by_id(self, character_id: str) -> CharacterEntry:
        for entry in self.characters:
            if entry.id == character_id:
                return entry
        raise UnknownCharacter(character_id)

    def has_character(self, character_id: str) -> bool:
        return any(entry.id == character_id for entry in self.characters)

    def page_by_id(self, page_id: str) -> PageState:
        for page in self.pages:
            if page.id == page_id:
                return page
        raise UnknownPage(page_id)

    def has_page(self, page_id: str) -> bool:
        return any(page.id == page_id for page in self.pages)

    def page_by_ordinal(self, ordinal: int) -> PageState:
        for page in self.pages:
            if page.ordinal == ordinal:
                return page
        raise UnknownPage(f"ordinal {ordinal}")

    def pages_in_order(self) -> list[PageState]:
        return sorted(self.pages, key=lambda p: p.ordinal)

    def active_invariants(self, character_id: str) -> list[IdentityInvariant]:
        return [
            inv
            for inv in self.invariants_list
            if inv.character == character_id and inv.active
        ]

    # --- id allocation ----------------------------------------------------

    def allocate_id(self, kind: str) -> str:
        """Hand out the next page/character id. Ids are never reused."""
        prefix = {"page": "p", "character": "c"}[kind]
        self.id_seq[kind] = self.id_seq.get(kind, 0) + 1
        return f"{prefix}{self.id_seq[kind]}"

    def note_external_id(self, kind: str, explicit_id: str) -> None:
        """Advance the counter past an externally supplied id so it is not re-issued."""
        prefix = {"page": "p", "character": "c"}[kind]
        if explicit_id.startswith(prefix) and explicit_id[len(prefix):].isdigit():
            n = int(explicit_id[len(prefix):])
            if n > self.id_seq.get(kind, 0):
                self.id_seq[kind] = n

    # --- serialization ----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "title": self.title,
            "characters": [c.to_dict() for c in self.characters],
            "invariants_list": [i.to_dict() for i in self.invariants_list],
            "world": self.world.to_dict(),
            "pages": [p.to_dict() for p in self.pages_in_order()],
            "prompt_suffix": self.prompt_suffix,
            "id_seq": dict(self.id_seq),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StoryState":
        return cls(
            id=d["id"],
            title=d.get("title", ""),
            characters=[CharacterEntry.from_dict(c) for c in d.get("characters", [])],
            invariants_list=[IdentityInvariant.from_dict(i) for i in d.get("invariants_list", [])],
            world=WorldSettings.from_dict(d["world"]),
            pages=[PageState.from_dict(p) for p in d.get("pages", [])],
            prompt_suffix=d.get("prompt_suffix", ""),
            id_seq=dict(d.get("id_seq", {"page": 0, "character": 0})),
        )

    def clone(self) -> "StoryState":
        return copy.deepcopy(self)


def canonical_json(state: StoryState) -> str:
    """Serialize with a fixed field order so byte comparison detects real changes.

    Attribute maps keep insertion order (it is part of the payload); field
    order within objects is fixed by the ``to_dict`` methods, not by sorting.
    """
    return json.dumps(state.to_dict(), ensure_ascii=False, indent=2) + "\n"


def state_fingerprint(state: StoryState) -> str:
    return hashlib.sha256(canonical_json(state).encode("utf-8")).hexdigest()


def parse_state(text: str) -> StoryState:
    return StoryState.from_dict(json.loads(text))


# --- validation -----------------------------------------------------------


@dataclass
class Violation:
    """One invariant violation: stable code plus the offending id."""

    code: str
    subject: str
    message: str

    def to_dict(self) -> dict:
        return {"code": self.code, "subject": self.subject, "message": self.message}


def validate(state: StoryState) -> list[Violation]:
    """Check every structural invariant; a valid state yields an empty report.

    Violations are data, not exceptions: callers decide whether to reject.
    """
    report: list[Violation] = []

    seen_char_ids: set[str] = set()
    alias_owner: dict[str, str] = {}
    for entry in state.characters:
        if not entry.name:
            report.append(Violation("empty_name", entry.id, "character has an empty name"))
        if entry.id in seen_char_ids:
            report.append(Violation("duplicate_character_id", entry.id, "character id used twice"))
        seen_char_ids.add(entry.id)
        for surface in [entry.name] + entry.aliases:
            key = surface.casefold()
            owner = alias_owner.get(key)
            if owner is not None and owner != entry.id:
                report.append(
                    Violation(
                        "alias_conflict",
                        entry.id,
                        f"surface {surface!r} already maps to character {owner}",
                    )
                )
            alias_owner.setdefault(key, entry.id)

    for inv in state.invariants_list:
        if inv.character not in seen_char_ids:
            report.append(
                Violation("dangling_invariant", inv.character, "invariant refers to a missing character")
            )
        if not inv.constraint_text:
            report.append(
                Violation("empty_invariant", inv.character, "invariant has empty constraint text")
            )

    if not state.world.style:
        report.append(Violation("empty_style", state.id, "world style must be non-empty"))

    n = len(state.pages)
    seen_ordinals: set[int] = set()
    seen_page_ids: set[str] = set()
    for page in state.pages:
        if page.id in seen_page_ids:
            report.append(Violation("duplicate_page_id", page.id, "page id used twice"))
        seen_page_ids.add(page.id)
        if page.ordinal in seen_ordinals:
            report.append(
                Violation("duplicate_ordinal", page.id, f"ordinal {page.ordinal} used twice")
            )
        seen_ordinals.add(page.ordinal)
        if page.narrative_phase not in PHASE_RANK:
            report.append(
                Violation("bad_phase", page.id, f"unknown narrative phase {page.narrative_phase!r}")
            )
        for character_id in page.characters:
            if character_id not in seen_char_ids:
                report.append(
                    Violation(
                        "dangling_character",
                        page.id,
                        f"page references missing character {character_id}",
                    )
                )
        keys = [c.key for c in page.constraints]
        for key in sorted({k for k in keys if keys.count(k) > 1}):
            report.append(
                Violation("duplicate_constraint_key", page.id, f"constraint key {key!r} used twice")
            )
        for c in page.constraints:
            if not c.description:
                report.append(
                    Violation("empty_constraint", page.id, f"constraint {c.key!r} has empty description")
                )

    for missing in sorted(set(range(1, n + 1)) - seen_ordinals):
        report.append(Violation("ordinal_gap", state.id, f"no page has ordinal {missing}"))

    ordered = state.pages_in_order()
    for prev, cur in zip(ordered, ordered[1:]):
        if (
            prev.narrative_phase in PHASE_RANK
            and cur.narrative_phase in PHASE_RANK
            and PHASE_RANK[cur.narrative_phase] < PHASE_RANK[prev.narrative_phase]
        ):
            report.append(
                Violation(
                    "phase_regression",
                    cur.id,
                    f"phase {cur.narrative_phase!r} after {prev.narrative_phase!r}",
                )
            )

    return report


def pages_referencing(state: StoryState, character_id: str) -> set[str]:
    """Pages that list the character. Backbone of selective regeneration."""
    if not state.has_character(character_id):
        raise UnknownCharacter(character_id)
    index: dict[str, set[str]] = {}
    for page in state.pages:
        for cid in page.characters:
            index.setdefault(cid, set()).add(page.id)
    return index.get(character_id, set())


def resolve_alias(state: StoryState, surface: str) -> str | None:
    """Case-insensitive match of a surface form against names and aliases.

    Returns the character id, or None when nothing matches. A surface matching
    two distinct entries raises AmbiguousAlias with the candidate ids.
    """
    needle = surface.strip().casefold()
    matches: list[str] = []
    for entry in state.characters:
        surfaces = [entry.name] + entry.aliases
        if any(s.casefold() == needle for s in surfaces):
            matches.append(entry.id)
    if not matches:
        return None
    if len(set(matches)) > 1:
        raise AmbiguousAlias(surface, sorted(set(matches)))
    return matches[0]
