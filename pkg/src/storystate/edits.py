"""Transactional edits over story state, change diffing, and dirty-set computation.

The dirty set answers "which pages must regenerate after this edit". It is
computed twice, by design:

* ``compute_dirty_set`` is the fast path: it walks the structural diff and the
  character-to-page index, using clause renders only to decide whether a sheet
  or world change is visible in prompts at all.
* ``oracle_dirty_set`` recompiles every page's effective prompt for both
  states and diffs the text. It is the definition; the fast path must match it
  exactly, and the test suite asserts that over randomized edits.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

from .errors import EditRejected, UnknownRevision
from .model import (
    PHASES,
    CharacterEntry,
    IdentityInvariant,
    PageState,
    StoryState,
    WorldSettings,
    pages_referencing,
    validate,
)
from .prompts import compile_identity, effective_page_prompt, identity_clause, world_render


class OpError(ValueError):
    """Raised by an op that cannot apply; translated to EditRejected with the op index."""


# --- edit operations ---------------------------------------------------------

_OP_REGISTRY: dict[str, type] = {}


def _register(cls):
    _OP_REGISTRY[cls.KIND] = cls
    return cls


@dataclass
class EditOp:
    KIND = ""

    def apply(self, state: StoryState) -> None:
        raise NotImplementedError

    def to_dict(self) -> dict:
        raise NotImplementedError

    def summary(self) -> str:
        return self.KIND

    @staticmethod
    def from_dict(d: dict) -> "EditOp":
        kind = d.get("op")
        cls = _OP_REGISTRY.get(kind)
        if cls is None:
            raise OpError(f"unknown op kind {kind!r}")
        return cls._from_fields(d)


@_register
@dataclass
class SetCharacterAttribute(EditOp):
    character: str
    key: str
    value: str
    KIND = "set_character_attribute"

    def apply(self, state: StoryState) -> None:
        if not state.has_character(self.character):
            raise OpError(f"unknown character {self.character!r}")
        state.character_by_id(self.character).attributes[self.key] = self.value

    def to_dict(self) -> dict:
        return {"op": self.KIND, "character": self.character, "key": self.key, "value": self.value}

    def summary(self) -> str:
        return f"set {self.character}.{self.key} = {self.value}"

    @classmethod
    def _from_fields(cls, d):
        return cls(character=d["character"], key=d["key"], value=d["value"])


@_register
@dataclass
class AddCharacter(EditOp):
    entry: CharacterEntry
    KIND = "add_character"

    def apply(self, state: StoryState) -> None:
        entry = copy.deepcopy(self.entry)
        if not entry.id:
            entry.id = state.allocate_id("character")
        elif state.has_character(entry.id):
            raise OpError(f"character id {entry.id!r} already in use")
        else:
            state.note_external_id("character", entry.id)
        state.characters.append(entry)

    def to_dict(self) -> dict:
        return {"op": self.KIND, "entry": self.entry.to_dict()}

    def summary(self) -> str:
        return f"add character {self.entry.name}"

    @classmethod
    def _from_fields(cls, d):
        return cls(entry=CharacterEntry.from_dict(d["entry"]))


@_register
@dataclass
class RemoveCharacter(EditOp):
    character: str
    KIND = "remove_character"

    def apply(self, state: StoryState) -> None:
        if not state.has_character(self.character):
            raise OpError(f"unknown character {self.character!r}")
        state.characters = [c for c in state.characters if c.id != self.character]
        # Cascade so the state stays valid: drop page memberships and invariants.
        for page in state.pages:
            if self.character in page.characters:
                page.characters = [c for c in page.characters if c != self.character]
        state.invariants_list = [i for i in state.invariants_list if i.character != self.character]

    def to_dict(self) -> dict:
        return {"op": self.KIND, "character": self.character}

    def summary(self) -> str:
        return f"remove character {self.character}"

    @classmethod
    def _from_fields(cls, d):
        return cls(character=d["character"])


@_register
@dataclass
class AddIdentityInvariant(EditOp):
    invariant: IdentityInvariant
    KIND = "add_identity_invariant"

    def apply(self, state: StoryState) -> None:
        if not state.has_character(self.invariant.character):
            raise OpError(f"unknown character {self.invariant.character!r}")
        state.invariants_list.append(copy.deepcopy(self.invariant))

    def to_dict(self) -> dict:
        return {"op": self.KIND, "invariant": self.invariant.to_dict()}

    def summary(self) -> str:
        return f"invariant on {self.invariant.character}: {self.invariant.constraint_text}"

    @classmethod
    def _from_fields(cls, d):
        return cls(invariant=IdentityInvariant.from_dict(d["invariant"]))


@_register
@dataclass
class RemoveIdentityInvariant(EditOp):
    character: str
    constraint_text: str
    KIND = "remove_identity_invariant"

    def apply(self, state: StoryState) -> None:
        for i, inv in enumerate(state.invariants_list):
            if inv.character == self.character and inv.constraint_text == self.constraint_text:
                del state.invariants_list[i]
                return
        raise OpError(
            f"no invariant {self.constraint_text!r} on character {self.character!r}"
        )

    def to_dict(self) -> dict:
        return {"op": self.KIND, "character": self.character, "constraint_text": self.constraint_text}

    def summary(self) -> str:
        return f"drop invariant on {self.character}: {self.constraint_text}"

    @classmethod
    def _from_fields(cls, d):
        return cls(character=d["character"], constraint_text=d["constraint_text"])


@_register
@dataclass
class SetWorldField(EditOp):
    world_field: str
    value: object
    KIND = "set_world_field"

    def apply(self, state: StoryState) -> None:
        if self.world_field not in WorldSettings.WORLD_FIELDS:
            raise OpError(f"unknown world field {self.world_field!r}")
        if self.world_field in ("recurring_locations", "recurring_props"):
            if not isinstance(self.value, list) or not all(isinstance(v, str) for v in self.value):
                raise OpError(f"{self.world_field} expects a list of strings")
            setattr(state.world, self.world_field, list(self.value))
        else:
            if not isinstance(self.value, str):
                raise OpError(f"{self.world_field} expects a string")
            setattr(state.world, self.world_field, self.value)

    def to_dict(self) -> dict:
        return {"op": self.KIND, "field": self.world_field, "value": self.value}

    def summary(self) -> str:
        return f"set world {self.world_field} = {self.value}"

    @classmethod
    def _from_fields(cls, d):
        return cls(world_field=d["field"], value=d["value"])


@_register
@dataclass
class SetSceneDescription(EditOp):
    page: str
    text: str
    KIND = "set_scene_description"

    def apply(self, state: StoryState) -> None:
        state.page_by_id(self.page).scene_description = self.text

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "text": self.text}

    def summary(self) -> str:
        return f"scene of {self.page}: {self.text}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], text=d["text"])


@_register
@dataclass
class SetPageConstraint(EditOp):
    page: str
    key: str
    description: str
    source: str = "user_edit"
    KIND = "set_page_constraint"

    def apply(self, state: StoryState) -> None:
        from .model import VisualConstraint

        page = state.page_by_id(self.page)
        for c in page.constraints:
            if c.key == self.key:
                c.description = self.description
                c.source = self.source
                return
        page.constraints.append(
            VisualConstraint(key=self.key, description=self.description, source=self.source)
        )

    def to_dict(self) -> dict:
        return {
            "op": self.KIND,
            "page": self.page,
            "key": self.key,
            "description": self.description,
            "source": self.source,
        }

    def summary(self) -> str:
        return f"constraint {self.key} on {self.page}: {self.description}"

    @classmethod
    def _from_fields(cls, d):
        return cls(
            page=d["page"],
            key=d["key"],
            description=d["description"],
            source=d.get("source", "user_edit"),
        )


@_register
@dataclass
class RemovePageConstraint(EditOp):
    page: str
    key: str
    KIND = "remove_page_constraint"

    def apply(self, state: StoryState) -> None:
        page = state.page_by_id(self.page)
        before = len(page.constraints)
        page.constraints = [c for c in page.constraints if c.key != self.key]
        if len(page.constraints) == before:
            raise OpError(f"page {self.page} has no constraint {self.key!r}")

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "key": self.key}

    def summary(self) -> str:
        return f"remove constraint {self.key} from {self.page}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], key=d["key"])


@_register
@dataclass
class AddCharacterToPage(EditOp):
    page: str
    character: str
    KIND = "add_character_to_page"

    def apply(self, state: StoryState) -> None:
        if not state.has_character(self.character):
            raise OpError(f"unknown character {self.character!r}")
        page = state.page_by_id(self.page)
        if self.character in page.characters:
            raise OpError(f"character {self.character!r} already on page {self.page}")
        page.characters.append(self.character)

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "character": self.character}

    def summary(self) -> str:
        return f"add {self.character} to {self.page}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], character=d["character"])


@_register
@dataclass
class RemoveCharacterFromPage(EditOp):
    page: str
    character: str
    KIND = "remove_character_from_page"

    def apply(self, state: StoryState) -> None:
        page = state.page_by_id(self.page)
        if self.character not in page.characters:
            raise OpError(f"character {self.character!r} not on page {self.page}")
        page.characters = [c for c in page.characters if c != self.character]

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "character": self.character}

    def summary(self) -> str:
        return f"remove {self.character} from {self.page}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], character=d["character"])


@_register
@dataclass
class AddPage(EditOp):
    after_ordinal: int
    page_state: PageState
    KIND = "add_page"

    def apply(self, state: StoryState) -> None:
        n = len(state.pages)
        if not 0 <= self.after_ordinal <= n:
            raise OpError(f"after_ordinal {self.after_ordinal} out of range 0..{n}")
        page = copy.deepcopy(self.page_state)
        if not page.id:
            page.id = state.allocate_id("page")
        elif state.has_page(page.id):
            raise OpError(f"page id {page.id!r} already in use")
        else:
            state.note_external_id("page", page.id)
        for other in state.pages:
            if other.ordinal > self.after_ordinal:
                other.ordinal += 1
        page.ordinal = self.after_ordinal + 1
        state.pages.append(page)
        state.pages.sort(key=lambda p: p.ordinal)

    def to_dict(self) -> dict:
        return {"op": self.KIND, "after_ordinal": self.after_ordinal, "page_state": self.page_state.to_dict()}

    def summary(self) -> str:
        return f"add page after ordinal {self.after_ordinal}"

    @classmethod
    def _from_fields(cls, d):
        return cls(after_ordinal=d["after_ordinal"], page_state=PageState.from_dict(d["page_state"]))


@_register
@dataclass
class RemovePage(EditOp):
    page: str
    KIND = "remove_page"

    def apply(self, state: StoryState) -> None:
        target = state.page_by_id(self.page)
        removed_ordinal = target.ordinal
        state.pages = [p for p in state.pages if p.id != self.page]
        for other in state.pages:
            if other.ordinal > removed_ordinal:
                other.ordinal -= 1

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page}

    def summary(self) -> str:
        return f"remove page {self.page}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"])


@_register
@dataclass
class MovePage(EditOp):
    page: str
    new_ordinal: int
    KIND = "move_page"

    def apply(self, state: StoryState) -> None:
        n = len(state.pages)
        if not 1 <= self.new_ordinal <= n:
            raise OpError(f"new_ordinal {self.new_ordinal} out of range 1..{n}")
        target = state.page_by_id(self.page)
        # Displaced pages shift toward the vacated slot, preserving relative order.
        ordered = [p for p in state.pages_in_order() if p.id != self.page]
        ordered.insert(self.new_ordinal - 1, target)
        for i, page in enumerate(ordered, start=1):
            page.ordinal = i
        state.pages = ordered

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "new_ordinal": self.new_ordinal}

    def summary(self) -> str:
        return f"move page {self.page} to ordinal {self.new_ordinal}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], new_ordinal=d["new_ordinal"])


@_register
@dataclass
class SetNarrativePhase(EditOp):
    page: str
    phase: str
    KIND = "set_narrative_phase"

    def apply(self, state: StoryState) -> None:
        if self.phase not in PHASES:
            raise OpError(f"unknown narrative phase {self.phase!r}")
        state.page_by_id(self.page).narrative_phase = self.phase

    def to_dict(self) -> dict:
        return {"op": self.KIND, "page": self.page, "phase": self.phase}

    def summary(self) -> str:
        return f"phase of {self.page} = {self.phase}"

    @classmethod
    def _from_fields(cls, d):
        return cls(page=d["page"], phase=d["phase"])


@dataclass
class EditBatch:
    """One atomic group of edits, typically one user turn."""

    ops: list[EditOp]
    origin: str = "user"
    note: str = ""

    def to_dict(self) -> dict:
        return {"ops": [op.to_dict() for op in self.ops], "origin": self.origin, "note": self.note}

    @classmethod
    def from_dict(cls, d: dict) -> "EditBatch":
        return cls(
            ops=[EditOp.from_dict(o) for o in d.get("ops", [])],
            origin=d.get("origin", "user"),
            note=d.get("note", ""),
        )

    def render_text(self) -> str:
        """Free-text stand-in for this batch, used by the prompt-only ablation."""
        return self.note if self.note else "; ".join(op.summary() for op in self.ops)


# --- diffing ------------------------------------------------------------------


@dataclass
class StateDiff:
    """Net change between two states. Empty iff the states are structurally equal."""

    changed_character_ids: set[str] = field(default_factory=set)
    changed_world_fields: set[str] = field(default_factory=set)
    changed_page_ids: dict[str, set[str]] = field(default_factory=dict)
    pages_added: set[str] = field(default_factory=set)
    pages_removed: set[str] = field(default_factory=set)
    pages_moved: set[str] = field(default_factory=set)
    changed_story_fields: set[str] = field(default_factory=set)
    other_changes: set[str] = field(default_factory=set)

    def is_empty(self) -> bool:
        return not (
            self.changed_character_ids
            or self.changed_world_fields
            or self.changed_page_ids
            or self.pages_added
            or self.pages_removed
            or self.pages_moved
            or self.changed_story_fields
            or self.other_changes
        )

    def to_dict(self) -> dict:
        return {
            "changed_character_ids": sorted(self.changed_character_ids),
            "changed_world_fields": sorted(self.changed_world_fields),
            "changed_page_ids": {k: sorted(v) for k, v in sorted(self.changed_page_ids.items())},
            "pages_added": sorted(self.pages_added),
            "pages_removed": sorted(self.pages_removed),
            "pages_moved": sorted(self.pages_moved),
            "changed_story_fields": sorted(self.changed_story_fields),
            "other_changes": sorted(self.other_changes),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StateDiff":
        return cls(
            changed_character_ids=set(d.get("changed_character_ids", [])),
            changed_world_fields=set(d.get("changed_world_fields", [])),
            changed_page_ids={k: set(v) for k, v in d.get("changed_page_ids", {}).items()},
            pages_added=set(d.get("pages_added", [])),
            pages_removed=set(d.get("pages_removed", [])),
            pages_moved=set(d.get("pages_moved", [])),
            changed_story_fields=set(d.get("changed_story_fields", [])),
            other_changes=set(d.get("other_changes", [])),
        )


def _invariant_seq(state: StoryState, character_id: str) -> list[tuple[str, bool]]:
    return [
        (inv.constraint_text, inv.active)
        for inv in state.invariants_list
        if inv.character == character_id
    ]


def diff_states(old: StoryState, new: StoryState) -> StateDiff:
    """Structural diff by comparison, so ops that cancel out produce an empty diff."""
    diff = StateDiff()

    old_chars = {c.id: c for c in old.characters}
    new_chars = {c.id: c for c in new.characters}
    for cid in old_chars.keys() | new_chars.keys():
        if cid not in old_chars or cid not in new_chars:
            diff.changed_character_ids.add(cid)
        elif old_chars[cid].to_dict() != new_chars[cid].to_dict():
            diff.changed_character_ids.add(cid)
        elif _invariant_seq(old, cid) != _invariant_seq(new, cid):
            diff.changed_character_ids.add(cid)

    for f in WorldSettings.WORLD_FIELDS:
        if getattr(old.world, f) != getattr(new.world, f):
            diff.changed_world_fields.add(f)

    old_pages = {p.id: p for p in old.pages}
    new_pages = {p.id: p for p in new.pages}
    diff.pages_added = set(new_pages) - set(old_pages)
    diff.pages_removed = set(old_pages) - set(new_pages)
    for pid in set(old_pages) & set(new_pages):
        a, b = old_pages[pid], new_pages[pid]
        changed = {
            f
            for f in PageState.CONTENT_FIELDS
            if getattr(a, f) != getattr(b, f)
        }
        # constraints/characters are containers of dataclasses; == compares values
        if changed:
            diff.changed_page_ids[pid] = changed
        if a.ordinal != b.ordinal:
            diff.pages_moved.add(pid)
        if (
            a.narration_asset != b.narration_asset
            or a.image_asset != b.image_asset
            or a.failures != b.failures
        ):
            diff.other_changes.add(f"page_bookkeeping:{pid}")

    if old.title != new.title:
        diff.changed_story_fields.add("title")
    if old.prompt_suffix != new.prompt_suffix:
        diff.changed_story_fields.add("prompt_suffix")
    if old.id_seq != new.id_seq:
        diff.other_changes.add("id_seq")
    return diff


def apply_batch(state: StoryState, batch: EditBatch) -> tuple[StoryState, StateDiff]:
    """Apply all ops in order, atomically. The input state is never mutated.

    Any unresolvable op, or a batch whose net result violates a state
    invariant, raises EditRejected and leaves the caller's state untouched.
    """
    if not batch.ops:
        raise EditRejected(None, "batch has no ops")
    working = state.clone()
    for i, op in enumerate(batch.ops):
        try:
            op.apply(working)
        except OpError as exc:
            raise EditRejected(i, str(exc)) from exc
        except Exception as exc:  # unknown page/character lookups raise engine errors
            raise EditRejected(i, str(exc)) from exc
    violations = validate(working)
    if violations:
        raise EditRejected(None, "; ".join(f"{v.code}({v.subject})" for v in violations))
    return working, diff_states(state, working)


# --- dirty set ------------------------------------------------------------------

_IMAGE_FIELDS = {"scene_description", "characters", "constraints", "narrative_phase"}
_TEXT_FIELDS = {"scene_description", "characters", "narrative_phase"}


@dataclass
class DirtySet:
    """Pages whose assets must regenerate, plus whether the identity prompt changed."""

    image_pages: set[str] = field(default_factory=set)
    text_pages: set[str] = field(default_factory=set)
    identity_prompt_dirty: bool = False

    def is_empty(self) -> bool:
        return not (self.image_pages or self.text_pages or self.identity_prompt_dirty)

    def to_dict(self) -> dict:
        return {
            "image_pages": sorted(self.image_pages),
            "text_pages": sorted(self.text_pages),
            "identity_prompt_dirty": self.identity_prompt_dirty,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DirtySet":
        return cls(
            image_pages=set(d.get("image_pages", [])),
            text_pages=set(d.get("text_pages", [])),
            identity_prompt_dirty=d.get("identity_prompt_dirty", False),
        )


def compute_dirty_set(old: StoryState, new: StoryState, diff: StateDiff) -> DirtySet:
    """Rule-based dirty set from a structural diff.

    Rules: a content change on a page dirties that page's image (and its text
    when scene, phase, or character membership moved); a sheet or invariant
    change whose identity clause actually renders differently dirties the
    identity prompt and every page the character appears on; a world change
    visible in the world render dirties the identity prompt and all pages;
    added pages are fully dirty, removed pages drop out, and pure moves dirty
    nothing because ordinals are not rendered.
    """
    dirty = DirtySet()
    new_ids = {p.id for p in new.pages}

    for pid in diff.pages_added:
        dirty.image_pages.add(pid)
        dirty.text_pages.add(pid)

    for pid, fields in diff.changed_page_ids.items():
        if fields & _IMAGE_FIELDS:
            dirty.image_pages.add(pid)
        if fields & _TEXT_FIELDS:
            dirty.text_pages.add(pid)

    for cid in diff.changed_character_ids:
        if identity_clause(old, cid) != identity_clause(new, cid):
            dirty.identity_prompt_dirty = True
            if new.has_character(cid):
                dirty.image_pages |= pages_referencing(new, cid)

    if diff.changed_world_fields and world_render(old) != world_render(new):
        dirty.identity_prompt_dirty = True
        dirty.image_pages |= new_ids

    if "prompt_suffix" in diff.changed_story_fields:
        dirty.image_pages |= new_ids

    dirty.image_pages &= new_ids
    dirty.text_pages &= new_ids
    return dirty


def _narration_context(state: StoryState, page_id: str) -> str:
    page = state.page_by_id(page_id)
    return "\x1f".join(
        [page.scene_description, page.narrative_phase, ",".join(page.characters)]
    )


def oracle_dirty_set(old: StoryState, new: StoryState) -> DirtySet:
    """Brute-force dirty set: recompile everything and diff the text.

    A page is image-dirty iff its effective prompt (page-scoped identity
    context plus page prompt) differs between the states or the page is new;
    text-dirty iff its narration context differs; the identity flag compares
    the full identity prompt. Independent of any dependency tracking.
    """
    old_ids = {p.id for p in old.pages}
    dirty = DirtySet()
    for page in new.pages:
        if page.id not in old_ids:
            dirty.image_pages.add(page.id)
            dirty.text_pages.add(page.id)
            continue
        if effective_page_prompt(old, page.id) != effective_page_prompt(new, page.id):
            dirty.image_pages.add(page.id)
        if _narration_context(old, page.id) != _narration_context(new, page.id):
            dirty.text_pages.add(page.id)
    dirty.identity_prompt_dirty = compile_identity(old).text != compile_identity(new).text
    return dirty


# --- revision history ----------------------------------------------------------


@dataclass
class Revision:
    """Immutable snapshot of the story after a committed change."""

    id: str
    parent: str | None
    state_snapshot: StoryState
    diff: StateDiff
    dirty: DirtySet
    timestamp: float
    origin: str
    note: str = ""
    elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parent": self.parent,
            "state_snapshot": self.state_snapshot.to_dict(),
            "diff": self.diff.to_dict(),
            "dirty": self.dirty.to_dict(),
            "timestamp": self.timestamp,
            "origin": self.origin,
            "note": self.note,
            "elapsed_seconds": self.elapsed_seconds,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Revision":
        return cls(
            id=d["id"],
            parent=d.get("parent"),
            state_snapshot=StoryState.from_dict(d["state_snapshot"]),
            diff=StateDiff.from_dict(d.get("diff", {})),
            dirty=DirtySet.from_dict(d.get("dirty", {})),
            timestamp=d.get("timestamp", 0.0),
            origin=d.get("origin", "user"),
            note=d.get("note", ""),
            elapsed_seconds=d.get("elapsed_seconds", 0.0),
        )


class History:
    """Linear chain of revisions for one story (no branching)."""

    def __init__(self, revisions: list[Revision] | None = None):
        self.revisions: list[Revision] = revisions or []

    @property
    def head(self) -> Revision | None:
        return self.revisions[-1] if self.revisions else None

    def next_id(self) -> str:
        return f"r{len(self.revisions)}"

    def ordinal_of(self, revision_id: str) -> int:
        for i, rev in enumerate(self.revisions):
            if rev.id == revision_id:
                return i
        raise UnknownRevision(revision_id)

    def get(self, revision_id: str) -> Revision:
        for rev in self.revisions:
            if rev.id == revision_id:
                return rev
        raise UnknownRevision(revision_id)

    def commit(
        self,
        state: StoryState,
        diff: StateDiff,
        dirty: DirtySet,
        origin: str,
        note: str = "",
        elapsed_seconds: float = 0.0,
    ) -> Revision:
        rev = Revision(
            id=self.next_id(),
            parent=self.head.id if self.head else None,
            state_snapshot=state.clone(),
            diff=diff,
            dirty=dirty,
            timestamp=time.time(),
            origin=origin,
            note=note,
            elapsed_seconds=elapsed_seconds,
        )
        self.revisions.append(rev)
        return rev


def revert(history: History, to: str) -> StoryState:
    """Restore the snapshot of an earlier revision and record the revert itself.

    Asset pointers come back with the snapshot, so no regeneration is needed:
    bytes live in the content-addressed store and are never deleted.
    """
    target = history.get(to)
    head = history.head
    restored = target.state_snapshot.clone()
    diff = diff_states(head.state_snapshot, restored) if head else StateDiff()
    history.commit(restored, diff, DirtySet(), origin="user", note=f"revert to {to}")
    return restored
