"""Deterministic compilation of story state into an identity prompt and page prompts.

Rendering is a pure function of the serialized state. The clause templates are
fixed; changing them changes what counts as an "impacted page", because the
dirty-set oracle is defined as a textual diff over these renders.

Identity prompt template (clause order is part of the contract):

    "A <style>[, <tone> in tone] of <character clause>[; <character clause>...]."
    [" Recurring locations: a, b."] [" Recurring props: x, y."]
    [" <Name> <invariant text>." ...]

    character clause := "A|An <name>" for lowercase names, the bare name
    otherwise, then " with <attribute values joined by ', '>" when the
    character has attributes.

Page prompt template:

    "<scene>[, <character name>...][, <constraint description>...], <phase clause>[, <suffix>]"

    Character names already mentioned in the scene text (case-insensitive, by
    name or alias) are suppressed; constraints render in key order; the phase
    clause is one of the three canonical narrative-phase strings; the suffix is
    the story's optional trailing quality clause.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .errors import EmptyStory, ParseError, UnknownPage
from .model import (
    PHASE_DEVELOP,
    PHASE_INTRODUCE,
    PHASE_RESOLVE,
    CharacterEntry,
    StoryState,
    state_fingerprint,
)

PHASE_CLAUSES = {
    PHASE_INTRODUCE: "introducing the scene",
    PHASE_DEVELOP: "developing the environment",
    PHASE_RESOLVE: "bringing the scene to a calm resolution",
}
CLAUSE_PHASES = {v: k for k, v in PHASE_CLAUSES.items()}

VOWELS = "aeiou"


@dataclass
class IdentityPrompt:
    """The compiled global identity prompt plus the ids that contributed to it."""

    text: str
    sources: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"text": self.text, "sources": list(self.sources)}


@dataclass
class PagePrompt:
    page: str
    text: str
    phase_suffix: str

    def to_dict(self) -> dict:
        return {"page": self.page, "text": self.text, "phase_suffix": self.phase_suffix}


@dataclass
class PromptBundle:
    identity: IdentityPrompt
    pages: list[PagePrompt]
    state_fingerprint: str

    def page_prompt(self, page_id: str) -> PagePrompt:
        for p in self.pages:
            if p.page == page_id:
                return p
        raise UnknownPage(page_id)

    def to_dict(self) -> dict:
        return {
            "identity": self.identity.to_dict(),
            "pages": [p.to_dict() for p in self.pages],
            "state_fingerprint": self.state_fingerprint,
        }


# --- clause renderers -------------------------------------------------------


def _article(word: str) -> str:
    return "An" if word[:1].lower() in VOWELS else "A"


def character_clause(entry: CharacterEntry) -> str:
    """Identity clause for one character, e.g. "A phoenix with bright orange feathers"."""
    if entry.name[:1].islower():
        head = f"{_article(entry.name)} {entry.name}"
    else:
        head = entry.name
    if entry.attributes:
        return f"{head} with {', '.join(entry.attributes.values())}"
    return head


def world_clause(state: StoryState) -> str:
    """Style/tone head clause, e.g. "A fiery and majestic illustration"."""
    clause = f"{_article(state.world.style)} {state.world.style}"
    if state.world.tone:
        clause += f", {state.world.tone} in tone"
    return clause


def _world_trailers(state: StoryState) -> list[str]:
    trailers = []
    if state.world.recurring_locations:
        trailers.append(f"Recurring locations: {', '.join(state.world.recurring_locations)}.")
    if state.world.recurring_props:
        trailers.append(f"Recurring props: {', '.join(state.world.recurring_props)}.")
    return trailers


def invariant_clause(state: StoryState, character_id: str, constraint_text: str) -> str:
    name = state.character_by_id(character_id).name
    return f"{name} {constraint_text}."


def identity_clause(state: StoryState, character_id: str) -> str:
    """Everything a character contributes to identity prompts: entry clause plus
    its active invariants. Empty string when the character does not exist.

    The dirty-set fast path compares this render between states to decide
    whether a sheet change is visible in prompts at all.
    """
    if not state.has_character(character_id):
        return ""
    entry = state.character_by_id(character_id)
    parts = [character_clause(entry)]
    for inv in state.active_invariants(character_id):
        parts.append(invariant_clause(state, character_id, inv.constraint_text))
    return " | ".join(parts)


def world_render(state: StoryState) -> str:
    """The world's full contribution to identity prompts, for change detection."""
    return " | ".join([world_clause(state)] + _world_trailers(state))


def _identity_text(state: StoryState, characters: list[CharacterEntry]) -> tuple[str, list[str]]:
    sources = ["world"]
    head = world_clause(state)
    clauses = [character_clause(c) for c in characters]
    sources += [f"character:{c.id}" for c in characters]
    text = f"{head} of {'; '.join(clauses)}." if clauses else f"{head}."
    trailers = _world_trailers(state)
    wanted = {c.id for c in characters}
    for i, inv in enumerate(state.invariants_list):
        if inv.active and inv.character in wanted:
            trailers.append(invariant_clause(state, inv.character, inv.constraint_text))
            sources.append(f"invariant:{inv.character}:{i}")
    if trailers:
        text += " " + " ".join(trailers)
    return text, sources


def compile_identity(state: StoryState) -> IdentityPrompt:
    text, sources = _identity_text(state, list(state.characters))
    return IdentityPrompt(text=text, sources=sources)


def _mentioned_in(text: str, entry: CharacterEntry) -> bool:
    hay = text.casefold()
    return any(s and s.casefold() in hay for s in [entry.name] + entry.aliases)


def compile_page(state: StoryState, page_id: str) -> PagePrompt:
    """Compile one page prompt; identical to the matching entry of a full compile."""
    page = state.page_by_id(page_id)
    parts: list[str] = []
    if page.scene_description:
        parts.append(page.scene_description)
    for character_id in page.characters:
        entry = state.character_by_id(character_id)
        if not _mentioned_in(page.scene_description, entry):
            parts.append(entry.name)
    for constraint in sorted(page.constraints, key=lambda c: c.key):
        parts.append(constraint.description)
    phase_clause = PHASE_CLAUSES[page.narrative_phase]
    parts.append(phase_clause)
    if state.prompt_suffix:
        parts.append(state.prompt_suffix)
    return PagePrompt(page=page.id, text=", ".join(parts), phase_suffix=phase_clause)


def compile(state: StoryState) -> PromptBundle:  # noqa: A001 - domain term
    """Map the full state to the identity prompt plus per-page prompts.

    Deterministic: identical serialized states yield byte-identical bundles.
    """
    if not state.pages:
        raise EmptyStory()
    identity = compile_identity(state)
    pages = [compile_page(state, page.id) for page in state.pages_in_order()]
    return PromptBundle(identity=identity, pages=pages, state_fingerprint=state_fingerprint(state))


def page_identity_context(state: StoryState, page_id: str) -> str:
    """Identity context scoped to one page: world clause plus the clauses and
    invariants of the characters on that page."""
    page = state.page_by_id(page_id)
    present = [state.character_by_id(cid) for cid in page.characters]
    text, _ = _identity_text(state, present)
    return text


def effective_page_prompt(state: StoryState, page_id: str) -> str:
    """The conditioning text a single page actually depends on.

    This is the page-scoped identity context joined with the page prompt. The
    dirty set is defined as the pages whose effective prompt changed; scoping
    the identity part per page is what keeps a sheet edit from marking pages
    the edited character never appears on.
    """
    return page_identity_context(state, page_id) + "\n" + compile_page(state, page_id).text


# --- interchange format -----------------------------------------------------
#
# One record:
#
#   --id_prompt "<identity prompt>"
#   --frame_prompt_list
#     "<page prompt>"
#     ...
#
# Two-space indent for frame lines, interior quotes and backslashes escaped,
# trailing newline. The parser tolerates arbitrary whitespace between tokens so
# hand-edited or pretty-printed files still load.


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


def export_interchange(bundle: PromptBundle) -> str:
    lines = [f"--id_prompt {_quote(bundle.identity.text)}", "--frame_prompt_list"]
    lines += [f"  {_quote(p.text)}" for p in bundle.pages]
    return "\n".join(lines) + "\n"


def export_record(id_prompt: str, frame_prompts: list[str]) -> str:
    lines = [f"--id_prompt {_quote(id_prompt)}", "--frame_prompt_list"]
    lines += [f"  {_quote(t)}" for t in frame_prompts]
    return "\n".join(lines) + "\n"


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def location(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        consumed = self.text[:pos]
        line = consumed.count("\n") + 1
        column = pos - (consumed.rfind("\n") + 1) + 1
        return line, column

    def error(self, message: str, pos: int | None = None) -> ParseError:
        line, column = self.location(pos)
        return ParseError(message, line, column)

    def skip_ws(self) -> None:
        while self.pos < len(self.text) and self.text[self.pos].isspace():
            self.pos += 1

    def at_end(self) -> bool:
        self.skip_ws()
        return self.pos >= len(self.text)

    def peek_token(self, token: str) -> bool:
        self.skip_ws()
        return self.text.startswith(token, self.pos)

    def expect_token(self, token: str) -> None:
        self.skip_ws()
        if not self.text.startswith(token, self.pos):
            raise self.error(f"expected {token}")
        self.pos += len(token)

    def read_quoted(self) -> str:
        self.skip_ws()
        if self.pos >= len(self.text) or self.text[self.pos] != '"':
            raise self.error("expected a double-quoted string")
        start = self.pos
        self.pos += 1
        out: list[str] = []
        while self.pos < len(self.text):
            ch = self.text[self.pos]
            if ch == "\\":
                if self.pos + 1 >= len(self.text):
                    raise self.error("unterminated quote", start)
                nxt = self.text[self.pos + 1]
                out.append(nxt if nxt in ('"', "\\") else "\\" + nxt)
                self.pos += 2
            elif ch == '"':
                self.pos += 1
                return "".join(out)
            else:
                out.append(ch)
                self.pos += 1
        raise self.error("unterminated quote", start)


def _parse_one_record(scanner: _Scanner) -> tuple[str, list[str]]:
    scanner.expect_token("--id_prompt")
    id_prompt = scanner.read_quoted()
    scanner.expect_token("--frame_prompt_list")
    frames: list[str] = []
    while not scanner.at_end() and not scanner.peek_token("--id_prompt"):
        frames.append(scanner.read_quoted())
    if not frames:
        raise scanner.error("frame prompt list is empty")
    return id_prompt, frames


def parse_interchange_records(text: str) -> list[tuple[str, list[str]]]:
    """Parse a whole interchange file into (id_prompt, frame_prompts) records.

    Errors carry the 1-based record index alongside line/column.
    """
    scanner = _Scanner(text)
    records: list[tuple[str, list[str]]] = []
    if scanner.at_end():
        raise scanner.error("expected --id_prompt")
    while not scanner.at_end():
        try:
            records.append(_parse_one_record(scanner))
        except ParseError as exc:
            raise ParseError(
                str(exc).rsplit(" (", 1)[0], exc.line, exc.column, record=len(records) + 1
            ) from exc
    return records


def parse_interchange(text: str) -> tuple[str, list[str]]:
    """Parse a single record; the inverse of export_interchange on its image."""
    scanner = _Scanner(text)
    record = _parse_one_record(scanner)
    if not scanner.at_end():
        raise scanner.error("trailing content after record")
    return record
