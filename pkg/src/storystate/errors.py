"""Exception hierarchy shared across the engine.

Every error carries a stable machine-readable ``code`` so the HTTP layer and
the CLI can map failures without string matching.
"""

from __future__ import annotations


class StoryStateError(Exception):
    """Base class for all engine errors."""

    code = "internal_error"

    def payload(self) -> dict:
        """Machine-readable representation used by the API and ``--json`` CLI output."""
        return {"code": self.code, "message": str(self)}


class UnknownCharacter(StoryStateError):
    code = "unknown_character"

    def __init__(self, character_id: str):
        super().__init__(f"unknown character: {character_id!r}")
        self.character_id = character_id


class UnknownPage(StoryStateError):
    code = "unknown_page"

    def __init__(self, page_id: str):
        super().__init__(f"unknown page: {page_id!r}")
        self.page_id = page_id


class UnknownRevision(StoryStateError):
    code = "unknown_revision"

    def __init__(self, revision_id: str):
        super().__init__(f"unknown revision: {revision_id!r}")
        self.revision_id = revision_id


class UnknownStory(StoryStateError):
    code = "unknown_story"

    def __init__(self, story_id: str):
        super().__init__(f"unknown story: {story_id!r}")
        self.story_id = story_id


class AmbiguousAlias(StoryStateError):
    code = "ambiguous_alias"

    def __init__(self, surface: str, candidates: list[str]):
        super().__init__(
            f"surface {surface!r} matches several characters: {', '.join(candidates)}"
        )
        self.surface = surface
        self.candidates = candidates


class EmptyStory(StoryStateError):
    code = "empty_story"

    def __init__(self, message: str = "story has no pages"):
        super().__init__(message)


class EditRejected(StoryStateError):
    """A batch was refused; the story state is guaranteed unchanged.

    ``op_index`` is the offending op's position, or None when the batch as a
    whole produced an invalid state.
    """

    code = "edit_rejected"

    def __init__(self, op_index: int | None, reason: str):
        where = "batch" if op_index is None else f"op {op_index}"
        super().__init__(f"{where}: {reason}")
        self.op_index = op_index
        self.reason = reason

    def payload(self) -> dict:
        out = super().payload()
        out["op_index"] = self.op_index
        return out


class ParseError(StoryStateError):
    code = "parse_error"

    def __init__(self, message: str, line: int, column: int, record: int | None = None):
        at = f"line {line}, column {column}"
        if record is not None:
            at = f"record {record}, {at}"
        super().__init__(f"{message} ({at})")
        self.line = line
        self.column = column
        self.record = record

    def payload(self) -> dict:
        out = super().payload()
        out.update({"line": self.line, "column": self.column, "record": self.record})
        return out


class LoadError(StoryStateError):
    code = "load_error"

    def __init__(self, path: str, message: str):
        super().__init__(f"{path}: {message}")
        self.path = path


class ProjectLocked(StoryStateError):
    code = "project_locked"

    def __init__(self, path: str, holder: str = ""):
        detail = f" (held by {holder})" if holder else ""
        super().__init__(f"project is locked: {path}{detail}")
        self.path = path
        self.holder = holder


class BackendError(StoryStateError):
    code = "backend_error"


class MalformedAgentOutput(StoryStateError):
    """Backend output failed schema validation after all retries.

    The raw text is preserved for debugging.
    """

    code = "malformed_agent_output"

    def __init__(self, message: str, raw_text: str = ""):
        super().__init__(message)
        self.raw_text = raw_text

    def payload(self) -> dict:
        out = super().payload()
        out["raw_text"] = self.raw_text
        return out


class UngroundedReference(StoryStateError):
    code = "ungrounded_reference"

    def __init__(self, surface: str):
        super().__init__(f"cannot resolve reference {surface!r} against the story state")
        self.surface = surface


class DegenerateEmbedding(StoryStateError):
    code = "degenerate_embedding"

    def __init__(self, index: int):
        super().__init__(f"embedding {index} has zero norm")
        self.index = index


class TooFewPages(StoryStateError):
    code = "too_few_pages"

    def __init__(self, count: int):
        super().__init__(f"need at least 2 pages for adjacent-pair consistency, got {count}")
        self.count = count


class NoEdits(StoryStateError):
    code = "no_edits"

    def __init__(self):
        super().__init__("history contains no user-origin revisions")


class MissingAsset(StoryStateError):
    code = "missing_asset"

    def __init__(self, page_id: str, kind: str):
        super().__init__(f"page {page_id} has no {kind} asset")
        self.page_id = page_id
        self.kind = kind
