"""On-disk project format, revision snapshots, asset storage, and dataset tooling.

Project layout::

    <root>/
      story.json            current story state, canonical JSON
      revisions/r<N>.json   immutable snapshot per revision
      assets/<sha256>       content-addressed asset bytes
      critic_pending.json   surfaced critic findings awaiting acceptance
      project.lock          single-writer lock (pid inside)

All writes go through temp-file + rename so a crash mid-save leaves the
previous file intact. Snapshot files are written once and never rewritten.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

from .agents import CriticFinding
from .edits import History, Revision
from .errors import LoadError, ProjectLocked
from .model import (
    StoryState,
    AssetRef,
    CharacterEntry,
    PageState,
    WorldSettings,
    canonical_json,
)
from .prompts import CLAUSE_PHASES, PHASE_CLAUSES, export_record, parse_interchange_records

log = logging.getLogger(__name__)

LOCK_NAME = "project.lock"
STORY_NAME = "story.json"
REVISIONS_DIR = "revisions"
ASSETS_DIR = "assets"
PENDING_NAME = "critic_pending.json"

QUALITY_CLAUSE = (
    "captured as a vivid and coherent moment with cinematic lighting, "
    "clear spatial context, and strong visual continuity"
)


def _pid_alive(pid: int) -> bool:
    try:
        os.kill(pid, 0)
    except (ProcessLookupError, ValueError):
        return False
    except PermissionError:
        return True
    return True


class AssetStore:
    """Content-addressed blob store: the filename is the sha256 of the bytes."""

    def __init__(self, directory: Path):
        self.directory = Path(directory)

    def path_for(self, content_hash: str) -> Path:
        return self.directory / content_hash

    def put(self, data: bytes, kind: str, revision: str) -> AssetRef:
        digest = hashlib.sha256(data).hexdigest()
        path = self.path_for(digest)
        if not path.exists():
            self.directory.mkdir(parents=True, exist_ok=True)
            tmp = path.with_name(path.name + f".tmp{os.getpid()}")
            tmp.write_bytes(data)
            os.replace(tmp, path)
        return AssetRef(kind=kind, uri=f"{ASSETS_DIR}/{digest}", content_hash=digest, revision=revision)

    def read(self, content_hash: str) -> bytes:
        path = self.path_for(content_hash)
        if not path.exists():
            raise LoadError(str(path), "asset bytes missing from store")
        return path.read_bytes()

    def has(self, content_hash: str) -> bool:
        return self.path_for(content_hash).exists()


class ProjectStore:
    """Owns one project directory; single writer enforced by a pid lock file."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.assets = AssetStore(self.root / ASSETS_DIR)
        # Test hook: called between temp write and rename to simulate crashes.
        self.crash_hook = None

    # --- layout -------------------------------------------------------------

    @property
    def story_path(self) -> Path:
        return self.root / STORY_NAME

    @property
    def revisions_dir(self) -> Path:
        return self.root / REVISIONS_DIR

    def exists(self) -> bool:
        return self.story_path.exists()

    def initialize(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        self.revisions_dir.mkdir(exist_ok=True)
        (self.root / ASSETS_DIR).mkdir(exist_ok=True)

    # --- locking -------------------------------------------------------------

    @property
    def lock_path(self) -> Path:
        return self.root / LOCK_NAME

    def acquire_lock(self) -> None:
        self.root.mkdir(parents=True, exist_ok=True)
        for _ in range(2):
            try:
                fd = os.open(self.lock_path, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
                os.write(fd, str(os.getpid()).encode("ascii"))
                os.close(fd)
                return
            except FileExistsError:
                holder = ""
                try:
                    holder = self.lock_path.read_text().strip()
                except OSError:
                    pass
                if holder.isdigit() and not _pid_alive(int(holder)):
                    log.warning("removing stale lock held by dead pid %s", holder)
                    try:
                        self.lock_path.unlink()
                    except OSError:
                        pass
                    continue
                raise ProjectLocked(str(self.lock_path), holder=holder)
        raise ProjectLocked(str(self.lock_path))

    def release_lock(self) -> None:
        try:
            self.lock_path.unlink()
        except OSError:
            pass

    @contextmanager
    def lock(self):
        self.acquire_lock()
        try:
            yield self
        finally:
            self.release_lock()

    # --- write ----------------------------------------------------------------

    def _atomic_write(self, path: Path, data: str) -> None:
        path.parent.mkdir(parents=True, exist_ok=True)
        tmp = path.with_name(path.name + f".tmp{os.getpid()}")
        tmp.write_text(data, encoding="utf-8")
        if self.crash_hook is not None:
            self.crash_hook(path)
        os.replace(tmp, path)

    def write(self, state: StoryState, history: History) -> None:
        """Persist state and any revisions not yet on disk. Caller holds the lock."""
        self.initialize()
        for rev in history.revisions:
            rev_path = self.revisions_dir / f"{rev.id}.json"
            if not rev_path.exists():
                self._atomic_write(
                    rev_path, json.dumps(rev.to_dict(), ensure_ascii=False, indent=2) + "\n"
                )
        self._atomic_write(self.story_path, canonical_json(state))

    def save(self, state: StoryState, history: History) -> None:
        with self.lock():
            self.write(state, history)

    # --- read -----------------------------------------------------------------

    def load(self) -> tuple[StoryState, History]:
        if not self.story_path.exists():
            raise LoadError(str(self.story_path), "not a project directory (story.json missing)")
        try:
            state = StoryState.from_dict(
                json.loads(self.story_path.read_text(encoding="utf-8"))
            )
        except (json.JSONDecodeError, KeyError, TypeError) as exc:
            raise LoadError(str(self.story_path), f"corrupt story file: {exc}") from exc
        revisions: list[Revision] = []
        if self.revisions_dir.is_dir():
            entries = []
            for path in self.revisions_dir.glob("r*.json"):
                m = re.fullmatch(r"r(\d+)\.json", path.name)
                if m:
                    entries.append((int(m.group(1)), path))
            for _, path in sorted(entries):
                try:
                    revisions.append(
                        Revision.from_dict(json.loads(path.read_text(encoding="utf-8")))
                    )
                except (json.JSONDecodeError, KeyError, TypeError) as exc:
                    raise LoadError(str(path), f"corrupt revision file: {exc}") from exc
        return state, History(revisions)

    # --- pending critic findings -------------------------------------------------

    @property
    def pending_path(self) -> Path:
        return self.root / PENDING_NAME

    def load_pending_findings(self) -> dict[str, CriticFinding]:
        if not self.pending_path.exists():
            return {}
        try:
            doc = json.loads(self.pending_path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise LoadError(str(self.pending_path), f"corrupt findings file: {exc}") from exc
        return {d["id"]: CriticFinding.from_dict(d) for d in doc.get("findings", [])}

    def write_pending_findings(self, findings: list[CriticFinding]) -> None:
        self._atomic_write(
            self.pending_path,
            json.dumps(
                {"findings": [f.to_dict() for f in findings]}, ensure_ascii=False, indent=2
            )
            + "\n",
        )


# --- dataset generation ----------------------------------------------------------


@dataclass
class DatasetSpec:
    """Template inputs for one ten-page, single-subject record."""

    subject: str
    subject_attributes: str
    style_prefix: str
    actions: list[str]
    n_pages: int = 10

    def validate(self) -> None:
        if not (self.subject and self.subject_attributes and self.style_prefix):
            raise ValueError("subject, subject_attributes, and style_prefix are required")
        if len(self.actions) < 5:
            raise ValueError("a dataset spec needs at least 5 actions")
        if self.n_pages < 1:
            raise ValueError("n_pages must be >= 1")

    def to_dict(self) -> dict:
        return {
            "subject": self.subject,
            "subject_attributes": self.subject_attributes,
            "style_prefix": self.style_prefix,
            "actions": list(self.actions),
            "n_pages": self.n_pages,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DatasetSpec":
        return cls(
            subject=d["subject"],
            subject_attributes=d["subject_attributes"],
            style_prefix=d["style_prefix"],
            actions=list(d["actions"]),
            n_pages=d.get("n_pages", 10),
        )


def _cap_first(text: str) -> str:
    return text[:1].upper() + text[1:]


def generate_dataset(specs: list[DatasetSpec], seed: int = 0) -> list[str]:
    """Render each spec into one interchange record.

    Frame i cycles through the actions, walks the standard phase blocks, and
    ends with the quality clause. The formula is fully determined by the
    DatasetSpec fields, so ``seed`` is accepted for interface stability but
    unused.
    """
    from .agents import default_phase_split

    del seed
    records = []
    for spec in specs:
        spec.validate()
        id_prompt = (
            f"{spec.style_prefix} of {_cap_first(spec.subject)} with {spec.subject_attributes}."
        )
        phases = default_phase_split(spec.n_pages)
        frames = []
        for i in range(spec.n_pages):
            action = spec.actions[i % len(spec.actions)]
            frames.append(
                f"{spec.subject} with {spec.subject_attributes}, {action}, "
                f"{PHASE_CLAUSES[phases[i]]}, {QUALITY_CLAUSE}"
            )
        records.append(export_record(id_prompt, frames))
    return records


def load_dataset_specs(path: str | Path) -> list[DatasetSpec]:
    doc = json.loads(Path(path).read_text(encoding="utf-8"))
    return [DatasetSpec.from_dict(d) for d in doc["specs"]]


def shipped_dataset_specs() -> list[DatasetSpec]:
    from importlib import resources

    doc = json.loads(
        resources.files("storystate.data").joinpath("dataset_specs.json").read_text("utf-8")
    )
    return [DatasetSpec.from_dict(d) for d in doc["specs"]]


# --- dataset import -----------------------------------------------------------------

_SUBJECT_RE = re.compile(r"^(?P<article>[Aa]n?)\s+(?P<name>.+?)\s+with\s+(?P<attrs>.+)$")


def _split_id_prompt(id_prompt: str) -> tuple[str, str]:
    if " of " not in id_prompt:
        raise ValueError(f"id prompt has no '<style> of <subject>' shape: {id_prompt!r}")
    style_part, subject_clause = id_prompt.split(" of ", 1)
    return style_part, subject_clause.rstrip(".").strip()


def import_dataset(text: str) -> list[StoryState]:
    """Turn interchange records into stories: one character from the id prompt,
    per-frame scenes and phases from the frame prompts.

    Well-formed records re-export byte-identically after compilation; records
    outside the subject grammar import with the whole phrase as the character
    name and a warning.
    """
    from .prompts import character_clause, world_clause

    records = parse_interchange_records(text)
    stories: list[StoryState] = []
    for index, (id_prompt, frames) in enumerate(records, start=1):
        style_part, subject_clause = _split_id_prompt(id_prompt)

        m = _SUBJECT_RE.match(subject_clause)
        entry = None
        if m:
            entry = CharacterEntry(
                id="c1",
                name=m.group("name"),
                attributes={"appearance": m.group("attrs")},
            )
            if character_clause(entry) != subject_clause:
                entry = None
        if entry is None:
            log.warning(
                "record %d: subject %r outside the '<article> <noun> with <attrs>' grammar; "
                "importing whole phrase as the name",
                index,
                subject_clause,
            )
            entry = CharacterEntry(id="c1", name=subject_clause)

        style = re.sub(r"^[Aa]n?\s+", "", style_part)
        state = StoryState(
            id=f"imported-{index:03d}",
            title=_cap_first(subject_clause.split(" with ")[0]),
            characters=[entry],
            world=WorldSettings(style=style),
        )
        if world_clause(state) != style_part:
            log.warning(
                "record %d: style %r will not re-render exactly", index, style_part
            )

        from .agents import default_phase_split

        fallback_phases = default_phase_split(len(frames))
        suffix: str | None = None
        for i, frame in enumerate(frames):
            segments = frame.split(", ")
            phase_idx = None
            for j in range(len(segments) - 1, -1, -1):
                if segments[j] in CLAUSE_PHASES:
                    phase_idx = j
                    break
            if phase_idx is None:
                log.warning("record %d frame %d: no phase clause; using position default", index, i + 1)
                phase = fallback_phases[i]
                scene = frame
                frame_suffix = ""
            else:
                phase = CLAUSE_PHASES[segments[phase_idx]]
                scene = ", ".join(segments[:phase_idx])
                frame_suffix = ", ".join(segments[phase_idx + 1:])
            if suffix is None:
                suffix = frame_suffix
            elif suffix != frame_suffix:
                log.warning("record %d frame %d: trailing clause differs from record's first frame", index, i + 1)
            state.pages.append(
                PageState(
                    id=f"p{i + 1}",
                    ordinal=i + 1,
                    scene_description=scene,
                    characters=["c1"],
                    narrative_phase=phase,
                )
            )
        state.prompt_suffix = suffix or ""
        state.id_seq = {"page": len(frames), "character": 1}
        stories.append(state)
    return stories
