"""Evaluation quantities over stories and revision histories.

Visual consistency is the mean cosine similarity between adjacent pages'
image embeddings (adjacent pairs only, not all pairs). Edit efficiency counts
user-origin revisions as edits; critic-origin revisions fold their regenerated
pages and elapsed time into the triggering edit. A "turn" is one user-origin
request; the engine has no finer-grained notion of back-and-forth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .backends import EmbeddingBackend
from .edits import History
from .errors import DegenerateEmbedding, MissingAsset, NoEdits, TooFewPages
from .model import StoryState
from .persistence import ProjectStore


@dataclass
class ConsistencyReport:
    per_adjacent_pair: list[float]
    mean: float

    def to_dict(self) -> dict:
        return {"per_adjacent_pair": self.per_adjacent_pair, "mean": self.mean}


def consistency(embeddings: list[list[float]]) -> ConsistencyReport:
    """Cosine similarity of each adjacent pair, pair i using pages i and i+1."""
    if len(embeddings) < 2:
        raise TooFewPages(len(embeddings))
    vectors = [np.asarray(e, dtype=np.float64) for e in embeddings]
    dim = vectors[0].shape[0]
    for i, v in enumerate(vectors):
        if v.shape != (dim,):
            raise ValueError(f"embedding {i} has dimension {v.shape}, expected ({dim},)")
        if float(np.linalg.norm(v)) == 0.0:
            raise DegenerateEmbedding(i)
    pairs = []
    for a, b in zip(vectors, vectors[1:]):
        cos = float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))
        pairs.append(cos)
    return ConsistencyReport(per_adjacent_pair=pairs, mean=float(np.mean(pairs)))


def story_consistency(
    state: StoryState, store: ProjectStore, backend: EmbeddingBackend
) -> ConsistencyReport:
    """Embed every page image in ordinal order and score adjacent pairs."""
    pages = state.pages_in_order()
    if len(pages) < 2:
        raise TooFewPages(len(pages))
    embeddings = []
    for page in pages:
        if page.image_asset is None:
            raise MissingAsset(page.id, "page_image")
        data = store.assets.read(page.image_asset.content_hash)
        embeddings.append(backend.embed(data))
    return consistency(embeddings)


@dataclass
class EditRecord:
    revision: str
    pages_changed: int
    turns: int
    elapsed_seconds: float

    def to_dict(self) -> dict:
        return {
            "revision": self.revision,
            "pages_changed": self.pages_changed,
            "turns": self.turns,
            "elapsed_seconds": self.elapsed_seconds,
        }


@dataclass
class EditEfficiencyReport:
    per_edit: list[EditRecord] = field(default_factory=list)
    mean_pages_changed: float = 0.0
    mean_turns: float = 0.0
    mean_elapsed_seconds: float = 0.0

    def to_dict(self) -> dict:
        return {
            "per_edit": [r.to_dict() for r in self.per_edit],
            "mean_pages_changed": self.mean_pages_changed,
            "mean_turns": self.mean_turns,
            "mean_elapsed_seconds": self.mean_elapsed_seconds,
        }


def edit_efficiency(history: History) -> EditEfficiencyReport:
    """Per-edit accounting over the revision chain.

    An edit is a user-origin revision. Critic revisions that follow it (before
    the next non-critic revision) are part of that edit: their regenerated
    pages join its pages-changed set and their time joins its elapsed time.
    """
    records: list[EditRecord] = []
    current: EditRecord | None = None
    current_pages: set[str] = set()

    def flush():
        nonlocal current
        if current is not None:
            current.pages_changed = len(current_pages)
            records.append(current)
            current = None

    for rev in history.revisions:
        if rev.origin == "user":
            flush()
            current = EditRecord(
                revision=rev.id, pages_changed=0, turns=1, elapsed_seconds=rev.elapsed_seconds
            )
            current_pages = set(rev.dirty.image_pages)
        elif rev.origin == "critic" and current is not None:
            current_pages |= rev.dirty.image_pages
            current.elapsed_seconds += rev.elapsed_seconds
        else:
            flush()
    flush()

    if not records:
        raise NoEdits()
    return EditEfficiencyReport(
        per_edit=records,
        mean_pages_changed=float(np.mean([r.pages_changed for r in records])),
        mean_turns=float(np.mean([r.turns for r in records])),
        mean_elapsed_seconds=float(np.mean([r.elapsed_seconds for r in records])),
    )


def efficiency_csv(report: EditEfficiencyReport) -> str:
    import csv
    import io

    out = io.StringIO()
    writer = csv.writer(out)
    writer.writerow(["revision", "pages_changed", "turns", "elapsed_seconds"])
    for r in report.per_edit:
        writer.writerow([r.revision, r.pages_changed, r.turns, f"{r.elapsed_seconds:.6f}"])
    return out.getvalue()
