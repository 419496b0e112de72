"""State-driven orchestration engine for multi-page illustrated stories.

The story lives in an explicit, versioned state object (character sheet,
world settings, per-page scenes). Prompts compile deterministically from that
state, edits apply transactionally and regenerate only the provably affected
pages, and a consistency critic proposes minimal corrections.
"""

from .edits import (
    DirtySet,
    EditBatch,
    History,
    Revision,
    StateDiff,
    apply_batch,
    compute_dirty_set,
    oracle_dirty_set,
    revert,
)
from .model import (
    AssetRef,
    CharacterEntry,
    IdentityInvariant,
    PageState,
    StoryState,
    VisualConstraint,
    WorldSettings,
    pages_referencing,
    resolve_alias,
    validate,
)
from .orchestrator import EditCycleResult, Engine, EngineMode
from .persistence import DatasetSpec, ProjectStore, generate_dataset, import_dataset
from .prompts import (
    IdentityPrompt,
    PagePrompt,
    PromptBundle,
    compile,
    compile_page,
    effective_page_prompt,
    export_interchange,
    parse_interchange,
)

__version__ = "0.1.0"

__all__ = [
    "AssetRef",
    "CharacterEntry",
    "DatasetSpec",
    "DirtySet",
    "EditBatch",
    "EditCycleResult",
    "Engine",
    "EngineMode",
    "History",
    "IdentityInvariant",
    "IdentityPrompt",
    "PagePrompt",
    "PageState",
    "ProjectStore",
    "PromptBundle",
    "Revision",
    "StateDiff",
    "StoryState",
    "VisualConstraint",
    "WorldSettings",
    "apply_batch",
    "compile",
    "compile_page",
    "compute_dirty_set",
    "effective_page_prompt",
    "export_interchange",
    "generate_dataset",
    "import_dataset",
    "oracle_dirty_set",
    "pages_referencing",
    "parse_interchange",
    "resolve_alias",
    "revert",
    "validate",
]
