"""Service and CLI configuration: config file first, environment on top.

Recognized environment variables: STORYSTATE_PROJECT_ROOT, STORYSTATE_BACKEND
(mock|http), STORYSTATE_EMBEDDING (mock|http), STORYSTATE_CONFIG (path to a
JSON config file), STORYSTATE_CORS_ORIGINS (comma separated), plus the
backend credential variables read in backends.py (STORYSTATE_LLM_*,
STORYSTATE_T2I_*, STORYSTATE_EMBED_*).
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field
from pathlib import Path


@dataclass
class ServiceConfig:
    project_root: Path = Path("stories")
    backend: str = "mock"
    embedding: str = "mock"
    cors_origins: list[str] = field(default_factory=list)
    busy_mode: str = "queue"  # queue | reject concurrent edits on one story
    async_jobs: bool = False  # 202 + polling instead of synchronous generation
    ui_dir: Path | None = None

    @classmethod
    def load(cls, **overrides) -> "ServiceConfig":
        values: dict = {}
        config_path = os.environ.get("STORYSTATE_CONFIG", "")
        if config_path and Path(config_path).exists():
            values.update(json.loads(Path(config_path).read_text(encoding="utf-8")))
        env_map = {
            "project_root": "STORYSTATE_PROJECT_ROOT",
            "backend": "STORYSTATE_BACKEND",
            "embedding": "STORYSTATE_EMBEDDING",
            "busy_mode": "STORYSTATE_BUSY_MODE",
            "ui_dir": "STORYSTATE_UI_DIR",
        }
        for key, var in env_map.items():
            if os.environ.get(var):
                values[key] = os.environ[var]
        if os.environ.get("STORYSTATE_CORS_ORIGINS"):
            values["cors_origins"] = [
                o.strip() for o in os.environ["STORYSTATE_CORS_ORIGINS"].split(",") if o.strip()
            ]
        if os.environ.get("STORYSTATE_ASYNC_JOBS"):
            values["async_jobs"] = os.environ["STORYSTATE_ASYNC_JOBS"].lower() in ("1", "true", "yes")
        values.update({k: v for k, v in overrides.items() if v is not None})
        if "project_root" in values:
            values["project_root"] = Path(values["project_root"])
        if values.get("ui_dir"):
            values["ui_dir"] = Path(values["ui_dir"])
        return cls(**values)
