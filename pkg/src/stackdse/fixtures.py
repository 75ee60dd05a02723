"""Packaged fixture lookup: schemas, system configurations, model templates."""

from __future__ import annotations

from importlib import resources
from pathlib import Path

_SCHEMAS = ("table1", "table4")
_SYSTEMS = ("system1", "system2", "system3")
_MODELS = ("gpt3-175b", "gpt3-13b", "vit-base", "vit-large")


def fixtures_dir() -> Path:
    return Path(str(resources.files("stackdse") / "fixtures"))


def find(source: str | Path, kind: str = "any") -> Path:
    """Resolve a filesystem path or a packaged fixture name to a file."""
    path = Path(source)
    if path.suffix == ".json" or path.exists():
        if not path.exists():
            raise FileNotFoundError(f"no such file: {path}")
        return path
    name = str(source)
    base = fixtures_dir()
    candidates = []
    if kind in ("any", "schema", "system"):
        candidates.append(base / f"{name}.json")
    if kind in ("any", "model"):
        candidates.append(base / "models" / f"{name}.json")
    for candidate in candidates:
        if candidate.exists():
            return candidate
    known = ", ".join(_SCHEMAS + _SYSTEMS + _MODELS)
    raise FileNotFoundError(f"unknown fixture {name!r}; packaged fixtures: {known}")
