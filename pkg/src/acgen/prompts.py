"""Loading and rendering of the editable prompt configuration."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Any

import jinja2
import yaml

from .errors import ConfigError

_ENV = jinja2.Environment(autoescape=False, undefined=jinja2.StrictUndefined, keep_trailing_newline=False)


@dataclass(frozen=True)
class PromptConfig:
    data: dict[str, Any]
    source: str

    def get(self, dotted: str) -> Any:
        node: Any = self.data
        for key in dotted.split("."):
            try:
                node = node[key]
            except (KeyError, TypeError) as exc:
                raise ConfigError(f"prompt config {self.source} has no entry {dotted!r}") from exc
        return node

    def render(self, dotted: str, **values: Any) -> str:
        template = self.get(dotted)
        if "story" in values and "story_block" not in values:
            values["story_block"] = _ENV.from_string(self.get("generation.story_block")).render(
                story=values["story"])
        try:
            return _ENV.from_string(template).render(**values).strip()
        except jinja2.TemplateError as exc:
            raise ConfigError(f"cannot render prompt {dotted!r}: {exc}") from exc


def load_prompts(path: str | Path | None = None) -> PromptConfig:
    if path is None:
        return _default_prompts()
    path = Path(path)
    try:
        data = yaml.safe_load(path.read_text(encoding="utf-8"))
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read prompt config {path}: {exc}") from exc
    return PromptConfig(data, str(path))


@lru_cache(maxsize=1)
def _default_prompts() -> PromptConfig:
    text = resources.files("acgen.data").joinpath("prompts.yaml").read_text(encoding="utf-8")
    return PromptConfig(yaml.safe_load(text), "acgen/data/prompts.yaml")
