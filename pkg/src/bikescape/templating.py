"""Prompt templates with strict placeholder discipline.

Templates ship as versioned text assets under `bikescape/templates/`. A file
holds a system section and a user section; placeholders are uppercase names in
braces (e.g. {COLOR}). Rendering with a map that leaves any placeholder
unresolved, or that names a placeholder the template does not contain, fails
before any provider call.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from importlib import resources

_PLACEHOLDER = re.compile(r"\{([A-Z][A-Z0-9_]*)\}")
_SYSTEM_HEADER = "### system"
_USER_HEADER = "### user"


class TemplateRenderError(ValueError):
    """Raised on unresolved or unknown placeholders."""


@dataclass(frozen=True)
class RenderedPrompt:
    system: str
    user: str


@dataclass(frozen=True)
class PromptTemplate:
    template_id: str
    system_text: str
    user_text: str

    def placeholders(self) -> frozenset[str]:
        found = set(_PLACEHOLDER.findall(self.system_text))
        found.update(_PLACEHOLDER.findall(self.user_text))
        return frozenset(found)

    def render(self, variables: dict[str, str]) -> RenderedPrompt:
        expected = self.placeholders()
        supplied = set(variables)
        unknown = supplied - expected
        if unknown:
            raise TemplateRenderError(
                f"template {self.template_id!r} has no placeholder(s) {sorted(unknown)}"
            )
        missing = expected - supplied
        if missing:
            raise TemplateRenderError(
                f"unresolved placeholder(s) {sorted(missing)} in template {self.template_id!r}"
            )

        def fill(text: str) -> str:
            return _PLACEHOLDER.sub(lambda m: variables[m.group(1)], text)

        return RenderedPrompt(system=fill(self.system_text), user=fill(self.user_text))

    def content_hash(self) -> str:
        payload = f"{self.template_id}\n{self.system_text}\n{self.user_text}".encode()
        return hashlib.sha256(payload).hexdigest()


def parse_template(template_id: str, text: str) -> PromptTemplate:
    if _SYSTEM_HEADER not in text or _USER_HEADER not in text:
        raise ValueError(f"template {template_id!r} must contain system and user sections")
    _, _, rest = text.partition(_SYSTEM_HEADER)
    system, _, user = rest.partition(_USER_HEADER)
    return PromptTemplate(
        template_id=template_id, system_text=system.strip(), user_text=user.strip()
    )


def _asset_text(filename: str) -> str:
    return resources.files("bikescape").joinpath("templates", filename).read_text()


def load_template(name: str) -> PromptTemplate:
    """Load a shipped template by short name: locator, optimizer, highlight, compliance."""
    return parse_template(name, _asset_text(f"{name}.txt"))


@dataclass(frozen=True)
class ExemplarSet:
    """Ordered in-context examples injected into the optimizer prompt."""

    exemplar_set_id: str
    examples: tuple[str, ...]

    def rendered(self) -> str:
        blocks = [f"##Example {i}##\n{text}" for i, text in enumerate(self.examples, start=1)]
        return "\n\n".join(blocks)


_EXEMPLAR_SPLIT = re.compile(r"^##Example \d+##$", re.MULTILINE)


def load_default_exemplars() -> ExemplarSet:
    """The three shipped optimizer in-context examples."""
    text = _asset_text("optimizer_examples.txt")
    blocks = [block.strip() for block in _EXEMPLAR_SPLIT.split(text) if block.strip()]
    return ExemplarSet(exemplar_set_id="builtin-v1", examples=tuple(blocks))
