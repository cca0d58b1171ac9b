"""Versioned prompt templates shipped as ``prompts/*.prompt`` files.

A template file has a ``[system]`` section and a ``[user]`` section.
Placeholders are ``{name}``; other braces pass through untouched.
"""

from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Optional

PLACEHOLDER = re.compile(r"\{([a-z_][a-z0-9_]*)\}")


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    system: str
    user: str

    @property
    def digest(self) -> str:
        return hashlib.sha256(f"{self.system}\0{self.user}".encode("utf-8")).hexdigest()[:16]

    def placeholders(self) -> set[str]:
        return set(PLACEHOLDER.findall(self.system)) | set(PLACEHOLDER.findall(self.user))

    def render(self, session: Optional[int] = None, **values: str) -> tuple[str, str]:
        """Fill placeholders; ``session`` tags repeated independent runs."""
        missing = self.placeholders() - values.keys()
        if missing:
            raise KeyError(f"prompt {self.name!r} needs values for {sorted(missing)}")

        def fill(text: str) -> str:
            return PLACEHOLDER.sub(lambda m: str(values[m.group(1)]) if m.group(1) in values else m.group(0), text)

        system = fill(self.system)
        if session is not None:
            system = f"{system}\n\nIndependent session: {session}"
        return system, fill(self.user)


def parse_template(name: str, text: str) -> PromptTemplate:
    sections: dict[str, list[str]] = {}
    current = None
    for line in text.split("\n"):
        header = line.strip()
        if header in ("[system]", "[user]"):
            current = header[1:-1]
            sections[current] = []
        elif current is not None:
            sections[current].append(line)
        elif header and not header.startswith("#"):
            raise ValueError(f"prompt {name!r}: text before the first section header")
    if "user" not in sections:
        raise ValueError(f"prompt {name!r} has no [user] section")
    return PromptTemplate(
        name,
        "\n".join(sections.get("system", [])).strip(),
        "\n".join(sections["user"]).strip(),
    )


@lru_cache(maxsize=None)
def load_prompt(name: str) -> PromptTemplate:
    text = (resources.files("papercode") / "prompts" / f"{name}.prompt").read_text("utf-8")
    return parse_template(name, text)


PROMPT_NAMES = (
    "summarize",
    "classify",
    "extract_kg",
    "intermediate",
    "baseline",
    "queries",
    "answer",
    "refine",
    "ask",
)


def prompt_digests() -> dict[str, str]:
    return {name: load_prompt(name).digest for name in PROMPT_NAMES}
