"""Prompt templates and instruction rendering.

Templates are plain text files with named placeholders. Substitution touches
only the known placeholder names, so braces inside problem statements or code
never get interpreted.
"""
from __future__ import annotations

import re
from importlib import resources
from pathlib import Path

from .types import Instruction

PLACEHOLDER_NAMES = ("problem", "best_solution", "failed_test", "feedback", "tests", "num_tests", "entry_point")
_PLACEHOLDER_RE = re.compile(r"\{(" + "|".join(PLACEHOLDER_NAMES) + r")\}")

DEFAULT_GENERATE_TEMPLATE = "gen_v1"
DEFAULT_REFINE_TEMPLATE = "refine_v1"


class UnknownTemplateError(KeyError):
    pass


class TemplateRegistry:
    """Named prompt templates, preloaded with the packaged defaults."""

    def __init__(self) -> None:
        self._templates: dict[str, str] = {}
        base = resources.files(__package__) / "templates"
        for entry in sorted(base.iterdir(), key=lambda e: e.name):
            if entry.name.endswith(".txt"):
                self._templates[entry.name[: -len(".txt")]] = entry.read_text()

    def register(self, template_id: str, text: str) -> None:
        self._templates[template_id] = text

    def register_file(self, template_id: str, path: str | Path) -> None:
        self._templates[template_id] = Path(path).read_text()

    def get(self, template_id: str) -> str:
        try:
            return self._templates[template_id]
        except KeyError:
            raise UnknownTemplateError(
                f"unknown template: {template_id!r} (known: {sorted(self._templates)})"
            ) from None

    def __contains__(self, template_id: str) -> bool:
        return template_id in self._templates


_default_registry: TemplateRegistry | None = None


def default_registry() -> TemplateRegistry:
    global _default_registry
    if _default_registry is None:
        _default_registry = TemplateRegistry()
    return _default_registry


def substitute(template_text: str, values: dict[str, str]) -> str:
    """Replace known placeholders in one pass; substituted values are inserted
    verbatim and never re-scanned."""

    def repl(match: re.Match[str]) -> str:
        return values.get(match.group(1), "")

    return _PLACEHOLDER_RE.sub(repl, template_text)


def render_instruction(instr: Instruction, registry: TemplateRegistry, num_tests: int) -> str:
    template = registry.get(instr.template_id)
    values = {
        "problem": instr.problem.description,
        "best_solution": instr.best_solution or "",
        "failed_test": instr.failed_test or "",
        "feedback": instr.feedback or "",
        "tests": "\n".join(instr.sampled_tests),
        "num_tests": str(num_tests),
        "entry_point": instr.problem.entry_point or "",
    }
    return substitute(template, values)
