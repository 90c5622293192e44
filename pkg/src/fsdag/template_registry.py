"""Registry of built-in synthetic document templates.

Templates are JSON files in the package's templates/ directory, discovered
on initialization, listed with their descriptions and loaded by name.
"""

from __future__ import annotations

import json
from pathlib import Path

from fsdag.synthgen import TemplateSpec
from fsdag.synthgen import parse_template_spec


class TemplateNotFoundError(Exception):
    """Raised when a template name is neither built in nor a readable file."""


class TemplateValidationError(Exception):
    """Raised when a template file exists but is malformed."""


def parse_template_file(path: Path) -> TemplateSpec:
    """Parse a template JSON file.

    Raises:
        TemplateValidationError: invalid JSON or missing fields
    """
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise TemplateValidationError(f"Invalid JSON in {path}: {e}") from e
    try:
        return parse_template_spec(data)
    except ValueError as e:
        raise TemplateValidationError(f"Template {path} is invalid: {e}") from e


class TemplateRegistry:
    """Built-in templates by name.

    Example:
        >>> registry = TemplateRegistry()
        >>> [t.name for t in registry.list_templates()]
        ['basic4', 'basic8']
        >>> registry.load_template("basic8").n_classes
        8
    """

    def __init__(self, templates_dir: Path | None = None) -> None:
        self._templates_dir = templates_dir or Path(__file__).parent / "templates"
        self._templates: dict[str, TemplateSpec] = {}
        self._paths: dict[str, Path] = {}
        self._discover_templates()

    def _discover_templates(self) -> None:
        if not self._templates_dir.exists():
            return
        for path in sorted(self._templates_dir.glob("*.json")):
            try:
                spec = parse_template_file(path)
            except TemplateValidationError:
                # surfaced again if someone loads it by name
                continue
            self._templates[spec.name] = spec
            self._paths[spec.name] = path

    def list_templates(self) -> list[TemplateSpec]:
        """Templates sorted by name."""
        return [self._templates[name] for name in sorted(self._templates)]

    def load_template(self, name: str) -> TemplateSpec:
        """Load a built-in template by name.

        Raises:
            TemplateNotFoundError: no template with that name
        """
        if name not in self._templates:
            available = ", ".join(sorted(self._templates)) if self._templates else "no templates"
            raise TemplateNotFoundError(f"Template '{name}' not found.\nAvailable templates: {available}")
        return self._templates[name]

    def get_template_path(self, name: str) -> Path:
        self.load_template(name)
        return self._paths[name]

    def resolve(self, name_or_path: str) -> TemplateSpec:
        """A built-in name first, then a path to a template JSON file.

        Raises:
            TemplateNotFoundError: neither a built-in nor an existing file
            TemplateValidationError: the file is malformed
        """
        if name_or_path in self._templates:
            return self._templates[name_or_path]
        path = Path(name_or_path)
        if path.exists():
            return parse_template_file(path)
        available = ", ".join(sorted(self._templates)) if self._templates else "no templates"
        raise TemplateNotFoundError(
            f"Template not found: {name_or_path}\n"
            f"\n"
            f"Tried:\n  - built-in templates ({available})\n  - {name_or_path}"
        )
