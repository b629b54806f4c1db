"""Slotted sentence templates and the name x template test corpus.

Template files are UTF-8 plain text, one template per line, each containing
the literal slot marker ``{{Name}}`` exactly once.  The bundled corpus of 32
customer-service templates ships with the package.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import IO, Iterable, Sequence, Union

from .corpus import AssociatedName

SLOT = "{{Name}}"


@dataclass(frozen=True)
class Template:
    id: int
    text: str

    def __post_init__(self):
        if not self.text:
            raise ValueError("template text is empty")
        occurrences = self.text.count(SLOT)
        if occurrences != 1:
            raise ValueError(
                f"template {self.id} has {occurrences} {SLOT} slots; exactly one required"
            )


@dataclass(frozen=True)
class TestInstance:
    """One template filled with one name, with the expected name spans.

    ``expected_spans`` are half-open (start, end) character offsets in
    Unicode scalar values, one per whitespace-separated token of the
    inserted name.
    """

    instance_id: int
    template_id: int
    name: AssociatedName
    rendered_text: str
    expected_spans: tuple[tuple[int, int], ...]


def _iter_lines(source: Union[str, Path, IO, Iterable[str]]) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        return Path(source).read_text(encoding="utf-8").splitlines()
    if hasattr(source, "read"):
        data = source.read()
        if isinstance(data, bytes):
            data = data.decode("utf-8")
        return data.splitlines()
    return source


def load_templates(source: Union[str, Path, IO, Iterable[str]]) -> list[Template]:
    """Load templates; ids are assigned by position, 1-based.

    Blank lines are skipped and do not consume ids.  A line with zero or
    multiple slot markers is an error naming the offending line.
    """
    templates = []
    for line_no, raw in enumerate(_iter_lines(source), start=1):
        line = raw.rstrip("\n")
        if not line.strip():
            continue
        occurrences = line.count(SLOT)
        if occurrences != 1:
            raise ValueError(
                f"line {line_no}: found {occurrences} {SLOT} slots; exactly one required"
            )
        templates.append(Template(id=len(templates) + 1, text=line))
    return templates


def bundled_templates() -> list[Template]:
    """The packaged 32-template customer service corpus."""
    text = resources.files("maskaudit").joinpath("data/templates.txt").read_text("utf-8")
    return load_templates(text.splitlines())


def _token_spans(name: str, offset: int) -> tuple[tuple[int, int], ...]:
    return tuple(
        (offset + m.start(), offset + m.end()) for m in re.finditer(r"\S+", name)
    )


def generate_instances(
    templates: Sequence[Template], names: Sequence[AssociatedName]
) -> list[TestInstance]:
    """Full template x name cross product, template-major order.

    Each instance records one expected span per whitespace-separated token
    of the name surface form.
    """
    if not templates or not names:
        raise ValueError("templates and names must both be non-empty")
    for entry in names:
        if SLOT in entry.name:
            raise ValueError(f"name {entry.name!r} contains the slot marker")
    instances = []
    instance_id = 0
    for template in templates:
        slot_at = template.text.index(SLOT)
        for entry in names:
            rendered = template.text[:slot_at] + entry.name + template.text[slot_at + len(SLOT):]
            instances.append(
                TestInstance(
                    instance_id=instance_id,
                    template_id=template.id,
                    name=entry,
                    rendered_text=rendered,
                    expected_spans=_token_spans(entry.name, slot_at),
                )
            )
            instance_id += 1
    return instances
