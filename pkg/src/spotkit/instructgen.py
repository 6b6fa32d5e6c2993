"""Precise referring instructions: region token serialization, templates, rendering.

A region is spelled into instruction text as ``<box>x1,y1,...,xN,yN</box>``
with every coordinate printed at 3 decimal places. One token pair serves all
region kinds; the kind is recovered from the point count (1 point, 2 box
corners, 3+ polygon vertices).
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import ROUND_HALF_EVEN, Decimal
from enum import Enum
from typing import TYPE_CHECKING, Iterable, Mapping, Sequence

from .errors import RegionParseError, RegionReferenceError, TemplateError
from .geometry import Region, RegionKind

if TYPE_CHECKING:  # pragma: no cover
    from .corpus import InstructionRecord

BOX_OPEN = "<box>"
BOX_CLOSE = "</box>"
IMAGE_PLACEHOLDER = "<image>"
QUESTION_PLACEHOLDER = "<question>"

_REGION_SLOT = re.compile(r"<region:(\d+)>")
_COORD_SPLIT = re.compile(r"[,\s]+")


class Task(str, Enum):
    caption = "caption"
    vqa = "vqa"
    region_class = "region_class"
    region_ocr = "region_ocr"
    region_vqa = "region_vqa"
    region_chat = "region_chat"


REGION_TASKS = frozenset(
    {Task.region_class, Task.region_ocr, Task.region_vqa, Task.region_chat}
)


class Style(str, Enum):
    short = "short"
    detail = "detail"
    none = "none"


class Role(str, Enum):
    user = "user"
    assistant = "assistant"


@dataclass(frozen=True)
class Turn:
    role: Role
    text: str

    def to_dict(self) -> dict:
        return {"role": self.role.value, "text": self.text}

    @classmethod
    def from_dict(cls, d: dict) -> "Turn":
        return cls(role=Role(d["role"]), text=str(d["text"]))


DEFAULT_STYLE_CLAUSES: Mapping[Style, str] = {
    Style.short: "Answer in short.",
    Style.detail: "Answer in detail.",
}


def quantize_coord(value: float) -> str:
    """Format one normalized coordinate at 3 decimals, round-half-even.

    Rounding happens on the decimal spelling of the value, so 0.1245 -> "0.124"
    regardless of how the nearest binary double falls around the midpoint.
    """
    return str(Decimal(repr(float(value))).quantize(Decimal("0.001"), rounding=ROUND_HALF_EVEN))


def serialize_region(r: Region, delimiter: str = ",") -> str:
    """Spell a region as a ``<box>...</box>`` coordinate token span."""
    coords: list[str] = []
    for x, y in r.points:
        coords.append(quantize_coord(x))
        coords.append(quantize_coord(y))
    return f"{BOX_OPEN}{delimiter.join(coords)}{BOX_CLOSE}"


def parse_region_tokens(text: str) -> list[tuple[Region, tuple[int, int]]]:
    """Recover every serialized region span from text.

    Returns (region, (start, end)) pairs in order of appearance; ``end`` is
    exclusive. Malformed spans (unterminated token, odd or empty coordinate
    list, out-of-range value) raise RegionParseError with the span offset.
    """
    out: list[tuple[Region, tuple[int, int]]] = []
    pos = 0
    while True:
        start = text.find(BOX_OPEN, pos)
        if start == -1:
            return out
        body_start = start + len(BOX_OPEN)
        end = text.find(BOX_CLOSE, body_start)
        if end == -1:
            raise RegionParseError("unterminated <box> span", offset=start)
        inner = text[body_start:end].strip()
        tokens = [t for t in _COORD_SPLIT.split(inner) if t] if inner else []
        if not tokens:
            raise RegionParseError("empty region span", offset=start)
        if len(tokens) % 2 != 0:
            raise RegionParseError(
                f"odd coordinate count ({len(tokens)}) in region span", offset=start
            )
        try:
            values = [float(t) for t in tokens]
        except ValueError:
            raise RegionParseError(f"non-numeric coordinate in region span: {inner!r}", offset=start)
        for v in values:
            if not (0.0 <= v <= 1.0):
                raise RegionParseError(f"coordinate {v} outside [0, 1]", offset=start)
        pairs = [(values[i], values[i + 1]) for i in range(0, len(values), 2)]
        if len(pairs) == 1:
            region = Region(RegionKind.point, tuple(pairs))
        elif len(pairs) == 2:
            (x1, y1), (x2, y2) = pairs
            region = Region.box_at(min(x1, x2), min(y1, y2), max(x1, x2), max(y1, y2))
        else:
            region = Region(RegionKind.polygon, tuple(pairs))
        span = (start, end + len(BOX_CLOSE))
        out.append((region, span))
        pos = span[1]


def region_slot(i: int) -> str:
    return f"<region:{i}>"


@dataclass(frozen=True)
class Template:
    """One instruction template with ``<image>``/``<question>``/``<region:i>`` slots."""

    id: str
    task: Task
    body: str
    style: Style = Style.none

    def __post_init__(self) -> None:
        indices = [int(m.group(1)) for m in _REGION_SLOT.finditer(self.body)]
        if sorted(indices) != list(range(len(indices))):
            raise TemplateError(
                f"template {self.id!r}: region slots must be used once each, "
                f"contiguously from 0 (found {indices})"
            )
        if self.task in REGION_TASKS and not indices:
            raise TemplateError(f"template {self.id!r}: {self.task.value} template needs a region slot")
        if self.task not in REGION_TASKS and indices:
            raise TemplateError(f"template {self.id!r}: {self.task.value} template cannot take regions")

    @property
    def region_slots(self) -> int:
        return len(_REGION_SLOT.findall(self.body))

    @property
    def wants_question(self) -> bool:
        return QUESTION_PLACEHOLDER in self.body


@dataclass(frozen=True)
class RenderedInstruction:
    """A fully expanded instruction plus the regions serialized into it."""

    text: str
    regions: tuple[Region, ...]


def expand_instruction_text(
    template: Template,
    question: str | None = None,
    *,
    style_clauses: Mapping[Style, str] = DEFAULT_STYLE_CLAUSES,
) -> str:
    """Bind the question and style clause, keeping ``<region:i>`` slots intact."""
    if template.wants_question and question is None:
        raise TemplateError(f"template {template.id!r} needs a question, none given")
    if not template.wants_question and question is not None:
        raise TemplateError(f"template {template.id!r} takes no question")
    text = template.body
    if question is not None:
        text = text.replace(QUESTION_PLACEHOLDER, question)
    clause = style_clauses.get(template.style)
    if clause:
        text = f"{text} {clause}" if text else clause
    return text


def expand_region_slots(text: str, regions: Sequence[Region], delimiter: str = ",") -> str:
    """Replace every ``<region:i>`` with the serialized i-th region."""

    def _sub(m: re.Match) -> str:
        i = int(m.group(1))
        if i >= len(regions):
            raise RegionReferenceError(
                f"text cites <region:{i}> but only {len(regions)} region(s) are defined"
            )
        return serialize_region(regions[i], delimiter)

    return _REGION_SLOT.sub(_sub, text)


def render(
    template: Template,
    question: str | None = None,
    regions: Sequence[Region] = (),
    *,
    delimiter: str = ",",
    style_clauses: Mapping[Style, str] = DEFAULT_STYLE_CLAUSES,
) -> RenderedInstruction:
    """Expand a template into backend-ready instruction text.

    Region arguments fill ``<region:i>`` slots in order; the style clause is
    appended as a trailing sentence. Slot/argument count mismatches raise
    TemplateError naming the missing slots.
    """
    slots = template.region_slots
    if len(regions) != slots:
        missing = [region_slot(i) for i in range(len(regions), slots)]
        raise TemplateError(
            f"template {template.id!r} has {slots} region slot(s) but {len(regions)} "
            f"region(s) given" + (f"; missing {', '.join(missing)}" if missing else "")
        )
    text = expand_instruction_text(template, question, style_clauses=style_clauses)
    text = expand_region_slots(text, regions, delimiter)
    return RenderedInstruction(text=text, regions=tuple(regions))


def render_conversation(record: "InstructionRecord", delimiter: str = ",") -> list[Turn]:
    """Flatten a stored record into backend-ready turns with regions serialized."""
    out: list[Turn] = []
    for turn in record.turns:
        out.append(Turn(turn.role, expand_region_slots(turn.text, record.regions, delimiter)))
    return out


@dataclass(frozen=True)
class TemplateRegistry:
    """Immutable template collection plus serialization settings."""

    templates: tuple[Template, ...]
    delimiter: str = ","
    style_clauses: Mapping[Style, str] = None  # type: ignore[assignment]

    def __post_init__(self) -> None:
        if self.style_clauses is None:
            object.__setattr__(self, "style_clauses", dict(DEFAULT_STYLE_CLAUSES))
        ids = [t.id for t in self.templates]
        if len(set(ids)) != len(ids):
            raise TemplateError(f"duplicate template ids: {sorted(ids)}")

    def get(self, template_id: str) -> Template:
        for t in self.templates:
            if t.id == template_id:
                return t
        raise TemplateError(f"unknown template id {template_id!r}")

    def pool(self, task: Task) -> tuple[Template, ...]:
        """Templates for a task, in registry (file) order."""
        return tuple(t for t in self.templates if t.task == task)

    def render(
        self, template: Template, question: str | None = None, regions: Sequence[Region] = ()
    ) -> RenderedInstruction:
        return render(
            template,
            question,
            regions,
            delimiter=self.delimiter,
            style_clauses=self.style_clauses,
        )

    @classmethod
    def from_mapping(cls, data: Mapping) -> "TemplateRegistry":
        try:
            entries: Iterable[Mapping] = data["templates"]
        except (KeyError, TypeError):
            raise TemplateError("template registry needs a 'templates' list")
        templates = []
        for e in entries:
            try:
                templates.append(
                    Template(
                        id=str(e["id"]),
                        task=Task(e["task"]),
                        body=str(e["body"]),
                        style=Style(e.get("style", "none")),
                    )
                )
            except (KeyError, ValueError) as exc:
                raise TemplateError(f"bad template entry {e!r}: {exc}")
        clauses = dict(DEFAULT_STYLE_CLAUSES)
        for key, text in (data.get("style_clauses") or {}).items():
            clauses[Style(key)] = str(text)
        return cls(
            templates=tuple(templates),
            delimiter=str(data.get("delimiter", ",")),
            style_clauses=clauses,
        )

    @classmethod
    def from_file(cls, path) -> "TemplateRegistry":
        import yaml

        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
        return cls.from_mapping(data)

    @classmethod
    def default(cls) -> "TemplateRegistry":
        import yaml
        from importlib import resources

        text = resources.files("spotkit").joinpath("data/templates.yaml").read_text("utf-8")
        return cls.from_mapping(yaml.safe_load(text))


__all__ = [
    "BOX_OPEN",
    "BOX_CLOSE",
    "IMAGE_PLACEHOLDER",
    "QUESTION_PLACEHOLDER",
    "Task",
    "REGION_TASKS",
    "Style",
    "Role",
    "Turn",
    "Template",
    "TemplateRegistry",
    "RenderedInstruction",
    "quantize_coord",
    "serialize_region",
    "parse_region_tokens",
    "region_slot",
    "expand_instruction_text",
    "expand_region_slots",
    "render",
    "render_conversation",
]
