"""Turn raw model text into typed answers.

Every parser either returns a value or raises ``ParseError``; nothing else
escapes, whatever bytes come in.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from decimal import Decimal, InvalidOperation
from typing import Dict, List, Optional, Sequence, Tuple

from .catalog import round_to_cents

PURCHASE = "purchase"
NOT_PURCHASE = "not_purchase"

KINDS = ("decision", "decimal", "whole", "text-enum", "free-text")


class ParseError(ValueError):
    def __init__(self, reason: str, raw: str = "", field_index: Optional[int] = None):
        self.reason = reason
        self.raw = raw
        self.field_index = field_index
        where = f" at field {field_index}" if field_index is not None else ""
        super().__init__(f"{reason}{where}")


@dataclass(frozen=True)
class Field:
    name: str
    kind: str
    choices: Tuple[str, ...] = ()


@dataclass(frozen=True)
class ParseSchema:
    schema_id: str
    fields: Tuple[Field, ...]

    def __post_init__(self):
        if not self.fields:
            raise ValueError(f"{self.schema_id}: schema needs at least one field")
        for f in self.fields:
            if f.kind not in KINDS:
                raise ValueError(f"{self.schema_id}: unknown field kind {f.kind!r}")
            if f.kind == "text-enum" and not f.choices:
                raise ValueError(f"{self.schema_id}: text-enum field {f.name} has no choices")

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.fields]

    def numeric(self) -> List[str]:
        return [f.name for f in self.fields if f.kind in ("decimal", "whole")]

    def categorical(self) -> List[str]:
        return [f.name for f in self.fields if f.kind not in ("decimal", "whole")]


_NOT_PURCHASE_RE = re.compile(r"\bnot[\s_]+purchase\b")
_PURCHASE_RE = re.compile(r"\bpurchase\b")


def parse_decision(text) -> str:
    """Map an answer to PURCHASE / NOT_PURCHASE.

    "not purchase" is matched before "purchase"; an answer holding both a
    negated and a bare token is contradictory and rejected.
    """
    raw = _as_text(text)
    norm = raw.strip().lower()
    negated = len(_NOT_PURCHASE_RE.findall(norm))
    remainder = _NOT_PURCHASE_RE.sub(" ", norm)
    bare = len(_PURCHASE_RE.findall(remainder))
    if negated and bare:
        raise ParseError("contradictory decision tokens", raw)
    if negated:
        return NOT_PURCHASE
    if bare:
        return PURCHASE
    raise ParseError("no decision token", raw)


_NUMBER_RE = re.compile(
    r"(?P<neg>-\s*)?\$?\s*(?P<num>\d{1,3}(?:,\d{3})+(?:\.\d+)?|\d+(?:\.\d+)?|\.\d+)"
)


def _first_number(raw: str):
    m = _NUMBER_RE.search(raw)
    if m is None:
        raise ParseError("no numeric token", raw)
    if m.group("neg"):
        raise ParseError("negative value", raw)
    return m.group("num").replace(",", "")


def parse_decimal(text) -> Decimal:
    """First number in the text, cent-rounded. ``$`` and thousands commas are ignored."""
    raw = _as_text(text)
    token = _first_number(raw)
    try:
        return round_to_cents(Decimal(token))
    except InvalidOperation:
        raise ParseError("bad decimal", raw) from None


def parse_whole(text) -> int:
    raw = _as_text(text)
    token = _first_number(raw)
    if "." in token:
        raise ParseError("not a whole number", raw)
    return int(token)


def parse_text(text, choices: Sequence[str] = ()) -> str:
    raw = _as_text(text)
    value = raw.strip()
    if not value:
        raise ParseError("empty field", raw)
    if "," in value:
        raise ParseError("comma inside free-text field", raw)
    if choices:
        lowered = {c.lower(): c for c in choices}
        key = value.lower().strip(" .\"'")
        if key not in lowered:
            raise ParseError(f"{value!r} not in {list(choices)}", raw)
        return lowered[key]
    return value


def parse_field(text, field: Field):
    if field.kind == "decision":
        return parse_decision(text)
    if field.kind == "decimal":
        return parse_decimal(text)
    if field.kind == "whole":
        return parse_whole(text)
    if field.kind == "text-enum":
        return parse_text(text, field.choices)
    return parse_text(text)


def parse_record(text, schema: ParseSchema) -> Dict[str, object]:
    raw = _as_text(text)
    line = raw.strip()
    parts = [p.strip() for p in line.split(",")] if len(schema.fields) > 1 else [line]
    if len(parts) != len(schema.fields):
        raise ParseError(f"expected {len(schema.fields)} fields, got {len(parts)}", raw)
    record = {}
    for i, (part, f) in enumerate(zip(parts, schema.fields)):
        try:
            record[f.name] = parse_field(part, f)
        except ParseError as exc:
            raise ParseError(f"{f.name}: {exc.reason}", raw, i) from None
    return record


def format_field(value, field: Field) -> str:
    if field.kind == "decision":
        return "not purchase" if value == NOT_PURCHASE else "purchase"
    if field.kind == "decimal":
        return str(round_to_cents(value))
    return str(value)


def format_record(record: Dict[str, object], schema: ParseSchema) -> str:
    return ", ".join(format_field(record[f.name], f) for f in schema.fields)


def _as_text(text) -> str:
    if isinstance(text, bytes):
        return text.decode("utf-8", errors="replace")
    if text is None:
        return ""
    return str(text)


# --------------------------------------------------------------------------
# schemas for the built-in strategies

_DEMOGRAPHICS = (
    Field("age", "whole"),
    Field("gender", "free-text"),
    Field("education", "free-text"),
    Field("income", "whole"),
    Field("occupation", "free-text"),
    Field("ethnicity", "free-text"),
    Field("marital_status", "free-text"),
    Field("household_size", "whole"),
    Field("number_of_children", "whole"),
    Field("state", "free-text"),
    Field("home_ownership", "free-text"),
)

DEMOGRAPHIC_FIELDS = tuple(f.name for f in _DEMOGRAPHICS)

SCHEMAS: Dict[str, ParseSchema] = {
    s.schema_id: s
    for s in (
        ParseSchema("decision", (Field("decision", "decision"),)),
        ParseSchema("past_price", (Field("past_price", "decimal"),)),
        ParseSchema("competing_price", (Field("competing_price", "decimal"),)),
        ParseSchema("expiration_days", (Field("expiration_days", "whole"),)),
        ParseSchema(
            "full_record",
            _DEMOGRAPHICS
            + (
                Field("purchase_frequency", "free-text"),
                Field("past_price", "decimal"),
                Field("storage_space", "free-text"),
                Field("grocery_budget", "whole"),
                Field("expiration_days", "whole"),
                Field("competing_price", "decimal"),
                Field("decision", "decision"),
            ),
        ),
        ParseSchema("persona_record", _DEMOGRAPHICS + (Field("price", "decimal"), Field("decision", "decision"))),
    )
}


def get_schema(schema_id: str) -> ParseSchema:
    try:
        return SCHEMAS[schema_id]
    except KeyError:
        raise KeyError(f"unknown parse schema {schema_id!r}; known: {', '.join(SCHEMAS)}") from None
