"""Wire-protocol vocabulary: the linear span markup and request shapes.

Sentences travel as token lists. Inside a linearized sentence, an entity is
rendered ``[ mention tokens | display name ]`` with the three structural
symbols as standalone tokens. Ordinary tokens that would collide with the
markup (a bare ``[``, ``]`` or ``|``, or an already-escaped form) are escaped
with one extra leading backslash; unescaping strips exactly one.

Fill templates and type-score queries arrive as JSON ``pieces`` lists. A
piece is either ``{"text": [surface tokens]}`` or a slot:

  fill:  {"slot": {"id": int, "kind": "entity-words" | "context-words",
                   "constraint": type-id or null, "op": str}}
  score: {"type_slot": int}

Literal text in templates is surface form (escaped); fills returned to the
client are raw tokens.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

OPEN = "["
SEP = "|"
CLOSE = "]"
STRUCTURAL = (OPEN, SEP, CLOSE)

_NEEDS_ESCAPE = re.compile(r"\\*[\[\]|]")
_ESCAPED = re.compile(r"\\+[\[\]|]")

ENTITY_SLOT = "entity-words"
CONTEXT_SLOT = "context-words"
SLOT_KINDS = (ENTITY_SLOT, CONTEXT_SLOT)


def escape_token(token: str) -> str:
    """Raw token -> surface token safe to embed in span markup."""
    if _NEEDS_ESCAPE.fullmatch(token):
        return "\\" + token
    return token


def unescape_token(token: str) -> str:
    """Surface token -> raw token."""
    if _ESCAPED.fullmatch(token):
        return token[1:]
    return token


class WireError(Exception):
    """Protocol-level failure rendered as ``{"code", "message"}`` JSON."""

    def __init__(self, code: str, message: str, status: int = 400) -> None:
        super().__init__(message)
        self.code = code
        self.message = message
        self.status = status


def _require(condition: bool, message: str) -> None:
    if not condition:
        raise WireError("bad_request", message)


def _token_list(value: object, what: str) -> list[str]:
    _require(isinstance(value, list), f"{what} must be a list")
    for tok in value:  # type: ignore[union-attr]
        _require(isinstance(tok, str), f"{what} entries must be strings")
    return list(value)  # type: ignore[arg-type]


@dataclass
class Slot:
    id: int
    kind: str
    constraint: str | None
    op: str


@dataclass
class TemplateView:
    """Validated fill template: interleaved literal runs and slots."""

    parent_id: str
    pieces: list[list[str] | Slot] = field(default_factory=list)

    @property
    def slots(self) -> list[Slot]:
        return [p for p in self.pieces if isinstance(p, Slot)]

    @property
    def literal_tokens(self) -> list[str]:
        out: list[str] = []
        for piece in self.pieces:
            if isinstance(piece, list):
                out.extend(piece)
        return out

    @classmethod
    def parse(cls, record: object) -> "TemplateView":
        _require(isinstance(record, dict), "template must be an object")
        assert isinstance(record, dict)
        parent = record.get("parent_id", "")
        _require(isinstance(parent, str), "template parent_id must be a string")
        raw_pieces = record.get("pieces")
        _require(isinstance(raw_pieces, list), "template pieces must be a list")
        view = cls(parent_id=parent)
        seen_ids: set[int] = set()
        for raw in raw_pieces:  # type: ignore[union-attr]
            _require(isinstance(raw, dict), "each piece must be an object")
            if "text" in raw:
                view.pieces.append(_token_list(raw["text"], "piece text"))
                continue
            _require("slot" in raw, "piece must carry 'text' or 'slot'")
            spec = raw["slot"]
            _require(isinstance(spec, dict), "slot must be an object")
            slot_id = spec.get("id")
            _require(isinstance(slot_id, int) and not isinstance(slot_id, bool),
                     "slot id must be an integer")
            _require(slot_id not in seen_ids, f"duplicate slot id {slot_id}")
            seen_ids.add(slot_id)
            kind = spec.get("kind")
            _require(kind in SLOT_KINDS, f"unknown slot kind {kind!r}")
            constraint = spec.get("constraint")
            _require(constraint is None or isinstance(constraint, str),
                     "slot constraint must be a string or null")
            op = spec.get("op", "")
            _require(isinstance(op, str), "slot op must be a string")
            view.pieces.append(Slot(slot_id, kind, constraint, op))
        return view


@dataclass
class ScoreView:
    """Validated type-score query: literal runs and type slots in order."""

    pieces: list[list[str] | int] = field(default_factory=list)
    entity_phrases: list[list[str]] = field(default_factory=list)
    reference_types: list[str] = field(default_factory=list)

    @property
    def type_slots(self) -> list[int]:
        return [p for p in self.pieces if isinstance(p, int)]

    @classmethod
    def parse(cls, body: dict) -> "ScoreView":
        raw_pieces = body.get("pieces")
        _require(isinstance(raw_pieces, list), "pieces must be a list")
        view = cls()
        for raw in raw_pieces:  # type: ignore[union-attr]
            _require(isinstance(raw, dict), "each piece must be an object")
            if "text" in raw:
                view.pieces.append(_token_list(raw["text"], "piece text"))
                continue
            _require("type_slot" in raw, "piece must carry 'text' or 'type_slot'")
            slot = raw["type_slot"]
            _require(isinstance(slot, int) and not isinstance(slot, bool),
                     "type_slot must be an integer")
            view.pieces.append(slot)
        # entity_phrases / reference_types are client-side metadata the
        # server does not key off; they are shape-checked and carried only.
        phrases = body.get("entity_phrases", [])
        _require(isinstance(phrases, list), "entity_phrases must be a list")
        for phrase in phrases:
            view.entity_phrases.append(_token_list(phrase, "entity phrase"))
        refs = body.get("reference_types", [])
        view.reference_types = _token_list(refs, "reference_types")
        slots = view.type_slots
        _require(sorted(slots) == list(range(len(slots))),
                 "type slots must number 0..n-1")
        return view
