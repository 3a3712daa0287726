"""Reversible linearization of tagged sentences.

A sentence renders as its tokens with every entity span wrapped as
``[ entity tokens | display name ]``. The rendered form is itself a
whitespace-joined token sequence. Corpus tokens that would collide with the
three structural symbols gain a backslash prefix on the way out and lose one
on the way back, which keeps the mapping bijective even for tokens that are
already escaped-looking (``\\[`` renders as ``\\\\[``).
"""
from __future__ import annotations

import re
from dataclasses import dataclass

from .corpus import EntitySpan, LabelSchema, TaggedSentence
from .errors import (
    EmptyEntityError,
    MissingSeparatorError,
    UnbalancedBracketsError,
    UnknownDisplayNameError,
    UnknownTypeError,
)

OPEN, SEP, CLOSE = "[", "|", "]"

_NEEDS_ESCAPE = re.compile(r"\\*[\[\]|]")
_ESCAPED = re.compile(r"\\+[\[\]|]")


def escape_token(token: str) -> str:
    """Escape a corpus token for embedding in linearized text."""
    return "\\" + token if _NEEDS_ESCAPE.fullmatch(token) else token


def unescape_token(token: str) -> str:
    """Inverse of :func:`escape_token`."""
    return token[1:] if _ESCAPED.fullmatch(token) else token


@dataclass(frozen=True)
class LinearizedText:
    """A rendered token sequence; ``text`` is the whitespace join."""

    tokens: tuple[str, ...]

    @classmethod
    def from_text(cls, text: str) -> "LinearizedText":
        return cls(tuple(text.split()))

    @property
    def text(self) -> str:
        return " ".join(self.tokens)

    def __str__(self) -> str:
        return self.text


@dataclass(frozen=True)
class EntitySegment:
    tokens: tuple[str, ...]
    type_id: str


@dataclass(frozen=True)
class SegmentedSentence:
    """Alternating context/entity view: n entities, n+1 contexts (may be empty)."""

    sentence_id: str
    contexts: tuple[tuple[str, ...], ...]
    entities: tuple[EntitySegment, ...]

    def __post_init__(self) -> None:
        if len(self.contexts) != len(self.entities) + 1:
            raise ValueError("need exactly one more context segment than entities")
        for e in self.entities:
            if not e.tokens:
                raise ValueError("entity segments cannot be empty")

    @property
    def tokens(self) -> tuple[str, ...]:
        out: list[str] = list(self.contexts[0])
        for ent, ctx in zip(self.entities, self.contexts[1:]):
            out.extend(ent.tokens)
            out.extend(ctx)
        return tuple(out)

    @property
    def type_sequence(self) -> tuple[str, ...]:
        return tuple(e.type_id for e in self.entities)


def segment(sentence: TaggedSentence) -> SegmentedSentence:
    """Split a sentence into alternating context and entity segments."""
    contexts: list[tuple[str, ...]] = []
    entities: list[EntitySegment] = []
    pos = 0
    for sp in sentence.spans:
        contexts.append(tuple(sentence.tokens[pos:sp.start]))
        entities.append(EntitySegment(tuple(sentence.tokens[sp.start:sp.end]), sp.type_id))
        pos = sp.end
    contexts.append(tuple(sentence.tokens[pos:]))
    return SegmentedSentence(sentence.sentence_id, tuple(contexts), tuple(entities))


def unsegment(seg: SegmentedSentence) -> TaggedSentence:
    """Inverse of :func:`segment`."""
    tokens: list[str] = list(seg.contexts[0])
    spans: list[EntitySpan] = []
    for ent, ctx in zip(seg.entities, seg.contexts[1:]):
        spans.append(EntitySpan(len(tokens), len(tokens) + len(ent.tokens), ent.type_id))
        tokens.extend(ent.tokens)
        tokens.extend(ctx)
    return TaggedSentence(seg.sentence_id, tokens, spans)


def linearize(sentence: TaggedSentence, schema: LabelSchema) -> LinearizedText:
    """Render a sentence with every entity wrapped as ``[ tokens | name ]``."""
    seg = segment(sentence)
    out: list[str] = [escape_token(t) for t in seg.contexts[0]]
    for ent, ctx in zip(seg.entities, seg.contexts[1:]):
        if not schema.has_type(ent.type_id):
            raise UnknownTypeError(f"type {ent.type_id!r} is not in the schema")
        out.append(OPEN)
        out.extend(escape_token(t) for t in ent.tokens)
        out.append(SEP)
        out.extend(schema.display_of(ent.type_id).split())
        out.append(CLOSE)
        out.extend(escape_token(t) for t in ctx)
    return LinearizedText(tuple(out))


def delinearize(
    text: LinearizedText | str,
    schema: LabelSchema,
    sentence_id: str = "",
) -> TaggedSentence:
    """Parse linearized text back into a tagged sentence.

    Linearization drops the sentence id, so round trips pass it explicitly.
    """
    tokens_in = text.tokens if isinstance(text, LinearizedText) else tuple(str(text).split())
    out_tokens: list[str] = []
    spans: list[EntitySpan] = []
    mode = "text"
    ent_tokens: list[str] = []
    name_tokens: list[str] = []

    for tok in tokens_in:
        if mode == "text":
            if tok == OPEN:
                mode, ent_tokens = "entity", []
            elif tok == CLOSE:
                raise UnbalancedBracketsError(f"{CLOSE!r} without a matching {OPEN!r}")
            elif tok == SEP:
                raise MissingSeparatorError(f"{SEP!r} outside a bracketed group")
            else:
                out_tokens.append(unescape_token(tok))
        elif mode == "entity":
            if tok == SEP:
                mode, name_tokens = "name", []
            elif tok == CLOSE:
                raise MissingSeparatorError(f"group closed without a {SEP!r} separator")
            elif tok == OPEN:
                raise UnbalancedBracketsError("nested groups are not allowed")
            else:
                ent_tokens.append(unescape_token(tok))
        else:  # mode == "name"
            if tok == CLOSE:
                if not ent_tokens:
                    raise EmptyEntityError("bracketed group with no entity tokens")
                name = " ".join(name_tokens)
                entry = schema.resolve_display(name)
                if entry is None:
                    raise UnknownDisplayNameError(f"unknown type display name {name!r}")
                start = len(out_tokens)
                out_tokens.extend(ent_tokens)
                spans.append(EntitySpan(start, start + len(ent_tokens), entry.type_id))
                mode = "text"
            elif tok == SEP:
                raise MissingSeparatorError(f"more than one {SEP!r} in a group")
            elif tok == OPEN:
                raise UnbalancedBracketsError("nested groups are not allowed")
            else:
                name_tokens.append(unescape_token(tok))

    if mode != "text":
        raise UnbalancedBracketsError(f"unclosed {OPEN!r} at end of text")
    return TaggedSentence(sentence_id, out_tokens, spans)
