"""Masking operations that turn a sentence into a fill-in template.

Five composable edits over the segmented view of a sentence:

1. augment an entity: mask the entity tokens and a clipped portion of the
   context on each side, keeping the type label;
2. change an entity's type: same masking, but the bracketed group's type is
   replaced (a label flip);
3. add an entity: insert ``<ctx slot> [ <entity slot> | new type ] <ctx slot>``
   after an anchor entity;
4. erase an entity: replace the entity plus a clipped portion of each adjacent
   context with a single context slot;
5. augment context: mask a contiguous run of untouched context tokens.

Composition works over an element list (context runs with per-token slot
ownership, entity elements, inserted groups and gaps). Each op allocates
action ids for the regions it masks; at finalize, slots are numbered left to
right and adjacent regions owned by the same action merge into one slot, so an
erase that swallows the gaps of a paired insert yields one clean context slot.
Ops draw target and extent values before clipping to what is available, which
keeps the RNG sequence independent of sentence layout.
"""
from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

from .corpus import LabelSchema
from .errors import (
    NoContextError,
    NoEntityError,
    OverlapExhaustedError,
    SameTypeError,
    SlotMismatchError,
)
from .linearize import (
    CLOSE,
    OPEN,
    SEP,
    LinearizedText,
    SegmentedSentence,
    escape_token,
)

DEFAULT_PLACEHOLDER = "<MASK>"


class Op(str, Enum):
    AUGMENT_ENTITY = "op1"
    CHANGE_TYPE = "op2"
    ADD_ENTITY = "op3"
    ERASE_ENTITY = "op4"
    AUGMENT_CONTEXT = "op5"


#: Ops that change the entity-type sequence of the sentence.
LABEL_FLIP_OPS = frozenset({Op.CHANGE_TYPE, Op.ADD_ENTITY, Op.ERASE_ENTITY})


class SlotKind(str, Enum):
    ENTITY = "entity-words"
    CONTEXT = "context-words"


@dataclass(frozen=True)
class MaskSlot:
    """One hole in the template, numbered left to right."""

    slot_id: int
    kind: SlotKind
    constraint: str | None  # type id for entity slots, None for context slots
    origin_op: Op


@dataclass(frozen=True)
class LiteralPiece:
    """A run of already-escaped linearized tokens."""

    tokens: tuple[str, ...]


@dataclass
class OpConfig:
    """Inclusive bounds on how many adjacent context tokens entity ops mask."""

    context_mask_min: int = 0
    context_mask_max: int = 2

    def __post_init__(self) -> None:
        if not (0 <= self.context_mask_min <= self.context_mask_max):
            raise ValueError("need 0 <= context_mask_min <= context_mask_max")


@dataclass(frozen=True)
class OpCall:
    """One step of a composition plan.

    ``new_type`` pins the replacement type for flip ops; when absent, the
    composer's flip chooser picks one. ``pair_with_previous`` makes an erase
    target the anchor of the immediately preceding add, producing an in-place
    type replacement.
    """

    op: Op
    new_type: str | None = None
    pair_with_previous: bool = False


@dataclass
class MaskedTemplate:
    """The finished template: literal runs and slots, plus provenance."""

    pieces: list[LiteralPiece | MaskSlot]
    expected_types: list[str]
    flipped_positions: list[int]
    provenance: list[dict]
    parent_id: str

    @property
    def slots(self) -> list[MaskSlot]:
        return [p for p in self.pieces if isinstance(p, MaskSlot)]

    def render(self, placeholder: str = DEFAULT_PLACEHOLDER) -> str:
        out: list[str] = []
        for p in self.pieces:
            if isinstance(p, LiteralPiece):
                out.extend(p.tokens)
            else:
                out.append(placeholder)
        return " ".join(out)

    def substitute(self, fills: Sequence[Sequence[str]]) -> LinearizedText:
        """Splice per-slot fills (raw corpus tokens) into the template.

        Context fills may be empty; entity slots must receive at least one
        token for the result to parse, which the gateway enforces.
        """
        slots = self.slots
        if len(fills) != len(slots):
            raise SlotMismatchError(f"expected {len(slots)} fills, got {len(fills)}")
        out: list[str] = []
        it = iter(fills)
        for p in self.pieces:
            if isinstance(p, LiteralPiece):
                out.extend(p.tokens)
            else:
                out.extend(escape_token(t) for t in next(it))
        return LinearizedText(tuple(out))

    def to_record(self) -> dict:
        pieces: list[dict] = []
        for p in self.pieces:
            if isinstance(p, LiteralPiece):
                pieces.append({"text": list(p.tokens)})
            else:
                pieces.append({
                    "slot": {
                        "id": p.slot_id,
                        "kind": p.kind.value,
                        "constraint": p.constraint,
                        "op": p.origin_op.value,
                    }
                })
        return {
            "parent_id": self.parent_id,
            "pieces": pieces,
            "expected_types": list(self.expected_types),
            "flipped_positions": list(self.flipped_positions),
            "provenance": [dict(p) for p in self.provenance],
        }

    @classmethod
    def from_record(cls, rec: dict) -> "MaskedTemplate":
        pieces: list[LiteralPiece | MaskSlot] = []
        for p in rec["pieces"]:
            if "text" in p:
                pieces.append(LiteralPiece(tuple(p["text"])))
            else:
                s = p["slot"]
                pieces.append(MaskSlot(s["id"], SlotKind(s["kind"]), s["constraint"], Op(s["op"])))
        return cls(
            pieces=pieces,
            expected_types=list(rec["expected_types"]),
            flipped_positions=list(rec["flipped_positions"]),
            provenance=[dict(p) for p in rec["provenance"]],
            parent_id=rec["parent_id"],
        )


# --- internal composition state ------------------------------------------------

# eq=False everywhere below: elements are mutable state addressed by identity.

@dataclass(eq=False)
class _Ctx:
    tokens: list[str]
    owner: list[int | None] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not self.owner:
            self.owner = [None] * len(self.tokens)


@dataclass(eq=False)
class _Ent:
    tokens: tuple[str, ...]
    type_id: str
    state: str = "plain"  # plain | masked | erased
    owner: int | None = None
    flipped: bool = False


@dataclass(eq=False)
class _Ins:
    """Inserted entity group: a bracketed entity slot with a fixed type."""

    type_id: str
    owner: int


@dataclass(eq=False)
class _Gap:
    """Inserted context slot with no underlying tokens."""

    owner: int


_Element = _Ctx | _Ent | _Ins | _Gap

_FlipChooser = Callable[[str], str]


class _TemplateState:
    def __init__(self, seg: SegmentedSentence, schema: LabelSchema, cfg: OpConfig) -> None:
        self.schema = schema
        self.cfg = cfg
        self.sentence_id = seg.sentence_id
        self.elements: list[_Element] = []
        self.action_ops: dict[int, Op] = {}
        self.provenance: list[dict] = []
        self._next_action = 0
        self.elements.append(_Ctx(list(seg.contexts[0])))
        for ent, ctx in zip(seg.entities, seg.contexts[1:]):
            self.elements.append(_Ent(ent.tokens, ent.type_id))
            self.elements.append(_Ctx(list(ctx)))

    def _alloc(self, op: Op) -> int:
        aid = self._next_action
        self._next_action += 1
        self.action_ops[aid] = op
        return aid

    # --- queries ---

    def _plain_entities(self) -> list[int]:
        return [i for i, e in enumerate(self.elements) if isinstance(e, _Ent) and e.state == "plain"]

    def _anchors(self, plain_only: bool) -> list[int]:
        out = []
        for i, e in enumerate(self.elements):
            if isinstance(e, _Ent):
                if e.state == "plain" or (not plain_only and e.state == "masked"):
                    out.append(i)
            elif isinstance(e, _Ins) and not plain_only:
                out.append(i)
        return out

    def _entity_ordinal(self, idx: int) -> int:
        """Position of the element among current (non-erased) entity groups."""
        n = 0
        for i, e in enumerate(self.elements):
            if i == idx:
                return n
            if (isinstance(e, _Ent) and e.state != "erased") or isinstance(e, _Ins):
                n += 1
        raise IndexError(idx)

    def _context_runs(self) -> list[tuple[int, int, int]]:
        """Maximal untouched runs as (element index, start, length)."""
        runs: list[tuple[int, int, int]] = []
        for i, e in enumerate(self.elements):
            if not isinstance(e, _Ctx):
                continue
            j = 0
            while j < len(e.tokens):
                if e.owner[j] is None:
                    start = j
                    while j < len(e.tokens) and e.owner[j] is None:
                        j += 1
                    runs.append((i, start, j - start))
                else:
                    j += 1
        return runs

    # --- masking helpers ---

    def _mask_left_of(self, idx: int, count: int, aid: int) -> int:
        """Mask up to ``count`` untouched tokens off the right end of the
        context element immediately left of ``idx``; clipped, never crossing
        an entity, a gap, or an already-owned token."""
        if idx == 0 or not isinstance(self.elements[idx - 1], _Ctx):
            return 0
        ctx = self.elements[idx - 1]
        taken = 0
        j = len(ctx.tokens) - 1
        while taken < count and j >= 0 and ctx.owner[j] is None:
            ctx.owner[j] = aid
            j -= 1
            taken += 1
        return taken

    def _mask_right_of(self, idx: int, count: int, aid: int) -> int:
        if idx + 1 >= len(self.elements) or not isinstance(self.elements[idx + 1], _Ctx):
            return 0
        ctx = self.elements[idx + 1]
        taken = 0
        j = 0
        while taken < count and j < len(ctx.tokens) and ctx.owner[j] is None:
            ctx.owner[j] = aid
            j += 1
            taken += 1
        return taken

    # --- ops ---

    def mask_entity(self, rng: random.Random, op: Op, resolve: _FlipChooser | None) -> None:
        eligible = self._plain_entities()
        if not eligible:
            raise NoEntityError("no unmasked entity segments left")
        idx = rng.choice(eligible)
        left_draw = rng.randint(self.cfg.context_mask_min, self.cfg.context_mask_max)
        right_draw = rng.randint(self.cfg.context_mask_min, self.cfg.context_mask_max)
        ent = self.elements[idx]
        rec: dict = {"op": op.value, "entity": self._entity_ordinal(idx)}
        if op is Op.CHANGE_TYPE:
            assert resolve is not None
            new_type = resolve(ent.type_id)
            if new_type == ent.type_id:
                raise SameTypeError(f"flip resolved to the current type {new_type!r}")
            rec["old_type"] = ent.type_id
            rec["new_type"] = new_type
            ent.type_id = new_type
            ent.flipped = True
        aid_left = self._alloc(op)
        rec["left_masked"] = self._mask_left_of(idx, left_draw, aid_left)
        ent.state = "masked"
        ent.owner = self._alloc(op)
        aid_right = self._alloc(op)
        rec["right_masked"] = self._mask_right_of(idx, right_draw, aid_right)
        self.provenance.append(rec)

    def add_entity(self, rng: random.Random, resolve: _FlipChooser, plain_anchor_only: bool) -> _Ent | None:
        anchors = self._anchors(plain_anchor_only)
        if not anchors:
            raise NoEntityError("no anchor entity segments left")
        idx = rng.choice(anchors)
        anchor = self.elements[idx]
        new_type = resolve(anchor.type_id)
        gap_l = _Gap(self._alloc(Op.ADD_ENTITY))
        ins = _Ins(new_type, self._alloc(Op.ADD_ENTITY))
        gap_r = _Gap(self._alloc(Op.ADD_ENTITY))
        self.elements[idx + 1:idx + 1] = [gap_l, ins, gap_r]
        self.provenance.append({
            "op": Op.ADD_ENTITY.value,
            "anchor": self._entity_ordinal(idx),
            "new_type": new_type,
        })
        return anchor if isinstance(anchor, _Ent) else None

    def erase_entity(self, rng: random.Random, target: _Ent | None) -> None:
        if target is not None:
            if target.state != "plain":
                raise NoEntityError("paired erase target is no longer plain")
            idx = next(i for i, e in enumerate(self.elements) if e is target)
        else:
            eligible = self._plain_entities()
            if not eligible:
                raise NoEntityError("no unmasked entity segments left")
            idx = rng.choice(eligible)
        left_draw = rng.randint(self.cfg.context_mask_min, self.cfg.context_mask_max)
        right_draw = rng.randint(self.cfg.context_mask_min, self.cfg.context_mask_max)
        ent = self.elements[idx]
        rec = {"op": Op.ERASE_ENTITY.value, "entity": self._entity_ordinal(idx),
               "erased_type": ent.type_id}
        aid = self._alloc(Op.ERASE_ENTITY)
        rec["left_masked"] = self._mask_left_of(idx, left_draw, aid)
        rec["right_masked"] = self._mask_right_of(idx, right_draw, aid)
        ent.state = "erased"
        ent.owner = aid
        # Swallow adjacent pure gaps so a paired add+erase collapses into the
        # single combined replacement slot.
        j = idx - 1
        while j >= 0 and isinstance(self.elements[j], _Gap):
            self.elements[j].owner = aid
            j -= 1
        j = idx + 1
        while j < len(self.elements) and isinstance(self.elements[j], _Gap):
            self.elements[j].owner = aid
            j += 1
        self.provenance.append(rec)

    def augment_context(self, rng: random.Random) -> None:
        runs = self._context_runs()
        if not runs:
            raise NoContextError("no untouched context tokens left")
        elem_idx, start, length = rng.choice(runs)
        size = rng.randint(1, length)
        offset = rng.randint(0, length - size)
        aid = self._alloc(Op.AUGMENT_CONTEXT)
        ctx = self.elements[elem_idx]
        for j in range(start + offset, start + offset + size):
            ctx.owner[j] = aid
        self.provenance.append({"op": Op.AUGMENT_CONTEXT.value, "masked": size})

    # --- finalize ---

    def finalize(self) -> MaskedTemplate:
        # (kind, payload): literal tokens or an owning action id
        stream: list[tuple[str, object]] = []
        expected: list[str] = []
        flipped: list[int] = []

        def emit_group(type_id: str, inner: object, is_flip: bool) -> None:
            """inner: tuple of literal entity tokens, or an action id."""
            stream.append(("lit", OPEN))
            if isinstance(inner, tuple):
                for t in inner:
                    stream.append(("lit", escape_token(t)))
            else:
                stream.append(("slot", (inner, SlotKind.ENTITY, type_id)))
            stream.append(("lit", SEP))
            for t in self.schema.display_of(type_id).split():
                stream.append(("lit", t))
            stream.append(("lit", CLOSE))
            expected.append(type_id)
            if is_flip:
                flipped.append(len(expected) - 1)

        for e in self.elements:
            if isinstance(e, _Ctx):
                for tok, own in zip(e.tokens, e.owner):
                    if own is None:
                        stream.append(("lit", escape_token(tok)))
                    else:
                        stream.append(("slot", (own, SlotKind.CONTEXT, None)))
            elif isinstance(e, _Ent):
                if e.state == "plain":
                    emit_group(e.type_id, e.tokens, False)
                elif e.state == "masked":
                    emit_group(e.type_id, e.owner, e.flipped)
                else:  # erased
                    stream.append(("slot", (e.owner, SlotKind.CONTEXT, None)))
            elif isinstance(e, _Ins):
                emit_group(e.type_id, e.owner, True)
            else:  # _Gap
                stream.append(("slot", (e.owner, SlotKind.CONTEXT, None)))

        pieces: list[LiteralPiece | MaskSlot] = []
        lit_run: list[str] = []
        slot_id = 0
        prev_owner: int | None = None
        for kind, payload in stream:
            if kind == "lit":
                prev_owner = None
                lit_run.append(payload)
            else:
                owner, slot_kind, constraint = payload
                if owner == prev_owner:
                    continue  # merge adjacent regions of the same action
                if lit_run:
                    pieces.append(LiteralPiece(tuple(lit_run)))
                    lit_run = []
                pieces.append(MaskSlot(slot_id, slot_kind, constraint, self.action_ops[owner]))
                slot_id += 1
                prev_owner = owner
        if lit_run:
            pieces.append(LiteralPiece(tuple(lit_run)))

        return MaskedTemplate(
            pieces=pieces,
            expected_types=expected,
            flipped_positions=flipped,
            provenance=self.provenance,
            parent_id=self.sentence_id,
        )


# --- composition ----------------------------------------------------------------

def compose_template(
    seg: SegmentedSentence,
    ops: Sequence[OpCall],
    schema: LabelSchema,
    cfg: OpConfig,
    rng: random.Random,
    flip_chooser: _FlipChooser | None = None,
) -> MaskedTemplate:
    """Apply an op sequence to one sentence and finalize the template.

    Running out of eligible targets mid-sequence raises
    :class:`OverlapExhaustedError` when the sentence had material for the op
    class at the start; a sentence that never had any raises the underlying
    :class:`NoEntityError`/:class:`NoContextError` unchanged.
    """
    for call in ops:
        if call.op in (Op.CHANGE_TYPE, Op.ADD_ENTITY) and call.new_type is None and flip_chooser is None:
            raise ValueError(f"{call.op.value} needs new_type or a flip_chooser")

    state = _TemplateState(seg, schema, cfg)
    had_entities = bool(seg.entities)
    had_context = any(seg.contexts)
    last_anchor: _Ent | None = None

    for i, call in enumerate(ops):
        if call.new_type is not None:
            pinned = call.new_type
            resolve: _FlipChooser = lambda _cur, _t=pinned: _t
        else:
            resolve = flip_chooser  # may be None for non-flip ops
        try:
            if call.op is Op.AUGMENT_ENTITY:
                state.mask_entity(rng, call.op, None)
            elif call.op is Op.CHANGE_TYPE:
                state.mask_entity(rng, call.op, resolve)
            elif call.op is Op.ADD_ENTITY:
                paired = i + 1 < len(ops) and ops[i + 1].pair_with_previous \
                    and ops[i + 1].op is Op.ERASE_ENTITY
                last_anchor = state.add_entity(rng, resolve, plain_anchor_only=paired)
            elif call.op is Op.ERASE_ENTITY:
                target = last_anchor if call.pair_with_previous else None
                state.erase_entity(rng, target)
                last_anchor = None
            elif call.op is Op.AUGMENT_CONTEXT:
                state.augment_context(rng)
            else:  # pragma: no cover - enum is closed
                raise ValueError(f"unknown op {call.op!r}")
        except NoEntityError:
            if had_entities:
                raise OverlapExhaustedError(
                    f"{call.op.value}: entity targets exhausted on {seg.sentence_id!r}"
                ) from None
            raise
        except NoContextError:
            if had_context:
                raise OverlapExhaustedError(
                    f"{call.op.value}: context exhausted on {seg.sentence_id!r}"
                ) from None
            raise
    return state.finalize()


# --- single-op conveniences -------------------------------------------------------

def op1_augment_entity_span(
    seg: SegmentedSentence, schema: LabelSchema, cfg: OpConfig, rng: random.Random
) -> MaskedTemplate:
    return compose_template(seg, [OpCall(Op.AUGMENT_ENTITY)], schema, cfg, rng)


def op2_change_entity_type(
    seg: SegmentedSentence, schema: LabelSchema, new_type: str, cfg: OpConfig, rng: random.Random
) -> MaskedTemplate:
    return compose_template(seg, [OpCall(Op.CHANGE_TYPE, new_type=new_type)], schema, cfg, rng)


def op3_add_entity(
    seg: SegmentedSentence, schema: LabelSchema, new_type: str, cfg: OpConfig, rng: random.Random
) -> MaskedTemplate:
    return compose_template(seg, [OpCall(Op.ADD_ENTITY, new_type=new_type)], schema, cfg, rng)


def op4_erase_entity(
    seg: SegmentedSentence, schema: LabelSchema, cfg: OpConfig, rng: random.Random
) -> MaskedTemplate:
    return compose_template(seg, [OpCall(Op.ERASE_ENTITY)], schema, cfg, rng)


def op5_augment_context(
    seg: SegmentedSentence, schema: LabelSchema, cfg: OpConfig, rng: random.Random
) -> MaskedTemplate:
    return compose_template(seg, [OpCall(Op.AUGMENT_CONTEXT)], schema, cfg, rng)
