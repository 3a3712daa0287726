"""Generator service: trains and serves the prompt-tuned seq2seq model.

Training data arrives as tagged-sentence records plus a label schema. The
service linearizes each sentence into span markup and derives two masked
views per sentence: one with every entity's mention tokens replaced by a
numbered sentinel (the model learns to write entity words), and one with
every display name replaced by a sentinel (the model learns to write type
names). Batches interleave the two views one-to-one — each batch holds both
views of the same sentences — so neither direction dominates.

Serving covers the two wire operations:

* ``fill``: templates with entity/context slots become sentinel-marked
  inputs; the decoder output is split on sentinels into per-slot fills and
  spliced back into the literal text.
* ``score_types``: queries with type slots are scored slot by slot. For each
  slot, every display name in the trained schema is teacher-forced as the
  continuation of the already-chosen prefix and the softmax over summed
  log-probabilities ranks the candidates (later slots condition on earlier
  winners). The request's ``entity_phrases``/``reference_types`` metadata is
  ignored: the model ranks the full type inventory, so a wrong type can
  lose to the right one even when the metadata names only wrong types.
"""

from __future__ import annotations

import hashlib
import json
import math
import random
from dataclasses import dataclass

import torch
from torch.nn.functional import cross_entropy

from .config import ServerConfig
from .seq2seq import PromptSeq2Seq
from .vocab import Vocab
from .wire import (
    CLOSE,
    ENTITY_SLOT,
    OPEN,
    SEP,
    Slot,
    TemplateView,
    ScoreView,
    WireError,
    escape_token,
    unescape_token,
)


def _canonical(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


@dataclass(frozen=True)
class _Segment:
    """One run of a linearized sentence: literal tokens or an entity group."""

    literal: tuple[str, ...] = ()
    mention: tuple[str, ...] = ()
    display: tuple[str, ...] = ()

    @property
    def is_entity(self) -> bool:
        return bool(self.mention)


def _parse_displays(schema: object) -> dict[str, tuple[str, ...]]:
    if not isinstance(schema, dict) or not isinstance(schema.get("types"), list):
        raise WireError("bad_request", "schema must carry a types list")
    displays: dict[str, tuple[str, ...]] = {}
    for entry in schema["types"]:
        if not isinstance(entry, dict):
            raise WireError("bad_request", "schema types must be objects")
        type_id = entry.get("id")
        display = entry.get("display_name")
        if not isinstance(type_id, str) or not isinstance(display, str) or not display.split():
            raise WireError("bad_request", "each type needs id and display_name")
        displays[type_id] = tuple(escape_token(w) for w in display.split())
    if not displays:
        raise WireError("bad_request", "schema has no types")
    return displays


def _segment_record(rec: object, displays: dict[str, tuple[str, ...]]) -> list[_Segment]:
    if not isinstance(rec, dict):
        raise WireError("bad_request", "sentence records must be objects")
    tokens = rec.get("tokens")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise WireError("bad_request", "sentence tokens must be a list of strings")
    spans = rec.get("spans", [])
    if not isinstance(spans, list):
        raise WireError("bad_request", "sentence spans must be a list")
    parsed: list[tuple[int, int, str]] = []
    for span in spans:
        if not isinstance(span, dict):
            raise WireError("bad_request", "spans must be objects")
        start, end, type_id = span.get("start"), span.get("end"), span.get("type")
        if not (isinstance(start, int) and isinstance(end, int) and isinstance(type_id, str)):
            raise WireError("bad_request", "span needs integer start/end and type")
        if not 0 <= start < end <= len(tokens):
            raise WireError("bad_request", f"span [{start},{end}) out of range")
        if type_id not in displays:
            raise WireError("bad_request", f"span type {type_id!r} not in schema")
        parsed.append((start, end, type_id))
    parsed.sort()
    for (_, prev_end, _), (nxt_start, _, _) in zip(parsed, parsed[1:]):
        if nxt_start < prev_end:
            raise WireError("bad_request", "spans overlap")
    segments: list[_Segment] = []
    cursor = 0
    for start, end, type_id in parsed:
        if cursor < start:
            segments.append(
                _Segment(literal=tuple(escape_token(t) for t in tokens[cursor:start]))
            )
        segments.append(
            _Segment(
                mention=tuple(escape_token(t) for t in tokens[start:end]),
                display=displays[type_id],
            )
        )
        cursor = end
    if cursor < len(tokens):
        segments.append(_Segment(literal=tuple(escape_token(t) for t in tokens[cursor:])))
    return segments


def _masked_views(
    segments: list[_Segment],
) -> tuple[tuple[list[str], list[str]], tuple[list[str], list[str]]]:
    """(entity-masked, display-masked) pairs of (input tokens, target tokens)."""
    ent_src: list[str] = []
    ent_tgt: list[str] = []
    typ_src: list[str] = []
    typ_tgt: list[str] = []
    k = 0
    for seg in segments:
        if not seg.is_entity:
            ent_src.extend(seg.literal)
            typ_src.extend(seg.literal)
            continue
        sentinel = f"<X{k}>"
        ent_src += [OPEN, sentinel, SEP, *seg.display, CLOSE]
        ent_tgt += [sentinel, *seg.mention]
        typ_src += [OPEN, *seg.mention, SEP, sentinel, CLOSE]
        typ_tgt += [sentinel, *seg.display]
        k += 1
    return (ent_src, ent_tgt), (typ_src, typ_tgt)


Example = tuple[list[int], list[int]]  # (source ids, target ids)


def _batch_stream(pair_examples: list[tuple[Example, Example]],
                  batch_pairs: int, rng: random.Random):
    """Endless batches; each holds both masked views of its sentences."""
    order = list(range(len(pair_examples)))
    while True:
        rng.shuffle(order)
        for at in range(0, len(order), batch_pairs):
            chunk = order[at : at + batch_pairs]
            batch: list[Example] = []
            for idx in chunk:
                batch.extend(pair_examples[idx])
            yield batch


def _seq2seq_loss(model: PromptSeq2Seq, vocab: Vocab, batch: list[Example]) -> torch.Tensor:
    pad, bos, eos = vocab.pad_id, vocab.bos_id, vocab.eos_id
    src_len = max(len(src) for src, _ in batch)
    tgt_len = max(len(tgt) for _, tgt in batch) + 1  # room for BOS/EOS shift
    n = len(batch)
    src_ids = torch.full((n, src_len), pad, dtype=torch.long)
    dec_in = torch.full((n, tgt_len), pad, dtype=torch.long)
    labels = torch.full((n, tgt_len), pad, dtype=torch.long)
    tgt_pad = torch.ones(n, tgt_len, dtype=torch.bool)
    for i, (src, tgt) in enumerate(batch):
        src_ids[i, : len(src)] = torch.tensor(src, dtype=torch.long)
        row_in = [bos] + tgt
        row_out = tgt + [eos]
        dec_in[i, : len(row_in)] = torch.tensor(row_in, dtype=torch.long)
        labels[i, : len(row_out)] = torch.tensor(row_out, dtype=torch.long)
        tgt_pad[i, : len(row_in)] = False
    src_pad = src_ids == pad
    logits = model(src_ids, src_pad, dec_in, tgt_pad)
    return cross_entropy(
        logits.reshape(-1, logits.shape[-1]), labels.reshape(-1), ignore_index=pad
    )


def _optimize(
    model: PromptSeq2Seq,
    vocab: Vocab,
    pair_examples: list[tuple[Example, Example]],
    batch_pairs: int,
    rng: random.Random,
    optimizer: torch.optim.Optimizer,
    steps: int,
) -> list[float]:
    model.train()
    losses: list[float] = []
    batches = _batch_stream(pair_examples, batch_pairs, rng)
    for step in range(steps):
        batch = next(batches)
        optimizer.zero_grad()
        loss = _seq2seq_loss(model, vocab, batch)
        if not torch.isfinite(loss):
            raise WireError("divergence", f"non-finite loss at step {step}", 500)
        loss.backward()
        optimizer.step()
        losses.append(float(loss.detach()))
    model.eval()
    return losses


class GeneratorService:
    def __init__(self, cfg: ServerConfig) -> None:
        self.cfg = cfg
        self.model: PromptSeq2Seq | None = None
        self.vocab: Vocab | None = None
        self.displays: dict[str, tuple[str, ...]] = {}
        self.backbone_hash: str | None = None
        self._pair_examples: list[tuple[tuple[list[int], list[int]], ...]] = []
        self._batch_pairs = max(1, cfg.generator_batch // 2)
        self._shuffle_rng = random.Random(cfg.seed)

    @property
    def trained(self) -> bool:
        return self.model is not None

    # ------------------------------------------------------------------
    # training

    def train(self, payload: dict) -> dict:
        """Full (re)training run. Service state changes only on success."""
        records = payload.get("train")
        if not isinstance(records, list) or not records:
            raise WireError("bad_request", "train must be a non-empty list")
        displays = _parse_displays(payload.get("schema"))
        config = payload.get("config") or {}
        if not isinstance(config, dict):
            raise WireError("bad_request", "config must be an object")
        client_seed = payload.get("seed", 0)
        if not isinstance(client_seed, int):
            raise WireError("bad_request", "seed must be an integer")
        batch_size = config.get("batch_size", self.cfg.generator_batch)
        if not isinstance(batch_size, int) or batch_size < 1:
            raise WireError("bad_request", "batch_size must be a positive integer")
        lr = config.get("lr", self.cfg.prompt_lr)
        weight_decay = config.get("weight_decay", 0.0)
        if not isinstance(lr, (int, float)) or not isinstance(weight_decay, (int, float)):
            raise WireError("bad_request", "lr and weight_decay must be numbers")
        requested = config.get("max_steps", self.cfg.prompt_steps)
        if not isinstance(requested, int) or requested < 1:
            raise WireError("bad_request", "max_steps must be a positive integer")
        steps = min(requested, self.cfg.prompt_steps)

        segmented = [_segment_record(rec, displays) for rec in records]
        for segs in segmented:
            n_entities = sum(1 for s in segs if s.is_entity)
            if n_entities > self.cfg.max_sentinels:
                raise WireError(
                    "bad_request",
                    f"sentence has {n_entities} entities; limit {self.cfg.max_sentinels}",
                )

        tokens: set[str] = {OPEN, SEP, CLOSE}
        for segs in segmented:
            for seg in segs:
                tokens.update(seg.literal)
                tokens.update(seg.mention)
                tokens.update(seg.display)
        for display in displays.values():
            tokens.update(display)

        torch.manual_seed((self.cfg.seed * 1_000_003 + client_seed) % 2**31)
        shuffle_rng = random.Random(client_seed * 7_919 + self.cfg.seed)
        vocab = Vocab(tokens, n_sentinels=self.cfg.max_sentinels)
        model = PromptSeq2Seq(len(vocab), vocab.pad_id, self.cfg)

        pair_examples = []
        for segs in segmented:
            ent, typ = _masked_views(segs)
            pair_examples.append(
                (
                    (vocab.encode(ent[0]), vocab.encode(ent[1])),
                    (vocab.encode(typ[0]), vocab.encode(typ[1])),
                )
            )
        batch_pairs = max(1, batch_size // 2)

        # Stage 1: provision the backbone. Prompts are live in the forward
        # pass but sit at initialization; only backbone parameters train.
        backbone = [p for _, p in model.backbone_named_parameters()]
        optimizer = torch.optim.Adam(backbone, lr=self.cfg.pretrain_lr)
        pretrain_loss = _optimize(
            model, vocab, pair_examples, batch_pairs, shuffle_rng, optimizer,
            self.cfg.pretrain_steps,
        )

        model.freeze_backbone()
        backbone_hash = model.backbone_hash()

        # Stage 2: prompt tuning against the frozen backbone, honoring the
        # client's hyperparameters up to this server's step cap.
        optimizer = torch.optim.Adam(
            list(model.prompt_parameters()), lr=float(lr),
            weight_decay=float(weight_decay),
        )
        history = _optimize(
            model, vocab, pair_examples, batch_pairs, shuffle_rng, optimizer, steps
        )

        self.model = model
        self.vocab = vocab
        self.displays = displays
        self.backbone_hash = backbone_hash
        self._pair_examples = pair_examples
        self._batch_pairs = batch_pairs
        self._shuffle_rng = shuffle_rng
        return {
            "backend": "prompt-seq2seq",
            "trained_on": len(records),
            "backbone_hash": backbone_hash,
            "config": {
                "optimizer": "adam",
                "lr": float(lr),
                "weight_decay": float(weight_decay),
                "batch_size": 2 * batch_pairs,
                "max_steps": steps,
                "pretrain_steps": self.cfg.pretrain_steps,
                "pretrain_lr": self.cfg.pretrain_lr,
                "prompt_len": self.cfg.prompt_len,
            },
            "metrics": {
                "pretrain_final_loss": pretrain_loss[-1],
                "prompt_initial_loss": history[0],
                "prompt_final_loss": history[-1],
            },
        }

    def train_prompts(
        self, steps: int, lr: float | None = None, weight_decay: float = 0.0
    ) -> list[float]:
        """Prompt-only optimization; backbone stays frozen. Returns losses."""
        model = self._require_trained_model()
        assert self.vocab is not None
        optimizer = torch.optim.Adam(
            list(model.prompt_parameters()),
            lr=self.cfg.prompt_lr if lr is None else float(lr),
            weight_decay=float(weight_decay),
        )
        return _optimize(
            model, self.vocab, self._pair_examples, self._batch_pairs,
            self._shuffle_rng, optimizer, steps,
        )

    def _require_trained_model(self) -> PromptSeq2Seq:
        if self.model is None or self.vocab is None:
            raise WireError("not_trained", "generator has not been trained", 409)
        return self.model

    # ------------------------------------------------------------------
    # fill

    def fill(self, body: dict) -> dict:
        request_id = body.get("request_id", "")
        template = TemplateView.parse(body.get("template"))
        slots = template.slots

        if not slots:
            return {
                "request_id": request_id,
                "filled_text": " ".join(template.literal_tokens),
                "per_slot_fills": [],
            }

        model = self._require_trained_model()
        vocab = self.vocab
        assert vocab is not None
        if len(slots) > self.cfg.max_sentinels:
            raise WireError(
                "too_many_slots",
                f"{len(slots)} slots exceed the {self.cfg.max_sentinels}-sentinel limit",
            )

        decode = body.get("decode") or {}
        if not isinstance(decode, dict):
            raise WireError("bad_request", "decode must be an object")
        max_new = decode.get("max_new_tokens", 32)
        temperature = decode.get("temperature", 1.0)
        decode_seed = decode.get("seed", 0)
        if not isinstance(max_new, int) or max_new < 1:
            raise WireError("bad_request", "max_new_tokens must be a positive integer")
        if not isinstance(temperature, (int, float)) or not math.isfinite(temperature):
            raise WireError("bad_request", "temperature must be a finite number")
        if not isinstance(decode_seed, int):
            raise WireError("bad_request", "decode seed must be an integer")
        max_new = min(max_new, self.cfg.max_new_tokens_cap)

        src_tokens: list[str] = []
        slot_order: list[Slot] = []
        for piece in template.pieces:
            if isinstance(piece, Slot):
                src_tokens.append(vocab.sentinel(len(slot_order)))
                slot_order.append(piece)
            else:
                src_tokens.extend(piece)
        src_ids = torch.tensor([vocab.encode(src_tokens)], dtype=torch.long)

        material = f"{self.cfg.seed}:{decode_seed}:{_canonical(body.get('template'))}"
        digest = hashlib.sha256(material.encode("utf-8")).digest()
        gen = torch.Generator().manual_seed(int.from_bytes(digest[:8], "big") % (2**63 - 1))

        banned = {vocab.pad_id, vocab.bos_id, vocab.unk_id}
        banned.update(vocab.id_of(t) for t in (OPEN, SEP, CLOSE))
        rows = model.generate(
            src_ids,
            bos_id=vocab.bos_id,
            eos_id=vocab.eos_id,
            max_new=max_new,
            temperature=float(temperature),
            gen=gen,
            banned_ids=banned,
        )

        sections: dict[int, list[str]] = {}
        current: list[str] | None = None
        for token_id in rows[0]:
            k = vocab.sentinel_index(token_id)
            if k is not None:
                current = sections.setdefault(k, [])
            elif current is not None:
                current.append(vocab.token_of(token_id))

        surface_fills: list[list[str]] = []
        for k, slot in enumerate(slot_order):
            fill = sections.get(k, [])
            if not fill and slot.kind == ENTITY_SLOT:
                fill = list(self._fallback_mention(slot))
            surface_fills.append(fill)

        out_tokens: list[str] = []
        fill_iter = iter(surface_fills)
        for piece in template.pieces:
            if isinstance(piece, Slot):
                out_tokens.extend(next(fill_iter))
            else:
                out_tokens.extend(piece)
        return {
            "request_id": request_id,
            "filled_text": " ".join(out_tokens),
            "per_slot_fills": [[unescape_token(t) for t in fill] for fill in surface_fills],
        }

    def _fallback_mention(self, slot: Slot) -> tuple[str, ...]:
        """Mention of last resort so entity markup never comes back empty."""
        if slot.constraint is not None and slot.constraint in self.displays:
            return self.displays[slot.constraint]
        return ("entity",)

    # ------------------------------------------------------------------
    # type scoring

    def score_types(self, body: dict) -> dict:
        request_id = body.get("request_id", "")
        query = ScoreView.parse(body)
        model = self._require_trained_model()
        vocab = self.vocab
        assert vocab is not None
        n_slots = len(query.type_slots)
        if n_slots == 0:
            return {"request_id": request_id, "display_names": [], "scores": []}
        if n_slots > self.cfg.max_sentinels:
            raise WireError(
                "too_many_slots",
                f"{n_slots} slots exceed the {self.cfg.max_sentinels}-sentinel limit",
            )
        candidates = [" ".join(words) for words in self.displays.values()]
        candidate_ids = [vocab.encode(words) for words in self.displays.values()]

        src_tokens: list[str] = []
        for piece in query.pieces:
            if isinstance(piece, int):
                src_tokens.append(vocab.sentinel(piece))
            else:
                src_tokens.extend(piece)
        src_ids = torch.tensor([vocab.encode(src_tokens)], dtype=torch.long)
        memory = model.encode(src_ids, None)

        display_names: list[str] = []
        scores: list[float] = []
        prefix: list[int] = []
        for k in sorted(query.type_slots):
            prefix = prefix + [vocab.sentinel_id(k)]
            targets = [prefix + ids for ids in candidate_ids]
            logprobs = model.sequence_logprobs(
                memory, None, targets, score_from=len(prefix), bos_id=vocab.bos_id
            )
            probs = torch.softmax(logprobs, dim=0)
            best = int(probs.argmax())
            display_names.append(candidates[best])
            scores.append(float(probs[best]))
            prefix = prefix + candidate_ids[best]
        return {"request_id": request_id, "display_names": display_names, "scores": scores}
