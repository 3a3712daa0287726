"""Generation backends and the validating gateway in front of them.

Two backends implement the same protocol: :class:`MockBackend`, a seeded
in-process stand-in whose behavior is a pure function of (training records,
seed, request), and :class:`HttpBackend`, a JSON client for a model server.
The :class:`Gateway` wraps either one with re-validation of responses, retry
with exponential backoff, and order-preserving bounded-concurrency batches
that report per-request errors instead of aborting.

Wire endpoints (HTTP): POST /v1/fill, /v1/score-types, /v1/generator/train,
/v1/ner/train, /v1/ner/annotate; GET /v1/health, /v1/hash.
"""
from __future__ import annotations

import hashlib
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Protocol, Sequence

import requests

from .corpus import LabelSchema, sentence_from_record
from .errors import (
    BackendUnavailableError,
    GatewayError,
    SlotMismatchError,
    UnparseableGenerationError,
)
from .linearize import LinearizedText, delinearize
from .maskops import LiteralPiece, MaskedTemplate, SlotKind
from .seeding import derive_rng

log = logging.getLogger(__name__)


def canonical_json(obj: object) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def payload_hash(obj: object) -> str:
    return hashlib.sha256(canonical_json(obj).encode("utf-8")).hexdigest()


# --- request / response types ----------------------------------------------------

@dataclass(frozen=True)
class DecodeConfig:
    max_new_tokens: int = 32
    temperature: float = 1.0
    seed: int = 0


@dataclass(frozen=True)
class FillRequest:
    request_id: str
    template: MaskedTemplate
    decode: DecodeConfig = DecodeConfig()

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "template": self.template.to_record(),
            "decode": {
                "max_new_tokens": self.decode.max_new_tokens,
                "temperature": self.decode.temperature,
                "seed": self.decode.seed,
            },
        }


@dataclass(frozen=True)
class FillResponse:
    request_id: str
    filled_text: LinearizedText
    per_slot_fills: tuple[tuple[str, ...], ...]

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "filled_text": self.filled_text.text,
            "per_slot_fills": [list(f) for f in self.per_slot_fills],
        }

    @classmethod
    def from_json(cls, body: dict) -> "FillResponse":
        try:
            return cls(
                request_id=body["request_id"],
                filled_text=LinearizedText.from_text(body["filled_text"]),
                per_slot_fills=tuple(tuple(f) for f in body["per_slot_fills"]),
            )
        except (KeyError, TypeError) as e:
            raise UnparseableGenerationError(f"malformed fill response: {e}") from None


@dataclass(frozen=True)
class TypeSlot:
    slot_id: int


@dataclass(frozen=True)
class TypeScoreRequest:
    """A sentence with every group's type name replaced by a slot.

    ``entity_phrases`` and ``reference_types`` (gold display names) ride along
    as explicit metadata: mock backends key off them, the HTTP server ignores
    them.
    """

    request_id: str
    pieces: tuple  # LiteralPiece | TypeSlot
    entity_phrases: tuple[tuple[str, ...], ...]
    reference_types: tuple[str, ...]

    def slots(self) -> list[TypeSlot]:
        return [p for p in self.pieces if isinstance(p, TypeSlot)]

    def render(self, placeholder: str = "<MASK>") -> str:
        out: list[str] = []
        for p in self.pieces:
            if isinstance(p, LiteralPiece):
                out.extend(p.tokens)
            else:
                out.append(placeholder)
        return " ".join(out)

    def to_json(self) -> dict:
        pieces = []
        for p in self.pieces:
            if isinstance(p, LiteralPiece):
                pieces.append({"text": list(p.tokens)})
            else:
                pieces.append({"type_slot": p.slot_id})
        return {
            "request_id": self.request_id,
            "pieces": pieces,
            "entity_phrases": [list(p) for p in self.entity_phrases],
            "reference_types": list(self.reference_types),
        }


@dataclass(frozen=True)
class TypeScoreResponse:
    request_id: str
    display_names: tuple[str, ...]
    scores: tuple[float, ...] | None = None

    def to_json(self) -> dict:
        return {
            "request_id": self.request_id,
            "display_names": list(self.display_names),
            "scores": list(self.scores) if self.scores is not None else None,
        }

    @classmethod
    def from_json(cls, body: dict) -> "TypeScoreResponse":
        try:
            scores = body.get("scores")
            return cls(
                request_id=body["request_id"],
                display_names=tuple(body["display_names"]),
                scores=tuple(scores) if scores is not None else None,
            )
        except (KeyError, TypeError) as e:
            raise UnparseableGenerationError(f"malformed score response: {e}") from None


class Backend(Protocol):
    """What the gateway needs from a generation/tagging backend."""

    def fill(self, req: FillRequest) -> FillResponse: ...

    def score_types(self, req: TypeScoreRequest) -> TypeScoreResponse: ...

    def train_generator(self, payload: dict) -> dict: ...

    def train_ner(self, payload: dict) -> dict: ...

    def annotate(self, payload: dict) -> dict: ...


# --- mock backend -----------------------------------------------------------------

def load_lexicon(path) -> list[str]:
    """One entry per non-blank line; entries may be multi-token phrases."""
    entries = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                entries.append(line)
    return entries


class MockBackend:
    """Seeded deterministic backend; stateful like a real server.

    Entity/context lexicons arrive either via the constructor or via
    :meth:`train_generator`, which derives them from training records (sorted,
    so derivation is deterministic). Fills are a pure function of (backend
    seed, decode seed, template record). ``score_mode`` selects how types are
    re-predicted: ``lookup`` reverse-searches the lexicons and falls back to
    the request's reference types; ``echo`` always returns the references.
    ``corrupt_ids`` flips ``corrupt_position`` of flagged requests to a
    different display name, which lets tests dial an exact retention rate.
    """

    def __init__(
        self,
        schema: LabelSchema,
        entity_lexicons: dict[str, list[str]] | None = None,
        context_lexicon: list[str] | None = None,
        seed: int = 0,
        score_mode: str = "lookup",
        corrupt_ids: set[str] | None = None,
        corrupt_position: int = 0,
    ) -> None:
        if score_mode not in ("lookup", "echo"):
            raise ValueError(f"unknown score mode {score_mode!r}")
        self.schema = schema
        self.seed = seed
        self.score_mode = score_mode
        self.corrupt_ids = corrupt_ids or set()
        self.corrupt_position = corrupt_position
        self.entity_lexicons = entity_lexicons
        self.context_lexicon = context_lexicon
        self._gazetteer: dict[tuple[str, ...], str] | None = None
        self._memorized: dict[tuple[str, ...], list[dict]] = {}

    # -- generator --

    def train_generator(self, payload: dict) -> dict:
        sentences = [sentence_from_record(r) for r in payload["train"]]
        lexicons: dict[str, set[str]] = {t: set() for t in self.schema.type_ids}
        context: set[str] = set()
        for s in sentences:
            covered = [False] * len(s.tokens)
            for sp in s.spans:
                lexicons[sp.type_id].add(" ".join(s.tokens[sp.start:sp.end]))
                for i in range(sp.start, sp.end):
                    covered[i] = True
            context.update(t for t, c in zip(s.tokens, covered) if not c)
        self.entity_lexicons = {t: sorted(v) for t, v in lexicons.items()}
        self.context_lexicon = sorted(context)
        return {
            "backend": "mock",
            "generator_hash": payload_hash(payload),
            "entity_lexicons": self.entity_lexicons,
            "context_lexicon": self.context_lexicon,
        }

    def _require_generator(self) -> None:
        if self.entity_lexicons is None or self.context_lexicon is None:
            raise BackendUnavailableError("mock backend: generator not trained")

    def fill(self, req: FillRequest) -> FillResponse:
        self._require_generator()
        template = req.template
        rng = derive_rng(self.seed, "fill", req.decode.seed,
                         canonical_json(template.to_record()))
        fills: list[tuple[str, ...]] = []
        for slot in template.slots:
            if slot.kind is SlotKind.ENTITY:
                lexicon = self.entity_lexicons.get(slot.constraint) or []
                if lexicon:
                    phrase = rng.choice(lexicon)
                else:
                    # Nothing of this type in training data: fall back to the
                    # display name so the fill still parses.
                    phrase = self.schema.display_of(slot.constraint)
                fills.append(tuple(phrase.split()))
            else:
                n = rng.randint(1, 3)
                if self.context_lexicon:
                    toks = [rng.choice(self.context_lexicon) for _ in range(n)]
                    fills.append(tuple(" ".join(toks).split()))
                else:
                    fills.append(())
        filled = template.substitute(fills)
        return FillResponse(req.request_id, filled, tuple(fills))

    # -- word -> type --

    def score_types(self, req: TypeScoreRequest) -> TypeScoreResponse:
        self._require_generator()
        names: list[str] = []
        for i, phrase in enumerate(req.entity_phrases):
            name = None
            if self.score_mode == "lookup":
                joined = " ".join(phrase)
                for t in self.schema.type_ids:
                    if joined in (self.entity_lexicons.get(t) or []):
                        name = self.schema.display_of(t)
                        break
            if name is None:
                if i < len(req.reference_types):
                    name = req.reference_types[i]
                else:
                    name = self.schema.display_of(self.schema.type_ids[0])
            names.append(name.lower())
        if req.request_id in self.corrupt_ids and names:
            j = min(self.corrupt_position, len(names) - 1)
            names[j] = self._other_display(names[j])
        return TypeScoreResponse(req.request_id, tuple(names), None)

    def _other_display(self, display: str) -> str:
        displays = [e.display_name.lower() for e in self.schema.entries]
        if len(displays) < 2:
            raise BackendUnavailableError("cannot corrupt a single-type schema")
        i = displays.index(display) if display in displays else -1
        return displays[(i + 1) % len(displays)]

    # -- tagger --

    def train_ner(self, payload: dict) -> dict:
        gazetteer: dict[tuple[str, ...], str] = {}
        memorized: dict[tuple[str, ...], list[dict]] = {}
        for rec in payload.get("train", []):
            s = sentence_from_record(rec)
            memorized[tuple(s.tokens)] = [
                {"start": sp.start, "end": sp.end, "type": sp.type_id} for sp in s.spans
            ]
            for sp in s.spans:
                gazetteer.setdefault(tuple(s.tokens[sp.start:sp.end]), sp.type_id)
        self._gazetteer = gazetteer
        self._memorized = memorized
        return {"backend": "mock", "model_hash": payload_hash(payload)}

    def annotate(self, payload: dict) -> dict:
        if self._gazetteer is None:
            raise BackendUnavailableError("mock backend: tagger not trained")
        annotations = []
        max_len = max((len(k) for k in self._gazetteer), default=0)
        for rec in payload["sentences"]:
            tokens = list(rec["tokens"])
            key = tuple(tokens)
            if key in self._memorized:
                annotations.append({
                    "id": rec["id"], "spans": list(self._memorized[key]), "confidence": 0.99,
                })
                continue
            spans = []
            i = 0
            while i < len(tokens):
                hit = None
                for width in range(min(max_len, len(tokens) - i), 0, -1):
                    t = self._gazetteer.get(tuple(tokens[i:i + width]))
                    if t is not None:
                        hit = (i, i + width, t)
                        break
                if hit:
                    spans.append({"start": hit[0], "end": hit[1], "type": hit[2]})
                    i = hit[1]
                else:
                    i += 1
            conf = 0.93 if spans else 0.55
            annotations.append({"id": rec["id"], "spans": spans, "confidence": conf})
        return {"annotations": annotations}


# --- HTTP backend -------------------------------------------------------------------

class HttpBackend:
    """JSON client for the model server. requests.Session handles pooling."""

    def __init__(self, base_url: str, timeout: float = 60.0,
                 session: requests.Session | None = None) -> None:
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout
        self.session = session or requests.Session()

    def _post(self, path: str, body: dict) -> dict:
        url = f"{self.base_url}{path}"
        try:
            resp = self.session.post(url, json=body, timeout=self.timeout)
        except requests.RequestException as e:
            raise BackendUnavailableError(f"POST {path}: {e}") from None
        if resp.status_code >= 500:
            raise BackendUnavailableError(f"POST {path}: HTTP {resp.status_code}")
        if resp.status_code >= 400:
            try:
                err = resp.json()
                detail = f"{err.get('code', resp.status_code)}: {err.get('message', '')}"
            except ValueError:
                detail = f"HTTP {resp.status_code}"
            raise GatewayError(f"POST {path}: {detail}")
        try:
            return resp.json()
        except ValueError as e:
            raise UnparseableGenerationError(f"POST {path}: non-JSON response: {e}") from None

    def fill(self, req: FillRequest) -> FillResponse:
        return FillResponse.from_json(self._post("/v1/fill", req.to_json()))

    def score_types(self, req: TypeScoreRequest) -> TypeScoreResponse:
        return TypeScoreResponse.from_json(self._post("/v1/score-types", req.to_json()))

    def train_generator(self, payload: dict) -> dict:
        return self._post("/v1/generator/train", payload)

    def train_ner(self, payload: dict) -> dict:
        return self._post("/v1/ner/train", payload)

    def annotate(self, payload: dict) -> dict:
        return self._post("/v1/ner/annotate", payload)

    def health(self) -> dict:
        try:
            resp = self.session.get(f"{self.base_url}/v1/health", timeout=self.timeout)
            resp.raise_for_status()
            return resp.json()
        except (requests.RequestException, ValueError) as e:
            raise BackendUnavailableError(f"GET /v1/health: {e}") from None


# --- gateway ------------------------------------------------------------------------

@dataclass
class RetryPolicy:
    attempts: int = 3
    backoff: float = 0.5  # seconds; attempt i sleeps backoff * 2**i

    def __post_init__(self) -> None:
        if self.attempts < 1:
            raise ValueError("need at least one attempt")


class Gateway:
    """Validating, retrying front door to a backend."""

    def __init__(
        self,
        backend: Backend,
        schema: LabelSchema,
        retry: RetryPolicy | None = None,
        max_in_flight: int = 4,
    ) -> None:
        if max_in_flight < 1:
            raise ValueError("max_in_flight must be >= 1")
        self.backend = backend
        self.schema = schema
        self.retry = retry or RetryPolicy()
        self.max_in_flight = max_in_flight

    def _with_retry(self, fn, what: str):
        last: GatewayError | None = None
        for attempt in range(self.retry.attempts):
            try:
                return fn()
            except (BackendUnavailableError, UnparseableGenerationError) as e:
                last = e
                if attempt + 1 < self.retry.attempts:
                    delay = self.retry.backoff * (2 ** attempt)
                    log.debug("%s failed (attempt %d): %s", what, attempt + 1, e)
                    if delay > 0:
                        time.sleep(delay)
        raise last

    # -- fill --

    def fill(self, req: FillRequest) -> FillResponse:
        if not req.template.slots:
            # Nothing to generate; do not bother the backend.
            return FillResponse(req.request_id, req.template.substitute([]), ())
        return self._with_retry(lambda: self._fill_once(req), f"fill {req.request_id}")

    def _fill_once(self, req: FillRequest) -> FillResponse:
        resp = self.backend.fill(req)
        template = req.template
        slots = template.slots
        if resp.request_id != req.request_id:
            raise SlotMismatchError(
                f"response id {resp.request_id!r} does not match request {req.request_id!r}"
            )
        if len(resp.per_slot_fills) != len(slots):
            raise SlotMismatchError(
                f"{len(resp.per_slot_fills)} fills for {len(slots)} slots"
            )
        for slot, fill in zip(slots, resp.per_slot_fills):
            if slot.kind is SlotKind.ENTITY and not fill:
                raise UnparseableGenerationError(f"empty fill for entity slot {slot.slot_id}")
        try:
            parsed = delinearize(resp.filled_text, self.schema, sentence_id=req.request_id)
        except Exception as e:
            raise UnparseableGenerationError(f"filled text does not parse: {e}") from None
        got = [sp.type_id for sp in parsed.spans]
        if got != template.expected_types:
            raise UnparseableGenerationError(
                f"type sequence {got} != expected {template.expected_types}"
            )
        return resp

    # -- types --

    def score_types(self, req: TypeScoreRequest) -> TypeScoreResponse:
        n_slots = len(req.slots())
        if n_slots == 0:
            raise SlotMismatchError("type-score request with no type slots")
        return self._with_retry(lambda: self._score_once(req, n_slots),
                                f"score {req.request_id}")

    def _score_once(self, req: TypeScoreRequest, n_slots: int) -> TypeScoreResponse:
        resp = self.backend.score_types(req)
        if resp.request_id != req.request_id:
            raise SlotMismatchError(
                f"response id {resp.request_id!r} does not match request {req.request_id!r}"
            )
        if len(resp.display_names) != n_slots:
            raise SlotMismatchError(
                f"{len(resp.display_names)} type names for {n_slots} slots"
            )
        names = tuple(" ".join(d.split()).lower() for d in resp.display_names)
        return TypeScoreResponse(resp.request_id, names, resp.scores)

    # -- batches --

    def _run_batch(self, items: Sequence, call) -> list:
        ids = [it.request_id for it in items]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate request ids in batch")
        if not items:
            return []

        def one(item):
            try:
                return call(item)
            except GatewayError as e:
                return e

        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            return list(pool.map(one, items))

    def fill_batch(self, reqs: Sequence[FillRequest]) -> list[FillResponse | GatewayError]:
        """Order-preserving; failures come back as error objects in place."""
        return self._run_batch(reqs, self.fill)

    def score_batch(self, reqs: Sequence[TypeScoreRequest]) -> list[TypeScoreResponse | GatewayError]:
        return self._run_batch(reqs, self.score_types)
