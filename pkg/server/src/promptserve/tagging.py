"""Tagger service: NER training with mixup pairs, and annotation.

Training interleaves two batch kinds. Plain batches take labeled sentences
through the ordinary forward pass under token-level cross-entropy. Pair
batches take (flipped, original) sentence pairs through the mixed forward
pass — hidden states interpolated at the pair's layer with its lambda — and
supervise against the same interpolation of the two one-hot label
sequences. Pairs reference sentences by id; the id space is the union of
the training set and the ``references`` block.

Annotation runs the plain forward pass and reports BIO-decoded spans plus a
sentence confidence: the minimum (default) or mean over real token
positions of the winning label's probability.
"""

from __future__ import annotations

import random

import torch
from torch.nn.functional import cross_entropy, log_softmax

from .config import ServerConfig
from .seq2seq import state_hash
from .tagger import MixupTagger, decode_bio
from .vocab import Vocab
from .wire import WireError

CONFIDENCE_POLICIES = ("min", "mean")


def _check_policy(policy: object) -> str:
    if policy not in CONFIDENCE_POLICIES:
        raise WireError(
            "bad_request",
            f"confidence_policy must be one of {list(CONFIDENCE_POLICIES)}, got {policy!r}",
        )
    return policy  # type: ignore[return-value]


def _sentence_record(rec: object, type_ids: set[str]) -> tuple[str, list[str], list[dict]]:
    if not isinstance(rec, dict):
        raise WireError("bad_request", "sentence records must be objects")
    sid = rec.get("id")
    tokens = rec.get("tokens")
    if not isinstance(sid, str):
        raise WireError("bad_request", "sentence id must be a string")
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise WireError("bad_request", "sentence tokens must be a list of strings")
    spans = rec.get("spans", [])
    if not isinstance(spans, list):
        raise WireError("bad_request", "sentence spans must be a list")
    seen: list[tuple[int, int]] = []
    for span in spans:
        if not isinstance(span, dict):
            raise WireError("bad_request", "spans must be objects")
        start, end, type_id = span.get("start"), span.get("end"), span.get("type")
        if not (isinstance(start, int) and isinstance(end, int) and isinstance(type_id, str)):
            raise WireError("bad_request", "span needs integer start/end and type")
        if not 0 <= start < end <= len(tokens):
            raise WireError("bad_request", f"span [{start},{end}) out of range")
        if type_id not in type_ids:
            raise WireError("bad_request", f"span type {type_id!r} not in schema")
        seen.append((start, end))
    seen.sort()
    for (_, prev_end), (nxt_start, _) in zip(seen, seen[1:]):
        if nxt_start < prev_end:
            raise WireError("bad_request", "spans overlap")
    return sid, tokens, spans


def _bio_labels(tokens: list[str], spans: list[dict]) -> list[str]:
    labels = ["O"] * len(tokens)
    for span in spans:
        labels[span["start"]] = f"B-{span['type']}"
        for i in range(span["start"] + 1, span["end"]):
            labels[i] = f"I-{span['type']}"
    return labels


class TaggerService:
    def __init__(self, cfg: ServerConfig) -> None:
        self.cfg = cfg
        self.model: MixupTagger | None = None
        self.vocab: Vocab | None = None
        self.labels: list[str] = []
        self.model_hash: str | None = None
        self.default_policy: str = "min"

    @property
    def trained(self) -> bool:
        return self.model is not None

    # ------------------------------------------------------------------
    # training

    def train(self, payload: dict) -> dict:
        train_recs = payload.get("train")
        if not isinstance(train_recs, list) or not train_recs:
            raise WireError("bad_request", "train must be a non-empty list")
        schema = payload.get("schema")
        if not isinstance(schema, dict) or not isinstance(schema.get("types"), list):
            raise WireError("bad_request", "schema must carry a types list")
        type_order = []
        for entry in schema["types"]:
            if not isinstance(entry, dict) or not isinstance(entry.get("id"), str):
                raise WireError("bad_request", "each schema type needs a string id")
            type_order.append(entry["id"])
        if not type_order:
            raise WireError("bad_request", "schema has no types")
        type_ids = set(type_order)

        references = payload.get("references", [])
        if not isinstance(references, list):
            raise WireError("bad_request", "references must be a list")
        config = payload.get("config") or {}
        if not isinstance(config, dict):
            raise WireError("bad_request", "config must be an object")
        client_seed = payload.get("seed", 0)
        if not isinstance(client_seed, int):
            raise WireError("bad_request", "seed must be an integer")

        lr = config.get("lr", self.cfg.ner_lr)
        batch_size = config.get("batch_size", self.cfg.ner_batch)
        steps = config.get("steps", self.cfg.ner_steps)
        if not isinstance(batch_size, int) or batch_size < 1:
            raise WireError("bad_request", "batch_size must be a positive integer")
        if not isinstance(steps, int) or not 1 <= steps <= 10_000:
            raise WireError("bad_request", "steps must be an integer in [1, 10000]")
        policy = _check_policy(config.get("confidence_policy", "min"))
        mixup_cfg = config.get("mixup") or {}
        if not isinstance(mixup_cfg, dict):
            raise WireError("bad_request", "mixup config must be an object")

        by_id: dict[str, tuple[list[str], list[dict]]] = {}
        train_sentences: list[tuple[list[str], list[dict]]] = []
        for rec in train_recs:
            sid, tokens, spans = _sentence_record(rec, type_ids)
            by_id[sid] = (tokens, spans)
            train_sentences.append((tokens, spans))
        for rec in references:
            sid, tokens, spans = _sentence_record(rec, type_ids)
            by_id.setdefault(sid, (tokens, spans))

        n_layers = self.cfg.tagger_layers
        pairs: list[tuple[list[str], list[dict], list[str], list[dict], float, int]] = []
        raw_pairs = payload.get("pairs", [])
        if not isinstance(raw_pairs, list):
            raise WireError("bad_request", "pairs must be a list")
        for pair in raw_pairs:
            if not isinstance(pair, dict):
                raise WireError("bad_request", "pairs must be objects")
            flipped_id = pair.get("flipped_id")
            original_id = pair.get("original_id")
            lam = pair.get("lambda")
            layer = pair.get("layer")
            if flipped_id not in by_id:
                raise WireError("bad_request", f"pair references unknown id {flipped_id!r}")
            if original_id not in by_id:
                raise WireError("bad_request", f"pair references unknown id {original_id!r}")
            if not isinstance(lam, (int, float)) or not 0.0 <= float(lam) <= 1.0:
                raise WireError("bad_request", "pair lambda must be in [0, 1]")
            if not isinstance(layer, int) or not 1 <= layer < n_layers:
                raise WireError(
                    "bad_request",
                    f"pair layer must be an integer in [1, {n_layers - 1}], got {layer!r}",
                )
            f_tokens, f_spans = by_id[flipped_id]
            o_tokens, o_spans = by_id[original_id]
            pairs.append((f_tokens, f_spans, o_tokens, o_spans, float(lam), layer))

        tokens: set[str] = set()
        for sentence_tokens, _ in by_id.values():
            tokens.update(sentence_tokens)
        labels = ["O"]
        for type_id in type_order:
            labels += [f"B-{type_id}", f"I-{type_id}"]

        torch.manual_seed((self.cfg.seed * 999_983 + client_seed) % 2**31)
        shuffle_rng = random.Random(client_seed * 6_007 + self.cfg.seed)
        vocab = Vocab(tokens)
        model = MixupTagger(len(vocab), vocab.pad_id, len(labels), self.cfg)
        label_index = {lab: i for i, lab in enumerate(labels)}

        plain = [
            (vocab.encode(toks), [label_index[l] for l in _bio_labels(toks, spans)])
            for toks, spans in train_sentences
        ]
        mixed = [
            (
                vocab.encode(f_toks),
                [label_index[l] for l in _bio_labels(f_toks, f_spans)],
                vocab.encode(o_toks),
                [label_index[l] for l in _bio_labels(o_toks, o_spans)],
                lam,
                layer,
            )
            for f_toks, f_spans, o_toks, o_spans, lam, layer in pairs
        ]

        optimizer = torch.optim.Adam(model.parameters(), lr=float(lr))
        model.train()
        final_loss = 0.0
        plain_stream = self._cycle(plain, batch_size, shuffle_rng)
        mixed_stream = self._cycle(mixed, batch_size, shuffle_rng) if mixed else None
        for step in range(steps):
            optimizer.zero_grad()
            if mixed_stream is not None and step % 2 == 1:
                loss = self._mixed_loss(model, vocab, len(labels), next(mixed_stream))
            else:
                loss = self._plain_loss(model, vocab, next(plain_stream))
            if not torch.isfinite(loss):
                raise WireError("divergence", f"non-finite loss at step {step}", 500)
            loss.backward()
            optimizer.step()
            final_loss = float(loss.detach())
        model.eval()

        self.model = model
        self.vocab = vocab
        self.labels = labels
        self.model_hash = state_hash(model.named_parameters())
        self.default_policy = policy
        return {
            "backend": "mixup-tagger",
            "model_hash": self.model_hash,
            "config": {
                "lr": float(lr),
                "batch_size": batch_size,
                "steps": steps,
                "layers": n_layers,
                "confidence_policy": policy,
                "mixup": {
                    "alpha": mixup_cfg.get("alpha"),
                    "beta": mixup_cfg.get("beta"),
                    "layer_choices": mixup_cfg.get("layer_choices"),
                },
            },
            "metrics": {
                "final_loss": final_loss,
                "trained_on": len(train_recs),
                "pairs": len(pairs),
            },
        }

    @staticmethod
    def _cycle(items: list, batch_size: int, rng: random.Random):
        order = list(range(len(items)))
        while True:
            rng.shuffle(order)
            for at in range(0, len(order), batch_size):
                yield [items[i] for i in order[at : at + batch_size]]

    @staticmethod
    def _pad_batch(vocab: Vocab, rows: list[list[int]], width: int) -> torch.Tensor:
        out = torch.full((len(rows), width), vocab.pad_id, dtype=torch.long)
        for i, row in enumerate(rows):
            out[i, : len(row)] = torch.tensor(row, dtype=torch.long)
        return out

    def _plain_loss(
        self, model: MixupTagger, vocab: Vocab, batch: list[tuple[list[int], list[int]]]
    ) -> torch.Tensor:
        width = max(len(ids) for ids, _ in batch)
        ids = self._pad_batch(vocab, [ids for ids, _ in batch], width)
        gold = torch.full((len(batch), width), -100, dtype=torch.long)
        for i, (_, labels) in enumerate(batch):
            gold[i, : len(labels)] = torch.tensor(labels, dtype=torch.long)
        logits = model(ids, ids == vocab.pad_id)
        return cross_entropy(
            logits.reshape(-1, logits.shape[-1]), gold.reshape(-1), ignore_index=-100
        )

    def _mixed_loss(
        self, model: MixupTagger, vocab: Vocab, n_labels: int, batch: list[tuple]
    ) -> torch.Tensor:
        """Interpolated-label loss; every pair mixes at its own (lambda, layer).

        Pairs sharing a layer could batch together, but pair batches are tiny
        and grouping buys nothing at this scale — one pair per pass.
        """
        o_label = 0  # "O" is always label 0
        total = torch.zeros(())
        count = 0
        for f_ids, f_labels, o_ids, o_labels, lam, layer in batch:
            width = max(len(f_ids), len(o_ids))
            ids_f = self._pad_batch(vocab, [f_ids], width)
            ids_o = self._pad_batch(vocab, [o_ids], width)
            logits = model.forward_mixed(
                ids_f, ids_f == vocab.pad_id, ids_o, ids_o == vocab.pad_id, lam, layer
            )
            target = torch.zeros(1, width, n_labels)
            for pos in range(width):
                f_lab = f_labels[pos] if pos < len(f_labels) else o_label
                o_lab = o_labels[pos] if pos < len(o_labels) else o_label
                target[0, pos, f_lab] += lam
                target[0, pos, o_lab] += 1.0 - lam
            keep = torch.zeros(1, width, 1)
            keep[0, : len(f_ids)] = 1.0
            per_pos = -(target * log_softmax(logits, dim=-1)).sum(dim=-1, keepdim=True)
            total = total + (per_pos * keep).sum() / keep.sum()
            count += 1
        return total / count

    # ------------------------------------------------------------------
    # annotation

    def annotate(self, payload: dict) -> dict:
        if self.model is None or self.vocab is None:
            raise WireError("not_trained", "tagger has not been trained", 409)
        sentences = payload.get("sentences")
        if not isinstance(sentences, list):
            raise WireError("bad_request", "sentences must be a list")
        config = payload.get("config") or {}
        if not isinstance(config, dict):
            raise WireError("bad_request", "config must be an object")
        policy = _check_policy(config.get("confidence_policy", self.default_policy))

        parsed: list[tuple[str, list[str]]] = []
        for rec in sentences:
            if not isinstance(rec, dict) or not isinstance(rec.get("id"), str):
                raise WireError("bad_request", "each sentence needs a string id")
            tokens = rec.get("tokens")
            if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
                raise WireError("bad_request", "sentence tokens must be a list of strings")
            parsed.append((rec["id"], tokens))

        annotations = []
        with torch.no_grad():
            for at in range(0, len(parsed), 16):
                chunk = parsed[at : at + 16]
                annotations.extend(self._annotate_chunk(chunk, policy))
        return {"annotations": annotations}

    def _annotate_chunk(self, chunk: list[tuple[str, list[str]]], policy: str) -> list[dict]:
        assert self.model is not None and self.vocab is not None
        width = max((len(toks) for _, toks in chunk), default=0)
        if width == 0:
            return [{"id": sid, "spans": [], "confidence": 1.0} for sid, _ in chunk]
        rows = [self.vocab.encode(toks) for _, toks in chunk]
        ids = self._pad_batch(self.vocab, rows, width)
        probs = torch.softmax(self.model(ids, ids == self.vocab.pad_id), dim=-1)
        best_prob, best_label = probs.max(dim=-1)
        out = []
        for i, (sid, tokens) in enumerate(chunk):
            n = len(tokens)
            if n == 0:
                out.append({"id": sid, "spans": [], "confidence": 1.0})
                continue
            labels = [self.labels[int(l)] for l in best_label[i, :n]]
            token_conf = best_prob[i, :n]
            confidence = float(token_conf.min() if policy == "min" else token_conf.mean())
            out.append({"id": sid, "spans": decode_bio(labels), "confidence": confidence})
        return out
