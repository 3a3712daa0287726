"""Run orchestration: augment, filter, and the self-training loops.

Base flow (``run``)::

    train_lm      train the generator on the linearized train set
    augment       sentences x strategies x multiplier -> samples
    filter        self-consistency filtering -> kept samples
    train_ner_0   first tagger trained on the kept samples (with mixup pairs)
    iterate_k     k = 1..N: re-annotate kept samples, keep confident ones,
                  retrain on train + selection

Extended flow (``run_star``) continues with the unlabeled pool::

    annotate_unlabeled   pseudo-label the pool with the latest model
    augment_unlabeled    augment the confident pseudo-labeled sentences
    star_iterate_k       k = 1..N: select confident augmented samples from
                         both pools, refresh pseudo labels, retrain

An empty unlabeled pool skips the extension entirely, so the outputs equal
the base flow's. Every phase records its artifacts in the run state; resuming
an interrupted run reloads artifacts instead of recomputing them (in-process
mock backends replay their training calls to rebuild state). Manifests are a
pure function of (inputs, seed, config).
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from pathlib import Path

from .augment import AugmentedSample, augment_dataset
from .config import RunConfig
from .corpus import (
    Dataset,
    EntitySpan,
    LabelSchema,
    TaggedSentence,
    load_corpus,
    load_schema,
    schema_to_record,
    sentence_to_record,
)
from .errors import ConfigError
from .filtering import filter_samples
from .gateway import (
    Backend,
    DecodeConfig,
    Gateway,
    HttpBackend,
    MockBackend,
    RetryPolicy,
    payload_hash,
)
from .linearize import linearize
from .manifest import RunState, dump_json, dump_jsonl, load_jsonl
from .mixup import MixupPair, build_pairs
from .seeding import derive_rng, derive_seed

log = logging.getLogger(__name__)

# Training-config hints sent to the backend; a real server honors them (at its
# own scale), the mock ignores them. Echoed back in training responses.
GENERATOR_TRAIN_DEFAULTS = {
    "optimizer": "adafactor",
    "lr": 1e-3,
    "weight_decay": 1e-5,
    "batch_size": 16,
    "max_steps": 10000,
}
NER_TRAIN_DEFAULTS = {"lr": 5e-5, "batch_size": 8}


@dataclass(frozen=True)
class ConfidenceAnnotation:
    """One model prediction: spans plus a sentence-level confidence."""

    sentence_id: str
    spans: tuple[EntitySpan, ...]
    confidence: float

    @classmethod
    def from_json(cls, rec: dict) -> "ConfidenceAnnotation":
        return cls(
            sentence_id=rec["id"],
            spans=tuple(EntitySpan(sp["start"], sp["end"], sp["type"]) for sp in rec["spans"]),
            confidence=float(rec["confidence"]),
        )


def high_conf_select(
    annotations: list[ConfidenceAnnotation], tau: float
) -> list[ConfidenceAnnotation]:
    """Keep annotations with confidence >= tau. tau > 1 selects nothing."""
    return [a for a in annotations if a.confidence >= tau]


def build_backend(cfg: RunConfig, schema: LabelSchema) -> Backend:
    if cfg.backend == "mock":
        return MockBackend(schema, seed=derive_seed(cfg.seed, "backend"))
    return HttpBackend(cfg.backend_url)


def linearize_dataset(dataset: Dataset) -> list[str]:
    return [linearize(s, dataset.schema).text for s in dataset.sentences]


def _namespace_unlabeled(dataset: Dataset) -> Dataset:
    """Prefix pool ids so they cannot collide with train ids."""
    sentences = [
        TaggedSentence(f"u{s.sentence_id}", list(s.tokens), list(s.spans))
        for s in dataset.sentences
    ]
    return Dataset(dataset.schema, sentences)


class _Run:
    """Shared state and phase implementations for run / run_star."""

    def __init__(self, cfg: RunConfig, backend: Backend | None, star: bool) -> None:
        cfg.validate()
        cfg.require_paths(need_unlabeled=star)
        self.cfg = cfg
        self.star = star
        self.out = Path(cfg.out)
        self.out.mkdir(parents=True, exist_ok=True)
        self.schema = load_schema(cfg.schema)
        self.train = load_corpus(cfg.train, self.schema)
        self.unlabeled = (
            _namespace_unlabeled(load_corpus(cfg.unlabeled, self.schema))
            if star else Dataset(self.schema, [])
        )

        config_hash = payload_hash(cfg.canonical())
        state = RunState.load(self.out)
        if state is None:
            state = RunState(config_hash=config_hash)
        elif state.config_hash != config_hash:
            raise ConfigError(
                f"output dir {cfg.out} holds a run with a different configuration"
            )
        self.state = state
        self.backend = backend if backend is not None else build_backend(cfg, self.schema)
        self.gateway = Gateway(
            self.backend,
            self.schema,
            retry=RetryPolicy(cfg.retry_attempts, cfg.retry_backoff),
            max_in_flight=cfg.max_in_flight,
        )
        self.decode = DecodeConfig(
            max_new_tokens=cfg.decode_max_new_tokens,
            temperature=cfg.decode_temperature,
        )
        # Replay backend training on resume to rebuild in-process state.
        self.replay = bool(getattr(self.backend, "needs_replay", isinstance(self.backend, MockBackend)))

    # -- artifact helpers --

    def write(self, phase: str, name: str, filename: str, text: str) -> Path:
        path = self.out / filename
        path.write_text(text, encoding="utf-8")
        self.state.record(phase, name, path, self.out)
        return path

    def annotate(self, sentences: list[TaggedSentence]) -> list[ConfidenceAnnotation]:
        if not sentences:
            return []
        payload = {
            "sentences": [{"id": s.sentence_id, "tokens": list(s.tokens)} for s in sentences],
            "config": {"confidence_policy": self.cfg.confidence_policy},
        }
        result = self.backend.annotate(payload)
        return [ConfidenceAnnotation.from_json(rec) for rec in result["annotations"]]

    def train_tagger(self, phase: str, train_records: list[dict],
                     pairs: list[MixupPair], references: list[dict],
                     run_backend: bool) -> dict:
        payload = {
            "train": train_records,
            "pairs": [p.to_record() for p in pairs],
            "references": references,
            "schema": schema_to_record(self.schema),
            "config": {
                **NER_TRAIN_DEFAULTS,
                "confidence_policy": self.cfg.confidence_policy,
                "mixup": {
                    "alpha": self.cfg.alpha,
                    "beta": self.cfg.beta,
                    "layer_choices": list(self.cfg.layer_choices),
                },
            },
            "seed": derive_seed(self.cfg.seed, "train_ner", phase),
        }
        if run_backend:
            return self.backend.train_ner(payload)
        return {"skipped": True}

    def pairs_for(self, phase: str, samples: list[AugmentedSample],
                  parent_pool: dict[str, TaggedSentence]) -> tuple[list[MixupPair], list[dict]]:
        """Mixup pairs for the flipped samples, plus their parent records."""
        rng = derive_rng(self.cfg.seed, "pairs", phase)
        pairs = build_pairs(samples, self.cfg.mixup_config(), rng,
                            known_original_ids=set(parent_pool))
        seen: set[str] = set()
        references: list[dict] = []
        for p in pairs:
            if p.original_id not in seen:
                seen.add(p.original_id)
                references.append(sentence_to_record(parent_pool[p.original_id]))
        return pairs, references

    # -- phases --

    def phase_train_lm(self) -> None:
        phase = "train_lm"
        done = self.state.is_done(phase)
        payload = {
            "train": [sentence_to_record(s) for s in self.train.sentences],
            "schema": schema_to_record(self.schema),
            "config": dict(GENERATOR_TRAIN_DEFAULTS),
            "seed": derive_seed(self.cfg.seed, phase),
        }
        if done and not self.replay:
            return
        handle = self.backend.train_generator(payload)
        if done:
            return
        self.write(phase, "linearized_train", "linearized_train.txt",
                   "\n".join(linearize_dataset(self.train)) + "\n")
        self.write(phase, "generator", "generator.json", dump_json(handle))
        if "entity_lexicons" in handle:
            for type_id, entries in sorted(handle["entity_lexicons"].items()):
                tag = self.schema.tag_of(type_id).lower()
                self.write(phase, f"lexicon_{tag}", f"lexicon_{tag}.txt",
                           "".join(e + "\n" for e in entries))
            self.write(phase, "lexicon_context", "lexicon_context.txt",
                       "".join(e + "\n" for e in handle.get("context_lexicon", [])))
        self.state.mark_done(phase, self.out)

    def phase_augment(self, dataset: Dataset, phase: str, seed_key: str,
                      samples_name: str, report_name: str) -> list[AugmentedSample]:
        if self.state.is_done(phase):
            return [AugmentedSample.from_record(r)
                    for r in load_jsonl(self.out / f"{samples_name}.jsonl")]
        samples, report = augment_dataset(
            dataset,
            list(self.cfg.strategies),
            self.cfg.multiplier,
            self.cfg.strategy_config(),
            self.cfg.op_config(),
            self.cfg.scheme(),
            self.gateway,
            seed=derive_seed(self.cfg.seed, seed_key),
            decode=self.decode,
        )
        self.write(phase, samples_name, f"{samples_name}.jsonl",
                   dump_jsonl([s.to_record() for s in samples]))
        self.write(phase, report_name, f"{report_name}.json", dump_json(report.to_json()))
        self.state.mark_done(phase, self.out)
        return samples

    def phase_filter(self, samples: list[AugmentedSample]) -> list[AugmentedSample]:
        phase = "filter"
        if self.state.is_done(phase):
            return [AugmentedSample.from_record(r) for r in load_jsonl(self.out / "kept.jsonl")]
        kept, dropped, report = filter_samples(samples, self.gateway, self.schema)
        self.write(phase, "kept", "kept.jsonl", dump_jsonl([s.to_record() for s in kept]))
        self.write(phase, "dropped", "dropped.jsonl", dump_jsonl(
            [{**s.to_record(), "filter_verdict": verdict} for s, verdict in dropped]
        ))
        self.write(phase, "filter_report", "filter_report.json", dump_json(report.to_json()))
        self.write(phase, "filter_table", "filter_report.txt", report.format_table() + "\n")
        self.state.mark_done(phase, self.out)
        return kept

    def phase_train_0(self, kept: list[AugmentedSample]) -> None:
        phase = "train_ner_0"
        done = self.state.is_done(phase)
        parent_pool = {s.sentence_id: s for s in self.train.sentences}
        pairs, references = self.pairs_for(phase, kept, parent_pool)
        handle = self.train_tagger(
            phase,
            [sentence_to_record(s.sentence) for s in kept],
            pairs,
            references,
            run_backend=not done or self.replay,
        )
        if done:
            return
        self.write(phase, "pairs_iter0", "pairs_iter0.jsonl",
                   dump_jsonl([p.to_record() for p in pairs]))
        self.write(phase, "model_iter0", "model_iter0.json", dump_json(handle))
        self.state.mark_done(phase, self.out)

    def phase_iterate(self, k: int, kept: list[AugmentedSample]) -> None:
        phase = f"iterate_{k}"
        done = self.state.is_done(phase)
        if done and not self.replay:
            return
        annotations = self.annotate([s.sentence for s in kept])
        confident = {a.sentence_id for a in high_conf_select(annotations, self.cfg.tau)}
        selected = [s for s in kept if s.sample_id in confident]
        parent_pool = {s.sentence_id: s for s in self.train.sentences}
        pairs, references = self.pairs_for(phase, selected, parent_pool)
        train_records = [sentence_to_record(s) for s in self.train.sentences]
        train_records += [sentence_to_record(s.sentence) for s in selected]
        handle = self.train_tagger(phase, train_records, pairs, references, run_backend=True)
        if done:
            return
        self.write(phase, f"selected_iter{k}", f"selected_iter{k}.jsonl",
                   dump_jsonl([s.to_record() for s in selected]))
        self.write(phase, f"pairs_iter{k}", f"pairs_iter{k}.jsonl",
                   dump_jsonl([p.to_record() for p in pairs]))
        self.write(phase, f"model_iter{k}", f"model_iter{k}.json", dump_json(handle))
        self.state.mark_done(phase, self.out)

    # -- star phases --

    def phase_annotate_unlabeled(self) -> list[TaggedSentence]:
        phase = "annotate_unlabeled"
        if self.state.is_done(phase):
            return [
                TaggedSentence(r["id"], r["tokens"],
                               [EntitySpan(sp["start"], sp["end"], sp["type"])
                                for sp in r["spans"]])
                for r in load_jsonl(self.out / "pseudo_labeled.jsonl")
            ]
        annotations = self.annotate(self.unlabeled.sentences)
        confident = high_conf_select(annotations, self.cfg.tau)
        by_id = {s.sentence_id: s for s in self.unlabeled.sentences}
        pseudo = [
            TaggedSentence(a.sentence_id, list(by_id[a.sentence_id].tokens), list(a.spans))
            for a in confident
        ]
        self.write(phase, "pseudo_labeled", "pseudo_labeled.jsonl",
                   dump_jsonl([sentence_to_record(s) for s in pseudo]))
        self.state.mark_done(phase, self.out)
        return pseudo

    def phase_star_iterate(self, k: int, kept: list[AugmentedSample],
                           pool_samples: list[AugmentedSample],
                           pseudo: list[TaggedSentence]) -> None:
        phase = f"star_iterate_{k}"
        done = self.state.is_done(phase)
        if done and not self.replay:
            return
        candidates = kept + pool_samples
        annotations = self.annotate([s.sentence for s in candidates])
        confident = {a.sentence_id for a in high_conf_select(annotations, self.cfg.tau)}
        selected = [s for s in candidates if s.sample_id in confident]

        if self.cfg.refilter_pseudo_labels:
            re_annotated = self.annotate(self.unlabeled.sentences)
            confident_pseudo = high_conf_select(re_annotated, self.cfg.tau)
            by_id = {s.sentence_id: s for s in self.unlabeled.sentences}
            pseudo_now = [
                TaggedSentence(a.sentence_id, list(by_id[a.sentence_id].tokens), list(a.spans))
                for a in confident_pseudo
            ]
        else:
            pseudo_now = pseudo

        parent_pool = {s.sentence_id: s for s in self.train.sentences}
        parent_pool.update({s.sentence_id: s for s in pseudo})
        pairs, references = self.pairs_for(phase, selected, parent_pool)
        train_records = [sentence_to_record(s) for s in self.train.sentences]
        train_records += [sentence_to_record(s.sentence) for s in selected]
        train_records += [sentence_to_record(s) for s in pseudo_now]
        handle = self.train_tagger(phase, train_records, pairs, references, run_backend=True)
        if done:
            return
        self.write(phase, f"star_selected_iter{k}", f"star_selected_iter{k}.jsonl",
                   dump_jsonl([s.to_record() for s in selected]))
        self.write(phase, f"star_pseudo_iter{k}", f"star_pseudo_iter{k}.jsonl",
                   dump_jsonl([sentence_to_record(s) for s in pseudo_now]))
        self.write(phase, f"star_pairs_iter{k}", f"star_pairs_iter{k}.jsonl",
                   dump_jsonl([p.to_record() for p in pairs]))
        self.write(phase, f"star_model_iter{k}", f"star_model_iter{k}.json", dump_json(handle))
        self.state.mark_done(phase, self.out)

    # -- drivers --

    def execute(self) -> RunState:
        self.phase_train_lm()
        samples = self.phase_augment(self.train, "augment", "augment",
                                     "augmented", "augment_report")
        kept = self.phase_filter(samples)
        self.phase_train_0(kept)
        for k in range(1, self.cfg.iterations + 1):
            self.phase_iterate(k, kept)

        if self.star and self.unlabeled.sentences:
            pseudo = self.phase_annotate_unlabeled()
            pool_dataset = Dataset(self.schema, pseudo)
            pool_samples = self.phase_augment(
                pool_dataset, "augment_unlabeled", "augment_unlabeled",
                "augmented_unlabeled", "augment_unlabeled_report",
            )
            for k in range(1, self.cfg.iterations + 1):
                self.phase_star_iterate(k, kept, pool_samples, pseudo)

        self.state.save(self.out)
        self.state.write_manifest(self.out)
        return self.state


def run(cfg: RunConfig, backend: Backend | None = None) -> RunState:
    """Augment, filter, and iterate the self-training loop on the train set."""
    return _Run(cfg, backend, star=False).execute()


def run_star(cfg: RunConfig, backend: Backend | None = None) -> RunState:
    """The base flow plus pseudo-labeling and augmentation of the unlabeled pool."""
    return _Run(cfg, backend, star=True).execute()
