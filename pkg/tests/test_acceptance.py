"""Acceptance gate: one test per primary guarantee, one pass/fail line each.

Run with ``pytest tests/test_acceptance.py -v`` to get the per-criterion lines:

1. linearization round trip      exact recovery over >=10k fuzz sentences, < 10 s
2. strategy algebra              op multisets and type-sequence edit distance
3. filter correctness            echo -> 100%, adversary -> exactly 1-p, idempotent
4. mixup math                    endpoints, Beta(130,5) moments, stochastic rows, pairing
5. micro-F1 oracle               exact agreement with brute-force counting, 1000 instances
6. end-to-end determinism        byte-identical manifests for run/run-star, < 60 s
7. counting identity             attempted == sentences x multiplier, fully reconciled
"""
import json
import random
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from conftest import trained_mock
from spanaug.augment import AugmentedSample, augment_dataset
from spanaug.corpus import Dataset, EntitySpan, LabelSchema, LabelType, TaggedSentence, save_corpus
from spanaug.errors import OverlapExhaustedError
from spanaug.evaluate import micro_f1
from spanaug.filtering import filter_samples
from spanaug.gateway import Gateway, RetryPolicy
from spanaug.linearize import delinearize, linearize, segment
from spanaug.config import RunConfig
from spanaug.maskops import Op, OpConfig, compose_template
from spanaug.mixup import MixupConfig, build_pairs, interpolate_states, mix_labels, sample_lambda
from spanaug.pipeline import run, run_star
from spanaug.strategies import FlipScheme, StrategyConfig, compose_strategy, make_flip_chooser


def edit_distance(a, b):
    dp = list(range(len(b) + 1))
    for i in range(1, len(a) + 1):
        prev, dp[0] = dp[0], i
        for j in range(1, len(b) + 1):
            cur = dp[j]
            dp[j] = min(dp[j] + 1, dp[j - 1] + 1, prev + (a[i - 1] != b[j - 1]))
            prev = cur
    return dp[-1]


# --- 1. linearization round trip ---------------------------------------------------

def _fuzz_sentence(rng: random.Random, schema: LabelSchema, sid: str) -> TaggedSentence:
    vocab = [
        "the", "a", "game", "place", "nice", "York", "12", "price", "EU",
        "[", "]", "|", "\\", "\\[", "\\]", "\\|", "\\\\[", "\\\\\\]",
        "x|y", "weird]token", "[start", "end]", "mid|dle",
    ]
    n = rng.randint(1, 14)
    tokens = [rng.choice(vocab) for _ in range(n)]
    types = list(schema.type_ids)
    spans, pos = [], 0
    while pos < n:
        draw = rng.random()
        if draw < 0.45:  # entity here; adjacency happens when this repeats
            width = rng.randint(1, min(3, n - pos))
            spans.append(EntitySpan(pos, pos + width, rng.choice(types)))
            pos += width
        elif draw < 0.8:
            pos += rng.randint(1, 3)
        else:  # leave the rest of the sentence as context
            break
    return TaggedSentence(sid, tokens, spans)


def _edge_case_sentences(schema: LabelSchema) -> list[TaggedSentence]:
    t = list(schema.type_ids)
    return [
        # entity covering the whole sentence (both boundaries, no context)
        TaggedSentence("e0", ["New", "York"], [EntitySpan(0, 2, t[0])]),
        # adjacent entities with empty context between and on both boundaries
        TaggedSentence("e1", ["A", "B", "C", "D"],
                       [EntitySpan(0, 1, t[0]), EntitySpan(1, 2, t[1]),
                        EntitySpan(2, 3, t[2]), EntitySpan(3, 4, t[3 % len(t)])]),
        # entity at the start only
        TaggedSentence("e2", ["EU", "rejects", "it"], [EntitySpan(0, 1, t[1])]),
        # entity at the end only
        TaggedSentence("e3", ["visit", "New", "York"], [EntitySpan(1, 3, t[2])]),
        # every reserved symbol as a bare token, inside and outside entities
        TaggedSentence("e4", ["[", "|", "]", "\\", "\\[", "x|y"],
                       [EntitySpan(0, 3, t[0]), EntitySpan(4, 6, t[1])]),
        # no entities at all
        TaggedSentence("e5", ["nothing", "here"], []),
    ]


def test_primary_1_linearization_round_trip_fuzz(schema):
    rng = random.Random(20240817)
    sentences = _edge_case_sentences(schema)
    sentences += [_fuzz_sentence(rng, schema, f"f{i}") for i in range(10_000)]
    assert len(sentences) >= 10_000

    started = time.perf_counter()
    failures = 0
    for s in sentences:
        text = linearize(s, schema)
        back = delinearize(text, schema, sentence_id=s.sentence_id)
        if list(back.tokens) != list(s.tokens) or list(back.spans) != list(s.spans):
            failures += 1
    elapsed = time.perf_counter() - started

    assert failures == 0, f"{failures} of {len(sentences)} sentences failed to round-trip"
    assert elapsed < 10.0, f"round trip took {elapsed:.2f}s (budget 10s)"
    print(f"PASS criterion 1: {len(sentences)} sentences round-tripped exactly "
          f"in {elapsed:.2f}s")


# --- 2. strategy algebra ------------------------------------------------------------

def _algebra_cases():
    for strategy in ("sa", "elc", "ea", "er"):
        for k in (0, 1, 2):
            for m in (1, 2, 3):
                if k > m:
                    continue
                for n in (1, 2, 3):
                    yield strategy, k, m, n


def _expected_multiset(strategy: str, k: int, m: int, n: int) -> Counter:
    if strategy == "sa":
        k = 0
    flip_op = {"sa": None, "elc": Op.CHANGE_TYPE, "ea": Op.ADD_ENTITY,
               "er": "replace"}[strategy]
    out = Counter({Op.AUGMENT_ENTITY: m - k, Op.AUGMENT_CONTEXT: n})
    if k and flip_op is not None:
        out[flip_op] = k
    return +out  # drop zero entries


def _op_multiset(calls) -> Counter:
    out = Counter()
    i = 0
    while i < len(calls):
        c = calls[i]
        if (c.op is Op.ADD_ENTITY and i + 1 < len(calls)
                and calls[i + 1].op is Op.ERASE_ENTITY
                and calls[i + 1].pair_with_previous):
            out["replace"] += 1
            i += 2
        else:
            out[c.op] += 1
            i += 1
    return out


def _wide_sentence(schema: LabelSchema) -> TaggedSentence:
    # six entities with four-token context runs between and around them
    types = list(schema.type_ids)
    tokens, spans = [], []
    for e in range(6):
        tokens += [f"c{e}{j}" for j in range(4)]
        start = len(tokens)
        tokens += [f"ent{e}a", f"ent{e}b"]
        spans.append(EntitySpan(start, start + 2, types[e % len(types)]))
    tokens += ["tail0", "tail1", "tail2", "tail3"]
    return TaggedSentence("wide", tokens, spans)


def test_primary_2_strategy_algebra_and_edit_distance(schema):
    # (a) composed op multisets match the algebra exactly, for every case
    for strategy, k, m, n in _algebra_cases():
        calls = compose_strategy(strategy, StrategyConfig(flip_count=k),
                                 random.Random(1), entity_rounds=m, context_rounds=n)
        got = _op_multiset(calls)
        want = _expected_multiset(strategy, k, m, n)
        assert got == want, f"{strategy} K={k} M={m} N={n}: {got} != {want}"

    # (b) the resulting type sequence sits at edit distance K (0 for sa)
    sentence = _wide_sentence(schema)
    original = [sp.type_id for sp in sentence.spans]
    seg = segment(sentence)
    checked = 0
    for strategy, k, m, n in _algebra_cases():
        expected_distance = 0 if strategy == "sa" else k
        successes = 0
        for seed in range(80):
            rng = random.Random(seed)
            chooser = make_flip_chooser(schema, FlipScheme("random"), rng)
            calls = compose_strategy(strategy, StrategyConfig(flip_count=k), rng,
                                     entity_rounds=m, context_rounds=n)
            try:
                template = compose_template(seg, calls, schema, OpConfig(0, 0), rng,
                                            flip_chooser=chooser)
            except OverlapExhaustedError:
                continue
            d = edit_distance(template.expected_types, original)
            assert d == expected_distance, (
                f"{strategy} K={k} M={m} N={n} seed={seed}: distance {d}, "
                f"types {template.expected_types}"
            )
            successes += 1
            if successes >= 5:
                break
        assert successes > 0, f"no composable draw for {strategy} K={k} M={m} N={n}"
        checked += 1
    print(f"PASS criterion 2: op multisets and edit distances verified for "
          f"{checked} (strategy, K, M, N) combinations")


# --- 3. filter correctness ----------------------------------------------------------

def _hundred_samples(corpus) -> list[AugmentedSample]:
    entity_sentences = [s for s in corpus.sentences if s.spans]
    samples = []
    for i in range(100):
        src = entity_sentences[i % len(entity_sentences)]
        samples.append(AugmentedSample(
            sample_id=f"s{i}", parent_id=src.sentence_id, strategy="sa",
            sentence=src, expected_types=[sp.type_id for sp in src.spans],
            flipped_positions=[], operations=[],
        ))
    return samples


def test_primary_3_filter_echo_adversary_idempotent(corpus):
    samples = _hundred_samples(corpus)

    # echo oracle: everything survives
    echo = Gateway(trained_mock(corpus, score_mode="echo"), corpus.schema,
                   retry=RetryPolicy(attempts=1, backoff=0.0))
    kept, dropped, report = filter_samples(samples, echo)
    assert report.overall.retention == 1.0
    assert len(kept) == 100 and not dropped

    # adversary corrupting a fraction p: retention is exactly 1 - p
    for p in (0.1, 0.5, 0.9):
        n_corrupt = round(100 * p)
        backend = trained_mock(corpus, score_mode="echo",
                               corrupt_ids={f"q{i}" for i in range(n_corrupt)})
        gw = Gateway(backend, corpus.schema, retry=RetryPolicy(attempts=1, backoff=0.0))
        kept_p, dropped_p, report_p = filter_samples(samples, gw)
        assert report_p.overall.retention == pytest.approx(1.0 - p, abs=1e-12), p
        assert len(kept_p) == 100 - n_corrupt
        assert len(dropped_p) == n_corrupt

    # idempotence: a second pass over the kept set keeps everything
    kept_again, dropped_again, report_again = filter_samples(kept, echo)
    assert [s.sample_id for s in kept_again] == [s.sample_id for s in kept]
    assert not dropped_again
    assert report_again.overall.retention == 1.0
    print("PASS criterion 3: echo retention 100%, adversary retention exactly 1-p "
          "for p in {0.1, 0.5, 0.9}, filter idempotent on kept set")


# --- 4. mixup math ------------------------------------------------------------------

def test_primary_4_mixup_math(corpus, mock_gateway):
    # endpoint identity is exact
    rng_np = np.random.default_rng(7)
    h_f = rng_np.normal(size=(11, 24))
    h_o = rng_np.normal(size=(11, 24))
    assert np.array_equal(interpolate_states(h_f, h_o, 1.0), h_f)
    assert np.array_equal(interpolate_states(h_f, h_o, 0.0), h_o)

    # Beta(130, 5) moments over 100k draws
    rng = random.Random(123)
    cfg = MixupConfig()
    draws = np.array([sample_lambda(cfg, rng) for _ in range(100_000)])
    mean, var = draws.mean(), draws.var()
    assert abs(mean - 0.963) <= 0.005, f"mean {mean:.5f} outside 0.963 +/- 0.005"
    target_var = 2.625e-4
    assert abs(var - target_var) <= 0.2 * target_var, (
        f"variance {var:.3e} outside {target_var:.3e} +/- 20%"
    )

    # mixed label rows stay stochastic to 1e-9
    raw_f, raw_o = rng_np.random((50, 6)), rng_np.random((50, 6))
    y_f = raw_f / raw_f.sum(axis=1, keepdims=True)
    y_o = raw_o / raw_o.sum(axis=1, keepdims=True)
    for lam in (0.05, 0.5, 0.963):
        mixed = mix_labels(y_f, y_o, lam)
        assert np.abs(mixed.sum(axis=1) - 1.0).max() <= 1e-9

    # pairing covers all and only the label-flipping samples
    samples, _ = augment_dataset(
        corpus, ["sa", "elc", "ea", "er"], 2, StrategyConfig(flip_count=1),
        OpConfig(0, 2), FlipScheme("random"), mock_gateway, seed=21,
    )
    pairs = build_pairs(samples, cfg, random.Random(0))
    flipped_ids = {s.sample_id for s in samples if s.is_flipped}
    sa_ids = {s.sample_id for s in samples if s.strategy == "sa"}
    assert flipped_ids, "need flipped samples for the pairing check"
    assert {p.flipped_id for p in pairs} == flipped_ids
    assert not ({p.flipped_id for p in pairs} & sa_ids)
    for p in pairs:
        assert 0.0 < p.lam < 1.0
    print(f"PASS criterion 4: endpoints exact, mean {mean:.4f}, variance {var:.3e}, "
          f"rows stochastic to 1e-9, {len(pairs)} pairs cover exactly the flipped samples")


# --- 5. micro-F1 against a brute-force oracle ---------------------------------------

def test_primary_5_micro_f1_oracle(schema):
    rng = random.Random(99)
    types = list(schema.type_ids)

    def random_tagging(n_tokens):
        spans, pos = [], 0
        while pos < n_tokens:
            if rng.random() < 0.45:
                width = rng.randint(1, min(3, n_tokens - pos))
                spans.append(EntitySpan(pos, pos + width, rng.choice(types)))
                pos += width
            else:
                pos += 1
        return spans

    for instance in range(1000):
        gold_sents, pred_sents = [], []
        for i in range(rng.randint(1, 10)):
            n = rng.randint(1, 12)
            tokens = [f"t{j}" for j in range(n)]
            gold_sents.append(TaggedSentence(str(i), tokens, random_tagging(n)))
            pred_sents.append(TaggedSentence(str(i), tokens, random_tagging(n)))
        score = micro_f1(Dataset(schema, gold_sents), Dataset(schema, pred_sents))

        tp = fp = fn = 0
        for g, p in zip(gold_sents, pred_sents):
            gset = {(sp.start, sp.end, sp.type_id) for sp in g.spans}
            pset = {(sp.start, sp.end, sp.type_id) for sp in p.spans}
            tp += len(gset & pset)
            fp += len(pset - gset)
            fn += len(gset - pset)
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * precision * recall / (precision + recall) if precision + recall else 0.0
        assert (score.tp, score.fp, score.fn) == (tp, fp, fn), f"instance {instance}"
        assert score.precision == precision and score.recall == recall and score.f1 == f1
    print("PASS criterion 5: micro-F1 agrees exactly with the brute-force oracle "
          "on 1000 random instances")


# --- 6. end-to-end determinism ------------------------------------------------------

SCHEMA_TSV = "PER\tperson\nORG\torganization\nLOC\tlocation\nMISC\tmiscellaneous\n"


def test_primary_6_end_to_end_determinism(tmp_path, corpus):
    train = tmp_path / "train.conll"
    schema_path = tmp_path / "schema.tsv"
    unlabeled = tmp_path / "unlabeled.conll"
    save_corpus(corpus, train)
    schema_path.write_text(SCHEMA_TSV, encoding="utf-8")
    unlabeled.write_text(
        "Bonds O\nvisited O\nNew O\nYork O\ntoday O\n\n"
        "quantum O\nflux O\ncalibration O\n",
        encoding="utf-8",
    )

    def config(out_name):
        return RunConfig(
            train=str(train), schema=str(schema_path), unlabeled=str(unlabeled),
            out=str(tmp_path / out_name), multiplier=2, iterations=2, seed=42,
            retry_backoff=0.0,
        )

    started = time.perf_counter()
    run(config("run_a"))
    run(config("run_b"))
    run_star(config("star_a"))
    run_star(config("star_b"))
    elapsed = time.perf_counter() - started

    run_manifests = [(tmp_path / d / "manifest.json").read_bytes() for d in ("run_a", "run_b")]
    star_manifests = [(tmp_path / d / "manifest.json").read_bytes() for d in ("star_a", "star_b")]
    assert run_manifests[0] == run_manifests[1], "run manifests differ"
    assert star_manifests[0] == star_manifests[1], "run-star manifests differ"
    assert json.loads(star_manifests[0])["entries"], "empty star manifest"
    assert elapsed < 60.0, f"four runs took {elapsed:.1f}s (budget 60s)"
    print(f"PASS criterion 6: run and run-star manifests byte-identical across "
          f"executions, {elapsed:.1f}s for all four runs")


# --- 7. counting identity -----------------------------------------------------------

def test_primary_7_counting_identity(corpus, mock_gateway):
    strategies = ["sa", "elc", "ea", "er"]
    multiplier = 3
    samples, report = augment_dataset(
        corpus, strategies, multiplier, StrategyConfig(flip_count=1),
        OpConfig(0, 2), FlipScheme("random"), mock_gateway, seed=5,
    )
    n = len(corpus.sentences)
    assert report.counting_identity_holds(n, multiplier)

    doc = report.to_json()
    total_skips = total_drops = 0
    for strategy in strategies:
        tally = doc["strategies"][strategy]
        skips = sum(tally["precondition_skips"].values())
        drops = sum(tally["generation_drops"].values())
        assert tally["attempted"] == n * multiplier, strategy
        assert tally["produced"] == tally["attempted"] - skips - drops, strategy
        total_skips += skips
        total_drops += drops
    assert len(samples) == n * len(strategies) * multiplier - total_skips - total_drops
    # the entity-free sentence guarantees the reconciliation is non-trivial
    assert total_skips > 0
    print(f"PASS criterion 7: {len(samples)} samples = {n} sentences x "
          f"{len(strategies)} strategies x {multiplier} - {total_skips} skips "
          f"- {total_drops} drops")
