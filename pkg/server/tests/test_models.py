"""Unit tests for the two models: decoding, hashing, mixing, BIO spans."""

from __future__ import annotations

import pytest
import torch

import wiredata
from promptserve.config import ServerConfig
from promptserve.seq2seq import PromptSeq2Seq, sinusoid_table, state_hash
from promptserve.tagger import MixupTagger, decode_bio
from promptserve.tagging import _bio_labels
from promptserve.vocab import Vocab

TINY = ServerConfig(
    gen_d_model=16, gen_heads=2, gen_ff=32, gen_enc_layers=2, gen_dec_layers=2,
    prompt_len=4, tagger_d_model=16, tagger_heads=2, tagger_ff=32, tagger_layers=4,
    max_len=64,
)


@pytest.fixture()
def seq2seq():
    torch.manual_seed(7)
    vocab = Vocab([f"w{i}" for i in range(20)], n_sentinels=4)
    return PromptSeq2Seq(len(vocab), vocab.pad_id, TINY), vocab


def test_sinusoid_table_shape_and_bounds():
    table = sinusoid_table(10, 8)
    assert table.shape == (10, 8)
    assert float(table.abs().max()) <= 1.0


def test_state_hash_is_order_independent_and_content_sensitive():
    a = torch.nn.Linear(3, 3)
    named = list(a.named_parameters())
    assert state_hash(named) == state_hash(reversed(named))
    before = state_hash(named)
    with torch.no_grad():
        a.weight += 1.0
    assert state_hash(a.named_parameters()) != before


def test_backbone_excludes_prompts(seq2seq):
    model, _ = seq2seq
    backbone_names = {name for name, _ in model.backbone_named_parameters()}
    assert backbone_names
    assert not any(name.startswith(("enc_prompts", "dec_prompts")) for name in backbone_names)
    prompts = list(model.prompt_parameters())
    assert len(prompts) == TINY.gen_enc_layers + TINY.gen_dec_layers
    total = len(list(model.parameters()))
    assert total == len(backbone_names) + len(prompts)


def test_freeze_backbone_leaves_prompts_trainable(seq2seq):
    model, _ = seq2seq
    model.freeze_backbone()
    assert all(not p.requires_grad for _, p in model.backbone_named_parameters())
    assert all(p.requires_grad for p in model.prompt_parameters())


def test_greedy_generation_is_deterministic(seq2seq):
    model, vocab = seq2seq
    src = torch.tensor([vocab.encode(["w1", "w2", "w3"])])
    first = model.generate(src, vocab.bos_id, vocab.eos_id, 8, temperature=0.0)
    second = model.generate(src, vocab.bos_id, vocab.eos_id, 8, temperature=0.0)
    assert first == second
    assert all(len(row) <= 8 for row in first)


def test_seeded_sampling_is_reproducible(seq2seq):
    model, vocab = seq2seq
    src = torch.tensor([vocab.encode(["w1", "w2", "w3"])])

    def sample():
        gen = torch.Generator().manual_seed(99)
        return model.generate(src, vocab.bos_id, vocab.eos_id, 8,
                              temperature=1.0, gen=gen)

    assert sample() == sample()


def test_banned_ids_never_generated(seq2seq):
    model, vocab = seq2seq
    src = torch.tensor([vocab.encode(["w1", "w2"])])
    keep = {vocab.id_of("w5"), vocab.eos_id}
    banned = set(range(len(vocab))) - keep
    gen = torch.Generator().manual_seed(3)
    rows = model.generate(src, vocab.bos_id, vocab.eos_id, 6,
                          temperature=1.0, gen=gen, banned_ids=banned)
    assert set(rows[0]) <= {vocab.id_of("w5")}


def test_sequence_logprobs_equal_for_equal_rows(seq2seq):
    model, vocab = seq2seq
    src = torch.tensor([vocab.encode(["w1", "w2", "w3"])])
    memory = model.encode(src, None)
    target = vocab.encode(["w4", "w5"])
    other = vocab.encode(["w4", "w6", "w7"])
    scores = model.sequence_logprobs(
        memory, None, [target, other, target], score_from=0, bos_id=vocab.bos_id
    )
    assert torch.allclose(scores[0], scores[2])
    assert all(float(s) <= 0.0 for s in scores)


def test_tagger_forward_shapes():
    torch.manual_seed(1)
    tagger = MixupTagger(30, 0, 9, TINY)
    ids = torch.randint(4, 30, (5, 7))
    logits = tagger(ids, None)
    assert logits.shape == (5, 7, 9)


def test_run_layers_composes():
    torch.manual_seed(2)
    tagger = MixupTagger(30, 0, 5, TINY)
    h = tagger.embed(torch.randint(4, 30, (3, 6)))
    full = tagger.run_layers(h, None, 0, tagger.n_layers)
    split = tagger.run_layers(tagger.run_layers(h, None, 0, 2), None, 2, tagger.n_layers)
    assert torch.equal(full, split)


def test_forward_mixed_rejects_bad_layers_and_shapes():
    torch.manual_seed(3)
    tagger = MixupTagger(30, 0, 5, TINY)
    ids = torch.randint(4, 30, (2, 6))
    with pytest.raises(ValueError):
        tagger.forward_mixed(ids, None, ids, None, 0.5, 0)
    with pytest.raises(ValueError):
        tagger.forward_mixed(ids, None, ids, None, 0.5, tagger.n_layers)
    with pytest.raises(ValueError):
        tagger.forward_mixed(ids, None, ids[:, :4], None, 0.5, 1)


def test_forward_mixed_at_lambda_one_matches_plain_forward():
    torch.manual_seed(4)
    tagger = MixupTagger(30, 0, 5, TINY)
    ids_a = torch.randint(4, 30, (2, 6))
    ids_b = torch.randint(4, 30, (2, 6))
    mixed = tagger.forward_mixed(ids_a, None, ids_b, None, 1.0, 2)
    plain = tagger(ids_a, None)
    assert torch.allclose(mixed, plain, atol=1e-6)


@pytest.mark.parametrize("labels,spans", [
    ([], []),
    (["O", "O"], []),
    (["B-PER"], [{"start": 0, "end": 1, "type": "PER"}]),
    (["B-PER", "I-PER", "O"], [{"start": 0, "end": 2, "type": "PER"}]),
    (["B-PER", "B-ORG"], [{"start": 0, "end": 1, "type": "PER"},
                          {"start": 1, "end": 2, "type": "ORG"}]),
    (["O", "I-LOC", "I-LOC"], [{"start": 1, "end": 3, "type": "LOC"}]),
    (["B-PER", "I-ORG"], [{"start": 0, "end": 1, "type": "PER"},
                          {"start": 1, "end": 2, "type": "ORG"}]),
    (["I-PER", "O", "I-PER"], [{"start": 0, "end": 1, "type": "PER"},
                               {"start": 2, "end": 3, "type": "PER"}]),
])
def test_decode_bio_cases(labels, spans):
    assert decode_bio(labels) == spans


def test_decode_bio_round_trips_the_corpus():
    for rec in wiredata.TRAIN_RECORDS + wiredata.FLIPPED_RECORDS:
        labels = _bio_labels(rec["tokens"], rec["spans"])
        decoded = decode_bio(labels)
        expected = sorted(rec["spans"], key=lambda sp: sp["start"])
        assert decoded == expected
