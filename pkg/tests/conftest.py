import random

import pytest

from spanaug.corpus import (
    Dataset,
    EntitySpan,
    LabelSchema,
    LabelType,
    TaggedSentence,
    sentence_to_record,
)
from spanaug.gateway import Gateway, MockBackend, RetryPolicy


@pytest.fixture
def schema():
    return LabelSchema([
        LabelType("PER", "PER", "person"),
        LabelType("ORG", "ORG", "organization"),
        LabelType("LOC", "LOC", "location"),
        LabelType("MISC", "MISC", "miscellaneous"),
    ])


@pytest.fixture
def embedded_schema():
    return LabelSchema(
        [
            LabelType("PER", "PER", "person"),
            LabelType("ORG", "ORG", "organization"),
            LabelType("LOC", "LOC", "location"),
            LabelType("MISC", "MISC", "miscellaneous"),
        ],
        embeddings={
            "PER": (0.9, 0.1, 0.0, 0.2),
            "ORG": (0.7, 0.6, 0.1, 0.0),
            "LOC": (0.1, 0.8, 0.7, 0.0),
            "MISC": (0.0, 0.2, 0.1, 0.9),
        },
    )


@pytest.fixture
def restaurant_schema():
    return LabelSchema([
        LabelType("Rating", "Rating", "rating"),
        LabelType("Price", "Price", "price"),
        LabelType("Loc", "Loc", "location"),
    ])


@pytest.fixture
def restaurant_sentence():
    return TaggedSentence(
        "r0",
        "find me a nice place to eat that is not too expensive".split(),
        [EntitySpan(3, 4, "Rating"), EntitySpan(9, 12, "Price")],
    )


@pytest.fixture
def news_sentence():
    return TaggedSentence(
        "n0",
        "Bonds came out of Wednesday 's game against New York".split(),
        [EntitySpan(0, 1, "PER"), EntitySpan(8, 10, "ORG")],
    )


@pytest.fixture
def corpus(schema):
    sentences = [
        TaggedSentence(
            "0",
            "Bonds came out of Wednesday 's game against New York".split(),
            [EntitySpan(0, 1, "PER"), EntitySpan(8, 10, "ORG")],
        ),
        TaggedSentence(
            "1",
            "EU rejects German call to boycott British lamb".split(),
            [EntitySpan(0, 1, "ORG"), EntitySpan(2, 3, "MISC"), EntitySpan(6, 7, "MISC")],
        ),
        TaggedSentence(
            "2",
            "Jeter signed with the Yankees in November".split(),
            [EntitySpan(0, 1, "PER"), EntitySpan(4, 5, "ORG")],
        ),
        TaggedSentence(
            "3",
            "Rivera lives near Tampa with his family".split(),
            [EntitySpan(0, 1, "PER"), EntitySpan(3, 4, "LOC")],
        ),
        TaggedSentence(
            "4",
            "officials met in Brussels on Monday".split(),
            [EntitySpan(3, 4, "LOC")],
        ),
        TaggedSentence(
            "5",
            "analysts expect the index to rise".split(),
            [],
        ),
    ]
    return Dataset(schema, sentences)


def trained_mock(dataset, **kwargs):
    backend = MockBackend(dataset.schema, **kwargs)
    backend.train_generator({
        "train": [sentence_to_record(s) for s in dataset.sentences],
    })
    return backend


@pytest.fixture
def mock_gateway(corpus):
    backend = trained_mock(corpus)
    return Gateway(backend, corpus.schema, retry=RetryPolicy(attempts=3, backoff=0.0))


def random_sentence(rng: random.Random, schema, sentence_id: str) -> TaggedSentence:
    """Fuzz helper: random tokens (including structural look-alikes) and spans."""
    vocab = ["the", "a", "eat", "place", "nice", "York", "\\[", "[", "]", "|",
             "x|y", "weird]token", "\\\\[", "price", "EU", "12"]
    n = rng.randint(1, 12)
    tokens = [rng.choice(vocab) for _ in range(n)]
    spans = []
    pos = 0
    type_ids = list(schema.type_ids)
    while pos < n:
        if rng.random() < 0.35:
            width = rng.randint(1, min(3, n - pos))
            spans.append(EntitySpan(pos, pos + width, rng.choice(type_ids)))
            pos += width
            # sometimes adjacent entities, sometimes a gap
            if rng.random() < 0.5:
                pos += rng.randint(1, 2)
        else:
            pos += 1
    return TaggedSentence(sentence_id, tokens, spans)
