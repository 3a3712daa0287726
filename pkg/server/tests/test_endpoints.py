"""Protocol tests over HTTP: validation, lifecycle, and response contracts."""

from __future__ import annotations

import torch

import wiredata
import promptserve.generator
from promptserve.wire import escape_token

PER_SENTENCE = {"id": "s", "tokens": ["Rome", "fell"],
                "spans": [{"start": 0, "end": 1, "type": "LOC"}]}
TINY_SCHEMA = {"types": [{"id": "LOC", "tag": "LOC", "display_name": "location"}]}


def tiny_generator_payload(**config) -> dict:
    return {"train": [PER_SENTENCE], "schema": TINY_SCHEMA, "config": config, "seed": 1}


def assert_error(resp, status: int, code: str) -> None:
    assert resp.status_code == status, resp.text
    body = resp.json()
    assert body["code"] == code
    assert isinstance(body["message"], str) and body["message"]


# -- request envelope ---------------------------------------------------------------

def test_malformed_json_is_a_400(fast_client):
    resp = fast_client.post(
        "/v1/fill", content=b"{oops", headers={"Content-Type": "application/json"}
    )
    assert_error(resp, 400, "bad_request")


def test_non_object_body_is_a_400(fast_client):
    assert_error(fast_client.post("/v1/fill", json=[1, 2, 3]), 400, "bad_request")


# -- untrained service behavior -----------------------------------------------------

def test_untrained_slot_fill_and_score_and_annotate_are_409(fast_client):
    fill = {"request_id": "r", "template": {"parent_id": "p", "pieces": [
        {"slot": {"id": 0, "kind": "context-words", "constraint": None, "op": "op5"}},
    ]}}
    assert_error(fast_client.post("/v1/fill", json=fill), 409, "not_trained")
    assert_error(
        fast_client.post("/v1/score-types", json=wiredata.SCORE_REQUEST),
        409, "not_trained",
    )
    assert_error(
        fast_client.post("/v1/ner/annotate", json={"sentences": []}),
        409, "not_trained",
    )


def test_template_validation_precedes_trained_check(fast_client):
    bad = {"request_id": "r", "template": {"parent_id": "p", "pieces": [
        {"slot": {"id": 0, "kind": "verb-words", "constraint": None, "op": "x"}},
    ]}}
    assert_error(fast_client.post("/v1/fill", json=bad), 400, "bad_request")


# -- generator training validation --------------------------------------------------

def test_generator_train_validation(fast_client):
    cases = [
        {},
        {"train": [], "schema": TINY_SCHEMA},
        {"train": "x", "schema": TINY_SCHEMA},
        {"train": [PER_SENTENCE]},
        {"train": [PER_SENTENCE], "schema": {"types": [{"id": "LOC"}]}},
        {"train": [PER_SENTENCE], "schema": TINY_SCHEMA, "config": "fast"},
        {"train": [PER_SENTENCE], "schema": TINY_SCHEMA, "seed": "x"},
        tiny_generator_payload(batch_size=0),
        tiny_generator_payload(max_steps=0),
        tiny_generator_payload(lr="warm"),
        {"train": [{"id": "b", "tokens": ["a", "b"], "spans": [
            {"start": 0, "end": 2, "type": "LOC"}, {"start": 1, "end": 2, "type": "LOC"},
        ]}], "schema": TINY_SCHEMA},
        {"train": [{"id": "b", "tokens": ["a"], "spans": [
            {"start": 0, "end": 2, "type": "LOC"},
        ]}], "schema": TINY_SCHEMA},
        {"train": [{"id": "b", "tokens": ["a"], "spans": [
            {"start": 0, "end": 1, "type": "GPE"},
        ]}], "schema": TINY_SCHEMA},
    ]
    for payload in cases:
        assert_error(fast_client.post("/v1/generator/train", json=payload), 400, "bad_request")


def test_generator_rejects_sentences_beyond_sentinel_budget(fast_client):
    tokens = [f"w{i}" for i in range(25)]
    spans = [{"start": i, "end": i + 1, "type": "LOC"} for i in range(25)]
    payload = {"train": [{"id": "big", "tokens": tokens, "spans": spans}],
               "schema": TINY_SCHEMA}
    assert_error(fast_client.post("/v1/generator/train", json=payload), 400, "bad_request")


def test_generator_echoes_config_and_caps_steps(fast_client):
    resp = fast_client.post("/v1/generator/train", json=tiny_generator_payload(
        lr=0.002, weight_decay=0.01, batch_size=4, max_steps=10000,
    ))
    assert resp.status_code == 200, resp.text
    out = resp.json()
    assert out["backend"] == "prompt-seq2seq"
    assert out["trained_on"] == 1
    assert len(out["backbone_hash"]) == 64
    config = out["config"]
    assert config["optimizer"] == "adam"
    assert config["lr"] == 0.002
    assert config["weight_decay"] == 0.01
    assert config["batch_size"] == 4
    assert config["max_steps"] == 4  # requested 10000, capped by the server
    metrics = out["metrics"]
    for key in ("pretrain_final_loss", "prompt_initial_loss", "prompt_final_loss"):
        assert isinstance(metrics[key], float)


def test_generator_defaults_when_client_sends_no_config(fast_client):
    resp = fast_client.post("/v1/generator/train", json={
        "train": [PER_SENTENCE], "schema": TINY_SCHEMA,
    })
    assert resp.status_code == 200, resp.text
    config = resp.json()["config"]
    assert config["lr"] == 5e-3
    assert config["batch_size"] == 16
    assert config["max_steps"] == 4


# -- ner training validation --------------------------------------------------------

def test_ner_train_validation(fast_client):
    def payload(**overrides):
        base = wiredata.ner_train_payload(config={"steps": 2})
        base.update(overrides)
        return base

    good_pair = dict(wiredata.MIXUP_PAIRS[0])
    cases = [
        payload(train=[]),
        payload(schema={"types": "x"}),
        payload(references="x"),
        payload(pairs=[{**good_pair, "flipped_id": "ghost"}]),
        payload(pairs=[{**good_pair, "original_id": "ghost"}]),
        payload(pairs=[{**good_pair, "layer": 0}]),
        payload(pairs=[{**good_pair, "layer": 12}]),
        payload(pairs=[{**good_pair, "layer": "middle"}]),
        payload(pairs=[{**good_pair, "lambda": 1.5}]),
        payload(pairs=[{**good_pair, "lambda": -0.1}]),
        payload(pairs=[{**good_pair, "lambda": "high"}]),
        payload(config={"steps": 0}),
        payload(config={"steps": 20_000}),
        payload(config={"batch_size": 0}),
        payload(config={"confidence_policy": "median"}),
        payload(config="fast"),
        payload(seed="x"),
    ]
    for body in cases:
        assert_error(fast_client.post("/v1/ner/train", json=body), 400, "bad_request")


def test_ner_pairs_may_reference_the_references_block(fast_client):
    payload = wiredata.ner_train_payload(config={"steps": 2})
    payload["train"] = list(wiredata.FLIPPED_RECORDS)
    payload["references"] = list(wiredata.TRAIN_RECORDS)
    resp = fast_client.post("/v1/ner/train", json=payload)
    assert resp.status_code == 200, resp.text
    assert resp.json()["metrics"]["pairs"] == len(wiredata.MIXUP_PAIRS)


# -- lifecycle: health and hashes ---------------------------------------------------

def test_health_and_hash_lifecycle(fast_client):
    assert fast_client.get("/v1/health").json() == {
        "status": "ok", "generator_trained": False, "tagger_trained": False,
    }
    assert fast_client.get("/v1/hash").json() == {
        "generator_backbone": None, "tagger_model": None,
    }

    resp = fast_client.post("/v1/generator/train", json=tiny_generator_payload())
    assert resp.status_code == 200, resp.text
    health = fast_client.get("/v1/health").json()
    assert health["generator_trained"] is True
    assert health["tagger_trained"] is False
    hashes = fast_client.get("/v1/hash").json()
    assert len(hashes["generator_backbone"]) == 64
    assert int(hashes["generator_backbone"], 16) >= 0
    assert hashes["tagger_model"] is None

    resp = fast_client.post("/v1/ner/train", json=wiredata.ner_train_payload(
        config={"steps": 2},
    ))
    assert resp.status_code == 200, resp.text
    assert fast_client.get("/v1/health").json()["tagger_trained"] is True
    assert len(fast_client.get("/v1/hash").json()["tagger_model"]) == 64


def test_failed_retraining_preserves_the_previous_model(fast_client):
    assert fast_client.post(
        "/v1/generator/train", json=tiny_generator_payload()
    ).status_code == 200
    before = fast_client.get("/v1/hash").json()["generator_backbone"]
    assert_error(
        fast_client.post("/v1/generator/train", json=tiny_generator_payload(batch_size=0)),
        400, "bad_request",
    )
    assert fast_client.get("/v1/hash").json()["generator_backbone"] == before


# -- divergence ---------------------------------------------------------------------

def test_generator_divergence_is_a_500(fast_client, monkeypatch):
    monkeypatch.setattr(
        promptserve.generator, "_seq2seq_loss",
        lambda *args, **kwargs: torch.tensor(float("nan")),
    )
    resp = fast_client.post("/v1/generator/train", json=tiny_generator_payload())
    assert_error(resp, 500, "divergence")
    assert fast_client.get("/v1/health").json()["generator_trained"] is False


def test_tagger_divergence_is_a_500(fast_app, fast_client):
    fast_app.state.tagger._plain_loss = (
        lambda *args, **kwargs: torch.tensor(float("inf"))
    )
    resp = fast_client.post("/v1/ner/train", json=wiredata.ner_train_payload(
        config={"steps": 2},
    ))
    assert_error(resp, 500, "divergence")


# -- fill contract ------------------------------------------------------------------

def spliced_text(template: dict, per_slot_fills: list[list[str]]) -> str:
    out: list[str] = []
    fills = iter(per_slot_fills)
    for piece in template["pieces"]:
        if "text" in piece:
            out.extend(piece["text"])
        else:
            out.extend(escape_token(t) for t in next(fills))
    return " ".join(out)


def test_fill_round_trips_the_captured_request(trained_client):
    resp = trained_client.post("/v1/fill", json=wiredata.FILL_REQUEST)
    assert resp.status_code == 200, resp.text
    out = resp.json()
    assert out["request_id"] == "0/elc/0"
    fills = out["per_slot_fills"]
    assert len(fills) == 4
    assert fills[0], "entity slot 0 must not come back empty"
    assert fills[3], "entity slot 3 must not come back empty"
    assert out["filled_text"] == spliced_text(wiredata.FILL_REQUEST["template"], fills)


def test_fill_is_deterministic_for_identical_requests(trained_client):
    one = trained_client.post("/v1/fill", json=wiredata.FILL_REQUEST).json()
    two = trained_client.post("/v1/fill", json=wiredata.FILL_REQUEST).json()
    assert one == two


def test_fill_ignores_request_id_when_seeding(trained_client):
    renamed = dict(wiredata.FILL_REQUEST, request_id="different")
    base = trained_client.post("/v1/fill", json=wiredata.FILL_REQUEST).json()
    other = trained_client.post("/v1/fill", json=renamed).json()
    assert other["request_id"] == "different"
    assert other["per_slot_fills"] == base["per_slot_fills"]
    assert other["filled_text"] == base["filled_text"]


def test_fill_keeps_markup_balanced_across_the_corpus(trained_client):
    for rec in wiredata.TRAIN_RECORDS[:4]:
        body = wiredata.entity_fill_template(rec, f"fill-{rec['id']}", seed=5)
        resp = trained_client.post("/v1/fill", json=body)
        assert resp.status_code == 200, resp.text
        out = resp.json()
        n_spans = len(rec["spans"])
        assert len(out["per_slot_fills"]) == n_spans
        assert all(fill for fill in out["per_slot_fills"])
        tokens = out["filled_text"].split()
        for structural in ("[", "|", "]"):
            assert tokens.count(structural) == n_spans


def test_fill_greedy_decoding_recovers_memorized_mentions(trained_client):
    rec = wiredata.TRAIN_RECORDS[0]
    body = wiredata.entity_fill_template(rec, "greedy-0")
    body["decode"]["temperature"] = 0.0
    resp = trained_client.post("/v1/fill", json=body)
    assert resp.status_code == 200, resp.text
    assert resp.json()["per_slot_fills"] == [["Bonds"], ["New", "York"]]


def test_fill_decode_validation(trained_client):
    for decode in (
        {"max_new_tokens": 0},
        {"max_new_tokens": "many"},
        {"temperature": "hot"},
        {"seed": "x"},
    ):
        body = dict(wiredata.FILL_REQUEST, decode=decode)
        assert_error(trained_client.post("/v1/fill", json=body), 400, "bad_request")


def test_fill_rejects_more_slots_than_sentinels(trained_client):
    pieces = [
        {"slot": {"id": k, "kind": "context-words", "constraint": None, "op": "op5"}}
        for k in range(25)
    ]
    body = {"request_id": "big", "template": {"parent_id": "p", "pieces": pieces}}
    assert_error(trained_client.post("/v1/fill", json=body), 400, "too_many_slots")


def test_zero_slot_fill_echoes_on_a_trained_server_too(trained_client):
    body = {"request_id": "e", "template": {
        "parent_id": "p", "pieces": [{"text": ["just", "words"]}],
    }}
    out = trained_client.post("/v1/fill", json=body).json()
    assert out["filled_text"] == "just words"
    assert out["per_slot_fills"] == []


# -- score contract -----------------------------------------------------------------

def test_score_round_trips_the_captured_request(trained_client):
    resp = trained_client.post("/v1/score-types", json=wiredata.SCORE_REQUEST)
    assert resp.status_code == 200, resp.text
    out = resp.json()
    assert out["request_id"] == "q0"
    assert len(out["display_names"]) == 2
    inventory = set(wiredata.DISPLAY.values())
    assert set(out["display_names"]) <= inventory
    assert all(0.0 <= s <= 1.0 for s in out["scores"])


def test_score_is_deterministic(trained_client):
    one = trained_client.post("/v1/score-types", json=wiredata.SCORE_REQUEST).json()
    two = trained_client.post("/v1/score-types", json=wiredata.SCORE_REQUEST).json()
    assert one == two


def test_score_rejects_malformed_pieces(fast_client):
    assert_error(
        fast_client.post("/v1/score-types", json={"request_id": "q", "pieces": [
            {"type_slot": 1},
        ]}),
        400, "bad_request",
    )


# -- annotate contract --------------------------------------------------------------

def test_annotate_preserves_ids_and_order(trained_client):
    sentences = [
        {"id": "z-last", "tokens": ["Intel", "opened", "a", "lab"]},
        {"id": "a-first", "tokens": ["Merkel", "spoke", "in", "Berlin"]},
        {"id": "middle", "tokens": ["totally", "novel", "words", "here"]},
    ]
    out = trained_client.post("/v1/ner/annotate", json={"sentences": sentences}).json()
    assert [a["id"] for a in out["annotations"]] == ["z-last", "a-first", "middle"]


def test_annotate_spans_are_well_formed(trained_client):
    sentences = [{"id": rec["id"], "tokens": rec["tokens"]}
                 for rec in wiredata.TRAIN_RECORDS]
    sentences.append({"id": "single", "tokens": ["Geneva"]})
    out = trained_client.post("/v1/ner/annotate", json={"sentences": sentences}).json()
    type_ids = {t["id"] for t in wiredata.SCHEMA_RECORD["types"]}
    for annotation, sent in zip(out["annotations"], sentences):
        assert 0.0 <= annotation["confidence"] <= 1.0
        previous_end = 0
        for span in annotation["spans"]:
            assert 0 <= span["start"] < span["end"] <= len(sent["tokens"])
            assert span["start"] >= previous_end, "spans must not overlap"
            assert span["type"] in type_ids
            previous_end = span["end"]


def test_annotate_memorizes_training_sentences(trained_client):
    # Record 5 has no retyped twin in the training payload, so its labels are
    # unambiguous (records 0 and 4 appear twice with conflicting types).
    rec = wiredata.TRAIN_RECORDS[5]
    out = trained_client.post("/v1/ner/annotate", json={
        "sentences": [{"id": "probe", "tokens": rec["tokens"]}],
    }).json()
    assert out["annotations"][0]["spans"] == sorted(
        rec["spans"], key=lambda sp: sp["start"]
    )


def test_annotate_empty_batch(trained_client):
    out = trained_client.post("/v1/ner/annotate", json={"sentences": []}).json()
    assert out == {"annotations": []}


def test_annotate_validation(trained_client):
    cases = [
        {"sentences": "x"},
        {"sentences": [{"tokens": ["a"]}]},
        {"sentences": [{"id": "s", "tokens": [1]}]},
        {"sentences": [], "config": {"confidence_policy": "median"}},
        {"sentences": [], "config": "fast"},
    ]
    for body in cases:
        assert_error(trained_client.post("/v1/ner/annotate", json=body), 400, "bad_request")


# -- hashes echo training responses -------------------------------------------------

def test_hash_endpoint_matches_training_responses(trained):
    hashes = trained.client.get("/v1/hash").json()
    assert hashes["generator_backbone"] == trained.generator_response["backbone_hash"]
    assert hashes["tagger_model"] == trained.ner_response["model_hash"]
    assert len(hashes["generator_backbone"]) == 64
    assert len(hashes["tagger_model"]) == 64
