import pytest

from conftest import trained_mock
from spanaug.augment import (
    FLIPPING_STRATEGIES,
    AugmentedSample,
    augment_dataset,
    sample_id_for,
)
from spanaug.errors import BackendUnavailableError
from spanaug.gateway import Gateway, RetryPolicy
from spanaug.maskops import OpConfig
from spanaug.strategies import FlipScheme, StrategyConfig


def run_augment(corpus, gateway, strategies=("sa",), multiplier=2, seed=7,
                strategy_cfg=None):
    return augment_dataset(
        corpus,
        list(strategies),
        multiplier,
        strategy_cfg or StrategyConfig(flip_count=1),
        OpConfig(0, 2),
        FlipScheme("random"),
        gateway,
        seed,
    )


class TestAugmentDataset:
    def test_ids_and_parents(self, corpus, mock_gateway):
        samples, _ = run_augment(corpus, mock_gateway)
        assert samples
        for s in samples:
            parent, strategy, r = s.sample_id.rsplit("/", 2)
            assert s.parent_id == parent
            assert s.strategy == strategy == "sa"
            assert 0 <= int(r) < 2
            assert sample_id_for(parent, strategy, int(r)) == s.sample_id

    def test_sa_never_flips(self, corpus, mock_gateway):
        samples, _ = run_augment(corpus, mock_gateway)
        assert all(not s.is_flipped for s in samples)
        assert all(s.flipped_positions == [] for s in samples)

    def test_flipping_strategies_mark_positions(self, corpus, mock_gateway):
        samples, _ = run_augment(corpus, mock_gateway, strategies=("elc", "ea", "er"))
        assert samples
        for s in samples:
            assert s.strategy in FLIPPING_STRATEGIES
            assert s.is_flipped
            assert len(s.flipped_positions) == 1
            assert 0 <= s.flipped_positions[0] < len(s.expected_types)

    def test_samples_carry_consistent_labels(self, corpus, mock_gateway):
        samples, _ = run_augment(corpus, mock_gateway, strategies=("sa", "elc"))
        for s in samples:
            assert [sp.type_id for sp in s.sentence.spans] == s.expected_types

    def test_counting_identity(self, corpus, mock_gateway):
        _, report = run_augment(corpus, mock_gateway,
                                strategies=("sa", "elc", "ea", "er"), multiplier=3)
        assert report.counting_identity_holds(len(corpus.sentences), 3)

    def test_entityless_sentences_are_skipped_not_fatal(self, corpus, mock_gateway):
        # sentence "5" has no entities; every sa attempt on it must skip
        samples, report = run_augment(corpus, mock_gateway, multiplier=2)
        assert all(s.parent_id != "5" for s in samples)
        assert report.tally("sa").precondition_skips["NoEntityError"] >= 2

    def test_generation_failures_become_drops(self, corpus):
        inner = trained_mock(corpus)

        class FailOne:
            def __getattr__(self, name):
                return getattr(inner, name)

            def fill(self, req):
                if req.request_id == "0/sa/0":
                    raise BackendUnavailableError("scripted")
                return inner.fill(req)

        gw = Gateway(FailOne(), corpus.schema, retry=RetryPolicy(attempts=1, backoff=0.0))
        samples, report = run_augment(corpus, gw, multiplier=1)
        assert all(s.sample_id != "0/sa/0" for s in samples)
        assert report.tally("sa").generation_drops["BackendUnavailableError"] == 1
        assert report.counting_identity_holds(len(corpus.sentences), 1)

    def test_seed_determinism(self, corpus, mock_gateway):
        a, _ = run_augment(corpus, mock_gateway, strategies=("sa", "elc"), seed=3)
        b, _ = run_augment(corpus, mock_gateway, strategies=("sa", "elc"), seed=3)
        assert [s.to_record() for s in a] == [s.to_record() for s in b]

    def test_seed_changes_output(self, corpus, mock_gateway):
        a, _ = run_augment(corpus, mock_gateway, seed=3)
        b, _ = run_augment(corpus, mock_gateway, seed=4)
        assert [s.to_record() for s in a] != [s.to_record() for s in b]

    def test_multiplier_must_be_positive(self, corpus, mock_gateway):
        with pytest.raises(ValueError):
            run_augment(corpus, mock_gateway, multiplier=0)

    def test_record_round_trip(self, corpus, mock_gateway):
        samples, _ = run_augment(corpus, mock_gateway, strategies=("er",))
        assert samples
        for s in samples:
            again = AugmentedSample.from_record(s.to_record())
            assert again.to_record() == s.to_record()
            assert again.sentence.tokens == s.sentence.tokens
            assert again.sentence.spans == s.sentence.spans

    def test_report_json_shape(self, corpus, mock_gateway):
        _, report = run_augment(corpus, mock_gateway, strategies=("sa", "ea"))
        doc = report.to_json()
        assert set(doc) == {"strategies", "totals"}
        assert set(doc["strategies"]) == {"sa", "ea"}
        totals = doc["totals"]
        assert totals["attempted"] == totals["produced"] + totals["skipped"] + totals["dropped"]
