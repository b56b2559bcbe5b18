import json
from collections import Counter

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smajudge import corpus as cp


def make_line(**overrides):
    record = {
        "case_id": "c1",
        "lower_facts": "stole a bicycle downtown",
        "lower_law_article": "article_200",
        "lower_charge": "charge_theft",
        "lower_penalty": 8,
        "grounds": "sentence too harsh",
        "new_facts": "returned the bicycle",
        "appeal_ruling": 0,
        "appeal_law_article": "appeal_article_upheld",
    }
    record.update(overrides)
    return json.dumps(record)


def test_parse_round_trip_fields():
    doc = cp.parse_document(make_line())
    assert doc.case_id == "c1"
    assert doc.lower_facts == ("stole", "a", "bicycle", "downtown")
    assert doc.lower_judgment.penalty_interval == 3
    assert doc.grounds == ("sentence", "too", "harsh")
    assert doc.appeal_judgment.ruling == 0


def test_parse_missing_field_names_it():
    record = json.loads(make_line())
    del record["grounds"]
    with pytest.raises(cp.DataError, match="grounds"):
        cp.parse_document(json.dumps(record))


def test_parse_empty_new_facts_allowed():
    doc = cp.parse_document(make_line(new_facts=""))
    assert doc.new_facts == ()


def test_parse_empty_lower_facts_rejected():
    with pytest.raises(cp.DataError):
        cp.parse_document(make_line(lower_facts="  "))


def test_parse_malformed_json():
    with pytest.raises(cp.DataError, match="malformed"):
        cp.parse_document("{not json")


def test_parse_invalid_penalty_string():
    with pytest.raises(cp.DataError):
        cp.parse_document(make_line(lower_penalty="forever"))


def test_serialize_parse_round_trip_exact():
    doc = cp.parse_document(make_line())
    line = cp.serialize_document(doc)
    again = cp.parse_document(line)
    assert again == doc
    assert cp.serialize_document(again) == line


def test_prediction_only_document():
    doc = cp.parse_document(make_line(appeal_ruling=None, appeal_law_article=None))
    assert doc.appeal_judgment is None


PENALTY_TABLE = {
    "none": 1, 0: 2, 6: 2, 7: 3, 9: 3, 10: 4, 12: 4, 13: 5, 35: 5,
    36: 6, 59: 6, 60: 7, 83: 7, 84: 8, 107: 8, 108: 9, 120: 9, 121: 10,
    "death_or_life": 11,
}


def test_penalty_interval_table():
    for term, interval in PENALTY_TABLE.items():
        assert cp.penalty_to_interval(term) == interval, term


def test_penalty_interval_gap_case():
    assert cp.penalty_to_interval(30) == 5


def test_penalty_interval_negative_months():
    with pytest.raises(cp.DataError):
        cp.penalty_to_interval(-1)


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 600))
def test_penalty_interval_total_and_monotone(months):
    a = cp.penalty_to_interval(months)
    b = cp.penalty_to_interval(months + 1)
    assert 2 <= a <= 10
    assert a <= b


def docs_from_texts(texts):
    docs = []
    for i, (facts, grounds, new) in enumerate(texts):
        docs.append(cp.parse_document(make_line(
            case_id=f"c{i}", lower_facts=facts, grounds=grounds, new_facts=new)))
    return docs


def test_vocabulary_min_count_one_keeps_all():
    docs = docs_from_texts([("aa bb", "cc", ""), ("bb dd", "ee", "ff")])
    vocab = cp.build_vocabulary(docs, min_count=1)
    for tok in ("aa", "bb", "cc", "dd", "ee", "ff"):
        assert tok in vocab.token_to_id
    assert vocab.token_to_id[cp.PAD_TOKEN] == 0
    assert vocab.token_to_id[cp.UNK_TOKEN] == 1


def test_vocabulary_threshold_maps_rare_to_unk():
    docs = docs_from_texts([("aa aa bb", "aa", ""), ("aa cc", "dd", "")])
    vocab = cp.build_vocabulary(docs, min_count=2)
    assert "aa" in vocab.token_to_id
    assert "bb" not in vocab.token_to_id
    assert vocab.encode(["bb"]) == [cp.UNK_ID]


def test_vocabulary_order_independent():
    docs = docs_from_texts([("zz yy", "xx", ""), ("aa bb", "cc", "dd")])
    v1 = cp.build_vocabulary(docs, min_count=1)
    v2 = cp.build_vocabulary(list(reversed(docs)), min_count=1)
    assert v1.id_to_token == v2.id_to_token


def test_vocabulary_empty_corpus():
    with pytest.raises(cp.DataError):
        cp.build_vocabulary([], min_count=1)


def test_filter_labels_threshold_one_keeps_all():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=50, seed=1))
    kept, spaces = cp.filter_labels(docs, min_label_count=1)
    assert len(kept) == 50
    assert len(spaces.penalty_intervals) == 11


def test_filter_labels_drops_unique_label():
    docs = list(cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=30, seed=2)))
    odd = cp.AppealDocument(
        case_id="odd", lower_facts=("x",),
        lower_judgment=cp.LowerJudgment("article_rare", "charge_rare", 5),
        grounds=("y",),
        appeal_judgment=cp.AppealJudgment(0, "appeal_article_upheld"))
    kept, _ = cp.filter_labels(docs + [odd], min_label_count=2)
    assert all(d.case_id != "odd" for d in kept)


def test_filter_labels_matches_recount_oracle():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=300, seed=3))
    threshold = 30
    kept, _ = cp.filter_labels(docs, min_label_count=threshold)

    law = Counter(d.lower_judgment.law_article for d in docs)
    charge = Counter(d.lower_judgment.charge for d in docs)
    appeal = Counter(d.appeal_judgment.law_article for d in docs)
    expected = [d for d in docs
                if law[d.lower_judgment.law_article] >= threshold
                and charge[d.lower_judgment.charge] >= threshold
                and appeal[d.appeal_judgment.law_article] >= threshold]
    assert kept == expected


def test_filter_labels_all_dropped_errors():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=10, seed=4))
    with pytest.raises(cp.DataError):
        cp.filter_labels(docs, min_label_count=10_000)


def test_split_sizes_and_discard():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=1000, seed=5))
    splits = cp.split_corpus(docs, (0.7, 0.1, 0.1), seed=9)
    assert (len(splits.train), len(splits.validation), len(splits.test)) == (700, 100, 100)
    assert len(splits.discarded) == 100


def test_split_all_train():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=40, seed=6))
    splits = cp.split_corpus(docs, (1.0, 0.0, 0.0), seed=1)
    assert len(splits.train) == 40 and not splits.validation and not splits.test


def test_split_deterministic_and_partition():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=97, seed=7))
    s1 = cp.split_corpus(docs, (0.6, 0.2, 0.1), seed=3)
    s2 = cp.split_corpus(docs, (0.6, 0.2, 0.1), seed=3)
    assert s1 == s2
    ids = [d.case_id for part in (s1.train, s1.validation, s1.test, s1.discarded) for d in part]
    assert sorted(ids) == sorted(d.case_id for d in docs)
    assert len(set(ids)) == len(ids)


def test_split_ratio_sum_over_one_rejected():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=10, seed=8))
    with pytest.raises(cp.DataError):
        cp.split_corpus(docs, (0.8, 0.3, 0.1), seed=0)


def test_synthetic_rule_oracle_exact_at_full_signal():
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=400, seed=11))
    for doc in docs:
        labels = cp.planted_rule_oracle(doc)
        assert labels["charge"] == doc.lower_judgment.charge
        assert labels["law_article"] == doc.lower_judgment.law_article
        assert labels["penalty_interval"] == doc.lower_judgment.penalty_interval
        assert labels["ruling"] == doc.appeal_judgment.ruling
        assert labels["appeal_article"] == doc.appeal_judgment.law_article


def test_synthetic_affirm_rate():
    docs = cp.generate_synthetic_corpus(
        cp.SyntheticSpec(num_documents=10_000, affirm_rate=0.83, seed=12))
    affirmed = sum(1 for d in docs if d.appeal_judgment.ruling == 0) / len(docs)
    assert abs(affirmed - 0.83) <= 0.02


def test_synthetic_deterministic():
    spec = cp.SyntheticSpec(num_documents=60, seed=13)
    assert cp.generate_synthetic_corpus(spec) == cp.generate_synthetic_corpus(spec)


def test_synthetic_vocab_too_small():
    with pytest.raises(cp.DataError, match="too small"):
        cp.SyntheticSpec(num_documents=5, vocab_size=20)


def test_corpus_file_round_trip(tmp_path):
    docs = cp.generate_synthetic_corpus(cp.SyntheticSpec(num_documents=25, seed=14))
    path = tmp_path / "corpus.jsonl"
    cp.write_corpus(docs, path)
    again = cp.read_corpus(path)
    assert again == docs
    first = path.read_text(encoding="utf-8")
    cp.write_corpus(again, path)
    assert path.read_text(encoding="utf-8") == first


def test_label_spaces_reject_unknown():
    spaces = cp.LabelSpaces(law_articles=("a",), charges=("c",), appeal_articles=("x",))
    with pytest.raises(cp.DataError):
        spaces.charge_index("missing")
