import math
import numpy as np
import pandas as pd
import pytest
from keys import Keys
from classes.data_processor import (CATEGORICAL, NUMERICAL, Dataset, RawRecord, Schema, VocabCounter, Vocabulary,
                                    build_vocab, discretize_numeric, load_raw, quantize, quantize_frame, read_criteo,
                                    split_dataset, split_indices, write_table)
from classes.errors import DataError, DimensionError, ParseError


@pytest.mark.parametrize("raw, expected", [
    (3, 1), (10, 5), (1000, 47), ("10", 5), (2, 1), (0, 1), (-5, 1), ("2.5", 0),
])
def test_discretize_numeric(raw, expected):
    assert discretize_numeric(raw) == expected
    if isinstance(raw, (int, float)) and raw > 2:
        assert expected == math.floor(math.log(raw) ** 2)


def test_discretize_missing_and_malformed():
    assert discretize_numeric("") == Keys.MISSING_TOKEN
    assert discretize_numeric(None) == Keys.MISSING_TOKEN
    assert discretize_numeric(float("nan")) == Keys.MISSING_TOKEN
    with pytest.raises(ParseError):
        discretize_numeric("abc")
    for infinite in ("inf", "-inf", float("inf")):
        with pytest.raises(ParseError):
            discretize_numeric(infinite)
    assert issubclass(ParseError, DataError)


def _schema():
    return Schema.from_kinds(["a", "b"], [CATEGORICAL, NUMERICAL])


def _records():
    return [RawRecord(1, ["x", "10"]), RawRecord(0, ["y", "1"]), RawRecord(1, ["x", "3"]),
            RawRecord(0, ["z", ""])]


def test_build_vocab_orders_by_first_occurrence_and_reserves_oov():
    vocab = build_vocab(_records(), _schema(), min_freq=1)
    assert vocab.token_ids[0] == {"x": 1, "y": 2, "z": 3}
    # 10 -> 5, 1 -> 1, 3 -> 1, missing
    assert vocab.token_ids[1] == {"5": 1, "1": 2, Keys.MISSING_TOKEN: 3}
    assert vocab.vocab_sizes == [4, 4]


def test_min_freq_sends_rare_tokens_to_oov():
    vocab = build_vocab(_records(), _schema(), min_freq=2)
    assert vocab.token_ids[0] == {"x": 1}
    instance = quantize(RawRecord(0, ["y", "1"]), _schema(), vocab)
    assert instance.x[0] == Keys.OOV_ID
    assert instance.x[1] == vocab.lookup(1, "1")


def test_quantize_unseen_token_is_oov():
    vocab = build_vocab(_records(), _schema())
    instance = quantize(RawRecord(1, ["never-seen", "100000"]), _schema(), vocab)
    assert instance.x.tolist() == [0, 0]
    assert instance.label == 1


def test_quantize_frame_agrees_with_record_quantization():
    schema, records = _schema(), _records()
    vocab = build_vocab(records, schema)
    frame = pd.DataFrame([r.field_tokens for r in records], columns=schema.names)
    frame["label"] = [r.label for r in records]
    dataset = quantize_frame(frame, schema, vocab)
    for i, record in enumerate(records):
        np.testing.assert_array_equal(dataset.ids[i], quantize(record, schema, vocab).x)
    np.testing.assert_array_equal(dataset.labels, [1, 0, 1, 0])


def test_quantize_frame_rejects_bad_labels():
    schema = _schema()
    frame = pd.DataFrame({"a": ["x"], "b": ["1"], "label": ["2"]})
    with pytest.raises(DataError):
        quantize_frame(frame, schema, build_vocab(_records(), schema))


def test_vocab_counter_merge_equals_single_pass():
    schema = _schema()
    records = _records() * 3
    frame = pd.DataFrame([r.field_tokens for r in records], columns=schema.names)
    whole = Vocabulary.from_counter(VocabCounter(2).update(frame, schema), 1)
    left = VocabCounter(2).update(frame.iloc[:5], schema)
    right = VocabCounter(2).update(frame.iloc[5:], schema)
    merged = Vocabulary.from_counter(left.merge(right), 1)
    assert merged.token_ids == whole.token_ids


def test_vocabulary_json_round_trip(tmp_path):
    vocab = build_vocab(_records(), _schema(), min_freq=1)
    path = str(tmp_path / "vocab.json")
    vocab.to_json(path)
    loaded = Vocabulary.from_json(path)
    assert loaded.token_ids == vocab.token_ids
    assert loaded.vocab_sizes == vocab.vocab_sizes


def test_vocabulary_json_without_token_ids_is_a_data_error(tmp_path):
    path = tmp_path / "vocab.json"
    path.write_text("{\"min_freq\": 1}")
    with pytest.raises(DataError):
        Vocabulary.from_json(str(path))
    path.write_text("not json")
    with pytest.raises(DataError):
        Vocabulary.from_json(str(path))


def test_split_is_eight_one_one_and_disjoint():
    train, val, test = split_indices(100, seed=0)
    assert (len(train), len(val), len(test)) == (80, 10, 10)
    assert len(set(train) | set(val) | set(test)) == 100
    again = split_indices(100, seed=0)
    np.testing.assert_array_equal(train, again[0])
    with pytest.raises(DataError):
        split_indices(9, seed=0)


def test_split_dataset_keeps_rows_aligned(rng):
    ids = np.arange(40).reshape(20, 2)
    labels = np.arange(20) % 2
    train, val, test = split_dataset(Dataset(ids, labels), seed=1)
    assert len(train) + len(val) + len(test) == 20
    for part in (train, val, test):
        np.testing.assert_array_equal(part.ids[:, 0] // 2 % 2, part.labels)


def test_dataset_batches_seeded_and_drop_single_tail():
    data = Dataset(np.zeros((9, 3), dtype=np.int64), np.zeros(9))
    sizes = [len(y) for _, y in data.batches(4, np.random.default_rng(0))]
    assert sizes == [4, 4]
    sizes = [len(y) for _, y in data.batches(4, drop_last_single=False)]
    assert sizes == [4, 4, 1]
    first = [ids for ids, _ in Dataset(np.arange(20).reshape(10, 2), np.zeros(10)).batches(3, np.random.default_rng(5))]
    second = [ids for ids, _ in Dataset(np.arange(20).reshape(10, 2), np.zeros(10)).batches(3, np.random.default_rng(5))]
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a, b)


def test_dataset_rejects_misaligned_labels():
    with pytest.raises(DimensionError):
        Dataset(np.zeros((3, 2)), np.zeros(4))


def test_schema_round_trip_and_validation(tmp_path):
    schema = _schema()
    frame = pd.DataFrame({"label": [1, 0], "a": ["x", "y"], "b": ["3", ""]})
    write_table(frame, schema, str(tmp_path))
    loaded, loaded_schema = load_raw(str(tmp_path))
    assert loaded_schema.names == ["a", "b"]
    assert [f.kind for f in loaded_schema.fields] == [CATEGORICAL, NUMERICAL]
    assert loaded["b"].tolist() == ["3", ""]
    with pytest.raises(DataError):
        Schema.from_kinds(["a", "a"], [CATEGORICAL, CATEGORICAL])
    with pytest.raises(DataError):
        Schema.from_kinds(["a"], ["ordinal"])


def test_read_criteo_format(tmp_path):
    path = tmp_path / "train.txt"
    row = ["1"] + [str(i) for i in range(13)] + [f"c{i}" for i in range(26)]
    row[3] = ""
    path.write_text("\t".join(row) + "\n" + "\t".join(["0"] + [""] * 39) + "\n")
    frame, schema = read_criteo(str(path))
    assert len(schema) == 39
    assert schema.fields[0].kind == NUMERICAL and schema.fields[13].kind == CATEGORICAL
    assert frame.shape == (2, 40)
    vocab = build_vocab(frame, schema)
    dataset = quantize_frame(frame, schema, vocab)
    assert dataset.n_fields == 39
    np.testing.assert_array_equal(dataset.labels, [1, 0])
    assert vocab.lookup(2, Keys.MISSING_TOKEN) == dataset.ids[0, 2]


def test_load_raw_reports_missing_files(tmp_path):
    with pytest.raises(DataError):
        load_raw(str(tmp_path / "nowhere.csv"))
