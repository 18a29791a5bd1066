"""Raw-record ingestion and field-wise quantization.

Numerical fields are discretized first, then every field goes through its
own vocabulary. ID 0 of every field is the OOV bucket.
"""
from collections import Counter
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union
import json
import logging
import math
import os
import numpy as np
import pandas as pd
from keys import Keys
from classes.errors import DataError, DimensionError, ParseError

logger = logging.getLogger(__name__)

CATEGORICAL = "categorical"
NUMERICAL = "numerical"


@dataclass(frozen=True)
class FieldSchema:
    name: str
    kind: str
    index: int


class Schema:
    def __init__(self, fields: Sequence[FieldSchema], label: str = "label"):
        self.fields = list(fields)
        self.label = label
        for i, f in enumerate(self.fields):
            if f.index != i:
                raise DataError(f"field indices must be contiguous, {f.name} has index {f.index} at position {i}")
            if f.kind not in (CATEGORICAL, NUMERICAL):
                raise DataError(f"field {f.name} has unknown kind {f.kind}")
        names = [f.name for f in self.fields]
        if len(set(names)) != len(names):
            raise DataError("field names must be unique")

    @classmethod
    def from_kinds(cls, names: Sequence[str], kinds: Sequence[str], label: str = "label"):
        return cls([FieldSchema(n, k, i) for i, (n, k) in enumerate(zip(names, kinds))], label=label)

    @classmethod
    def criteo(cls):
        names = [f"I{i}" for i in range(1, Keys.CRITEO_NUMERIC_FIELDS + 1)] + \
                [f"C{i}" for i in range(1, Keys.CRITEO_CATEGORICAL_FIELDS + 1)]
        kinds = [NUMERICAL] * Keys.CRITEO_NUMERIC_FIELDS + [CATEGORICAL] * Keys.CRITEO_CATEGORICAL_FIELDS
        return cls.from_kinds(names, kinds)

    @property
    def names(self) -> List[str]:
        return [f.name for f in self.fields]

    def __len__(self):
        return len(self.fields)

    def to_dict(self):
        return {"label": self.label, "fields": [{"name": f.name, "kind": f.kind} for f in self.fields]}

    def to_json(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=4)

    @classmethod
    def from_json(cls, path: str):
        try:
            with open(path, "r") as f:
                data = json.load(f)
            return cls.from_kinds([d["name"] for d in data["fields"]], [d["kind"] for d in data["fields"]],
                                  label=data.get("label", "label"))
        except (OSError, KeyError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read schema {path}: {e}") from e


@dataclass
class RawRecord:
    label: int
    field_tokens: List[str]


@dataclass
class Instance:
    label: int
    x: np.ndarray


class Dataset:
    """Quantized instances: an (n, N) int64 id matrix and an (n,) label vector"""

    def __init__(self, ids: np.ndarray, labels: np.ndarray):
        ids = np.asarray(ids, dtype=np.int64)
        labels = np.asarray(labels, dtype=np.float64)
        if ids.ndim != 2 or labels.shape != (ids.shape[0],):
            raise DimensionError(f"ids {ids.shape} and labels {labels.shape} do not align")
        self.ids = ids
        self.labels = labels

    def __len__(self):
        return self.ids.shape[0]

    @property
    def n_fields(self) -> int:
        return self.ids.shape[1]

    def __getitem__(self, i) -> Instance:
        return Instance(label=int(self.labels[i]), x=self.ids[i])

    def subset(self, index: np.ndarray) -> "Dataset":
        return Dataset(self.ids[index], self.labels[index])

    def batches(self, batch_size: int, rng: Optional[np.random.Generator] = None, drop_last_single: bool = True):
        """Yields (ids, labels) in seeded shuffled order, or in file order without an rng"""
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for start in range(0, len(order), batch_size):
            index = order[start:start + batch_size]
            if drop_last_single and len(index) < 2:
                continue
            yield self.ids[index], self.labels[index]


# ---------------------------------------------------------------- discretization

def discretize_numeric(x) -> Union[int, str]:
    """floor((ln x)^2) for x > 2, else 1; missing values keep a dedicated token"""
    if x is None:
        return Keys.MISSING_TOKEN
    if isinstance(x, str):
        token = x.strip()
        if token == "":
            return Keys.MISSING_TOKEN
        try:
            x = float(token)
        except ValueError as e:
            raise ParseError(f"non-numeric token {token!r} in a numerical field") from e
    x = float(x)
    if math.isnan(x):
        return Keys.MISSING_TOKEN
    if math.isinf(x):
        raise ParseError(f"non-finite value {x!r} in a numerical field")
    if x > 2:
        return int(math.floor(math.log(x) ** 2))
    return 1


def _field_tokens(column: pd.Series, kind: str) -> pd.Series:
    if kind == NUMERICAL:
        return column.map(lambda v: str(discretize_numeric(v)))
    return column.astype(str)


# ---------------------------------------------------------------- vocabulary

class VocabCounter:
    """Per-field token counts in first-occurrence order; partial counters merge"""

    def __init__(self, n_fields: int):
        self.counts: List[Counter] = [Counter() for _ in range(n_fields)]

    def update(self, frame: pd.DataFrame, schema: Schema):
        for f in schema.fields:
            tokens = _field_tokens(frame[f.name], f.kind)
            counts = tokens.value_counts(sort=False)
            for token in pd.unique(tokens):
                self.counts[f.index][token] += int(counts[token])
        return self

    def merge(self, other: "VocabCounter") -> "VocabCounter":
        for mine, theirs in zip(self.counts, other.counts):
            for token, c in theirs.items():
                mine[token] += c
        return self


class Vocabulary:
    def __init__(self, token_ids: List[Dict[str, int]], min_freq: int, oov_id: int = Keys.OOV_ID):
        self.token_ids = token_ids
        self.min_freq = min_freq
        self.oov_id = oov_id

    @property
    def vocab_sizes(self) -> List[int]:
        return [len(m) + 1 for m in self.token_ids]

    def lookup(self, field_index: int, token: str) -> int:
        return self.token_ids[field_index].get(token, self.oov_id)

    def to_dict(self):
        return {"min_freq": self.min_freq, "oov_id": self.oov_id, "vocab_sizes": self.vocab_sizes,
                "token_ids": self.token_ids}

    def to_json(self, path: str):
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=4)

    @classmethod
    def from_json(cls, path: str):
        try:
            with open(path, "r") as f:
                data = json.load(f)
            return cls([dict(m) for m in data["token_ids"]], data["min_freq"], data.get("oov_id", Keys.OOV_ID))
        except (OSError, KeyError, TypeError, json.JSONDecodeError) as e:
            raise DataError(f"cannot read vocabulary {path}: {e}") from e

    @classmethod
    def from_counter(cls, counter: VocabCounter, min_freq: int):
        token_ids = []
        for counts in counter.counts:
            mapping = {}
            for token, c in counts.items():
                if c >= min_freq:
                    mapping[token] = len(mapping) + 1
            token_ids.append(mapping)
        return cls(token_ids, min_freq)


def records_to_frame(records: Sequence[RawRecord], schema: Schema) -> pd.DataFrame:
    for r in records:
        if len(r.field_tokens) != len(schema):
            raise DataError(f"record has {len(r.field_tokens)} tokens, schema has {len(schema)} fields")
    frame = pd.DataFrame([r.field_tokens for r in records], columns=schema.names, dtype=object)
    frame[schema.label] = [int(r.label) for r in records]
    return frame


def _as_frame(records, schema: Schema) -> pd.DataFrame:
    if isinstance(records, pd.DataFrame):
        return records
    return records_to_frame(list(records), schema)


def build_vocab(records, schema: Schema, min_freq: int = Keys.MIN_FREQ) -> Vocabulary:
    frame = _as_frame(records, schema)
    if len(frame) == 0:
        raise DataError("cannot build a vocabulary from zero records")
    counter = VocabCounter(len(schema)).update(frame, schema)
    vocab = Vocabulary.from_counter(counter, min_freq)
    logger.info("vocabulary built: %d fields, %d ids, min_freq=%d", len(schema), sum(vocab.vocab_sizes), min_freq)
    return vocab


def quantize(record: RawRecord, schema: Schema, vocab: Vocabulary) -> Instance:
    if len(record.field_tokens) != len(schema):
        raise DataError(f"record has {len(record.field_tokens)} tokens, schema has {len(schema)} fields")
    x = np.empty(len(schema), dtype=np.int64)
    for f in schema.fields:
        token = record.field_tokens[f.index]
        if f.kind == NUMERICAL:
            token = discretize_numeric(token)
        x[f.index] = vocab.lookup(f.index, str(token))
    return Instance(label=int(record.label), x=x)


def quantize_frame(frame: pd.DataFrame, schema: Schema, vocab: Vocabulary) -> Dataset:
    ids = np.empty((len(frame), len(schema)), dtype=np.int64)
    for f in schema.fields:
        tokens = _field_tokens(frame[f.name], f.kind)
        ids[:, f.index] = tokens.map(vocab.token_ids[f.index]).fillna(vocab.oov_id).to_numpy(dtype=np.int64)
    labels = pd.to_numeric(frame[schema.label], errors="coerce")
    if labels.isna().any() or not labels.isin([0, 1]).all():
        raise DataError("labels must be 0 or 1")
    return Dataset(ids, labels.to_numpy(dtype=np.float64))


# ---------------------------------------------------------------- splitting

def split_indices(n: int, seed: int, ratios: Tuple[float, float, float] = Keys.SPLIT_RATIOS):
    if n < 10:
        raise DataError(f"need at least 10 instances to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(n * ratios[0])
    n_val = int(n * ratios[1])
    return order[:n_train], order[n_train:n_train + n_val], order[n_train + n_val:]


def split_dataset(instances, seed: int):
    """8:1:1 seeded split of a Dataset or a DataFrame of raw records"""
    train, val, test = split_indices(len(instances), seed)
    if isinstance(instances, pd.DataFrame):
        return tuple(instances.iloc[np.sort(i)].reset_index(drop=True) for i in (train, val, test))
    return tuple(instances.subset(np.sort(i)) for i in (train, val, test))


# ---------------------------------------------------------------- readers / writers

def read_criteo(path: str, nrows: Optional[int] = None) -> Tuple[pd.DataFrame, Schema]:
    """Format A: label, 13 numeric, 26 categorical, tab separated, empty = missing"""
    schema = Schema.criteo()
    try:
        frame = pd.read_csv(path, sep="\t", header=None, dtype=str, keep_default_na=False, nrows=nrows,
                            names=[schema.label] + schema.names)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    return frame, schema


def read_table(data_path: str, schema_path: str) -> Tuple[pd.DataFrame, Schema]:
    """Format B: comma separated with a header row, kinds declared in a schema file"""
    schema = Schema.from_json(schema_path)
    try:
        frame = pd.read_csv(data_path, dtype=str, keep_default_na=False)
    except (OSError, pd.errors.ParserError, pd.errors.EmptyDataError) as e:
        raise DataError(f"cannot read {data_path}: {e}") from e
    missing = [c for c in [schema.label] + schema.names if c not in frame.columns]
    if missing:
        raise DataError(f"{data_path} lacks columns {missing}")
    return frame, schema


def write_table(frame: pd.DataFrame, schema: Schema, directory: str):
    os.makedirs(directory, exist_ok=True)
    frame[[schema.label] + schema.names].to_csv(os.path.join(directory, Keys.DATA_FILE), index=False)
    schema.to_json(os.path.join(directory, Keys.SCHEMA_FILE))


def load_raw(data: str, data_format: str = "table") -> Tuple[pd.DataFrame, Schema]:
    if data_format == "criteo":
        return read_criteo(data)
    if os.path.isdir(data):
        return read_table(os.path.join(data, Keys.DATA_FILE), os.path.join(data, Keys.SCHEMA_FILE))
    return read_table(data, os.path.join(os.path.dirname(data), Keys.SCHEMA_FILE))
