"""Planted-signal CTR data for desk-scale experiments.

Labels depend on a fixed random additive model over the one-hot encodings of
the informative fields only; every other field is drawn independently of
the label.
"""
from dataclasses import dataclass, field, asdict
from typing import List, Optional, Union
import json
import logging
import os
import numpy as np
import pandas as pd
from keys import Keys
from classes.data_processor import CATEGORICAL, Schema, write_table
from classes.errors import DataError
from classes.numerics import sigmoid

logger = logging.getLogger(__name__)


@dataclass
class SyntheticSpec:
    n_fields: int = Keys.SYNTH_FIELDS
    n_informative: int = Keys.SYNTH_INFORMATIVE
    vocab_sizes: Union[int, List[int]] = Keys.SYNTH_VOCAB
    n_records: int = Keys.SYNTH_RECORDS
    seed: int = Keys.SEED
    weight_scale: float = Keys.SYNTH_WEIGHT_SCALE

    def __post_init__(self):
        if isinstance(self.vocab_sizes, int):
            self.vocab_sizes = [self.vocab_sizes] * self.n_fields
        self.vocab_sizes = [int(v) for v in self.vocab_sizes]
        if len(self.vocab_sizes) != self.n_fields:
            raise DataError(f"{len(self.vocab_sizes)} vocab sizes for {self.n_fields} fields")
        if not 0 <= self.n_informative <= self.n_fields:
            raise DataError(f"n_informative={self.n_informative} must lie in [0, {self.n_fields}]")
        if min(self.vocab_sizes) < 2:
            raise DataError("every synthetic field needs at least 2 categories")
        if self.n_records < 1:
            raise DataError("n_records must be positive")


@dataclass
class SyntheticData:
    frame: pd.DataFrame
    schema: Schema
    informative: List[int]
    logits: np.ndarray
    category_ids: np.ndarray

    @property
    def labels(self) -> np.ndarray:
        return self.frame[self.schema.label].to_numpy(dtype=np.float64)


def field_names(n_fields: int) -> List[str]:
    return [f"f{i}" for i in range(n_fields)]


def generate_synthetic(spec: SyntheticSpec) -> SyntheticData:
    rng = np.random.default_rng(spec.seed)
    informative = sorted(int(i) for i in rng.choice(spec.n_fields, size=spec.n_informative, replace=False))
    weights = {n: rng.normal(0.0, spec.weight_scale, size=spec.vocab_sizes[n]) for n in informative}
    category_ids = np.stack([rng.integers(0, v, size=spec.n_records) for v in spec.vocab_sizes], axis=1)
    logits = np.zeros(spec.n_records)
    for n in informative:
        logits += weights[n][category_ids[:, n]]
    labels = (rng.random(spec.n_records) < sigmoid(logits)).astype(np.int64)
    names = field_names(spec.n_fields)
    frame = pd.DataFrame({name: "v" + pd.Series(category_ids[:, i]).astype(str) for i, name in enumerate(names)})
    frame.insert(0, "label", labels)
    schema = Schema.from_kinds(names, [CATEGORICAL] * spec.n_fields)
    logger.info("generated %d synthetic records, informative fields %s, positive rate %.4f",
                spec.n_records, informative, labels.mean())
    return SyntheticData(frame=frame, schema=schema, informative=informative, logits=logits, category_ids=category_ids)


def write_synthetic(data: SyntheticData, spec: SyntheticSpec, directory: str, oracle_auc: Optional[float] = None):
    """Writes format-B records, the schema, the planted field list and the planted-model AUC"""
    write_table(data.frame, data.schema, directory)
    with open(os.path.join(directory, Keys.INFORMATIVE_FILE), "w") as f:
        json.dump({"informative": data.informative, "spec": asdict(spec)}, f, indent=4)
    if oracle_auc is not None:
        with open(os.path.join(directory, Keys.ORACLE_FILE), "w") as f:
            json.dump({"oracle_auc": oracle_auc, "n_records": spec.n_records}, f, indent=4)


def read_informative(directory: str) -> Optional[List[int]]:
    path = os.path.join(directory, Keys.INFORMATIVE_FILE)
    if not os.path.exists(path):
        return None
    with open(path, "r") as f:
        return list(json.load(f)["informative"])
