"""Per-field embedding tables with counted lookups, and activated-parameter accounting.

An instance activates the FULL table of every field its main model embeds,
plus every auxiliary table. All accounting is exact rational arithmetic.
"""
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Iterable, List, Sequence, Union
import numpy as np
from classes.layers import Layer
from classes.numerics import SeedLike, as_generator, xavier_init
from classes.errors import ConfigError, DataError, DegenerateSelectionError, DimensionError

Number = Union[int, float, str, Fraction]


def as_fraction(value: Number) -> Fraction:
    if isinstance(value, Fraction):
        return value
    if isinstance(value, float):
        return Fraction(repr(value))
    return Fraction(value)


class EmbeddingTable(Layer):
    def __init__(self, field_index: int, vocab_size: int, dim: int, seed: SeedLike = None):
        super().__init__()
        self.field_index = field_index
        self.vocab_size = vocab_size
        self.dim = dim
        self.matrix = self.add_param("matrix", xavier_init(vocab_size, dim, seed))
        self.lookup_count = 0

    def lookup(self, ids: np.ndarray) -> np.ndarray:
        if ids.size and (ids.min() < 0 or ids.max() >= self.vocab_size):
            raise DataError(f"field {self.field_index}: id out of range [0, {self.vocab_size})")
        self.lookup_count += int(ids.size)
        return self.matrix.value[ids]

    def accumulate(self, ids: np.ndarray, d_rows: np.ndarray):
        # only touched rows receive gradient
        np.add.at(self.matrix.grad, ids, d_rows)


class EmbeddingSet(Layer):
    """One table per field, all sharing the embedding dimension"""

    def __init__(self, vocab_sizes: Sequence[int], dim: int, seed: SeedLike = None):
        super().__init__()
        rng = as_generator(seed)
        self.dim = dim
        self.tables: List[EmbeddingTable] = [
            self.add_child(f"table{n}", EmbeddingTable(n, int(v), dim, rng)) for n, v in enumerate(vocab_sizes)
        ]
        self._ids = None
        self._selected = None

    @property
    def n_fields(self) -> int:
        return len(self.tables)

    @property
    def vocab_sizes(self) -> List[int]:
        return [t.vocab_size for t in self.tables]

    @property
    def lookup_counts(self) -> List[int]:
        return [t.lookup_count for t in self.tables]

    @property
    def total_lookups(self) -> int:
        return sum(self.lookup_counts)

    def _check_ids(self, ids: np.ndarray) -> np.ndarray:
        ids = np.asarray(ids, dtype=np.int64)
        if ids.ndim != 2 or ids.shape[1] != self.n_fields:
            raise DimensionError(f"expected (batch, {self.n_fields}) ids, got {ids.shape}")
        return ids

    def embed(self, ids: np.ndarray) -> np.ndarray:
        """(batch, N) ids -> (batch, N, d); a 1-D id vector gives (N, d)"""
        single = np.ndim(ids) == 1
        ids = self._check_ids(np.atleast_2d(ids))
        out = np.stack([t.lookup(ids[:, n]) for n, t in enumerate(self.tables)], axis=1)
        self._ids = ids
        return out[0] if single else out

    def backward(self, d_embeddings: np.ndarray):
        d_embeddings = d_embeddings.reshape(self._ids.shape + (self.dim,))
        for n, t in enumerate(self.tables):
            t.accumulate(self._ids[:, n], d_embeddings[:, n])

    def embed_selected(self, ids: np.ndarray, selected: np.ndarray) -> np.ndarray:
        """Embeds only the fields in ``selected`` (batch, k), in that order"""
        single = np.ndim(ids) == 1
        ids = self._check_ids(np.atleast_2d(ids))
        selected = np.asarray(selected, dtype=np.int64)
        if selected.ndim == 1:
            selected = np.broadcast_to(selected, (ids.shape[0], selected.shape[0]))
        check_selection(selected, self.n_fields)
        batch, k = selected.shape
        out = np.zeros((batch, k, self.dim))
        for n, t in enumerate(self.tables):
            rows, slots = np.nonzero(selected == n)
            if rows.size:
                out[rows, slots] = t.lookup(ids[rows, n])
        self._ids = ids
        self._selected = selected
        return out[0] if single else out

    def backward_selected(self, d_selected: np.ndarray):
        d_selected = d_selected.reshape(self._selected.shape + (self.dim,))
        for n, t in enumerate(self.tables):
            rows, slots = np.nonzero(self._selected == n)
            if rows.size:
                t.accumulate(self._ids[rows, n], d_selected[rows, slots])


def check_selection(selected: np.ndarray, n_fields: int):
    if selected.size == 0:
        return
    if selected.min() < 0 or selected.max() >= n_fields:
        raise DegenerateSelectionError(f"selected field index out of range [0, {n_fields})")
    ordered = np.sort(selected, axis=-1)
    if np.any(ordered[..., 1:] == ordered[..., :-1]):
        raise DegenerateSelectionError("selected field indices must be distinct")


# ---------------------------------------------------------------- parameter counts

def full_param_count(vocab_sizes: Union[int, Sequence[int]], d: int) -> int:
    total_ids = vocab_sizes if isinstance(vocab_sizes, (int, np.integer)) else sum(int(v) for v in vocab_sizes)
    return int(total_ids) * int(d)


def table_param_count(embedding_set: EmbeddingSet) -> int:
    return full_param_count(embedding_set.vocab_sizes, embedding_set.dim)


def delta_pae(d1: int, d2: int, r: Number) -> Fraction:
    """Reduction in activated embedding parameters: (fraction of fields dropped) - d2/d1"""
    r = as_fraction(r)
    if not 0 < d2 <= d1:
        raise ConfigError(f"need 0 < d2 <= d1, got d1={d1}, d2={d2}")
    if not 0 < r <= 1:
        raise ConfigError(f"keep ratio must lie in (0, 1], got {r}")
    return (1 - r) - Fraction(d2, d1)


def delta_el(r_kept: Number) -> Fraction:
    """Reduction in main-model embedding lookups"""
    r_kept = as_fraction(r_kept)
    if not 0 < r_kept <= 1:
        raise ConfigError(f"keep ratio must lie in (0, 1], got {r_kept}")
    return 1 - r_kept


def activation_total(main_full: Number, main_reduction: Number, aux_full: Number) -> Fraction:
    """Overall activated parameters = (main_full - main_reduction) + aux_full"""
    return as_fraction(main_full) - as_fraction(main_reduction) + as_fraction(aux_full)


def embedding_size_sweep(d1: int, d2_values: Iterable[int], r: Number):
    return [(d2, delta_pae(d1, d2, r)) for d2 in d2_values]


# ---------------------------------------------------------------- ledger

@dataclass(frozen=True)
class ActivationLedger:
    batches_observed: int = 0
    sum_activated_params: Fraction = Fraction(0)
    sum_lookups: Fraction = Fraction(0)
    sum_aux_lookups: Fraction = Fraction(0)

    def merge(self, other: "ActivationLedger") -> "ActivationLedger":
        return ActivationLedger(self.batches_observed + other.batches_observed,
                                self.sum_activated_params + other.sum_activated_params,
                                self.sum_lookups + other.sum_lookups,
                                self.sum_aux_lookups + other.sum_aux_lookups)

    def _average(self, total: Fraction) -> Fraction:
        if self.batches_observed == 0:
            raise DataError("no batches recorded in the activation ledger")
        return total / self.batches_observed

    @property
    def activated_params_avg(self) -> Fraction:
        return self._average(self.sum_activated_params)

    @property
    def lookups_avg(self) -> Fraction:
        return self._average(self.sum_lookups)

    @property
    def aux_lookups_avg(self) -> Fraction:
        return self._average(self.sum_aux_lookups)

    def summary(self) -> dict:
        if self.batches_observed == 0:
            return {"batches": 0}
        return {"batches": self.batches_observed,
                "activated_params_avg": float(self.activated_params_avg),
                "lookups_avg": float(self.lookups_avg),
                "aux_lookups_avg": float(self.aux_lookups_avg)}


def _sizes_and_dim(embeddings) -> tuple:
    if isinstance(embeddings, EmbeddingSet):
        return np.asarray(embeddings.vocab_sizes, dtype=np.int64), embeddings.dim
    vocab_sizes, dim = embeddings
    return np.asarray(vocab_sizes, dtype=np.int64), int(dim)


def record_batch_activation(ledger: ActivationLedger, selected_fields_per_instance, main_set,
                            aux_set=None) -> ActivationLedger:
    """Adds one batch: per instance, full aux tables plus the full main tables of its selected fields.

    ``main_set`` and ``aux_set`` are EmbeddingSets or (vocab_sizes, dim) pairs.
    """
    if len(selected_fields_per_instance) == 0:
        raise DataError("cannot record activation of an empty batch")
    vocab_sizes, d1 = _sizes_and_dim(main_set)
    field_params = vocab_sizes * d1
    aux_full, aux_lookups = 0, 0
    if aux_set is not None:
        aux_sizes, d2 = _sizes_and_dim(aux_set)
        aux_full = int(aux_sizes.sum()) * d2
        aux_lookups = len(aux_sizes)
    if isinstance(selected_fields_per_instance, np.ndarray) and selected_fields_per_instance.ndim == 2:
        selected = selected_fields_per_instance.astype(np.int64)
        check_selection(selected, len(vocab_sizes))
        main_total = int(field_params[selected].sum())
        lookups = int(selected.size)
        batch = selected.shape[0]
    else:
        selected = [np.asarray(s, dtype=np.int64) for s in selected_fields_per_instance]
        for s in selected:
            check_selection(s, len(vocab_sizes))
        main_total = sum(int(field_params[s].sum()) for s in selected)
        lookups = sum(int(s.size) for s in selected)
        batch = len(selected)
    return replace(ledger,
                   batches_observed=ledger.batches_observed + 1,
                   sum_activated_params=ledger.sum_activated_params + Fraction(main_total, batch) + aux_full,
                   sum_lookups=ledger.sum_lookups + Fraction(lookups, batch),
                   sum_aux_lookups=ledger.sum_aux_lookups + aux_lookups)


def observed_delta_pae(ledger: ActivationLedger, main_full: int) -> Fraction:
    return (main_full - ledger.activated_params_avg) / main_full
