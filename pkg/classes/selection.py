"""Field selection primitives and the two alignment losses.

Scores arrive as (batch, N) softmax outputs. Index selection is discrete and
passes no gradient; the learning signal reaches the controller through the
selected weights W only.
"""
from dataclasses import dataclass
from typing import Tuple
import math
import numpy as np
from classes.errors import ConfigError, DegenerateSelectionError, DimensionError
from classes.embedding import as_fraction
from classes.layers import Linear


@dataclass
class SelectionResult:
    indices: np.ndarray
    weights: np.ndarray

    @property
    def k(self) -> int:
        return self.indices.shape[-1]


def keep_count(n_fields: int, r) -> int:
    """k = floor(N * r), at least one field"""
    r = as_fraction(r)
    if not 0 < r <= 1:
        raise ConfigError(f"keep ratio must lie in (0, 1], got {r}")
    return max(1, math.floor(n_fields * r))


def k_max_indices(scores: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest scores, descending, lower index first on ties"""
    scores = np.asarray(scores, dtype=np.float64)
    n = scores.shape[-1]
    if not 1 <= k <= n:
        raise ConfigError(f"k must lie in [1, {n}], got {k}")
    return np.argsort(-scores, axis=-1, kind="stable")[..., :k]


def l1_normalize_selected(scores: np.ndarray, indices: np.ndarray) -> np.ndarray:
    selected = np.take_along_axis(np.asarray(scores, dtype=np.float64), indices, axis=-1)
    if np.any(selected < 0):
        raise DegenerateSelectionError("selected scores must be nonnegative")
    total = selected.sum(axis=-1, keepdims=True)
    if np.any(total <= 0):
        raise DegenerateSelectionError("selected scores are all zero")
    return selected / total


def l1_normalize_backward(d_weights: np.ndarray, weights: np.ndarray, selected_total: np.ndarray) -> np.ndarray:
    """dL/d(selected scores) for W = s / sum(s)"""
    return (d_weights - np.sum(d_weights * weights, axis=-1, keepdims=True)) / selected_total


def select(scores: np.ndarray, k: int, reweight: bool = True) -> SelectionResult:
    indices = k_max_indices(scores, k)
    if reweight:
        weights = l1_normalize_selected(scores, indices)
    else:
        weights = np.take_along_axis(scores, indices, axis=-1)
    return SelectionResult(indices=indices, weights=weights)


def gather_fields(embeddings: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """(batch, N, d) -> (batch, k, d) in the order of ``indices``"""
    return np.take_along_axis(embeddings, indices[..., None], axis=1)


def scatter_fields(d_selected: np.ndarray, indices: np.ndarray, n_fields: int) -> np.ndarray:
    out = np.zeros(d_selected.shape[:1] + (n_fields,) + d_selected.shape[2:])
    if d_selected.ndim == 3:
        np.put_along_axis(out, indices[..., None], d_selected, axis=1)
    else:
        np.put_along_axis(out, indices, d_selected, axis=1)
    return out


def scale_embeddings(selected: np.ndarray, weights: np.ndarray) -> np.ndarray:
    if selected.shape[:-1] != weights.shape:
        raise DimensionError(f"{selected.shape[:-1]} embeddings vs {weights.shape} weights")
    return selected * weights[..., None]


def scale_backward(d_scaled: np.ndarray, selected: np.ndarray, weights: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    """Returns (dL/d(selected embeddings), dL/dW)"""
    return d_scaled * weights[..., None], np.sum(d_scaled * selected, axis=-1)


# ---------------------------------------------------------------- alignment losses

def embedding_alignment_loss(aux_selected: np.ndarray, main_selected: np.ndarray, fc: Linear):
    """Mean over batch and over the k*d1 components of (fc(E_a^s) - E_m^s)^2.

    Returns (value, dL/dE_a^s, dL/dE_m^s) and accumulates fc gradients.
    """
    if aux_selected.shape[:2] != main_selected.shape[:2]:
        raise DimensionError(f"aux {aux_selected.shape} and main {main_selected.shape} disagree on batch or k")
    batch, k, d2 = aux_selected.shape
    if d2 != fc.in_features or main_selected.shape[2] != fc.out_features:
        raise DimensionError(f"fc maps {fc.in_features}->{fc.out_features}, got {d2}->{main_selected.shape[2]}")
    mapped = fc.forward(aux_selected.reshape(batch * k, d2)).reshape(main_selected.shape)
    diff = mapped - main_selected
    value = float(np.mean(diff * diff))
    d_mapped = 2.0 * diff / diff.size
    d_aux = fc.backward(d_mapped.reshape(batch * k, -1)).reshape(aux_selected.shape)
    return value, d_aux, -d_mapped


def prediction_alignment_loss(p_aux: np.ndarray, p_main: np.ndarray):
    """(1/M) sum (P_a - P_m)^2; returns (value, dL/dP_a, dL/dP_m)"""
    p_aux = np.asarray(p_aux, dtype=np.float64)
    p_main = np.asarray(p_main, dtype=np.float64)
    if p_aux.shape != p_main.shape:
        raise DimensionError(f"prediction batches differ: {p_aux.shape} vs {p_main.shape}")
    diff = p_aux - p_main
    grad = 2.0 * diff / diff.size
    return float(np.mean(diff * diff)), grad, -grad
