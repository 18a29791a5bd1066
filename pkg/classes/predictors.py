"""Prediction layers mapping (batch, fields, d) embeddings to click logits.

Every predictor is sized for the number of field slots it actually receives:
k after early selection, N otherwise. ``forward`` returns logits,
``backward`` takes dL/dlogit and returns dL/dE.
"""
from dataclasses import dataclass, field
from typing import List, Tuple
import numpy as np
from keys import Keys
from classes.layers import Layer, Linear, MLPTower
from classes.numerics import SeedLike, as_generator, sigmoid, xavier_init
from classes.errors import ConfigError, DimensionError


@dataclass
class PredictorConfig:
    variant: str = "mlp"
    input_fields: int = 1
    emb_dim: int = Keys.D_MAIN
    hidden_dims: Tuple[int, ...] = Keys.HIDDEN_DIMS
    n_cross_layers: int = Keys.CROSS_LAYERS

    def __post_init__(self):
        self.variant = self.variant.lower()
        self.hidden_dims = tuple(int(h) for h in self.hidden_dims)
        if self.variant not in Keys.BACKBONES:
            raise ConfigError(f"unknown backbone {self.variant!r}, expected one of {Keys.BACKBONES}")
        if not self.hidden_dims:
            raise ConfigError("hidden_dims must not be empty")
        if self.variant == "dcn" and self.n_cross_layers < 1:
            raise ConfigError("DCN needs at least one cross layer")
        if self.input_fields < 1 or self.emb_dim < 1:
            raise ConfigError("predictor needs at least one field slot and a positive dimension")


class Predictor(Layer):
    def __init__(self, config: PredictorConfig):
        super().__init__()
        self.config = config
        self._shape = None

    @property
    def in_features(self) -> int:
        return self.config.input_fields * self.config.emb_dim

    def _flatten(self, embeddings: np.ndarray) -> np.ndarray:
        expected = (self.config.input_fields, self.config.emb_dim)
        if embeddings.ndim != 3 or embeddings.shape[1:] != expected:
            raise DimensionError(f"{self.config.variant} expects (batch, {expected[0]}, {expected[1]}), got {embeddings.shape}")
        self._shape = embeddings.shape
        return embeddings.reshape(embeddings.shape[0], -1)

    def forward(self, embeddings: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def backward(self, d_logits: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def predict(self, embeddings: np.ndarray) -> np.ndarray:
        return sigmoid(self.forward(embeddings))


class MLPPredictor(Predictor):
    """concat -> affine+ReLU stack -> scalar"""

    def __init__(self, config: PredictorConfig, seed: SeedLike = None):
        super().__init__(config)
        rng = as_generator(seed)
        self.tower = self.add_child("tower", MLPTower(self.in_features, config.hidden_dims, rng))
        self.out = self.add_child("out", Linear(self.tower.out_features, 1, rng))

    def forward(self, embeddings):
        x = self._flatten(embeddings)
        return self.out.forward(self.tower.forward(x))[:, 0]

    def backward(self, d_logits):
        dx = self.tower.backward(self.out.backward(d_logits[:, None]))
        return dx.reshape(self._shape)


def fm_second_order(embeddings: np.ndarray) -> np.ndarray:
    """Sum over field pairs of <e_i, e_j>, as (square of sum - sum of squares) / 2"""
    summed = embeddings.sum(axis=1)
    return 0.5 * (np.sum(summed * summed, axis=1) - np.sum(embeddings * embeddings, axis=(1, 2)))


class DeepFMPredictor(Predictor):
    """linear term + factorization-machine pair term + deep tower"""

    def __init__(self, config: PredictorConfig, seed: SeedLike = None):
        super().__init__(config)
        rng = as_generator(seed)
        self.linear = self.add_child("linear", Linear(self.in_features, 1, rng))
        self.tower = self.add_child("tower", MLPTower(self.in_features, config.hidden_dims, rng))
        self.out = self.add_child("out", Linear(self.tower.out_features, 1, rng))
        self._embeddings = None

    def forward(self, embeddings):
        x = self._flatten(embeddings)
        self._embeddings = embeddings
        return (self.linear.forward(x)[:, 0] + fm_second_order(embeddings)
                + self.out.forward(self.tower.forward(x))[:, 0])

    def backward(self, d_logits):
        dx = self.linear.backward(d_logits[:, None])
        dx = dx + self.tower.backward(self.out.backward(d_logits[:, None]))
        summed = self._embeddings.sum(axis=1, keepdims=True)
        d_fm = d_logits[:, None, None] * (summed - self._embeddings)
        return dx.reshape(self._shape) + d_fm


class CrossLayer(Layer):
    """x_{l+1} = x_0 * (x_l . w) + b + x_l"""

    def __init__(self, width: int, seed: SeedLike = None):
        super().__init__()
        self.w = self.add_param("w", xavier_init(width, 1, seed)[:, 0])
        self.b = self.add_param("b", np.zeros(width))
        self._cache = None

    def forward(self, x0: np.ndarray, xl: np.ndarray) -> np.ndarray:
        s = xl @ self.w.value
        self._cache = (x0, xl, s)
        return x0 * s[:, None] + self.b.value + xl

    def backward(self, dy: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        """Returns (dL/dx0, dL/dxl)"""
        x0, xl, s = self._cache
        ds = np.sum(dy * x0, axis=1)
        self.w.grad += xl.T @ ds
        self.b.grad += dy.sum(axis=0)
        return dy * s[:, None], dy + ds[:, None] * self.w.value[None, :]


class DCNPredictor(Predictor):
    """cross tower and deep tower side by side, concatenated into one affine output"""

    def __init__(self, config: PredictorConfig, seed: SeedLike = None):
        super().__init__(config)
        rng = as_generator(seed)
        self.cross: List[CrossLayer] = [self.add_child(f"cross{i}", CrossLayer(self.in_features, rng))
                                        for i in range(config.n_cross_layers)]
        self.tower = self.add_child("tower", MLPTower(self.in_features, config.hidden_dims, rng))
        self.out = self.add_child("out", Linear(self.in_features + self.tower.out_features, 1, rng))

    def forward(self, embeddings):
        x0 = self._flatten(embeddings)
        xl = x0
        for layer in self.cross:
            xl = layer.forward(x0, xl)
        deep = self.tower.forward(x0)
        return self.out.forward(np.concatenate([xl, deep], axis=1))[:, 0]

    def backward(self, d_logits):
        d_cat = self.out.backward(d_logits[:, None])
        d_xl, d_deep = d_cat[:, :self.in_features], d_cat[:, self.in_features:]
        d_x0 = self.tower.backward(d_deep)
        for layer in reversed(self.cross):
            d_x0_part, d_xl = layer.backward(d_xl)
            d_x0 = d_x0 + d_x0_part
        # the first cross layer's x_l is x_0 itself
        d_x0 = d_x0 + d_xl
        return d_x0.reshape(self._shape)


PREDICTORS = {"mlp": MLPPredictor, "deepfm": DeepFMPredictor, "dcn": DCNPredictor}


def build_predictor(config: PredictorConfig, seed: SeedLike = None) -> Predictor:
    return PREDICTORS[config.variant](config, seed)


# ---------------------------------------------------------------- loss

def clamp_probability(p: np.ndarray) -> np.ndarray:
    return np.clip(p, Keys.BCE_CLAMP, 1.0 - Keys.BCE_CLAMP)


def bce(y_hat, y):
    """Mean binary cross-entropy over the batch; scalars give the per-sample value"""
    p = clamp_probability(np.asarray(y_hat, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    losses = -y * np.log(p) - (1.0 - y) * np.log(1.0 - p)
    return float(np.mean(losses))


def bce_logit_grad(y_hat: np.ndarray, y: np.ndarray) -> np.ndarray:
    """dL/dlogit of the batch-mean BCE through a sigmoid output.

    This is the unclamped gradient: where ``bce`` clamps a saturated
    probability the loss is flat, but the gradient keeps pushing the logit
    back toward the label.
    """
    return (y_hat - y) / y_hat.shape[0]
